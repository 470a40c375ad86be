"""Heavy-tailed generative-model benchmark: DDPM, DLPM and GF-Linear."""

__version__ = "0.1.0"
