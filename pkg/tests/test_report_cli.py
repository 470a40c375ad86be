import json

import numpy as np
import pytest

from tailbench.bench import RESULT_COLUMNS
from tailbench.cli import main
from tailbench.report import format_cell, format_sci, render_report


def _write_results(path, rows):
    path.mkdir(parents=True, exist_ok=True)
    lines = [",".join(RESULT_COLUMNS)] + [",".join(map(str, r)) for r in rows]
    (path / "results.csv").write_text("\n".join(lines) + "\n")


def test_format_sci_examples():
    assert format_sci(1.11e-3) == "1.11·10⁻³"
    assert format_cell(1.11e-3, 5.02e-4) == "1.11·10⁻³ ± 5.02·10⁻⁴"
    assert format_cell(1.11e-3, 5.02e-4, bold=True) == "**1.11·10⁻³** ± 5.02·10⁻⁴"
    assert format_sci(1.18) == "1.18"
    assert format_sci(15.2) == "1.52·10¹"
    assert format_sci(9.999e-3) == "1.00·10⁻²"
    assert format_sci(0.0) == "0"


def test_single_cell_table(tmp_path):
    _write_results(tmp_path, [("ds", "DDPM", "h", 0, "mmd_rbf", "", 0.5)])
    out = render_report(tmp_path)
    text = (out / "report.md").read_text()
    assert "| Model | MMD-RBF |" in text and "| DDPM | **5.00·10⁻¹** ± 0 |" in text


def test_bold_matches_column_min_and_idempotent(tmp_path):
    rng = np.random.default_rng(0)
    rows, means = [], {}
    for m in ("DDPM", "GF-Linear", "DLPM (alpha=1.7)"):
        vals = rng.uniform(size=3)
        means[m] = vals.mean()
        for s, v in enumerate(vals):
            rows.append(("iso", m, "h", s, "tce", 0.99, repr(float(v))))
    _write_results(tmp_path, rows)
    before = (tmp_path / "results.csv").read_bytes()
    out = render_report(tmp_path)
    first = (out / "report.md").read_bytes(), (out / "summary.csv").read_bytes()
    render_report(tmp_path)
    assert ((out / "report.md").read_bytes(), (out / "summary.csv").read_bytes()) == first
    assert (tmp_path / "results.csv").read_bytes() == before
    best = min(means, key=means.get)
    bold_lines = [ln for ln in first[0].decode().splitlines() if "**" in ln]
    assert len(bold_lines) == 1 and bold_lines[0].startswith(f"| {best} |")
    assert "TCE(99%)" in first[0].decode()


def test_malformed_rows_listed(tmp_path):
    _write_results(tmp_path, [("ds", "DDPM", "h", 0, "mmd_rbf", "", 0.5), ("ds", "DDPM", "h", "x", "mmd_rbf", "", 1),
                              ("ds", "DDPM", "h", 1)])
    text = (render_report(tmp_path) / "report.md").read_text()
    assert "## Skipped rows" in text and "line 3" in text and "line 4" in text
    assert "| DDPM |" in text


def test_curves_copied_with_summary(tmp_path):
    _write_results(tmp_path, [("ds", "DDPM", "h", 0, "mmd_rbf", "", 0.5)])
    (tmp_path / "curves").mkdir()
    (tmp_path / "curves" / "ds_ddpm.csv").write_text("seed,epoch,loss\n0,1,2.0\n0,2,1.0\n1,1,3.0\n1,2,2.0\n")
    out = render_report(tmp_path)
    assert (out / "curves" / "ds_ddpm.csv").is_file()
    summary = (out / "curves" / "ds_ddpm_summary.csv").read_text().splitlines()
    assert summary[0].startswith("#") and summary[1] == "epoch,mean,std"
    assert summary[2].startswith("1,2.5,")


def test_report_missing_results(tmp_path):
    with pytest.raises(FileNotFoundError):
        render_report(tmp_path)
    assert main(["report", "--results", str(tmp_path)]) == 1


def test_cli_bounds_prints_fractions(capsys):
    assert main(["bounds", "--beta", "1", "--gamma", "2", "--d", "1"]) == 0
    out = capsys.readouterr().out
    assert "(= 1/3)" in out and "(= 3/16)" in out and "(= 3/8)" in out and "(= 6/25)" in out


def test_cli_bounds_table(tmp_path, capsys):
    assert main(["bounds", "--table", "--out", str(tmp_path / "t.csv")]) == 0
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0].startswith("#") and "constants" in lines[0] and lines[1].startswith("n,T,")


def test_cli_usage_errors(capsys):
    assert main(["bench"]) == 2
    assert main(["no-such-command"]) == 2
    assert main(["bounds", "--d", "-1"]) == 2
    assert main(["gen-data", "--kind", "tabular"]) == 2


def test_cli_runtime_error_is_one_line(capsys):
    assert main(["bounds", "--gamma", "0.5"]) == 1
    err = capsys.readouterr().err
    assert err.count("\n") == 1 and "gamma" in err


def test_cli_pipeline_under_output_dir(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("TAILBENCH_OUTPUT_DIR", str(tmp_path / "runs"))
    monkeypatch.chdir(tmp_path)
    assert main(["gen-data", "--kind", "iso", "--n", "50", "--dim", "2"]) == 0
    data = tmp_path / "runs" / "data" / "alpha_stable_iso"
    assert (data / "dataset.json").is_file()
    assert main(["train", "--data", str(data), "--model", "gf-linear", "--steps", "4", "--epochs", "1",
                 "--batch", "16", "--depth", "2", "--width", "8"]) == 0
    model = tmp_path / "runs" / "models" / "gf_linear"
    assert (model / "model.ckpt").is_file() and (model / "loss_curve.csv").is_file()
    assert main(["sample", "--model-dir", str(model), "--n", "20", "--seed", "1"]) == 0
    assert main(["evaluate", "--generated", str(model / "samples.csv"), "--reference", str(data),
                 "--out", str(tmp_path / "runs" / "scores.json")]) == 0
    scores = json.loads((tmp_path / "runs" / "scores.json").read_text())
    assert set(scores["tce"]) == {"0.9", "0.95", "0.99"}
    assert sorted(p.name for p in tmp_path.iterdir()) == ["runs"]


def test_cli_bench_and_report(tmp_path, capsys):
    cfg = {"base_seed": 0, "datasets": [{"kind": "iso", "dim": 2}], "models": ["ddpm"],
           "main": {"preset": "main-mini", "samples": 40, "epochs": 1, "trials": 1, "steps": 4,
                    "depth": 2, "width": 8, "t_embed_dim": 4, "batch": 16}}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert main(["bench", "--config", str(path), "--out", str(tmp_path / "b")]) == 0
    assert main(["report", "--results", str(tmp_path / "b")]) == 0
    assert "### alpha_stable_iso" in (tmp_path / "b" / "report" / "report.md").read_text()


def test_cli_selfcheck(capsys):
    assert main(["selfcheck"]) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 4
