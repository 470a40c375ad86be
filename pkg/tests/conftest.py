ACCEPTANCE_LINES = []


def report_criterion(number, name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number} ({name}): {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(" ")[0])):
            terminalreporter.write_line(line)
