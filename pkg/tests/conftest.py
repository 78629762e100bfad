"""Suite-wide hooks: a per-criterion verdict line for the acceptance module."""

def pytest_terminal_summary(terminalreporter, exitstatus, config):
    reports = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if getattr(rep, "when", "call") != "call":
                continue
            if "test_acceptance.py" in str(rep.nodeid):
                reports.append(rep)
    if not reports:
        return
    terminalreporter.section("acceptance criteria")
    for rep in sorted(reports, key=lambda r: r.nodeid):
        name = rep.nodeid.split("::")[-1]
        verdict = "PASS" if rep.passed else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}")
