import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        status, detail, elapsed = results[k]
        terminalreporter.write_line(f"criterion {k:2d}: {status} ({elapsed:5.1f} s) {detail}")
