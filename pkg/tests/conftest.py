import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE: list[tuple[str, bool, str]] = []


def record_acceptance(criterion: str, passed: bool, detail: str) -> None:
    line = (criterion, passed, detail)
    ACCEPTANCE.append(line)
    print(f"{criterion} {'PASS' if passed else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{criterion} {'PASS' if passed else 'FAIL'} {detail}")
