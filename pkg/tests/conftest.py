import os

ACCEPTANCE_LINES: list[str] = []


def record_criterion(name: str, ok: bool, detail: str) -> None:
    status = "PASS" if ok else "FAIL"
    ACCEPTANCE_LINES.append(f"[{status}] {name}: {detail}")


def acceptance_scale() -> str:
    """'full' runs the stated replication counts; 'ci' the sanctioned
    reduced ones where a criterion defines them."""
    return "full" if os.environ.get("PLAUS_ACCEPT_FULL") == "1" else "ci"


def workers() -> int:
    return max(1, min(8, os.cpu_count() or 1))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
