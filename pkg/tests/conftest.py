from typing import List, Tuple

VERDICTS: List[Tuple[int, bool, str]] = []


def record(criterion: int, ok: bool, detail: str) -> None:
    """Store one acceptance verdict and echo it immediately."""
    VERDICTS.append((criterion, ok, detail))
    print(f"CRITERION {criterion}: {'PASS' if ok else 'FAIL'} | {detail}", flush=True)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for c, ok, detail in sorted(VERDICTS):
        terminalreporter.write_line(f"CRITERION {c}: {'PASS' if ok else 'FAIL'} | {detail}")
