"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""

from collections import OrderedDict

ACCEPTANCE: "OrderedDict[int, list]" = OrderedDict()


def record(criterion: int, check: str, ok: bool, detail: str) -> bool:
    """Store one sub-check of an acceptance criterion and echo it."""
    ACCEPTANCE.setdefault(criterion, []).append((check, bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'} criterion {criterion} [{check}]: {detail}")
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[crit]
        ok = all(c[1] for c in checks)
        detail = "; ".join(f"{name}: {d}{'' if good else ' (failed)'}" for name, good, d in checks)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {crit}: {detail}")
