"""Collects acceptance results and prints one verdict line per criterion."""
from collections import OrderedDict

ACCEPTANCE = OrderedDict()


def record(criterion: int, variant: str, ok: bool, detail: str, elapsed: float, limit: float | None):
    timing = f"{elapsed:.1f}s" + (f" (limit {limit:.0f}s)" if limit is not None else "")
    ACCEPTANCE.setdefault(criterion, []).append((variant, bool(ok), detail, timing))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        for variant, ok, detail, timing in ACCEPTANCE[crit]:
            tr.write_line(f"  criterion {crit:2d} [{variant}] {'pass' if ok else 'FAIL'}: {detail}; {timing}")
    tr.write_line("")
    for crit in sorted(ACCEPTANCE):
        rows = ACCEPTANCE[crit]
        ok = all(r[1] for r in rows)
        failed = [r[0] for r in rows if not r[1]]
        extra = "" if ok else f" (failing: {', '.join(failed)})"
        tr.write_line(f"CRITERION {crit:2d}: {'PASS' if ok else 'FAIL'}{extra}")
