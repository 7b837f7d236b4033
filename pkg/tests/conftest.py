import os

from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# criterion id -> list of (part, passed, detail), filled by test_acceptance
ACCEPTANCE = {}


def record(criterion, part, passed, detail):
    ACCEPTANCE.setdefault(criterion, []).append((part, bool(passed), detail))
    print(f"{'PASS' if passed else 'FAIL'} {criterion} {part}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE, key=lambda c: int(c[1:])):
        parts = ACCEPTANCE[crit]
        ok = all(p[1] for p in parts)
        detail = "; ".join(f"{name} {'ok' if good else 'FAILED'} ({d})" for name, good, d in parts)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {crit}: {detail}")
