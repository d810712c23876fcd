import pytest

# filled by test_acceptance: criterion id -> (passed, detail, seconds, limit)
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (len(k.split(".")[0]), k)):
        passed, detail, secs, limit = ACCEPTANCE[key]
        timing = f"{secs:.2f}s" + (f" (limit {limit:g}s)" if limit else "")
        tr.write_line(f"{'PASS' if passed else 'FAIL'}  criterion {key}: {detail} [{timing}]")


@pytest.fixture
def record():
    def _record(key, passed, detail, secs, limit=None):
        ok = bool(passed) and (limit is None or secs < limit)
        if limit is not None and secs >= limit:
            detail += f"; runtime {secs:.2f}s over limit"
        ACCEPTANCE[key] = (ok, detail, secs, limit)
        return ok

    return _record
