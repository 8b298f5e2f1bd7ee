import os
import sys

import hypothesis
import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

hypothesis.settings.register_profile("default", max_examples=25, deadline=None, derandomize=True)
hypothesis.settings.register_profile("thorough", max_examples=200, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

np.seterr(all="raise", under="ignore")

# acceptance outcomes, filled by tests/test_acceptance.py
ACCEPTANCE: dict[str, list[tuple[str, bool, str]]] = {}


@pytest.fixture
def criterion(request):
    """Record named checks for one acceptance criterion; the test fails if any of them failed."""
    checks: list[tuple[str, bool, str]] = []
    ACCEPTANCE[request.node.name] = checks

    def check(label: str, ok, detail: str = ""):
        checks.append((label, bool(ok), detail))
        print(f"  {'pass' if ok else 'FAIL'}  {label}  {detail}")
        return bool(ok)

    return check


@pytest.hookimpl(wrapper=True)
def pytest_runtest_call(item):
    # every check runs before the verdict, so one failure does not hide the rest
    result = yield
    failed = [f"{label} ({detail})" for label, ok, detail in ACCEPTANCE.get(item.name, []) if not ok]
    if failed:
        raise AssertionError("acceptance checks failed: " + "; ".join(failed))
    return result


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name, checks in ACCEPTANCE.items():
        ok = bool(checks) and all(c[1] for c in checks)
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")
        for label, passed, detail in checks:
            tr.write_line(f"    {'pass' if passed else 'FAIL'}  {label}  {detail}")
