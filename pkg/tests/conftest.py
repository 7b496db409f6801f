import numpy as np
import pytest

from msid.models import LmfdModel, rhp_poles

_criteria = {}


def pytest_runtest_logreport(report):
    crit = getattr(report, "criterion", None)
    if crit is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _criteria[crit] = (report.outcome, getattr(report, "criterion_title", ""))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        rep.criterion = m.args[0]
        rep.criterion_title = m.args[1] if len(m.args) > 1 else ""


def _key(c):
    num = "".join(ch for ch in c if ch.isdigit())
    return (int(num), c)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(_criteria, key=_key):
        outcome, title = _criteria[c]
        tag = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {c:>3}: {tag}  {title}")


def random_stable_lmfd(rng, n_y, n_u, n_D, n_N, scale=0.5):
    """Random real LMFD whose denominator has all roots in the open left half plane."""
    while True:
        D = [scale * rng.standard_normal((n_y, n_y)) / (d + 1) for d in range(n_D)]
        if n_D:
            D[0] = D[0] + np.eye(n_y)
        N = [rng.standard_normal((n_y, n_u)) for _ in range(n_N + 1)]
        m = LmfdModel(n_y, n_u, tuple(D), tuple(N))
        if rhp_poles(m, tol=-1e-3).size == 0:
            return m


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
