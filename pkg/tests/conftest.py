import numpy as np
import pytest

from incentfed import datagen, game as G

_ACCEPTANCE = []


@pytest.fixture
def report():
    """Record one acceptance line: ``report(number, title, passed, detail)``."""

    def _record(number, title, passed, detail=""):
        _ACCEPTANCE.append((number, title, bool(passed), detail))
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(_ACCEPTANCE, key=lambda row: row[0]):
        mark = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{mark}] {number:>2}. {title}: {detail}")


def make_game(payoff="discovery", m=3, t=3, seed=0, n_min=1.0, n_max=100.0, lam=1e-3, theta=None, alpha=1.0):
    spec = datagen.DataSpec(m=m, t=t, d=2, full_size=1, seed=seed, dirichlet_alpha=alpha)
    prof = datagen.sample_profiles(spec)
    if theta is None:
        theta = datagen.sample_costs(prof, seed)
    return G.ParticipationGame(G.PAYOFF_MODELS[payoff](prof), theta, n_min, n_max, lam)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
