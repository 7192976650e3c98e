import numpy as np
import pytest

from lmdrop.chain import ChainParamsParametric, ChainParamsSaturated, MixingParams
from lmdrop.data import Dataset, SubjectPanel
from lmdrop.likelihood import ParameterSet


def make_dataset(rng, n=40, T=5, p1=1, p2=1, lengths=None):
    """Random panel; ``p2`` includes a leading intercept column."""
    S = rng.integers(1, T + 1, size=n) if lengths is None else np.asarray(lengths)
    panels = []
    for i, s in enumerate(S):
        x1 = rng.standard_normal((s, p1))
        x2 = np.column_stack([np.ones(s), rng.standard_normal((s, p2 - 1))])
        y = (rng.random(s) < 0.5).astype(float)
        panels.append(SubjectPanel(str(i + 1), y, x1, x2, s))
    fixed = tuple(f"x{a + 1}" for a in range(p1))
    state = tuple(f"z{b + 1}" for b in range(p2 - 1))
    return Dataset(tuple(panels), T, p1, p2, fixed, state, True)


def make_theta(rng, J, kind="parametric", p1=1, p2=1, horizon=5, scale=1.0):
    beta = rng.normal(0, scale, p1)
    u = rng.normal(0, 1.5 * scale, (J, p2))
    if kind == "parametric":
        chain = ChainParamsParametric(rng.normal(0, scale, (J - 1, 2)) * [1, 0.3],
                                      rng.normal(0, scale, (J, J - 1, 2)) * [1, 0.3])
    elif kind == "mixing":
        chain = MixingParams(rng.normal(0, scale, (J - 1, 2)) * [1, 0.3])
    else:
        init = rng.dirichlet(np.ones(J), size=horizon)
        trans = rng.dirichlet(np.ones(J), size=(horizon, J))
        chain = ChainParamsSaturated(init, trans, np.ones(horizon, dtype=bool))
    return ParameterSet(beta, u, chain)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
