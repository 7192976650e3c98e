import math

import numpy as np
import pytest

from lmdrop.data import ModelConfig
from lmdrop.em import EMConfig, fit_em
from lmdrop.inference import (
    average_state_probs,
    classification_index,
    decode_at_attrition,
    information_criteria,
    local_decode,
    param_count,
    parametric_bootstrap,
)
from lmdrop.likelihood import Posteriors
from lmdrop.simulate import SchemeSpec, simulate

from conftest import make_theta


def _post(xi, lengths=None):
    xi = np.asarray(xi, dtype=float)
    n, T, J = xi.shape
    lengths = np.full(n, T) if lengths is None else np.asarray(lengths)
    return Posteriors(xi, np.zeros((n, max(T - 1, 0), J, J)), lengths)


def test_criteria_formulas():
    row = information_criteria(-100.0, 4, 50)
    assert row.AIC == pytest.approx(208.0)
    assert row.AIC3 == pytest.approx(212.0)
    assert row.BIC == pytest.approx(200 + 4 * math.log(50))
    assert row.AICc == pytest.approx(208 + 40 / 45)
    assert row.AICu == pytest.approx(row.AICc + 50 * math.log(50 / 45))


def test_criteria_undefined_small_n():
    with pytest.raises(ValueError):
        information_criteria(-1.0, 5, 6)
    row = information_criteria(-1.0, 5, 6, allow_undefined=True)
    assert math.isnan(row.AICc) and math.isnan(row.AICu) and math.isfinite(row.BIC)


@pytest.mark.parametrize("J", [2, 3, 4])
@pytest.mark.parametrize("kind", ["parametric", "mixing", "saturated"])
def test_param_count_matches_vector_length(rng, J, kind):
    theta = make_theta(rng, J, kind, p1=3, p2=2, horizon=6)
    model = "m2" if kind == "mixing" else "m1"
    variant = "parametric" if kind == "mixing" else kind
    assert param_count(3, 2, J, model, variant, 6) == theta.n_free


def test_param_count_single_state():
    assert param_count(3, 2, 1, "m1") == param_count(3, 2, 1, "m2") == 5


def test_classification_index_extremes_and_hand_case():
    assert classification_index(_post(np.eye(2)[[[0, 1], [1, 1]]])) == 1.0
    assert classification_index(_post(np.full((3, 4, 3), 1 / 3))) == 0.0
    hand = _post([[[0.9, 0.1], [0.3, 0.7]]])
    assert classification_index(hand) == pytest.approx(0.6, abs=1e-15)
    with pytest.raises(ValueError):
        classification_index(_post(np.ones((2, 2, 1))))


def test_classification_index_ignores_padding():
    xi = np.zeros((2, 3, 2))
    xi[0, :3] = [1, 0]
    xi[1, :1] = [0.5, 0.5]
    assert classification_index(_post(xi, [3, 1])) == pytest.approx(3 / 4)


def test_local_decode_ties_go_low():
    states, ties = local_decode(_post([[[0.5, 0.5], [0.2, 0.8]]]))
    np.testing.assert_array_equal(states[0], [0, 1])
    np.testing.assert_array_equal(ties[0], [True, False])


def test_attrition_table_and_average_probs():
    data, _ = simulate(SchemeSpec(n=40, T=4, seed=1))
    rng = np.random.default_rng(0)
    xi = rng.dirichlet([1, 1], size=(40, 4))
    xi[np.arange(4)[None, :] >= data.dropout_times[:, None]] = 0
    post = _post(xi, data.dropout_times)
    table = decode_at_attrition(data, post)
    np.testing.assert_array_equal(table.sum(axis=0), np.bincount(data.dropout_times, minlength=5)[1:])
    avg = average_state_probs(post, 4)
    np.testing.assert_allclose(avg.sum(axis=1), 1)


def test_bootstrap_runs_and_is_reproducible():
    data, _ = simulate(SchemeSpec(n=120, T=4, seed=6))
    cfg = EMConfig(n_short_starts=2, n_long_runs=1)
    fit = fit_em(data, ModelConfig(n_states=2, fixed_columns=("x",)), cfg)
    a = parametric_bootstrap(data, fit, B=3, config=cfg, seed=1)
    b = parametric_bootstrap(data, fit, B=3, config=cfg, seed=1)
    np.testing.assert_array_equal(a.se, b.se)
    assert a.se.shape == (fit.theta.n_free,)
    assert a.n_success + a.n_failed == 3
    c = parametric_bootstrap(data, fit, B=2, config=cfg, seed=1, resample_dropout=True)
    assert c.B == 2
    with pytest.raises(ValueError):
        parametric_bootstrap(data, fit, B=0)
    fit.converged = False
    with pytest.raises(ValueError):
        parametric_bootstrap(data, fit, B=2)
