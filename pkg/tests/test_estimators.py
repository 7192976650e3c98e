import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from lmdrop import LatentMarkovDropout, TimeConstantMixture
from lmdrop.simulate import SchemeSpec, simulate

from conftest import make_dataset


@pytest.fixture(scope="module")
def data():
    return simulate(SchemeSpec(n=200, T=5, seed=8))[0]


def test_params_and_clone():
    est = LatentMarkovDropout(n_states=3, chain_variant="saturated")
    assert est.get_params()["n_states"] == 3
    c = clone(est).set_params(n_states=2)
    assert c.n_states == 2 and est.n_states == 3


def test_fit_predict_score(data):
    est = LatentMarkovDropout(n_short_starts=2, n_long_runs=1).fit(data)
    assert est.converged_
    assert est.score(data) == pytest.approx(est.loglik_)
    assert est.score_samples(data).shape == (data.n,)
    states = est.predict(data)
    assert [len(s) for s in states] == list(data.dropout_times)
    assert 0 <= est.classification_index(data) <= 1
    assert est.aic(data) == pytest.approx(-2 * est.loglik_ + 2 * 9)
    assert est.n_parameters_ == 9


def test_saturated_and_mixture(data):
    sat = LatentMarkovDropout(chain_variant="saturated", n_short_starts=2, n_long_runs=1).fit(data)
    mix = TimeConstantMixture(n_short_starts=2, n_long_runs=1).fit(data)
    assert mix.n_parameters_ == 5
    assert sat.params_.kind == "saturated"


def test_unfitted_and_bad_input(data):
    with pytest.raises(NotFittedError):
        LatentMarkovDropout().score(data)
    with pytest.raises(TypeError):
        LatentMarkovDropout().fit(np.zeros((3, 3)))
    est = TimeConstantMixture(n_short_starts=1, n_long_runs=1).fit(data)
    with pytest.raises(ValueError):
        est.score(make_dataset(np.random.default_rng(0), n=5, T=5, p1=2))
