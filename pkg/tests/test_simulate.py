import numpy as np
import pytest

from lmdrop.em import EMConfig
from lmdrop.simulate import (
    ModelSummary,
    SchemeSpec,
    run_replications,
    sample_chain,
    simulate,
    simulate_conditional,
    simulate_joint,
    write_report,
)


def test_conditional_scheme_shapes_and_reproducibility():
    a, ta = simulate_conditional(SchemeSpec(n=100, T=6, seed=3))
    b, _ = simulate_conditional(SchemeSpec(n=100, T=6, seed=3))
    assert a == b
    assert a.n == 100 and a.horizon == 6
    assert set(np.unique(a.dropout_times)) <= set(range(1, 7))
    np.testing.assert_array_equal(ta.dropout_times, a.dropout_times)


def test_joint_scheme_observes_through_firing():
    data, truth = simulate_joint(SchemeSpec(scheme="joint", n=200, T=5, seed=1))
    fired = truth.dropout_fired
    np.testing.assert_array_equal(data.dropout_times, np.where(fired > 0, fired, 5))


def test_scheme_type_checks():
    with pytest.raises(ValueError):
        simulate_joint(SchemeSpec())
    with pytest.raises(ValueError):
        SchemeSpec(scheme="other")


def test_sample_chain_frequencies():
    rng = np.random.default_rng(0)
    P = np.array([[0.9, 0.1], [0.3, 0.7]])
    states = sample_chain(np.tile([1.0, 0.0], (20000, 1)), P, 2, rng)
    assert np.all(states[:, 0] == 0)
    assert states[:, 1].mean() == pytest.approx(0.1, abs=0.01)


def test_model_summary_statistics():
    s = ModelSummary("m1", np.array([0.4, 0.6, 0.8]), 0, 0.5)
    assert s.bias == pytest.approx(0.1)
    assert s.std_dev == pytest.approx(0.2)
    assert s.mse == pytest.approx((0.01 + 0.01 + 0.09) / 3)


def test_small_replication_run(tmp_path):
    rep = run_replications(SchemeSpec(n=80, T=3, seed=2), 2, models=("m2",),
                           em_config=EMConfig(n_short_starts=2, n_long_runs=1))
    assert rep.valid
    write_report(tmp_path / "r.csv", rep)
    assert (tmp_path / "r.csv").read_text().startswith("model,n,T,bias")
    with pytest.raises(ValueError):
        run_replications(SchemeSpec(), 1)
