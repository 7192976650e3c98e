"""Acceptance checks, one pass/fail line per criterion.

Run with ``pytest tests/test_acceptance.py``; the lines are repeated in the
terminal summary.  The two Monte Carlo studies take several minutes.
"""
import csv
import math
import time

import numpy as np
import pytest

from lmdrop.chain import ChainLaws, chain_laws
from lmdrop.cli import main as cli_main
from lmdrop.data import Dataset
from lmdrop.em import EMConfig, MonotonicityError, random_start, run_em
from lmdrop.inference import classification_index, information_criteria, param_count
from lmdrop.likelihood import Posteriors, brute_force_loglik, conditional_loglik, score
from lmdrop.simulate import SchemeSpec, run_replications, simulate, simulate_joint

from conftest import ACCEPTANCE_LINES, make_dataset, make_theta


def report(number, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_01_forward_backward_vs_enumeration():
    rng = np.random.default_rng(101)
    worst = 0.0
    start = time.perf_counter()
    for _ in range(1000):
        J, T = int(rng.integers(1, 4)), int(rng.integers(1, 7))
        kind = str(rng.choice(["parametric", "mixing", "saturated"])) if J > 1 else "mixing"
        p1, p2 = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        data = make_dataset(rng, n=1, T=T, p1=p1, p2=p2)
        theta = make_theta(rng, J, kind, p1, p2, horizon=T) if J > 1 else make_theta(rng, 2, "mixing", p1, p2)
        if J == 1:
            theta = type(theta)(theta.beta, theta.u[:1], type(theta.chain)(np.zeros((0, 2))))
        fb = conditional_loglik(data, theta).total
        laws = chain_laws(theta.chain, data.dropout_times)
        bf = brute_force_loglik(data.panels[0], ChainLaws(laws.initial[0], laws.transition[0]), theta.emission)
        worst = max(worst, abs(fb - bf) / abs(bf))
    elapsed = time.perf_counter() - start
    report(1, worst <= 1e-10 and elapsed < 10,
           f"max relative error {worst:.2e} (<= 1e-10) over 1000 instances in {elapsed:.1f}s (< 10s)")


def test_02_em_monotone():
    rng = np.random.default_rng(202)
    groups = [("m1", "parametric", True), ("m1", "saturated", True), ("m2", "mixing", True),
              ("m1", "parametric", False), ("m2", "mixing", False)]
    worst, n_fits = 0.0, 0
    start = time.perf_counter()
    for g in range(200):
        model, kind, dropout_effect = groups[g % len(groups)]
        data = make_dataset(rng, n=int(rng.integers(30, 120)), T=int(rng.integers(2, 7)))
        J = int(rng.integers(2, 4))
        theta0 = random_start(data, J, kind, rng)
        cfg = EMConfig(max_iter=150, final_tol=1e-10, short_run_threshold=1e-2, dropout_effect=dropout_effect)
        try:
            trace = run_em(data, theta0, cfg)[3]
            worst = max(worst, float(np.max(-np.diff(trace), initial=0.0)))
        except MonotonicityError as exc:
            worst = max(worst, math.inf)
            print(exc)
        n_fits += 1
    elapsed = time.perf_counter() - start
    report(2, worst <= 1e-8 and elapsed < 300,
           f"largest log-likelihood decrease {worst:.1e} (<= 1e-8) over {n_fits} fits in {elapsed:.0f}s (< 300s)")


def test_03_score_vs_finite_differences():
    rng = np.random.default_rng(303)
    worst = 0.0
    for a in range(50):
        kind = "parametric" if a % 2 == 0 else "mixing"
        J = int(rng.integers(2, 4))
        data = make_dataset(rng, n=30, T=5, p1=2, p2=2)
        theta = make_theta(rng, J, kind, 2, 2)
        g = score(data, theta)
        v = theta.to_vector()
        fd = np.empty_like(v)
        for i in range(v.size):
            h = 1e-5 * max(1.0, abs(v[i]))
            e = np.zeros_like(v)
            e[i] = h
            fd[i] = (conditional_loglik(data, theta.from_vector(v + e)).total
                     - conditional_loglik(data, theta.from_vector(v - e)).total) / (2 * h)
        worst = max(worst, float(np.max(np.abs(g - fd)) / np.max(np.abs(fd))))
    report(3, worst <= 1e-5, f"max relative score error {worst:.2e} (<= 1e-5) on 50 instances")


TABLE = [
    (-2726.000, 24, {"AIC": 5499.998, "AIC3": 5523.998, "AICc": 5500.722, "AICu": 5525.909, "BIC": 5630.278}),
    (-2764.899, 13, {"AIC": 5555.799, "AIC3": 5568.799, "AICc": 5556.017, "AICu": 5570.076, "BIC": 5626.368}),
]


def test_04_criteria_table():
    worst = 0.0
    for ll, k, expected in TABLE:
        row = information_criteria(ll, k, 1683)
        worst = max(worst, max(abs(getattr(row, c) - v) for c, v in expected.items()))
    report(4, worst <= 0.01, f"max deviation from tabulated criteria {worst:.4f} (<= 0.01)")


def test_05_parameter_counts():
    got = [param_count(5, 1, 2, "m1"), param_count(5, 1, 3, "m1"),
           param_count(5, 1, 2, "m2"), param_count(5, 1, 3, "m2"), param_count(5, 1, 4, "m2")]
    report(5, got == [13, 24, 9, 12, 15], f"M1 J=2,3 -> {got[:2]} (13, 24); M2 J=2,3,4 -> {got[2:]} (9, 12, 15)")


def test_06_conditional_scheme_study():
    start = time.perf_counter()
    rep = run_replications(SchemeSpec(scheme="conditional", n=500, T=10, seed=2024), 50)
    elapsed = time.perf_counter() - start
    m1, m2 = rep.summaries["m1"], rep.summaries["m2"]
    ok = (rep.valid and abs(m1.bias) <= 0.03 and m1.mse <= 0.004
          and -0.17 <= m2.bias <= -0.05 and 0.006 <= m2.mse <= 0.025 and elapsed < 1800)
    report(6, ok, f"M1 bias {m1.bias:+.4f} mse {m1.mse:.4f}; M2 bias {m2.bias:+.4f} mse {m2.mse:.4f}; "
                  f"failed fits {m1.n_failed}/{m2.n_failed}; {elapsed:.0f}s")


def test_07_joint_scheme_study():
    rep = run_replications(SchemeSpec(scheme="joint", n=500, T=5, seed=2025), 50)
    m1, m2 = rep.summaries["m1"], rep.summaries["m2"]
    ok = rep.valid and abs(m1.bias) <= 0.04 and m2.bias <= -0.05
    report(7, ok, f"M1 bias {m1.bias:+.4f} (|.| <= 0.04); M2 bias {m2.bias:+.4f} (<= -0.05)")


def test_08_joint_generator_frequencies():
    _, truth = simulate_joint(SchemeSpec(scheme="joint", n=10_000, T=10, seed=88))
    st = truth.states
    trans = np.zeros((2, 2))
    np.add.at(trans, (st[:, :-1].ravel(), st[:, 1:].ravel()), 1)
    trans /= trans.sum(axis=1, keepdims=True)
    t_idx = np.arange(1, 11)[None, :]
    fired = truth.dropout_fired[:, None]
    at_risk = (fired == 0) | (t_idx <= fired)
    event = t_idx == fired
    hazard = np.array([event[at_risk & (st == j)].mean() for j in range(2)])
    dev_t = np.abs(trans - [[0.8, 0.2], [0.2, 0.8]]).max()
    dev_h = np.abs(hazard - [0.0474, 0.1824]).max()
    report(8, dev_t <= 0.02 and dev_h <= 0.01,
           f"transition rows {np.round(trans, 4).tolist()} (dev {dev_t:.4f}); hazards {np.round(hazard, 4).tolist()} "
           f"(dev {dev_h:.4f})")


def test_09_classification_index():
    def post(xi):
        xi = np.asarray(xi, dtype=float)
        n, T, J = xi.shape
        return Posteriors(xi, np.zeros((n, T - 1, J, J)), np.full(n, T))

    degenerate = classification_index(post(np.eye(3)[[[0, 2, 1], [1, 1, 0]]]))
    uniform = classification_index(post(np.full((2, 3, 4), 0.25)))
    hand = classification_index(post([[[0.9, 0.1], [0.3, 0.7]]]))
    ok = degenerate == 1.0 and uniform == 0.0 and abs(hand - 0.6) <= 1e-15
    report(9, ok, f"degenerate {degenerate!r}, uniform {uniform!r}, hand case {hand!r}")


def test_10_output_contracts(tmp_path):
    sim = tmp_path / "sim"
    assert cli_main(["simulate", "--n", "300", "--T", "6", "--seed", "10", "--out", str(sim)]) == 0
    common = ["--data", str(sim / "data.csv"), "--config", str(sim / "config.txt"), "--starts", "3",
              "--long-runs", "2"]
    assert cli_main(["select", *common, "--states", "2", "3", "--out", str(tmp_path / "sel")]) == 0
    assert cli_main(["fit", *common, "--out", str(tmp_path / "fit")]) == 0

    with open(tmp_path / "sel" / "criteria.csv") as fh:
        crit = list(csv.DictReader(fh))
    crit_ok = (list(crit[0]) == ["model", "J", "k", "loglik", "AIC", "AIC3", "AICc", "AICu", "BIC"]
               and len(crit) == 4 and all(float(r["AIC"]) == pytest.approx(-2 * float(r["loglik"]) + 2 * int(r["k"]))
                                          for r in crit))
    with open(tmp_path / "fit" / "attrition.csv") as fh:
        att = list(csv.reader(fh))
    counts = np.loadtxt(sim / "dropout_counts.csv", delimiter=",", skiprows=1)[:, 1]
    att_ok = att[0] == ["state", "1", "2", "3", "4", "5", "6"] and len(att) == 3 and np.array_equal(
        np.array([[int(v) for v in r[1:]] for r in att[1:]]).sum(axis=0), counts)
    probs = np.loadtxt(tmp_path / "fit" / "state_probs.csv", delimiter=",", skiprows=1)[:, 1:]
    rows_ok = bool(np.all(np.abs(probs.sum(axis=1) - 1) <= 1e-12))
    report(10, crit_ok and att_ok and rows_ok,
           f"criteria table {'ok' if crit_ok else 'bad'}, attrition table {'ok' if att_ok else 'bad'}, "
           f"state-probability rows sum to 1: {rows_ok}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
