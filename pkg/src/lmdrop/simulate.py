"""Panel generators with informative dropout and the replication driver.

Two generating schemes are available:

* ``conditional``: dropout times are uniform on ``1..T`` and the latent
  chain laws depend on the dropout time through baseline-category logits.
* ``joint``: a homogeneous latent chain drives both the responses and a
  per-occasion dropout hazard, which absorbs once it fires.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, asdict

import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit

from .chain import ChainParamsParametric, chain_laws
from .data import Dataset, ModelConfig, SubjectPanel
from .em import EMConfig, _child_seeds, fit_model
from .likelihood import ParameterSet

SCHEMES = ("conditional", "joint")


@dataclass(frozen=True)
class SchemeSpec:
    """Generating design.  States are listed in the order of ``intercepts``."""

    scheme: str = "conditional"
    n: int = 500
    T: int = 10
    J: int = 2
    gamma: tuple = ((2.0, -0.5),)
    phi: tuple = (((5.0, -1.5),), ((5.0, -0.75),))
    initial: tuple = (0.6, 0.4)
    transition: tuple = ((0.8, 0.2), (0.2, 0.8))
    dropout_logits: tuple = (-3.0, -1.5)
    beta: float = 0.5
    intercepts: tuple = (1.0, -1.5)
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.n < 1 or self.T < 1:
            raise ValueError("n and T must be positive")
        if len(self.intercepts) != self.J:
            raise ValueError("need one intercept per state")

    def replace(self, **changes) -> "SchemeSpec":
        d = asdict(self)
        d.update(changes)
        return SchemeSpec(**d)

    def manifest(self) -> list[tuple[str, object]]:
        """Resolved settings relevant to the scheme."""
        items = [("scheme", self.scheme), ("n", self.n), ("T", self.T), ("J", self.J), ("seed", self.seed),
                 ("beta", self.beta), ("intercepts", self.intercepts)]
        if self.scheme == "conditional":
            items += [("gamma", self.gamma), ("phi", self.phi)]
        else:
            items += [("initial", self.initial), ("transition", self.transition),
                      ("dropout_logits", self.dropout_logits)]
        return items


@dataclass
class GroundTruth:
    """Latent paths over the full horizon (0-based states).

    ``dropout_fired[i]`` is the occasion at which the joint-scheme dropout
    indicator first fired, 0 if it never did (always 0 in the conditional
    scheme).
    """

    states: np.ndarray
    dropout_times: np.ndarray
    dropout_fired: np.ndarray
    x: np.ndarray


def sample_chain(initial, transition, T: int, rng) -> np.ndarray:
    """Draw latent paths; ``initial`` (n, J), ``transition`` (n, J, J) or (J, J)."""
    initial = np.asarray(initial)
    n, J = initial.shape
    transition = np.broadcast_to(transition, (n, J, J))
    states = np.empty((n, T), dtype=int)

    def draw(p):
        u = rng.random(len(p))
        return np.minimum((u[:, None] > np.cumsum(p, axis=1)).sum(axis=1), J - 1)

    states[:, 0] = draw(initial)
    rows = np.arange(n)
    for t in range(1, T):
        states[:, t] = draw(transition[rows, states[:, t - 1]])
    return states


def _build_dataset(y, x, S, T) -> Dataset:
    panels = tuple(
        SubjectPanel(str(i + 1), y[i, : S[i]], x[i, : S[i], None], np.ones((S[i], 1)), S[i])
        for i in range(len(S))
    )
    return Dataset(panels, T, 1, 1, ("x",), (), True)


def simulate_conditional(spec: SchemeSpec) -> tuple[Dataset, GroundTruth]:
    """Dropout-first design: draw ``S_i``, then the chain given ``S_i``."""
    if spec.scheme != "conditional":
        raise ValueError("SchemeSpec.scheme must be 'conditional'")
    rng = np.random.default_rng(spec.seed)
    n, T = spec.n, spec.T
    S = rng.integers(1, T + 1, size=n)
    laws = chain_laws(ChainParamsParametric(np.array(spec.gamma), np.array(spec.phi)), S)
    states = sample_chain(laws.initial, laws.transition, T, rng)
    x = rng.standard_normal((n, T))
    eta = spec.beta * x + np.asarray(spec.intercepts)[states]
    y = (rng.random((n, T)) < expit(eta)).astype(float)
    truth = GroundTruth(states, S, np.zeros(n, dtype=int), x)
    return _build_dataset(y, x, S, T), truth


def simulate_joint(spec: SchemeSpec) -> tuple[Dataset, GroundTruth]:
    """Shared latent chain for responses and a state-specific dropout hazard.

    A subject whose dropout indicator first fires at ``t*`` is observed at
    ``1..t*``; subjects never firing are observed through ``T``.
    """
    if spec.scheme != "joint":
        raise ValueError("SchemeSpec.scheme must be 'joint'")
    rng = np.random.default_rng(spec.seed)
    n, T, J = spec.n, spec.T, spec.J
    states = sample_chain(np.tile(spec.initial, (n, 1)), np.asarray(spec.transition), T, rng)
    hazard = expit(np.asarray(spec.dropout_logits))[states]
    fires = rng.random((n, T)) < hazard
    any_fire = fires.any(axis=1)
    fired = np.where(any_fire, fires.argmax(axis=1) + 1, 0)
    S = np.where(any_fire, fired, T)
    x = rng.standard_normal((n, T))
    eta = spec.beta * x + np.asarray(spec.intercepts)[states]
    y = (rng.random((n, T)) < expit(eta)).astype(float)
    truth = GroundTruth(states, S, fired, x)
    return _build_dataset(y, x, S, T), truth


def simulate(spec: SchemeSpec) -> tuple[Dataset, GroundTruth]:
    return simulate_conditional(spec) if spec.scheme == "conditional" else simulate_joint(spec)


def simulate_responses(data: Dataset, theta: ParameterSet, rng) -> Dataset:
    """Redraw latent chains and responses at ``theta`` keeping ``S_i`` and covariates."""
    a = data.arrays
    laws = chain_laws(theta.chain, data.dropout_times)
    states = sample_chain(laws.initial, laws.transition, data.horizon, rng)
    eta = a.x1 @ theta.beta + np.einsum("ntq,ntq->nt", a.x2, theta.u[states])
    y = (rng.random(eta.shape) < expit(eta)).astype(float)
    return data.with_responses([y[i, :s] for i, s in enumerate(data.dropout_times)])


def write_truth(path, truth: GroundTruth) -> None:
    """Long-format sidecar: latent state (1-based) at every occasion."""
    n, T = truth.states.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "time", "state", "observed", "dropout_fired"])
        for i in range(n):
            for t in range(T):
                w.writerow([i + 1, t + 1, truth.states[i, t] + 1, int(t < truth.dropout_times[i]),
                            int(truth.dropout_fired[i] == t + 1)])


# ---------------------------------------------------------------- replications


@dataclass
class ModelSummary:
    """Bias, spread and MSE of the fixed-effect estimates of one model."""

    model: str
    estimates: np.ndarray
    n_failed: int
    truth: float

    @property
    def n_ok(self) -> int:
        return len(self.estimates)

    @property
    def bias(self) -> float:
        return float(np.mean(self.estimates) - self.truth)

    @property
    def std_dev(self) -> float:
        return float(np.std(self.estimates, ddof=1))

    @property
    def mse(self) -> float:
        return float(np.mean((self.estimates - self.truth) ** 2))


@dataclass
class ReplicationReport:
    spec: SchemeSpec
    n_reps: int
    summaries: dict = field(default_factory=dict)

    @property
    def valid(self) -> bool:
        return all(s.n_failed <= 0.2 * self.n_reps for s in self.summaries.values())

    def rows(self) -> list[dict]:
        return [
            {"model": m.upper(), "n": self.spec.n, "T": self.spec.T, "bias": s.bias, "std_dev": s.std_dev,
             "mse": s.mse, "replicates": s.n_ok, "failed": s.n_failed}
            for m, s in self.summaries.items()
        ]


def _replicate(spec, seed, models, em_config):
    data, _ = simulate(spec.replace(seed=seed))
    mc = ModelConfig(n_states=spec.J, chain_variant="parametric", fixed_columns=("x",))
    cfg = EMConfig(**{**asdict(em_config), "seed": seed, "n_jobs": 1})
    out = {}
    for m in models:
        try:
            fit = fit_model(data, mc, m, cfg)
            out[m] = float(fit.theta.beta[0]) if fit.converged else None
        except (FloatingPointError, np.linalg.LinAlgError, RuntimeError):
            out[m] = None
    return out


def run_replications(
    spec: SchemeSpec,
    n_reps: int,
    models=("m1", "m2"),
    em_config: EMConfig | None = None,
    n_jobs: int | None = None,
) -> ReplicationReport:
    """Generate ``n_reps`` datasets, fit each model and summarize ``beta``.

    Replicate ``r`` uses a seed derived from ``(spec.seed, r)`` for both data
    generation and the random starts, so M1 and M2 share starting points.
    """
    if n_reps < 2:
        raise ValueError("need at least two replicates")
    em_config = em_config or EMConfig(n_short_starts=5, n_long_runs=5)
    seeds = _child_seeds(spec.seed, n_reps)
    results = Parallel(n_jobs=n_jobs)(delayed(_replicate)(spec, s, models, em_config) for s in seeds)
    report = ReplicationReport(spec, n_reps)
    for m in models:
        est = np.array([r[m] for r in results if r[m] is not None])
        report.summaries[m] = ModelSummary(m, est, n_reps - len(est), spec.beta)
    return report


def write_report(path, report: ReplicationReport) -> None:
    cols = ["model", "n", "T", "bias", "std_dev", "mse", "replicates", "failed"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in report.rows():
            w.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in row.items()})
