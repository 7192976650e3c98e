"""Model selection, classification diagnostics and bootstrap standard errors."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from .data import Dataset, ModelConfig
from .em import EMConfig, FitResult, _child_seeds, fit_from
from .likelihood import DegenerateLikelihoodError, Posteriors

CRITERIA = ("AIC", "AIC3", "AICc", "AICu", "BIC")


def param_count(p1: int, p2: int, n_states: int, model: str = "m1", variant: str = "parametric", horizon: int | None = None) -> int:
    """Number of free parameters.

    ``p2`` counts the state-specific columns including the random intercept.
    The saturated chain has one initial vector and one transition matrix per
    dropout time ``1..horizon``.
    """
    J = n_states
    k = p1 + J * p2
    if model == "m2":
        return k + 2 * (J - 1)
    if model != "m1":
        raise ValueError(f"unknown model {model!r}")
    if variant == "parametric":
        return k + 2 * (J - 1) + 2 * J * (J - 1)
    if variant == "saturated":
        if horizon is None:
            raise ValueError("saturated parameter count needs the horizon")
        return k + horizon * (J - 1) + horizon * J * (J - 1)
    raise ValueError(f"unknown chain variant {variant!r}")


def config_param_count(config: ModelConfig, model: str = "m1", horizon: int | None = None) -> int:
    return param_count(
        config.p1, config.p2, config.n_states, model, config.chain_variant,
        horizon if horizon is not None else config.horizon,
    )


@dataclass(frozen=True)
class CriteriaRow:
    loglik: float
    k: int
    n: int
    AIC: float
    AIC3: float
    AICc: float
    AICu: float
    BIC: float

    def as_dict(self) -> dict:
        return {c: getattr(self, c) for c in ("loglik", "k", "n") + CRITERIA}


def information_criteria(loglik: float, k: int, n: int, allow_undefined: bool = False) -> CriteriaRow:
    """Penalized likelihood criteria; ``n`` is the number of subjects.

    AICc and AICu need ``n > k + 1``; with ``allow_undefined`` they are NaN
    instead of raising.
    """
    aic = -2.0 * loglik + 2.0 * k
    aic3 = -2.0 * loglik + 3.0 * k
    bic = -2.0 * loglik + k * math.log(n)
    if n > k + 1:
        aicc = aic + 2.0 * k * (k + 1) / (n - k - 1)
        aicu = aicc + n * math.log(n / (n - k - 1))
    elif allow_undefined:
        aicc = aicu = float("nan")
    else:
        raise ValueError(f"AICc/AICu undefined for n={n} <= k+1={k + 1}")
    return CriteriaRow(float(loglik), int(k), int(n), aic, aic3, aicc, aicu, bic)


def classification_index(post: Posteriors) -> float:
    """Normalized posterior sharpness over observed subject-times.

    1 when every smoothed posterior is degenerate, 0 when all are uniform.
    """
    J = post.n_states
    if J < 2:
        raise ValueError("classification index needs at least two states")
    lengths = post.lengths
    obs = np.arange(post.xi.shape[1])[None, :] < lengths[:, None]
    # scaled by J so the degenerate and uniform extremes are exact in floating point
    excess = J * post.xi.max(axis=2) - 1.0
    return float(np.sum(np.where(obs, excess, 0.0)) / ((J - 1) * lengths.sum()))


def local_decode(post: Posteriors, tie_tol: float = 1e-12):
    """Most probable state at each observed time.

    Returns ``(states, ties)``: lists of per-subject integer arrays (0-based
    states; ties broken toward the lowest index) and boolean tie markers.
    """
    states, ties = [], []
    for i in range(len(post.lengths)):
        xi = post.subject_xi(i)
        top = xi.max(axis=1, keepdims=True)
        states.append(np.argmax(xi, axis=1))
        ties.append((np.abs(xi - top) <= tie_tol).sum(axis=1) > 1)
    return states, ties


def decode_at_attrition(data: Dataset, post: Posteriors) -> np.ndarray:
    """Counts of the decoded state at each subject's last observation.

    Rows are states, columns dropout times ``1..T``.
    """
    states, _ = local_decode(post)
    J, T = post.n_states, data.horizon
    table = np.zeros((J, T), dtype=int)
    for seq, s in zip(states, data.dropout_times):
        table[seq[s - 1], s - 1] += 1
    return table


def average_state_probs(post: Posteriors, horizon: int | None = None) -> np.ndarray:
    """Mean smoothed state probability at each time over subjects still observed.

    Rows with no subject at risk are NaN.
    """
    T = post.xi.shape[1] if horizon is None else horizon
    at_risk = (np.arange(T)[None, :] < post.lengths[:, None]).sum(axis=0)
    sums = post.xi[:, :T].sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return sums / np.where(at_risk > 0, at_risk, np.nan)[:, None]


@dataclass
class BootstrapResult:
    B: int
    names: list
    estimate: np.ndarray
    se: np.ndarray
    replicate_estimates: np.ndarray
    n_failed: int

    @property
    def n_success(self) -> int:
        return self.replicate_estimates.shape[0]


def _param_values(fit_theta) -> np.ndarray:
    return np.array([v for _, v in fit_theta.items()])


def _bootstrap_replicate(data, theta, config, seed, resample_dropout):
    from .simulate import simulate_responses

    rng = np.random.default_rng(seed)
    base = data.subset(rng.integers(0, data.n, data.n)) if resample_dropout else data
    boot = simulate_responses(base, theta, rng)
    try:
        fit = fit_from(boot, theta, config)
    except (DegenerateLikelihoodError, np.linalg.LinAlgError, FloatingPointError):
        return None
    if not fit.converged:
        return None
    return _param_values(fit.theta)


def parametric_bootstrap(
    data: Dataset,
    fit: FitResult,
    B: int = 200,
    config: EMConfig | None = None,
    seed: int = 0,
    n_jobs: int | None = None,
    resample_dropout: bool = False,
) -> BootstrapResult:
    """Standard errors from refits to data simulated at the fitted parameters.

    Each replicate keeps the subjects' dropout times and covariates (or, with
    ``resample_dropout``, resamples whole subjects), draws latent chains and
    responses from ``fit.theta`` and refits by EM started at ``fit.theta``.
    States are realigned by intercept order before standard deviations are
    taken over the successful replicates.
    """
    if B < 1:
        raise ValueError("bootstrap standard errors need B >= 1")
    if not fit.converged:
        raise ValueError("refusing to bootstrap a non-converged fit")
    config = config or EMConfig()
    seeds = _child_seeds(seed, B)
    out = Parallel(n_jobs=n_jobs)(
        delayed(_bootstrap_replicate)(data, fit.theta, config, s, resample_dropout) for s in seeds
    )
    ok = [r for r in out if r is not None]
    n_failed = B - len(ok)
    if n_failed > B / 4:
        warnings.warn(f"{n_failed} of {B} bootstrap refits failed", RuntimeWarning)
    est = np.array(ok) if ok else np.empty((0, len(fit.theta.items())))
    se = est.std(axis=0, ddof=1) if len(ok) > 1 else np.full(est.shape[1], np.nan)
    return BootstrapResult(
        B=B,
        names=[n for n, _ in fit.theta.items()],
        estimate=_param_values(fit.theta),
        se=se,
        replicate_estimates=est,
        n_failed=n_failed,
    )
