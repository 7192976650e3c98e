"""EM estimation for the latent Markov model and the time-constant mixture.

The M-step is split into three blocks (initial law, transition law,
emission coefficients).  The chain blocks are weighted baseline-category
logits in the dropout time, or closed-form stratum frequencies for the
saturated variant; the emission block is a weighted logistic regression
pooled over subjects, times and states.  Each block is solved by damped
Newton iterations that never decrease its part of the expected
complete-data log-likelihood, so the outer loop is monotone.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit, log_expit

from .chain import (
    ChainParamsParametric,
    ChainParamsSaturated,
    MixingParams,
    chain_laws,
    ref_log_softmax,
)
from .data import Dataset, ModelConfig
from .likelihood import (
    DegenerateLikelihoodError,
    LogLikelihood,
    ParameterSet,
    Posteriors,
    conditional_loglik,
    forward_backward_data,
    linear_predictor,
    score,
)

logger = logging.getLogger(__name__)

MODELS = ("m1", "m2")
MONOTONE_SLACK = 1e-8
SEPARATION_NORM = 50.0
INNER_TOL = 1e-8
INNER_MAX_ITER = 50


class MonotonicityError(RuntimeError):
    """The log-likelihood decreased between EM iterations."""


class ChainMStepError(np.linalg.LinAlgError):
    """Chain-law Newton system stayed singular after ridge damping."""


@dataclass(frozen=True)
class EMConfig:
    """Convergence and initialization settings.

    Attributes
    ----------
    short_run_threshold : float
        Relative log-likelihood change ending a short exploratory run.
    final_tol : float
        Relative change ending a long run.
    n_short_starts : int
        Random starts explored with short runs.
    n_long_runs : int
        Best short-run candidates continued to ``final_tol``.
    newton_trigger : float
        Relative change at which EM hands over to Newton refinement.
    """

    short_run_threshold: float = 1e-2
    final_tol: float = 1e-5
    n_short_starts: int = 20
    n_long_runs: int = 10
    max_iter: int = 1000
    refine_with_newton: bool = True
    newton_trigger: float = 1e-4
    newton_gtol: float = 1e-6
    dropout_effect: bool = True
    start_spread: float = 2.0
    check_blocks: bool = False
    seed: int | None = 0
    n_jobs: int | None = None

    def __post_init__(self):
        if self.short_run_threshold <= 0 or self.final_tol <= 0:
            raise ValueError("thresholds must be positive")
        if self.short_run_threshold <= self.final_tol:
            raise ValueError("short_run_threshold must exceed final_tol")
        if self.n_short_starts < 1 or self.n_long_runs < 1:
            raise ValueError("need at least one start and one long run")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class FitResult:
    """Outcome of an EM fit (states ordered by ascending intercept)."""

    theta: ParameterSet
    loglik: float
    loglik_trace: list
    converged: bool
    n_iter: int
    posteriors: Posteriors
    model: str
    spurious_flag: bool = False
    flags: set = field(default_factory=set)
    refined: bool = False

    @property
    def n_states(self) -> int:
        return self.theta.n_states

    @property
    def variant(self) -> str:
        return {"parametric": "parametric", "saturated": "saturated", "mixing": "time-constant"}[self.theta.kind]


@dataclass(frozen=True)
class Candidate:
    theta: ParameterSet
    loglik: float
    spurious: bool
    n_iter: int
    seed: int


# ---------------------------------------------------------------- E-step


def e_step(data: Dataset, theta: ParameterSet) -> tuple[Posteriors, LogLikelihood]:
    """Smoothed posteriors at ``theta`` and the log-likelihood as a by-product."""
    loglik, post = forward_backward_data(data, theta)
    return post, loglik


def state_occupancy(post: Posteriors) -> np.ndarray:
    """Average posterior state probability over observed subject-times."""
    total = post.lengths.sum()
    return post.xi.sum(axis=(0, 1)) / total


def is_spurious(post: Posteriors) -> bool:
    J = post.n_states
    return J > 1 and bool(state_occupancy(post).min() < 0.5 / J)


def stratum_weights(post: Posteriors, dropout_times, horizon: int):
    """Posterior mass aggregated by dropout time.

    Returns ``init (T, J)`` with the summed first-time posteriors and
    ``trans (T, J, J)`` with the summed transition posteriors.
    """
    J = post.n_states
    idx = np.asarray(dropout_times) - 1
    init = np.zeros((horizon, J))
    np.add.at(init, idx, post.xi[:, 0])
    trans = np.zeros((horizon, J, J))
    if post.zeta.shape[1]:
        np.add.at(trans, idx, post.zeta.sum(axis=1))
    return init, trans


# ---------------------------------------------------------------- chain M-step


def _logit_q(coef, z, W):
    logp = ref_log_softmax(z @ coef.T)
    return float(np.sum(np.where(W > 0, W * logp, 0.0)))


def fit_baseline_logit(z, W, coef0, fix_slope=False, max_iter=INNER_MAX_ITER, tol=INNER_TOL):
    """Weighted baseline-category logit with covariate rows ``z = (1, s)``.

    Maximizes ``sum_m sum_j W[m, j] log pi_j(z_m)`` by Newton steps with
    step halving.  Returns ``(coef, flags)``.
    """
    z = np.asarray(z, dtype=float)
    W = np.asarray(W, dtype=float)
    J = W.shape[1]
    flags = set()
    coef = np.array(coef0, dtype=float).reshape(J - 1, 2)
    if J == 1:
        return coef, flags
    keep = W.sum(axis=1) > 0
    z, W = z[keep], W[keep]
    if len(z) == 0:
        return coef, flags
    if not fix_slope and np.unique(z[:, 1]).size < 2:
        fix_slope = True
        flags.add("chain_slope_unidentified")
    if fix_slope:
        coef[:, 1] = 0.0
    cols = [0] if fix_slope else [0, 1]
    d = len(cols)
    zc = z[:, cols]
    N = W.sum(axis=1)

    q = _logit_q(coef, z, W)
    for _ in range(max_iter):
        p = np.exp(ref_log_softmax(z @ coef.T))[:, :-1]
        G = (W[:, :-1] - N[:, None] * p).T @ zc  # (J-1, d)
        if np.linalg.norm(G) <= tol:
            break
        # information: sum_m N_m (diag p - p p') kron z z'
        cov = np.einsum("m,mj,jl->mjl", N, p, np.eye(J - 1)) - np.einsum("m,mj,ml->mjl", N, p, p)
        info = np.einsum("mjl,ma,mb->jalb", cov, zc, zc).reshape((J - 1) * d, (J - 1) * d)
        step = None
        try:
            step = np.linalg.solve(np.linalg.cholesky(info).T, np.linalg.solve(np.linalg.cholesky(info), G.ravel()))
        except np.linalg.LinAlgError:
            ridge = 1e-6
            while ridge <= 1e-2:
                try:
                    Lc = np.linalg.cholesky(info + ridge * np.eye(info.shape[0]))
                    step = np.linalg.solve(Lc.T, np.linalg.solve(Lc, G.ravel()))
                    flags.add("chain_ridge_damped")
                    break
                except np.linalg.LinAlgError:
                    ridge *= 2
            if step is None:
                raise ChainMStepError("singular chain-law information after ridge damping")
        step = step.reshape(J - 1, d)
        t = 1.0
        for _ in range(40):
            trial = coef.copy()
            trial[:, cols] += t * step
            q_new = _logit_q(trial, z, W)
            if q_new >= q:
                break
            t *= 0.5
        else:
            break
        improved = q_new > q
        coef, q = trial, q_new
        if not improved:
            break
    return coef, flags


def _strata_design(horizon: int):
    s = np.arange(1, horizon + 1, dtype=float)
    return np.stack([np.ones_like(s), s], axis=1)


def m_step_chain_parametric(post: Posteriors, dropout_times, chain: ChainParamsParametric, horizon=None, fix_slope=False):
    """Update ``(gamma, phi)`` of the parametric chain laws.

    Returns ``(ChainParamsParametric, flags)``.
    """
    horizon = int(np.max(dropout_times)) if horizon is None else horizon
    init_w, trans_w = stratum_weights(post, dropout_times, horizon)
    z = _strata_design(horizon)
    flags = set()
    gamma, f = fit_baseline_logit(z, init_w, chain.gamma, fix_slope)
    flags |= f
    phi = np.empty_like(chain.phi)
    for k in range(chain.n_states):
        phi[k], f = fit_baseline_logit(z, trans_w[:, k], chain.phi[k], fix_slope)
        flags |= f
    return ChainParamsParametric(gamma, phi), flags


def m_step_mixing(post: Posteriors, dropout_times, mixing: MixingParams, horizon=None, fix_slope=False):
    """Update the dropout-dependent class weights of the time-constant mixture."""
    horizon = int(np.max(dropout_times)) if horizon is None else horizon
    init_w, _ = stratum_weights(post, dropout_times, horizon)
    gamma, flags = fit_baseline_logit(_strata_design(horizon), init_w, mixing.gamma, fix_slope)
    return MixingParams(gamma), flags


def m_step_chain_saturated(post: Posteriors, dropout_times, horizon=None):
    """Closed-form stratum frequencies for the saturated chain laws.

    Returns ``(ChainParamsSaturated, flags)``.  Strata absent from the data
    are stored as NaN; transition rows with no posterior mass are set to
    uniform and flagged when the stratum has transitions at all.
    """
    s = np.asarray(dropout_times)
    horizon = int(s.max()) if horizon is None else horizon
    J = post.n_states
    init_w, trans_w = stratum_weights(post, s, horizon)
    counts = np.bincount(s - 1, minlength=horizon).astype(float)
    strata = counts > 0
    flags = set()
    initial = np.full((horizon, J), np.nan)
    initial[strata] = init_w[strata] / counts[strata, None]
    transition = np.full((horizon, J, J), np.nan)
    for t in np.flatnonzero(strata):
        rows = trans_w[t]
        mass = rows.sum(axis=1)
        tr = np.full((J, J), 1.0 / J)
        ok = mass > 0
        tr[ok] = rows[ok] / mass[ok, None]
        if t >= 1 and not ok.all():
            flags.add("empty_transition_rows")
        transition[t] = tr
    # exact simplex: renormalize away rounding
    initial[strata] /= initial[strata].sum(axis=1, keepdims=True)
    transition[strata] /= transition[strata].sum(axis=2, keepdims=True)
    return ChainParamsSaturated(initial, transition, strata), flags


# ---------------------------------------------------------------- emission M-step


def _emission_q(y, X1, X2, W, beta, u):
    eta = linear_predictor(X1, X2, beta, u)
    ll = y[:, None] * log_expit(eta) + (1.0 - y[:, None]) * log_expit(-eta)
    return float(np.sum(W * ll))


def weighted_logit_newton(y, X1, X2, W, beta, u, max_iter=INNER_MAX_ITER, tol=INNER_TOL):
    """Newton iterations for the state-weighted logistic regression.

    ``W`` (N, J) holds the weight of observation ``n`` under state ``j``;
    ``beta`` is shared across states and ``u[j]`` is specific to state ``j``.
    Returns ``(beta, u, flags)``.
    """
    beta = np.array(beta, dtype=float)
    u = np.array(u, dtype=float)
    p1 = beta.size
    J, p2 = u.shape
    d = p1 + J * p2
    flags = set()
    q = _emission_q(y, X1, X2, W, beta, u)
    for _ in range(max_iter):
        eta = linear_predictor(X1, X2, beta, u)
        p = expit(eta)
        r = W * (y[:, None] - p)
        g = np.concatenate([X1.T @ r.sum(axis=1), (r.T @ X2).ravel()])
        if np.linalg.norm(g) <= tol:
            break
        v = W * p * (1.0 - p)
        info = np.zeros((d, d))
        info[:p1, :p1] = X1.T @ (v.sum(axis=1)[:, None] * X1)
        for j in range(J):
            sl = slice(p1 + j * p2, p1 + (j + 1) * p2)
            vx2 = v[:, j, None] * X2
            info[sl, sl] = X2.T @ vx2
            info[:p1, sl] = X1.T @ vx2
            info[sl, :p1] = info[:p1, sl].T
        try:
            step = np.linalg.solve(info, g)
            if not np.all(np.isfinite(step)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info + 1e-8 * np.eye(d), g, rcond=None)[0]
        t = 1.0
        for _ in range(40):
            b_new = beta + t * step[:p1]
            u_new = u + t * step[p1:].reshape(J, p2)
            q_new = _emission_q(y, X1, X2, W, b_new, u_new)
            if q_new >= q:
                break
            t *= 0.5
        else:
            break
        improved = q_new > q
        beta, u, q = b_new, u_new, q_new
        if np.sqrt(np.sum(beta**2) + np.sum(u**2)) > SEPARATION_NORM:
            flags.add("separation")
            break
        if not improved:
            break
    return beta, u, flags


def m_step_emission(post: Posteriors, data: Dataset, beta, u):
    """Update ``(beta, u)`` given posterior state weights.  Returns ``(beta, u, flags)``."""
    y, X1, X2 = data.flat
    W = post.xi[data.arrays.mask]
    return weighted_logit_newton(y, X1, X2, W, beta, u)


# ---------------------------------------------------------------- expected complete-data blocks


def q_blocks(data: Dataset, theta: ParameterSet, post: Posteriors) -> dict:
    """The three additive parts of the expected complete-data log-likelihood."""
    laws = chain_laws(theta.chain, data.dropout_times)
    with np.errstate(divide="ignore"):
        li = np.log(laws.initial)
        lt = np.log(laws.transition)
    xi1 = post.xi[:, 0]
    q_init = float(np.sum(np.where(xi1 > 0, xi1 * li, 0.0)))
    zsum = post.zeta.sum(axis=1) if post.zeta.shape[1] else np.zeros_like(lt)
    q_trans = 0.0 if theta.kind == "mixing" else float(np.sum(np.where(zsum > 0, zsum * lt, 0.0)))
    y, X1, X2 = data.flat
    q_emis = _emission_q(y, X1, X2, post.xi[data.arrays.mask], theta.beta, theta.u)
    return {"initial": q_init, "transition": q_trans, "emission": q_emis}


def m_step(data: Dataset, theta: ParameterSet, post: Posteriors, dropout_effect=True):
    """All three M-step blocks; returns ``(theta_new, flags)``."""
    s, T = data.dropout_times, data.horizon
    fix = not dropout_effect
    if theta.kind == "parametric":
        chain, flags = m_step_chain_parametric(post, s, theta.chain, T, fix_slope=fix)
    elif theta.kind == "saturated":
        chain, flags = m_step_chain_saturated(post, s, T)
    else:
        chain, flags = m_step_mixing(post, s, theta.chain, T, fix_slope=fix)
    beta, u, f = m_step_emission(post, data, theta.beta, theta.u)
    return ParameterSet(beta, u, chain), flags | f


# ---------------------------------------------------------------- EM loop


def _relative_change(new, old):
    return abs(new - old) / max(abs(old), np.finfo(float).tiny)


def run_em(data: Dataset, theta0: ParameterSet, config: EMConfig, tol=None, stop_at=None):
    """Iterate EM from ``theta0``.

    Stops when the relative log-likelihood change falls below ``tol``
    (default ``config.final_tol``) or after ``config.max_iter`` iterations.
    Returns ``(theta, post, loglik, trace, converged, n_iter, flags)``.
    """
    tol = config.final_tol if tol is None else tol
    if stop_at is not None:
        tol = max(tol, stop_at)
    theta = theta0
    post, ll = e_step(data, theta)
    trace = [ll.total]
    flags: set = set()
    converged = False
    n_iter = 0
    for n_iter in range(1, config.max_iter + 1):
        if config.check_blocks:
            before = q_blocks(data, theta, post)
        theta_new, f = m_step(data, theta, post, config.dropout_effect)
        flags |= f
        if config.check_blocks:
            after = q_blocks(data, theta_new, post)
            for name in before:
                if after[name] < before[name] - MONOTONE_SLACK:
                    raise MonotonicityError(
                        f"M-step block {name!r} decreased by {before[name] - after[name]:.3g}"
                    )
        post_new, ll_new = e_step(data, theta_new)
        if ll_new.total < trace[-1] - MONOTONE_SLACK:
            raise MonotonicityError(
                f"log-likelihood decreased from {trace[-1]!r} to {ll_new.total!r} at iteration {n_iter}"
            )
        rel = _relative_change(ll_new.total, trace[-1])
        trace.append(ll_new.total)
        theta, post = theta_new, post_new
        if rel < tol:
            converged = True
            break
    return theta, post, trace[-1], trace, converged, n_iter, flags


# ---------------------------------------------------------------- starting values


def _logistic_start(data: Dataset):
    """Single-state logistic fit used to center random starts."""
    y, X1, X2 = data.flat
    beta, u, _ = weighted_logit_newton(
        y, X1, X2, np.ones((len(y), 1)), np.zeros(data.p1), np.zeros((1, data.p2))
    )
    return beta, u[0]


def random_start(data: Dataset, n_states: int, kind: str, rng, spread=2.0, base=None) -> ParameterSet:
    """Random starting point around the single-state logistic fit.

    The first state effect of each state is perturbed by a centered normal
    with standard deviation ``spread``; the chain starts uniform.
    """
    beta, u0 = _logistic_start(data) if base is None else base
    J = n_states
    u = np.tile(u0, (J, 1))
    if data.p2:
        u[:, 0] += rng.normal(0.0, spread, size=J)
    if kind == "parametric":
        chain = ChainParamsParametric.zeros(J)
    elif kind == "saturated":
        strata = np.bincount(data.dropout_times - 1, minlength=data.horizon) > 0
        chain = ChainParamsSaturated.uniform(J, data.horizon, strata)
    elif kind == "mixing":
        chain = MixingParams.zeros(J)
    else:
        raise ValueError(f"unknown chain kind {kind!r}")
    return ParameterSet(beta, u, chain)


def _short_run(data, J, kind, config, seed, base):
    rng = np.random.default_rng(seed)
    theta0 = random_start(data, J, kind, rng, config.start_spread, base)
    try:
        theta, post, ll, _, _, n_iter, _ = run_em(data, theta0, config, tol=config.short_run_threshold)
    except (DegenerateLikelihoodError, ChainMStepError, FloatingPointError):
        return None
    return Candidate(theta, ll, is_spurious(post), n_iter, seed)


def _child_seeds(seed, n):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def short_run_init(data: Dataset, n_states: int, kind: str, config: EMConfig) -> list[Candidate]:
    """Short EM runs from random starts, ranked by log-likelihood.

    Candidates whose smallest average state occupancy is below ``0.5 / J``
    are flagged spurious and ranked after all others.
    """
    base = _logistic_start(data)
    seeds = _child_seeds(config.seed, config.n_short_starts)
    runs = Parallel(n_jobs=config.n_jobs)(
        delayed(_short_run)(data, n_states, kind, config, s, base) for s in seeds
    )
    cands = [c for c in runs if c is not None]
    if not cands:
        raise DegenerateLikelihoodError("every random start failed")
    return sorted(cands, key=lambda c: (c.spurious, -c.loglik))


def _kind_for(model: str, variant: str) -> str:
    if model == "m2":
        return "mixing"
    if model == "m1":
        if variant not in ("parametric", "saturated"):
            raise ValueError(f"unknown chain variant {variant!r}")
        return variant
    raise ValueError(f"unknown model {model!r}")


def _finish(data, theta, post, ll, trace, converged, n_iter, flags, model, refined=False):
    theta_sorted, perm = theta.sorted_states()
    post = post.permute(perm)
    return FitResult(
        theta=theta_sorted,
        loglik=float(ll),
        loglik_trace=list(trace),
        converged=converged,
        n_iter=n_iter,
        posteriors=post,
        model=model,
        spurious_flag=is_spurious(post),
        flags=set(flags),
        refined=refined,
    )


def fit_from(data: Dataset, theta0: ParameterSet, config: EMConfig | None = None, model: str | None = None) -> FitResult:
    """Single EM run (plus optional Newton refinement) from a given start."""
    config = config or EMConfig()
    model = model or ("m2" if theta0.kind == "mixing" else "m1")
    refine = config.refine_with_newton and theta0.kind != "saturated"
    stop_at = config.newton_trigger if refine else None
    theta, post, ll, trace, converged, n_iter, flags = run_em(data, theta0, config, stop_at=stop_at)
    refined = False
    if refine and converged:
        theta_r, info = refine_newton(data, theta, config)
        if info["improved"]:
            post, llr = e_step(data, theta_r)
            theta, ll, refined = theta_r, llr.total, True
            trace = trace + [ll]
        if not info["converged"]:
            # typically a chain coefficient drifting to infinity; finish with EM
            flags.add("newton_incomplete")
            theta, post, ll, more, converged, extra, f = run_em(data, theta, config)
            trace, n_iter, flags = trace + more[1:], n_iter + extra, flags | f
    return _finish(data, theta, post, ll, trace, converged, n_iter, flags, model, refined)


def _fit_multistart(data: Dataset, model_config: ModelConfig, config: EMConfig, model: str) -> FitResult:
    J = model_config.n_states
    kind = _kind_for(model, model_config.chain_variant)
    if J == 1:
        base = _logistic_start(data)
        theta0 = random_start(data, 1, kind, np.random.default_rng(config.seed), 0.0, base)
        return fit_from(data, theta0, config, model)
    cands = short_run_init(data, J, kind, config)[: config.n_long_runs]
    fits = Parallel(n_jobs=config.n_jobs)(delayed(_safe_fit)(data, c.theta, config, model) for c in cands)
    fits = [f for f in fits if f is not None]
    if not fits:
        raise DegenerateLikelihoodError("every long run failed")
    best = max(fits, key=lambda f: (not f.spurious_flag, f.loglik))
    return best


def _safe_fit(data, theta0, config, model):
    try:
        return fit_from(data, theta0, config, model)
    except (DegenerateLikelihoodError, ChainMStepError, FloatingPointError):
        return None


def fit_em(data: Dataset, model_config: ModelConfig, config: EMConfig | None = None) -> FitResult:
    """Fit the dropout-conditional latent Markov model (M1).

    Uses ``model_config.chain_variant`` for the chain laws.  Random starts
    are screened with short runs; the best ``n_long_runs`` candidates are
    run to ``final_tol`` and the highest non-spurious log-likelihood wins.
    """
    return _fit_multistart(data, model_config, config or EMConfig(), "m1")


def fit_time_constant(data: Dataset, model_config: ModelConfig, config: EMConfig | None = None) -> FitResult:
    """Fit the time-constant discrete random-effects baseline (M2)."""
    return _fit_multistart(data, model_config, config or EMConfig(), "m2")


def fit_model(data: Dataset, model_config: ModelConfig, model: str = "m1", config: EMConfig | None = None) -> FitResult:
    if model == "m1":
        return fit_em(data, model_config, config)
    if model == "m2":
        return fit_time_constant(data, model_config, config)
    raise ValueError(f"unknown model {model!r}")


# ---------------------------------------------------------------- Newton refinement


def _numeric_hessian(data, theta, vec, h=1e-5):
    d = vec.size
    H = np.empty((d, d))
    for a in range(d):
        step = h * max(1.0, abs(vec[a]))
        vp, vm = vec.copy(), vec.copy()
        vp[a] += step
        vm[a] -= step
        H[:, a] = (score(data, theta.from_vector(vp)) - score(data, theta.from_vector(vm))) / (2 * step)
    return 0.5 * (H + H.T)


def refine_newton(data: Dataset, theta: ParameterSet, config: EMConfig | None = None, max_iter: int = 50):
    """Newton ascent on the conditional log-likelihood from an EM solution.

    The Hessian is the central difference of the analytic score; its
    eigenvalues are sign-corrected and floored so every step is an ascent
    direction, and a backtracking line search enforces increase.  Returns
    ``(theta, info)``; ``info["converged"]`` is set when the score norm
    reaches ``config.newton_gtol``.  If no step improves the
    log-likelihood the input is returned unchanged with a warning.
    """
    config = config or EMConfig()
    if theta.kind == "saturated":
        raise TypeError("Newton refinement needs the parametric chain")
    fixed_slopes = None
    if not config.dropout_effect:
        fixed_slopes = np.array(["." in n and n.endswith(".1") and n.split(".")[0] in ("gamma", "phi")
                                 for n in theta.names()])
    vec = theta.to_vector()
    ll = conditional_loglik(data, theta).total
    ll0 = ll
    converged = False
    gnorm = np.inf
    for _ in range(max_iter):
        g = score(data, theta.from_vector(vec))
        if fixed_slopes is not None:
            g[fixed_slopes] = 0.0
        gnorm = float(np.linalg.norm(g))
        if gnorm <= config.newton_gtol:
            converged = True
            break
        H = _numeric_hessian(data, theta, vec)
        if fixed_slopes is not None:
            H[fixed_slopes] = 0.0
            H[:, fixed_slopes] = 0.0
            H[fixed_slopes, fixed_slopes] = -1.0
        lam, V = np.linalg.eigh(-H)
        floor = 1e-8 * max(1.0, np.abs(lam).max())
        lam = np.maximum(np.abs(lam), floor)
        direction = V @ ((V.T @ g) / lam)
        if fixed_slopes is not None:
            direction[fixed_slopes] = 0.0
        slope = float(g @ direction)
        t = 1.0
        accepted = False
        for _ in range(40):
            trial = vec + t * direction
            try:
                ll_t = conditional_loglik(data, theta.from_vector(trial)).total
            except DegenerateLikelihoodError:
                ll_t = -np.inf
            if np.isfinite(ll_t) and ll_t >= ll + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        vec, ll = trial, ll_t
    improved = ll > ll0
    info = {"converged": converged, "grad_norm": gnorm, "improved": improved, "loglik": ll}
    if not improved and not converged:
        warnings.warn("Newton refinement line search failed; keeping the EM estimate", RuntimeWarning)
        return theta, info
    return theta.from_vector(vec), info
