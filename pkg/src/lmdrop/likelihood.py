"""Emission model, scaled forward-backward recursions and the score.

All recursions run on time-padded arrays so that every subject is processed
in one vectorized pass; times after a subject's dropout carry a unit
emission, which leaves the likelihood unchanged, and their posteriors are
zeroed.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from .chain import (
    ChainLaws,
    ChainParamsParametric,
    ChainParamsSaturated,
    MixingParams,
    chain_laws,
)
from .data import Dataset, SubjectPanel


class DegenerateLikelihoodError(FloatingPointError):
    """Every trajectory has zero probability for some subject."""


@dataclass(frozen=True)
class EmissionParams:
    """Fixed effects ``beta`` (p1,) and state effects ``u`` (J, p2)."""

    beta: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float).ravel())
        u = np.asarray(self.u, dtype=float)
        object.__setattr__(self, "u", u.reshape(u.shape[0], -1) if u.ndim else u.reshape(1, 1))

    @property
    def n_states(self) -> int:
        return self.u.shape[0]


@dataclass(frozen=True)
class ParameterSet:
    """Full parameter vector of a fitted or generating model.

    ``chain`` is :class:`ChainParamsParametric` or :class:`ChainParamsSaturated`
    for the latent Markov model and :class:`MixingParams` for the
    time-constant mixture.
    """

    beta: np.ndarray
    u: np.ndarray
    chain: object

    def __post_init__(self):
        em = EmissionParams(self.beta, self.u)
        object.__setattr__(self, "beta", em.beta)
        object.__setattr__(self, "u", em.u)
        if self.chain.n_states != em.n_states:
            raise ValueError("chain and state effects disagree on the number of states")

    @property
    def emission(self) -> EmissionParams:
        return EmissionParams(self.beta, self.u)

    @property
    def n_states(self) -> int:
        return self.u.shape[0]

    @property
    def kind(self) -> str:
        if isinstance(self.chain, ChainParamsSaturated):
            return "saturated"
        if isinstance(self.chain, MixingParams):
            return "mixing"
        return "parametric"

    @property
    def n_free(self) -> int:
        return self.beta.size + self.u.size + self.chain.n_free

    def to_vector(self) -> np.ndarray:
        """Unconstrained parameter vector (parametric and mixing chains only)."""
        if self.kind == "saturated":
            raise TypeError("saturated chain laws have no unconstrained vector form")
        return np.concatenate([self.beta, self.u.ravel(), self.chain.to_vector()])

    def from_vector(self, vec) -> "ParameterSet":
        """Parameter set of the same shape filled from ``vec``."""
        vec = np.asarray(vec, dtype=float)
        p1, J, p2 = self.beta.size, self.n_states, self.u.shape[1]
        beta = vec[:p1]
        u = vec[p1 : p1 + J * p2].reshape(J, p2)
        chain = type(self.chain).from_vector(vec[p1 + J * p2 :], J)
        return ParameterSet(beta, u, chain)

    def names(self, x1_names=None, x2_names=None) -> list[str]:
        p1, J, p2 = self.beta.size, self.n_states, self.u.shape[1]
        x1_names = list(x1_names) if x1_names is not None else [str(a + 1) for a in range(p1)]
        x2_names = list(x2_names) if x2_names is not None else [str(b + 1) for b in range(p2)]
        out = [f"beta.{nm}" for nm in x1_names]
        out += [f"u.{j + 1}.{nm}" for j in range(J) for nm in x2_names]
        return out + self.chain.names()

    def items(self, x1_names=None, x2_names=None) -> list[tuple[str, float]]:
        vals = np.concatenate([self.beta, self.u.ravel(), self.chain.to_vector()])
        return list(zip(self.names(x1_names, x2_names), map(float, vals)))

    def permute(self, perm) -> "ParameterSet":
        perm = np.asarray(perm)
        return ParameterSet(self.beta, self.u[perm], self.chain.permute(perm))

    def sorted_states(self) -> tuple["ParameterSet", np.ndarray]:
        """States reordered by ascending first state effect (the intercept)."""
        perm = np.argsort(self.u[:, 0], kind="stable")
        return self.permute(perm), perm


@dataclass(frozen=True)
class Posteriors:
    """Smoothed state and transition probabilities.

    xi : ndarray (n, T, J)
        ``xi[i, t, j]`` for ``t < S_i``; zero afterwards.
    zeta : ndarray (n, T-1, J, J)
        ``zeta[i, t-1, k, j]`` is the probability of ``k`` at ``t-1`` and
        ``j`` at ``t`` (0-based ``t``); zero for ``t >= S_i``.
    lengths : ndarray (n,)
    """

    xi: np.ndarray
    zeta: np.ndarray
    lengths: np.ndarray

    @property
    def n_states(self) -> int:
        return self.xi.shape[-1]

    def subject_xi(self, i: int) -> np.ndarray:
        return self.xi[i, : self.lengths[i]]

    def subject_zeta(self, i: int) -> np.ndarray:
        return self.zeta[i, : max(self.lengths[i] - 1, 0)]

    def permute(self, perm) -> "Posteriors":
        perm = np.asarray(perm)
        return Posteriors(self.xi[..., perm], self.zeta[..., perm, :][..., perm], self.lengths)


@dataclass(frozen=True)
class LogLikelihood:
    total: float
    per_subject: np.ndarray


def emission_prob(y, x1, x2, params: EmissionParams, state: int) -> float:
    """Bernoulli-logit probability of ``y`` in ``state`` (0-based)."""
    eta = float(np.dot(x1, params.beta) + np.dot(x2, params.u[state]))
    p = expit(eta)
    return float(p if y == 1 else 1.0 - p)


def linear_predictor(x1, x2, beta, u) -> np.ndarray:
    """``x1 @ beta + x2 @ u_j`` for every state, on a trailing axis."""
    return (x1 @ beta)[..., None] + x2 @ u.T


def log_emissions(data: Dataset, em: EmissionParams) -> np.ndarray:
    """``log f(y_it | state j)`` of shape (n, T, J); zero at unobserved times."""
    a = data.arrays
    eta = linear_predictor(a.x1, a.x2, em.beta, em.u)
    y = a.y[..., None]
    le = y * log_expit(eta) + (1.0 - y) * log_expit(-eta)
    return np.where(a.mask[..., None], le, 0.0)


def _forward_backward_arrays(log_emis, initial, transition, lengths, posteriors=True):
    """Scaled forward-backward on padded arrays.

    log_emis (n, T, J); initial (n, J); transition (n, J, J).
    Returns per-subject log-likelihoods and, if requested, (xi, zeta).
    """
    n, T, J = log_emis.shape
    m = log_emis.max(axis=2, keepdims=True)
    e = np.exp(log_emis - m)
    alpha = np.empty((n, T, J))
    logc = np.empty((n, T))
    c_all = np.empty((n, T))
    a = initial * e[:, 0]
    for t in range(T):
        if t > 0:
            a = np.einsum("nk,nkj->nj", alpha[:, t - 1], transition) * e[:, t]
        c = a.sum(axis=1)
        if np.any(~(c > 0)) or not np.all(np.isfinite(c)):
            bad = np.flatnonzero(~(c > 0) | ~np.isfinite(c))
            raise DegenerateLikelihoodError(
                f"zero likelihood for subject index(es) {bad[:5].tolist()} at time {t + 1}"
            )
        alpha[:, t] = a / c[:, None]
        c_all[:, t] = c
        logc[:, t] = np.log(c) + m[:, t, 0]
    loglik = logc.sum(axis=1)
    if not posteriors:
        return loglik, None, None

    beta = np.empty((n, T, J))
    beta[:, T - 1] = 1.0
    for t in range(T - 2, -1, -1):
        w = e[:, t + 1] * beta[:, t + 1] / c_all[:, t + 1, None]
        beta[:, t] = np.einsum("nkj,nj->nk", transition, w)
    xi = alpha * beta
    zeta = np.empty((n, max(T - 1, 0), J, J))
    if T > 1:
        w = e[:, 1:] * beta[:, 1:] / c_all[:, 1:, None]  # (n, T-1, J)
        zeta = alpha[:, :-1, :, None] * transition[:, None] * w[:, :, None, :]
    t_idx = np.arange(T)
    obs = t_idx[None, :] < lengths[:, None]
    xi = np.where(obs[..., None], xi, 0.0)
    if T > 1:
        zeta = np.where(obs[:, 1:, None, None], zeta, 0.0)
    return loglik, xi, zeta


def forward_backward(panel: SubjectPanel, laws: ChainLaws, em: EmissionParams):
    """Log-likelihood and posteriors of a single subject.

    Returns
    -------
    loglik : float
    xi : ndarray (S_i, J)
    zeta : ndarray (S_i - 1, J, J)
    """
    S = panel.dropout_time
    eta = linear_predictor(panel.x1, panel.x2, em.beta, em.u)
    y = panel.responses[:, None]
    le = y * log_expit(eta) + (1.0 - y) * log_expit(-eta)
    ll, xi, zeta = _forward_backward_arrays(
        le[None], laws.initial[None], laws.transition[None], np.array([S])
    )
    return float(ll[0]), xi[0], zeta[0]


def brute_force_loglik(panel: SubjectPanel, laws: ChainLaws, em: EmissionParams, max_paths: int = 10**6) -> float:
    """Log-likelihood by summing over every latent trajectory."""
    J, S = laws.n_states, panel.dropout_time
    if J**S > max_paths:
        raise ValueError(f"{J}**{S} trajectories exceed the enumeration guard {max_paths}")
    f = np.array(
        [[emission_prob(panel.responses[t], panel.x1[t], panel.x2[t], em, j) for j in range(J)] for t in range(S)]
    )
    total = 0.0
    for path in itertools.product(range(J), repeat=S):
        p = laws.initial[path[0]] * f[0, path[0]]
        for t in range(1, S):
            p *= laws.transition[path[t - 1], path[t]] * f[t, path[t]]
        total += p
    return float(np.log(total))


def _model_laws(data: Dataset, theta: ParameterSet) -> ChainLaws:
    return chain_laws(theta.chain, data.dropout_times)


def forward_backward_data(data: Dataset, theta: ParameterSet, posteriors: bool = True):
    """Run the recursions for every subject; returns (LogLikelihood, Posteriors | None)."""
    laws = _model_laws(data, theta)
    le = log_emissions(data, theta.emission)
    ll, xi, zeta = _forward_backward_arrays(
        le, laws.initial, laws.transition, data.dropout_times, posteriors=posteriors
    )
    loglik = LogLikelihood(float(np.sum(ll)), ll)
    if not posteriors:
        return loglik, None
    return loglik, Posteriors(xi, zeta, data.dropout_times)


def conditional_loglik(data: Dataset, theta: ParameterSet) -> LogLikelihood:
    """Sum over subjects of ``log f(y_i1..y_iS_i | S_i)``."""
    return forward_backward_data(data, theta, posteriors=False)[0]


def _chain_score_rows(weights, totals, probs, s):
    """Gradient of a baseline-category logit block with covariate (1, s).

    weights (n, J) observed weights, totals (n,) their sums, probs (n, J)
    model probabilities; returns (J-1, 2).
    """
    resid = weights[:, :-1] - totals[:, None] * probs[:, :-1]
    z = np.stack([np.ones_like(s, dtype=float), s.astype(float)], axis=1)
    return resid.T @ z


def score(data: Dataset, theta: ParameterSet) -> np.ndarray:
    """Gradient of the conditional log-likelihood in ``theta.to_vector()`` order.

    Uses the Fisher identity: the observed-data score equals the expected
    complete-data score under the current posteriors.
    """
    if theta.kind == "saturated":
        raise TypeError("score is defined for the parametric and mixing chains only")
    _, post = forward_backward_data(data, theta)
    return score_from_posteriors(data, theta, post)


def score_from_posteriors(data: Dataset, theta: ParameterSet, post: Posteriors) -> np.ndarray:
    a = data.arrays
    s = data.dropout_times
    J = theta.n_states
    eta = linear_predictor(a.x1, a.x2, theta.beta, theta.u)
    resid = (a.y[..., None] - expit(eta)) * post.xi  # (n, T, J), zero when unobserved
    g_beta = np.einsum("ntj,ntp->p", resid, a.x1)
    g_u = np.einsum("ntj,ntq->jq", resid, a.x2)

    laws = chain_laws(theta.chain, s)
    xi1 = post.xi[:, 0]
    g_gamma = _chain_score_rows(xi1, xi1.sum(1), laws.initial, s)
    parts = [g_beta, g_u.ravel(), g_gamma.ravel()]
    if theta.kind == "parametric":
        zsum = post.zeta.sum(axis=1)  # (n, J, J)
        g_phi = np.stack(
            [_chain_score_rows(zsum[:, k], zsum[:, k].sum(1), laws.transition[:, k], s) for k in range(J)]
        )
        parts.append(g_phi.ravel())
    return np.concatenate(parts)
