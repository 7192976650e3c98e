"""Dropout-conditional laws of the hidden chain.

Two parameterizations are provided.  The parametric one links the initial
and transition probabilities to the dropout time ``s`` through baseline
category logits with the last state as reference::

    pi_j(s)   = softmax_j(gamma[j, 0] + gamma[j, 1] * s)
    pi_kj(s)  = softmax_j(phi[k, j, 0] + phi[k, j, 1] * s)

The saturated one stores one probability vector and one transition matrix
per dropout stratum.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class UnseenStratumError(KeyError):
    pass


def ref_log_softmax(eta: np.ndarray) -> np.ndarray:
    """Log-probabilities of a baseline-category logit.

    ``eta`` has shape ``(..., J-1)``; the reference category gets predictor 0
    and is appended last.
    """
    eta = np.asarray(eta, dtype=float)
    full = np.concatenate([eta, np.zeros(eta.shape[:-1] + (1,))], axis=-1)
    m = full.max(axis=-1, keepdims=True)
    return full - (m + np.log(np.exp(full - m).sum(axis=-1, keepdims=True)))


def ref_softmax(eta: np.ndarray) -> np.ndarray:
    return np.exp(ref_log_softmax(eta))


@dataclass(frozen=True)
class ChainParamsParametric:
    """Logit coefficients of the chain laws.

    gamma : ndarray of shape (J-1, 2)
        Intercept and dropout-time slope of the initial logits.
    phi : ndarray of shape (J, J-1, 2)
        ``phi[k, j]`` are the coefficients for moving from ``k`` to ``j``.
    """

    gamma: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=float).reshape(-1, 2)
        J = gamma.shape[0] + 1
        phi = np.asarray(self.phi, dtype=float).reshape(J, J - 1, 2)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "phi", phi)

    @property
    def n_states(self) -> int:
        return self.gamma.shape[0] + 1

    @classmethod
    def zeros(cls, n_states: int) -> "ChainParamsParametric":
        return cls(np.zeros((n_states - 1, 2)), np.zeros((n_states, n_states - 1, 2)))

    @property
    def n_free(self) -> int:
        J = self.n_states
        return 2 * (J - 1) + 2 * J * (J - 1)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.gamma.ravel(), self.phi.ravel()])

    @classmethod
    def from_vector(cls, vec: np.ndarray, n_states: int) -> "ChainParamsParametric":
        J = n_states
        ng = 2 * (J - 1)
        return cls(vec[:ng].reshape(J - 1, 2), vec[ng:].reshape(J, J - 1, 2))

    def names(self) -> list[str]:
        J = self.n_states
        out = [f"gamma.{j + 1}.{c}" for j in range(J - 1) for c in (0, 1)]
        out += [f"phi.{k + 1}.{j + 1}.{c}" for k in range(J) for j in range(J - 1) for c in (0, 1)]
        return out

    def permute(self, perm) -> "ChainParamsParametric":
        """Relabel states so that new state ``a`` is old state ``perm[a]``."""
        perm = np.asarray(perm)
        J = self.n_states
        g = np.vstack([self.gamma, np.zeros((1, 2))])[perm]
        g = g - g[-1]
        p = np.concatenate([self.phi, np.zeros((J, 1, 2))], axis=1)[perm][:, perm]
        p = p - p[:, -1:, :]
        return ChainParamsParametric(g[:-1], p[:, :-1])


@dataclass(frozen=True)
class MixingParams:
    """Dropout-dependent class weights of the time-constant mixture."""

    gamma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=float).reshape(-1, 2))

    @property
    def n_states(self) -> int:
        return self.gamma.shape[0] + 1

    @classmethod
    def zeros(cls, n_states: int) -> "MixingParams":
        return cls(np.zeros((n_states - 1, 2)))

    @property
    def n_free(self) -> int:
        return 2 * (self.n_states - 1)

    def to_vector(self) -> np.ndarray:
        return self.gamma.ravel().copy()

    @classmethod
    def from_vector(cls, vec, n_states: int) -> "MixingParams":
        return cls(np.asarray(vec).reshape(n_states - 1, 2))

    def names(self) -> list[str]:
        return [f"gamma.{j + 1}.{c}" for j in range(self.n_states - 1) for c in (0, 1)]

    def permute(self, perm) -> "MixingParams":
        g = np.vstack([self.gamma, np.zeros((1, 2))])[np.asarray(perm)]
        return MixingParams((g - g[-1])[:-1])


@dataclass(frozen=True)
class ChainParamsSaturated:
    """Stratum-specific chain laws.

    initial : ndarray of shape (T, J)
        Row ``t-1`` is the initial distribution for subjects with ``S_i = t``.
    transition : ndarray of shape (T, J, J)
    strata : ndarray of bool, shape (T,)
        Which dropout times were present when the laws were estimated.
    """

    initial: np.ndarray
    transition: np.ndarray
    strata: np.ndarray

    def __post_init__(self):
        initial = np.asarray(self.initial, dtype=float)
        transition = np.asarray(self.transition, dtype=float)
        strata = np.asarray(self.strata, dtype=bool)
        if initial.ndim != 2 or transition.shape != initial.shape + (initial.shape[1],):
            raise ValueError("initial must be (T, J) and transition (T, J, J)")
        if strata.shape != (initial.shape[0],):
            raise ValueError("strata must have length T")
        tol = 1e-12 * max(1, initial.shape[1])
        if np.any(initial < 0) or np.any(transition < 0):
            raise ValueError("probabilities must be non-negative")
        if np.any(np.abs(initial[strata].sum(-1) - 1) > tol) or np.any(
            np.abs(transition[strata].sum(-1) - 1) > tol
        ):
            raise ValueError("chain laws must sum to one")
        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "strata", strata)

    @property
    def n_states(self) -> int:
        return self.initial.shape[1]

    @property
    def horizon(self) -> int:
        return self.initial.shape[0]

    @classmethod
    def uniform(cls, n_states: int, horizon: int, strata=None) -> "ChainParamsSaturated":
        J, T = n_states, horizon
        strata = np.ones(T, dtype=bool) if strata is None else strata
        return cls(np.full((T, J), 1 / J), np.full((T, J, J), 1 / J), strata)

    @property
    def n_free(self) -> int:
        J, T = self.n_states, self.horizon
        return T * (J - 1) + T * J * (J - 1)

    def names(self) -> list[str]:
        J, T = self.n_states, self.horizon
        out = [f"pi.{t + 1}.{j + 1}" for t in range(T) for j in range(J)]
        out += [f"A.{t + 1}.{k + 1}.{j + 1}" for t in range(T) for k in range(J) for j in range(J)]
        return out

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.initial.ravel(), self.transition.ravel()])

    def permute(self, perm) -> "ChainParamsSaturated":
        perm = np.asarray(perm)
        return ChainParamsSaturated(
            self.initial[:, perm], self.transition[:, perm][:, :, perm], self.strata
        )


@dataclass(frozen=True)
class ChainLaws:
    """Initial distribution and transition matrix of one subject's chain."""

    initial: np.ndarray
    transition: np.ndarray

    def __post_init__(self):
        initial = np.asarray(self.initial, dtype=float)
        transition = np.asarray(self.transition, dtype=float)
        J = initial.shape[-1]
        if transition.shape[-2:] != (J, J):
            raise ValueError("transition must be J x J")
        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "transition", transition)

    @property
    def n_states(self) -> int:
        return self.initial.shape[-1]


def initial_probs(params, s) -> np.ndarray:
    """Initial state distribution given dropout time ``s`` (scalar or array)."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 1):
        raise ValueError("dropout time must be >= 1")
    gamma = params.gamma
    eta = gamma[:, 0] + gamma[:, 1] * s[..., None]
    return ref_softmax(eta)


def log_initial_probs(params, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    gamma = params.gamma
    return ref_log_softmax(gamma[:, 0] + gamma[:, 1] * s[..., None])


def transition_matrix(params: ChainParamsParametric, s) -> np.ndarray:
    """Row-stochastic transition matrix given dropout time ``s``."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 1):
        raise ValueError("dropout time must be >= 1")
    phi = params.phi
    eta = phi[..., 0] + phi[..., 1] * s[..., None, None]
    return ref_softmax(eta)


def chain_laws(params, s) -> ChainLaws:
    """Chain laws implied by the dropout time(s) ``s``.

    With an array of dropout times the returned laws are stacked along the
    leading axis.  :class:`MixingParams` yields an identity transition (the
    class is fixed over time).
    """
    s_arr = np.asarray(s)
    if isinstance(params, ChainParamsSaturated):
        idx = s_arr.astype(int) - 1
        if np.any(idx < 0) or np.any(idx >= params.horizon) or not np.all(params.strata[idx]):
            raise UnseenStratumError(f"dropout time(s) {np.unique(s_arr)} not among fitted strata")
        return ChainLaws(params.initial[idx], params.transition[idx])
    if isinstance(params, MixingParams):
        init = initial_probs(params, s_arr)
        eye = np.broadcast_to(np.eye(params.n_states), init.shape[:-1] + (params.n_states,) * 2)
        return ChainLaws(init, eye.copy())
    return ChainLaws(initial_probs(params, s_arr), transition_matrix(params, s_arr))


def chain_items(params) -> list[tuple[str, float]]:
    """Flat ``(key, value)`` pairs for serialization."""
    return list(zip(params.names(), map(float, params.to_vector())))


def chain_from_items(items: dict, n_states: int, kind: str, horizon: int | None = None):
    """Rebuild chain parameters from :func:`chain_items` output.

    ``kind`` is ``"parametric"``, ``"saturated"`` or ``"mixing"``.
    """
    J = n_states
    if kind == "mixing":
        return MixingParams.from_vector([items[n] for n in MixingParams.zeros(J).names()], J)
    if kind == "parametric":
        names = ChainParamsParametric.zeros(J).names()
        return ChainParamsParametric.from_vector(np.array([items[n] for n in names]), J)
    if kind == "saturated":
        if horizon is None:
            raise ValueError("saturated parameters need the horizon")
        T = horizon
        initial = np.array([[items[f"pi.{t + 1}.{j + 1}"] for j in range(J)] for t in range(T)])
        transition = np.array(
            [[[items[f"A.{t + 1}.{k + 1}.{j + 1}"] for j in range(J)] for k in range(J)] for t in range(T)]
        )
        strata = np.all(np.isfinite(initial), axis=1)
        return ChainParamsSaturated(initial, transition, strata)
    raise ValueError(f"unknown chain kind {kind!r}")
