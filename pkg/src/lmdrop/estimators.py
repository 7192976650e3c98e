"""Estimator interface following scikit-learn conventions.

``X`` is always a :class:`~lmdrop.data.Dataset`; the responses live inside
it, so ``y`` is accepted and ignored for pipeline compatibility.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import Dataset, ModelConfig
from .em import EMConfig, FitResult, e_step, fit_model
from .inference import CriteriaRow, classification_index, information_criteria, local_decode
from .likelihood import Posteriors, conditional_loglik


def check_dataset(X, estimator=None) -> Dataset:
    """Validate ``X`` and, for a fitted estimator, its covariate dimensions."""
    if not isinstance(X, Dataset):
        raise TypeError(f"expected a Dataset, got {type(X).__name__}")
    if estimator is not None and hasattr(estimator, "params_"):
        theta = estimator.params_
        if X.p1 != theta.beta.size or X.p2 != theta.u.shape[1]:
            raise ValueError(
                f"dataset has (p1, p2) = ({X.p1}, {X.p2}); "
                f"estimator was fitted with ({theta.beta.size}, {theta.u.shape[1]})"
            )
    return X


class _DropoutModelBase(BaseEstimator):
    _model = "m1"

    def _em_config(self) -> EMConfig:
        return EMConfig(
            short_run_threshold=self.short_run_threshold,
            final_tol=self.tol,
            n_short_starts=self.n_short_starts,
            n_long_runs=self.n_long_runs,
            max_iter=self.max_iter,
            refine_with_newton=self.refine_with_newton,
            dropout_effect=self.dropout_effect,
            seed=self.random_state,
            n_jobs=self.n_jobs,
        )

    def _model_config(self, X: Dataset) -> ModelConfig:
        return ModelConfig(
            n_states=self.n_states,
            chain_variant=getattr(self, "chain_variant", "parametric"),
            fixed_columns=X.fixed_names,
            state_columns=X.state_names,
            random_intercept=X.random_intercept,
            horizon=X.horizon,
        )

    def fit(self, X, y=None):
        X = check_dataset(X)
        res = fit_model(X, self._model_config(X), self._model, self._em_config())
        self._store(res, X)
        return self

    def _store(self, res: FitResult, X: Dataset):
        self.fit_result_ = res
        self.params_ = res.theta
        self.loglik_ = res.loglik
        self.n_iter_ = res.n_iter
        self.converged_ = res.converged
        self.horizon_ = X.horizon
        self.n_parameters_ = res.theta.n_free

    def predict_proba(self, X) -> Posteriors:
        """Smoothed state posteriors for every subject."""
        check_is_fitted(self, "params_")
        X = check_dataset(X, self)
        return e_step(X, self.params_)[0]

    def predict(self, X) -> list:
        """Locally decoded state sequences (0-based, ordered by intercept)."""
        states, _ = local_decode(self.predict_proba(X))
        return states

    def score_samples(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        return conditional_loglik(check_dataset(X, self), self.params_).per_subject

    def score(self, X, y=None) -> float:
        """Conditional log-likelihood of ``X`` given the dropout times."""
        check_is_fitted(self, "params_")
        return conditional_loglik(check_dataset(X, self), self.params_).total

    def criteria(self, X) -> CriteriaRow:
        check_is_fitted(self, "params_")
        X = check_dataset(X, self)
        return information_criteria(self.score(X), self.n_parameters_, X.n, allow_undefined=True)

    def aic(self, X) -> float:
        return self.criteria(X).AIC

    def bic(self, X) -> float:
        return self.criteria(X).BIC

    def classification_index(self, X) -> float:
        return classification_index(self.predict_proba(X))


class LatentMarkovDropout(_DropoutModelBase):
    """Latent Markov random-effects logit with dropout-conditional chain laws.

    Parameters
    ----------
    n_states : int
        Number of latent states.
    chain_variant : {"parametric", "saturated"}
        Logit-in-dropout-time chain laws or one free law per dropout time.
    dropout_effect : bool
        If False the chain laws do not depend on the dropout time.
    n_short_starts, n_long_runs : int
        Random starts screened by short EM runs, and how many of the best
        are run to convergence.
    short_run_threshold, tol : float
        Relative log-likelihood change ending short and long runs.
    max_iter : int
    refine_with_newton : bool
        Finish with Newton steps on the log-likelihood (parametric only).
    random_state : int or None
    n_jobs : int or None
        Parallel workers for the random starts.
    """

    _model = "m1"

    def __init__(
        self,
        n_states=2,
        chain_variant="parametric",
        dropout_effect=True,
        n_short_starts=20,
        n_long_runs=10,
        short_run_threshold=1e-2,
        tol=1e-5,
        max_iter=1000,
        refine_with_newton=True,
        random_state=0,
        n_jobs=None,
    ):
        self.n_states = n_states
        self.chain_variant = chain_variant
        self.dropout_effect = dropout_effect
        self.n_short_starts = n_short_starts
        self.n_long_runs = n_long_runs
        self.short_run_threshold = short_run_threshold
        self.tol = tol
        self.max_iter = max_iter
        self.refine_with_newton = refine_with_newton
        self.random_state = random_state
        self.n_jobs = n_jobs


class TimeConstantMixture(_DropoutModelBase):
    """Finite mixture of random-intercept logits with dropout-dependent weights.

    The latent class is fixed over time; class weights follow a
    baseline-category logit in the dropout time.  Parameters as for
    :class:`LatentMarkovDropout` without ``chain_variant``.
    """

    _model = "m2"

    def __init__(
        self,
        n_states=2,
        dropout_effect=True,
        n_short_starts=20,
        n_long_runs=10,
        short_run_threshold=1e-2,
        tol=1e-5,
        max_iter=1000,
        refine_with_newton=True,
        random_state=0,
        n_jobs=None,
    ):
        self.n_states = n_states
        self.dropout_effect = dropout_effect
        self.n_short_starts = n_short_starts
        self.n_long_runs = n_long_runs
        self.short_run_threshold = short_run_threshold
        self.tol = tol
        self.max_iter = max_iter
        self.refine_with_newton = refine_with_newton
        self.random_state = random_state
        self.n_jobs = n_jobs
