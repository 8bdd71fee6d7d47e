"""Scikit-learn style estimator wrapping the additive-model engine.

``AdditiveModel`` follows the usual conventions: constructor arguments are
stored untouched, ``fit(X, y)`` validates input and creates trailing
underscore attributes, and ``get_params``/``set_params``/``clone`` work as
for any other estimator. Columns of ``X`` are named ``x0, x1, ...``
internally; smooth and linear terms are selected by column index.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .assembly import Dataset, ModelSpec, SmoothSpec
from .fit import fit_additive_model
from .posterior import (
    corrected_cov,
    posterior_cov,
    simulate_posterior,
    term_band,
)


class AdditiveModel(RegressorMixin, BaseEstimator):
    """Penalized additive model with REML-selected smoothness.

    Parameters
    ----------
    family : str
        ``"gaussian"``, ``"poisson"`` or ``"binomial"``.
    k : int
        Basis size per smooth term.
    mode : str
        Penalty mode for every smooth: ``"plain"``, ``"shrinkage"`` or
        ``"double"``. The latter two allow whole-term selection.
    smooth_features : "all" or sequence of int
        Which columns of ``X`` get a smooth. Remaining columns are dropped
        unless listed in ``linear_features``.
    linear_features : sequence of int, optional
        Columns entering linearly.
    n_starts : int
        Random restarts for the smoothing-parameter search.
    seed : int
        Seed for the restart draw.

    Attributes
    ----------
    model_ : FittedModel
        Full fitting state (design, coefficients, covariances on request).
    coef_ : ndarray
        Coefficient vector, intercept first.
    lambda_ : ndarray
        Estimated smoothing parameters.
    phi_ : float
        Estimated (or known) scale parameter.
    edf_per_term_ : dict
        Effective degrees of freedom by term name.

    Examples
    --------
    >>> import numpy as np
    >>> rng = np.random.default_rng(1)
    >>> X = rng.uniform(size=(200, 1))
    >>> y = np.sin(2 * np.pi * X[:, 0]) + 0.3 * rng.standard_normal(200)
    >>> m = AdditiveModel().fit(X, y)
    >>> m.predict(X[:3]).shape
    (3,)
    """

    def __init__(self, family="gaussian", k=10, mode="plain",
                 smooth_features="all", linear_features=None,
                 n_starts=5, seed=0):
        self.family = family
        self.k = k
        self.mode = mode
        self.smooth_features = smooth_features
        self.linear_features = linear_features
        self.n_starts = n_starts
        self.seed = seed

    def _spec(self, n_features: int) -> ModelSpec:
        if self.smooth_features == "all":
            smooth_idx = list(range(n_features))
        else:
            smooth_idx = [int(i) for i in self.smooth_features]
        linear_idx = [int(i) for i in (self.linear_features or [])]
        for idx in smooth_idx + linear_idx:
            if not 0 <= idx < n_features:
                raise ValueError(
                    f"feature index {idx} out of range for "
                    f"{n_features}-column input"
                )
        overlap = set(smooth_idx) & set(linear_idx)
        if overlap:
            raise ValueError(f"features {sorted(overlap)} listed as both "
                             "smooth and linear")
        return ModelSpec(
            response="y",
            family=self.family,
            parametric_terms=tuple(f"x{i}" for i in linear_idx),
            smooths=tuple(SmoothSpec(covariate=f"x{i}", k=self.k,
                                     mode=self.mode) for i in smooth_idx),
        )

    def _dataset(self, X, y=None) -> Dataset:
        cols = {f"x{i}": X[:, i] for i in range(X.shape[1])}
        if y is not None:
            cols["y"] = y
        return Dataset(cols)

    def fit(self, X, y):
        """Fit the model to ``X`` (2-d) and ``y`` (1-d)."""
        X, y = check_X_y(X, y, y_numeric=True)
        spec = self._spec(X.shape[1])
        self.n_features_in_ = X.shape[1]
        self.model_ = fit_additive_model(
            self._dataset(X, y), spec,
            n_starts=self.n_starts, seed=self.seed,
        )
        self.coef_ = self.model_.beta_hat
        self.lambda_ = self.model_.lambda_hat
        self.rho_ = self.model_.rho_hat
        self.phi_ = self.model_.phi_hat
        self.edf_per_term_ = self.model_.edf_per_term
        self.edf_total_ = self.model_.edf_total
        self.reml_criterion_ = self.model_.reml_value
        return self

    def predict(self, X):
        """Predicted mean response at ``X``."""
        check_is_fitted(self, "model_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected "
                f"{self.n_features_in_}"
            )
        return self.model_.predict(self._dataset(X))

    def posterior_covariance(self, kind: str = "eb") -> np.ndarray:
        """Coefficient covariance, ``"eb"`` or ``"corrected"``."""
        check_is_fitted(self, "model_")
        if kind == "eb":
            return posterior_cov(self.model_).V
        if kind == "corrected":
            return corrected_cov(self.model_).V
        raise ValueError(f"kind must be 'eb' or 'corrected', got {kind!r}")

    def partial_effect(self, feature: int, n_grid: int = 200,
                       alpha: float = 0.05):
        """Centered smooth effect of one feature with a credible band.

        Returns an ``IntervalBand`` over an even grid spanning the feature's
        observed range.
        """
        check_is_fitted(self, "model_")
        return term_band(self.model_, f"s(x{int(feature)})",
                         n_grid=n_grid, alpha=alpha)

    def sample_posterior(self, X, n_draws: int = 1000, seed: int = 0,
                         summary=None):
        """Posterior draws of the mean response at ``X``."""
        check_is_fitted(self, "model_")
        X = check_array(X)
        from .assembly import prediction_matrix

        Lp = prediction_matrix(self.model_.term_map, self.model_.design.p,
                               self._dataset(X))
        return simulate_posterior(self.model_, Lp, n_draws=n_draws,
                                  seed=seed, summary=summary)
