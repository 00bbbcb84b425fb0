"""scikit-learn style wrapper around the PSMD fit and its inference."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_regressor, to_dataset
from .functionals import Functional, parse_functional
from .inference import InferenceReport, invert_sqlr_ci, score_test, sqlr_test, wald_test
from .models import ModelSpec
from .psmd import OptimConfig, fit_design, fit_restricted_design, prepare_design
from .variance import plugin_variances, slope_variance

__all__ = ["PSMDRegressor"]


class PSMDRegressor(RegressorMixin, BaseEstimator):
    """Penalized sieve minimum distance estimator of ``h`` in ``E[rho(Y1, h(Y2)) | X] = 0``.

    Parameters
    ----------
    model : {"npiv", "npqiv"}
        ``rho = y1 - h(y2)`` or ``rho = 1{y1 <= h(y2)} - gamma``.
    qbasis, pbasis : str
        Sieve for ``h`` and instrument basis, as ``"pol:J"`` or ``"pspline:r:k"``.
    lam : float
        Penalty weight on ``||h||^2 + ||h'||^2``.
    gamma : float
        Quantile for ``model="npqiv"``.
    weighting : {"identity", "known", "sigma0"}
        Criterion weighting; ``known`` uses the constant ``sigma2``.
    restarts, max_iters, xtol, ftol : simplex settings for NPQIV.
    random_state : int
        Seed of the simplex restarts.

    Attributes
    ----------
    coef_ : ndarray of shape (k,)
        Sieve coefficients of ``h``.
    spec_ : ModelSpec
        Model with knots and supports resolved on the training sample.
    fit_result_ : FitResult
    n_features_in_ : int
        Always 1; ``X`` holds the endogenous regressor.
    """

    def __init__(
        self,
        model: str = "npiv",
        qbasis: str = "pol:4",
        pbasis: str = "pol:6",
        lam: float = 0.0,
        gamma: float = 0.5,
        weighting: str = "identity",
        sigma2: float | None = None,
        restarts: int = 5,
        max_iters: int = 2000,
        xtol: float = 1e-8,
        ftol: float = 1e-10,
        random_state: int = 0,
    ):
        self.model = model
        self.qbasis = qbasis
        self.pbasis = pbasis
        self.lam = lam
        self.gamma = gamma
        self.weighting = weighting
        self.sigma2 = sigma2
        self.restarts = restarts
        self.max_iters = max_iters
        self.xtol = xtol
        self.ftol = ftol
        self.random_state = random_state

    def _model_spec(self) -> ModelSpec:
        return ModelSpec(self.model, self.qbasis, self.pbasis, lam=self.lam, gamma=self.gamma,
                         weighting=self.weighting, sigma2=self.sigma2)

    def _optim(self) -> OptimConfig:
        return OptimConfig(self.max_iters, self.restarts, self.xtol, self.ftol, self.random_state)

    def fit(self, X, y, Z=None):
        """Fit on endogenous regressor ``X``, outcome ``y`` and instruments ``Z``.

        Without ``Z`` the regressor instruments itself (exogenous case).
        """
        data = to_dataset(X, y, Z)
        self.n_features_in_ = 1
        self.design_ = prepare_design(self._model_spec(), data)
        self.fit_result_ = fit_design(self.design_, self._optim())
        self.spec_ = self.fit_result_.spec
        self.coef_ = self.fit_result_.beta
        return self

    def predict(self, X) -> np.ndarray:
        """Fitted ``h`` at the regressor values ``X``."""
        check_is_fitted(self, "coef_")
        return self.fit_result_.h(check_regressor(X))

    def _functional(self, functional) -> Functional:
        if isinstance(functional, str):
            return parse_functional(functional, sample=self.design_.data.y2)
        return functional

    def sieve_variance(self, functional, which: str = "v1") -> float:
        """Plug-in variance of ``sqrt(n) phi(h_hat)`` (``which`` = ``"v1"`` or ``"v2"``)."""
        check_is_fitted(self, "coef_")
        est = plugin_variances(self.design_, self.fit_result_, self._functional(functional))
        return est.v1 if which == "v1" else est.v2

    def wald_test(self, functional, phi0: float, which: str = "v1", level: float = 0.95) -> InferenceReport:
        f = self._functional(functional)
        v = self.sieve_variance(f, which)
        return wald_test(self.fit_result_, f, phi0, v, self.design_.n, level)

    def sqlr_test(self, functional, phi0: float) -> InferenceReport:
        check_is_fitted(self, "coef_")
        f = self._functional(functional)
        restricted = fit_restricted_design(self.design_, f, phi0, self._optim(), start=self.coef_)
        return sqlr_test(self.fit_result_, restricted, self.design_.n, self.spec_.optimal, f, phi0)

    def score_test(self, functional, phi0: float) -> InferenceReport:
        check_is_fitted(self, "coef_")
        f = self._functional(functional)
        restricted = fit_restricted_design(self.design_, f, phi0, self._optim(), start=self.coef_)
        return score_test(self.spec_, self.design_.data, restricted, f, design=self.design_)

    def confidence_set(self, functional, level: float = 0.95, critical: float | None = None):
        """SQLR-inverted confidence set for ``phi(h)``."""
        check_is_fitted(self, "coef_")
        return invert_sqlr_ci(self.spec_, self.design_.data, self.fit_result_, self._functional(functional),
                              level, self._optim(), critical=critical, design=self.design_)

    def slope_variance(self, functional, eps: float | None = None) -> float:
        check_is_fitted(self, "coef_")
        return slope_variance(self.spec_, self.design_.data, self.fit_result_, self._functional(functional),
                              eps, self._optim(), design=self.design_)

