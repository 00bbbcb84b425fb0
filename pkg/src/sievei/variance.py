"""Sieve Riesz representer and plug-in / slope variance estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .functionals import Functional, compile_functional
from .linalg import pinv
from .models import Design, WeightingError, sigma0_series
from .psmd import FitResult, OptimConfig, fit_restricted_design, prepare_design

__all__ = [
    "RieszSolution",
    "SlopeDegenerateError",
    "VarianceEstimates",
    "d_matrix",
    "omega_matrix",
    "plugin_variances",
    "riesz",
    "slope_variance",
    "upsilon_matrix",
    "variance_plugin",
]


class SlopeDegenerateError(ArithmeticError):
    """The criterion did not increase when moving the functional off its estimate."""


def _weighted_outer(dmhat, w) -> np.ndarray:
    dmhat = np.asarray(dmhat, dtype=float)
    w = np.broadcast_to(np.asarray(w, dtype=float), (dmhat.shape[0],))
    M = dmhat.T @ (w[:, None] * dmhat) / dmhat.shape[0]
    return 0.5 * (M + M.T)


def d_matrix(dmhat, sigma=1.0) -> np.ndarray:
    """``D = n^-1 sum_i d_i d_i' / Sigma_i`` with ``d_i`` the rows of ``dmhat``."""
    return _weighted_outer(dmhat, 1.0 / np.asarray(sigma, dtype=float))


def upsilon_matrix(dmhat, sigma, rho_hat) -> np.ndarray:
    """Outer-product middle matrix ``n^-1 sum_i d_i (rho_i^2 / Sigma_i^2) d_i'``."""
    sigma = np.asarray(sigma, dtype=float)
    rho_hat = np.asarray(rho_hat, dtype=float)
    return _weighted_outer(dmhat, rho_hat**2 / sigma**2)


def omega_matrix(dmhat, sigma, sigma0) -> np.ndarray:
    """Conditional-variance middle matrix ``n^-1 sum_i d_i (Sigma0_i / Sigma_i^2) d_i'``."""
    sigma = np.asarray(sigma, dtype=float)
    return _weighted_outer(dmhat, np.asarray(sigma0, dtype=float) / sigma**2)


def variance_plugin(D, middle, F) -> float:
    """Sandwich ``F' D^- middle D^- F`` (clipped at zero)."""
    g = pinv(D) @ np.asarray(F, dtype=float)
    return max(float(g @ np.asarray(middle, dtype=float) @ g), 0.0)


@dataclass(frozen=True)
class RieszSolution:
    """Coefficients ``gamma_star = D^- F`` of the sieve Riesz representer.

    ``in_range`` is False when ``F`` has a component outside ``range(D)``; the
    pseudo-inverse then represents only its projection.
    """

    gamma_star: np.ndarray
    D: np.ndarray
    F: np.ndarray
    norm_sq: float
    in_range: bool

    def variance(self, middle) -> float:
        """``gamma' middle gamma``, the sandwich variance for this representer."""
        g = self.gamma_star
        return max(float(g @ np.asarray(middle, dtype=float) @ g), 0.0)


def riesz(D, F) -> RieszSolution:
    D = np.asarray(D, dtype=float)
    F = np.asarray(F, dtype=float)
    g = pinv(D) @ F
    resid = D @ g - F
    scale = max(float(np.linalg.norm(F)), 1e-300)
    return RieszSolution(
        gamma_star=g,
        D=D,
        F=F,
        norm_sq=max(float(g @ D @ g), 0.0),
        in_range=bool(np.linalg.norm(resid) <= 1e-6 * scale),
    )


@dataclass(frozen=True)
class VarianceEstimates:
    """Plug-in sieve variances at one fit.

    ``v1`` uses the outer product of fitted residuals, ``v2`` the series
    estimate of their conditional variance.
    """

    riesz: RieszSolution
    upsilon: np.ndarray
    omega: np.ndarray
    dmhat: np.ndarray
    v1: float
    v2: float


def plugin_variances(design: Design, fit: FitResult, functional: Functional) -> VarianceEstimates:
    """``V1`` and ``V2`` for ``phi(h)`` at ``fit`` (needs a smooth residual)."""
    dm = design.dmhat(fit.beta)
    sigma = design.sigma
    F = compile_functional(functional, design.spec.qbasis).gradient(fit.beta)
    sol = riesz(d_matrix(dm, sigma), F)
    rho = design.residuals(fit.beta)
    ups = upsilon_matrix(dm, sigma, rho)
    s0 = sigma0_series(design.spec, design.data, fit.beta, design.cache)
    om = omega_matrix(dm, sigma, s0)
    return VarianceEstimates(sol, ups, om, dm, sol.variance(ups), sol.variance(om))


def slope_variance(
    spec,
    data,
    fit: FitResult,
    functional: Functional,
    eps: float | None = None,
    config: OptimConfig | None = None,
    design: Design | None = None,
) -> float:
    """Variance from the slope of the optimally weighted criterion.

    Moves the functional by ``eps`` and returns
    ``eps^2 / (Q(restricted at phi_hat - eps) - Q(fit))``; the default
    ``eps = n^{-1/2} max(1, |phi_hat|)``. Requires optimal weighting.
    """
    if not spec.optimal:
        raise WeightingError("slope variance needs the optimally weighted criterion")
    design = design if design is not None else prepare_design(spec, data, sigma=fit.sigma)
    cf = compile_functional(functional, design.spec.qbasis)
    phi_hat = cf.value(fit.beta)
    if eps is None:
        eps = max(1.0, abs(phi_hat)) / math.sqrt(design.n)
    if not eps > 0:
        raise ValueError("eps must be positive")
    tilde = fit_restricted_design(design, cf, phi_hat - eps, config, start=fit.beta)
    gap = tilde.qhat - fit.qhat
    if not gap > 0:
        raise SlopeDegenerateError(f"criterion gap {gap:.3g} is not positive")
    return eps**2 / gap
