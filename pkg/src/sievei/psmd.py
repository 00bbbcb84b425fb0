"""Unrestricted and restricted penalized sieve minimum distance fits."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.linalg import null_space

from .basis import eval_basis
from .data_io import Dataset
from .functionals import CompiledFunctional, Functional, compile_functional
from .linalg import pinv
from .models import Design, ModelSpec, build_design, sigma0_series

__all__ = [
    "FitResult",
    "OptimConfig",
    "RestrictedFitError",
    "fit",
    "fit_design",
    "fit_restricted",
    "fit_restricted_design",
    "prepare_design",
]

CONTINUATION = (1e2, 1e4, 1e6)


class RestrictedFitError(RuntimeError):
    """The restricted fit could not satisfy ``phi(beta) = phi0``."""

    def __init__(self, gap: float, phi0: float):
        self.gap = gap
        self.phi0 = phi0
        super().__init__(f"restricted fit infeasible: |phi - phi0| = {gap:.3g} at phi0 = {phi0:g}")


@dataclass(frozen=True)
class OptimConfig:
    """Simplex settings for the non-smooth (NPQIV) criterion.

    ``step`` is the initial simplex edge in units of the fitted function: the
    edge along coefficient ``j`` is ``step / rms(q_j(Y2))``.
    """

    max_iters: int = 2000
    restarts: int = 5
    xtol: float = 1e-8
    ftol: float = 1e-10
    seed: int = 0
    step: float = 0.1

    def __post_init__(self):
        if self.xtol <= 0 or self.ftol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1 or self.restarts < 0:
            raise ValueError("max_iters must be >= 1 and restarts >= 0")


@dataclass(frozen=True)
class FitResult:
    """Outcome of a PSMD fit.

    ``spec`` is the resolved model (knots and supports fixed on the sample)
    and ``sigma`` the weighting series the criterion was computed with.
    """

    beta: np.ndarray
    qhat: float
    penalized_value: float
    iterations: int
    converged: bool
    method: str
    spec: ModelSpec
    sigma: np.ndarray

    @property
    def qbasis(self):
        return self.spec.qbasis

    def h(self, points) -> np.ndarray:
        """Fitted structural function at ``points``."""
        return eval_basis(self.spec.qbasis, points) @ self.beta


def prepare_design(spec: ModelSpec, data: Dataset, sigma=None, quad_nodes: int | None = None) -> Design:
    """Design with the weighting series in place.

    For NPIV with ``weighting="sigma0"`` the weights come from a first-step
    identity-weighted fit unless ``sigma`` is supplied.
    """
    design = build_design(spec, data, sigma=sigma, quad_nodes=quad_nodes)
    if sigma is None and spec.kind == "npiv" and spec.weighting == "sigma0":
        beta0 = _npiv_closed_form(design.with_sigma(1.0))
        design = design.with_sigma(sigma0_series(design.spec, data, beta0, design.cache))
    return design


def _result(design: Design, beta, iterations: int, converged: bool, method: str, weights=None) -> FitResult:
    beta = np.asarray(beta, dtype=float)
    q = design.criterion(beta, weights)
    return FitResult(
        beta=beta,
        qhat=q,
        penalized_value=q + design.spec.lam * design.penalty(beta),
        iterations=int(iterations),
        converged=bool(converged),
        method=method,
        spec=design.spec,
        sigma=design.sigma,
    )


def _npiv_closed_form(design: Design, weights=None) -> np.ndarray:
    H, g, _ = design.quadratic_form(weights)
    return pinv(H) @ g


def _warn_order(design: Design):
    if design.k > design.cache.P.shape[1]:
        warnings.warn(
            f"sieve dimension k={design.k} exceeds instrument dimension J={design.cache.P.shape[1]}",
            stacklevel=3,
        )


class _SimplexProblem:
    """NPQIV objective over ``beta = b0 + N delta`` for the compiled simplex."""

    def __init__(self, design: Design, b0, N, weights=None):
        c = design.sigma_constant
        if c is None:
            raise ValueError("NPQIV fits need a constant weighting")
        self.design = design
        self.b0 = np.ascontiguousarray(b0, dtype=float)
        self.N = np.ascontiguousarray(N, dtype=float)
        self.h0 = design.Q @ self.b0
        self.Qn = np.ascontiguousarray(design.Q @ self.N)
        self.Ut = np.ascontiguousarray(design.cache.U.T)
        self.y1 = np.ascontiguousarray(design.data.y1)
        self.weights = np.ones(design.n) if weights is None else np.ascontiguousarray(weights, float)
        self.scale = design.n * c
        self.R = np.ascontiguousarray(design.R)
        rms = np.sqrt(np.mean(self.Qn**2, axis=0))
        self.unit = 1.0 / np.where(rms > 0, rms, 1.0)

    def args(self):
        d = self.design
        return (self.h0, self.Qn, self.y1, self.Ut, d.spec.gamma, self.weights, self.scale,
                d.spec.lam, self.b0, self.N, self.R)

    def value(self, delta) -> float:
        from ._simplex import npqiv_objective

        return float(npqiv_objective(np.asarray(delta, dtype=float), *self.args()))

    def minimize(self, delta0, config: OptimConfig, restarts: int, rng) -> tuple[np.ndarray, float, int, bool]:
        from ._simplex import nelder_mead

        steps = config.step * self.unit
        starts = [np.asarray(delta0, dtype=float)]
        starts += [starts[0] + steps * rng.standard_normal(starts[0].size) for _ in range(restarts)]
        best_x, best_f = starts[0], self.value(starts[0])
        total, conv = 0, False
        for x0 in starts:
            x, f, it, ok = nelder_mead(
                x0, steps, config.max_iters, config.xtol, config.ftol, *self.args()
            )
            total += it
            if f < best_f:
                best_x, best_f, conv = x, f, ok
            elif f == best_f:
                conv = conv or ok
        return best_x, best_f, total, conv


def fit_design(
    design: Design,
    config: OptimConfig | None = None,
    weights=None,
    start=None,
    restarts: int | None = None,
    rng=None,
) -> FitResult:
    """Unrestricted fit on a prepared design, optionally with bootstrap weights."""
    config = config or OptimConfig()
    _warn_order(design)
    if design.spec.kind == "npiv":
        beta = _npiv_closed_form(design, weights)
        return _result(design, beta, 0, True, "closed_form", weights)
    if start is None:
        start = _npiv_closed_form(design)
    rng = np.random.default_rng(config.seed) if rng is None else rng
    k = design.k
    prob = _SimplexProblem(design, np.zeros(k), np.eye(k), weights)
    restarts = config.restarts if restarts is None else restarts
    beta, _, its, conv = prob.minimize(np.asarray(start, dtype=float), config, restarts, rng)
    return _result(design, beta, its, conv, "simplex", weights)


def fit(spec: ModelSpec, data: Dataset, config: OptimConfig | None = None, sigma=None) -> FitResult:
    """Minimize ``Q_n(beta) + lam * Pen(beta)`` over the sieve.

    NPIV is solved in closed form. NPQIV uses Nelder-Mead from the NPIV
    solution plus ``config.restarts`` random restarts, keeping the best value;
    non-convergence is reported through ``converged`` rather than raised.
    """
    return fit_design(prepare_design(spec, data, sigma), config)


def _feasible(gap: float, phi0: float) -> bool:
    return gap <= 1e-6 * (1.0 + abs(phi0))


def _restricted_linear(design, cf, phi0, config, weights, start, restarts, rng):
    F = cf.vec
    nF = float(F @ F)
    if nF == 0.0:
        raise RestrictedFitError(abs(phi0), phi0)
    bp = F * (phi0 / nF)
    N = null_space(F[None, :])
    if design.spec.kind == "npiv":
        H, g, _ = design.quadratic_form(weights)
        delta = pinv(N.T @ H @ N) @ (N.T @ (g - H @ bp))
        return bp + N @ delta, 0, True, "closed_form"
    if start is None:
        start = _npiv_closed_form(design)
    prob = _SimplexProblem(design, bp, N, weights)
    delta0 = N.T @ (np.asarray(start, dtype=float) - bp)
    delta, _, its, conv = prob.minimize(delta0, config, restarts, rng)
    return bp + N @ delta, its, conv, "simplex"


def _restricted_npiv_nonlinear(design, cf, phi0, weights, start):
    H, g, _ = design.quadratic_form(weights)
    beta = pinv(H) @ g if start is None else np.asarray(start, dtype=float)
    its = 0
    for c in CONTINUATION:
        cn = c * design.n

        def obj(b):
            gap = cf.value(b) - phi0
            return float(b @ H @ b - 2 * g @ b + cn * gap * gap)

        def jac(b):
            gap = cf.value(b) - phi0
            return 2 * (H @ b - g) + 2 * cn * gap * cf.gradient(b)

        def hess(b):
            gap = cf.value(b) - phi0
            dphi = cf.gradient(b)
            return 2 * H + 2 * cn * (np.outer(dphi, dphi) + gap * cf.hessian(b))

        res = optimize.minimize(obj, beta, jac=jac, hess=hess, method="trust-exact",
                                options={"gtol": 1e-12, "maxiter": 500})
        beta = res.x
        its += int(res.nit)
    return beta, its, True, "continuation"


def _restricted_npqiv_nonlinear(design, cf, phi0, config, weights, start, restarts, rng):
    # Simplex over the tangent space at the start; each trial point is moved
    # back onto {phi = phi0} along the normal direction.
    if start is None:
        start = _npiv_closed_form(design)
    start = np.asarray(start, dtype=float)
    u = cf.gradient(start)
    if not np.any(u):
        u = np.ones_like(start)
    u = u / np.linalg.norm(u)
    N = null_space(u[None, :])

    def project(delta):
        b = start + N @ delta
        try:
            t = optimize.newton(lambda s: cf.value(b + s * u) - phi0, 0.0,
                                fprime=lambda s: float(cf.gradient(b + s * u) @ u), tol=1e-14,
                                maxiter=100)
        except (RuntimeError, OverflowError, FloatingPointError):
            return None
        out = b + t * u
        return out if _feasible(abs(cf.value(out) - phi0), phi0) else None

    def obj(delta):
        b = project(delta)
        return math.inf if b is None else design.objective(b, weights)

    rms = np.sqrt(np.mean((design.Q @ N) ** 2, axis=0))
    steps = config.step / np.where(rms > 0, rms, 1.0)
    starts = [np.zeros(N.shape[1])]
    starts += [steps * rng.standard_normal(N.shape[1]) for _ in range(restarts)]
    best, best_f, its, conv = None, math.inf, 0, False
    for x0 in starts:
        simplex = np.vstack([x0, x0 + np.diag(steps)])
        res = optimize.minimize(obj, x0, method="Nelder-Mead", options={
            "initial_simplex": simplex, "xatol": config.xtol, "fatol": config.ftol,
            "maxiter": config.max_iters})
        its += int(res.nit)
        if res.fun < best_f:
            best, best_f, conv = res.x, res.fun, bool(res.success)
    b = project(best) if best is not None else None
    if b is None:
        raise RestrictedFitError(math.inf, phi0)
    return b, its, conv, "simplex"


def fit_restricted_design(
    design: Design,
    functional: Functional | CompiledFunctional,
    phi0: float,
    config: OptimConfig | None = None,
    weights=None,
    start=None,
    restarts: int | None = None,
    rng=None,
) -> FitResult:
    """Restricted fit ``phi(beta) = phi0`` on a prepared design."""
    config = config or OptimConfig()
    rng = np.random.default_rng(config.seed) if rng is None else rng
    restarts = config.restarts if restarts is None else restarts
    cf = compile_functional(functional, design.spec.qbasis)
    phi0 = float(phi0)
    if cf.is_linear:
        beta, its, conv, method = _restricted_linear(design, cf, phi0, config, weights, start, restarts, rng)
    elif design.spec.kind == "npiv":
        beta, its, conv, method = _restricted_npiv_nonlinear(design, cf, phi0, weights, start)
    else:
        beta, its, conv, method = _restricted_npqiv_nonlinear(
            design, cf, phi0, config, weights, start, restarts, rng
        )
    gap = abs(cf.value(beta) - phi0)
    if not _feasible(gap, phi0):
        raise RestrictedFitError(gap, phi0)
    return _result(design, beta, its, conv, method, weights)


def fit_restricted(
    spec: ModelSpec,
    data: Dataset,
    functional: Functional,
    phi0: float,
    config: OptimConfig | None = None,
    sigma=None,
    start=None,
) -> FitResult:
    """Minimize the penalized criterion subject to ``phi(h) = phi0``.

    Linear functionals are handled exactly by writing ``beta = beta_p + N delta``
    with ``N`` spanning the null space of ``F'``. Nonlinear NPIV restrictions
    use quadratic-penalty continuation; nonlinear NPQIV restrictions search the
    tangent space and project back onto the constraint. Raises
    :class:`RestrictedFitError` if ``|phi - phi0| > 1e-6 (1 + |phi0|)``.
    """
    design = prepare_design(spec, data, sigma)
    return fit_restricted_design(design, functional, phi0, config, start=start)
