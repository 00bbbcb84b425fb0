"""Generalized residual bootstrap: weights, bootstrap criteria and statistics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ._parallel import parallel_map
from .data_io import write_table
from .functionals import Functional, compile_functional
from .inference import ConfidenceSet, _score_direction, invert_sqlr_ci
from .linalg import ProjectionCache
from .models import Design, ModelSpec, NonSmoothResidualError, residuals
from .psmd import (
    FitResult,
    OptimConfig,
    RestrictedFitError,
    fit_design,
    fit_restricted_design,
    prepare_design,
)
from .variance import d_matrix, riesz, upsilon_matrix

__all__ = [
    "BootstrapRun",
    "BootstrapUnstableError",
    "WeightScheme",
    "bootstrap_ci",
    "bootstrap_criterion",
    "bootstrap_score",
    "bootstrap_sieve_variance",
    "bootstrap_sqlr",
    "bootstrap_wald",
    "gen_weights",
    "replication_rng",
]

log = logging.getLogger(__name__)

MAX_FAILED_SHARE = 0.10
_FAILURES = (RestrictedFitError, ArithmeticError, np.linalg.LinAlgError, ValueError)


class BootstrapUnstableError(RuntimeError):
    pass


@dataclass(frozen=True)
class WeightScheme:
    """Bootstrap weight law.

    ``exponential``: i.i.d. Exponential(1). ``multinomial``: counts of ``n``
    draws over ``n`` equiprobable cells. ``ones``: the degenerate ``w = 1``,
    for identity checks. ``sigma_omega_sq`` is the weight variance used to
    normalise the statistics (1 for both random laws).
    """

    kind: str = "multinomial"
    sigma_omega_sq: float = 1.0

    def __post_init__(self):
        if self.kind not in ("exponential", "multinomial", "ones"):
            raise ValueError(f"unknown weight scheme {self.kind!r}")
        if not self.sigma_omega_sq > 0:
            raise ValueError("sigma_omega_sq must be positive")


def replication_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for replication ``index``, independent of scheduling."""
    return np.random.default_rng([int(seed), int(index)])


def gen_weights(scheme: WeightScheme, n: int, rng: np.random.Generator) -> np.ndarray:
    if scheme.kind == "exponential":
        return rng.exponential(1.0, n)
    if scheme.kind == "multinomial":
        return rng.multinomial(n, np.full(n, 1.0 / n)).astype(float)
    return np.ones(n)


def bootstrap_criterion(spec: ModelSpec, data, beta, cache: ProjectionCache, sigma, weights) -> float:
    """The criterion with every residual ``rho_i`` replaced by ``w_i rho_i``."""
    rho = np.asarray(weights, dtype=float) * residuals(spec, data, beta)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), rho.shape)
    if np.all(sigma == sigma[0]):
        c = cache.coords(rho)
        return float(c @ c) / (data.n * sigma[0])
    m = cache.project(rho)
    return float(np.mean(m * m / sigma))


@dataclass
class BootstrapRun:
    """Bootstrap draws of one statistic; failed replications are NaN."""

    stats: np.ndarray
    seed: int
    statistic: str
    scheme: WeightScheme

    @property
    def B(self) -> int:
        return int(self.stats.size)

    @property
    def n_failed(self) -> int:
        return int(np.isnan(self.stats).sum())

    @property
    def valid(self) -> np.ndarray:
        return self.stats[~np.isnan(self.stats)]

    def critical_value(self, level: float = 0.95, two_sided: bool = False) -> float:
        """Empirical ``level`` quantile of the statistic (of ``|stat|`` if two-sided)."""
        v = np.abs(self.valid) if two_sided else self.valid
        return float(np.quantile(v, level))

    def to_csv(self, path) -> None:
        write_table(
            [{"replication": b, "statistic": "" if math.isnan(s) else s} for b, s in enumerate(self.stats)],
            path,
            fieldnames=["replication", "statistic"],
        )


def _collect(stats, seed, name, scheme) -> BootstrapRun:
    run = BootstrapRun(np.asarray(stats, dtype=float), seed, name, scheme)
    if run.n_failed:
        log.info("%s bootstrap: %d of %d replications failed", name, run.n_failed, run.B)
    if run.n_failed > MAX_FAILED_SHARE * run.B:
        raise BootstrapUnstableError(f"{run.n_failed} of {run.B} bootstrap replications failed")
    return run


def _guarded(fn):
    def run(b):
        try:
            return fn(b)
        except _FAILURES as exc:
            log.debug("replication %d failed: %s", b, exc)
            return math.nan

    return run


def _design(spec, data, fit, design):
    return design if design is not None else prepare_design(spec, data, sigma=fit.sigma)


def bootstrap_sqlr(
    spec: ModelSpec,
    data,
    fit: FitResult,
    functional: Functional,
    scheme: WeightScheme,
    B: int,
    config: OptimConfig | None = None,
    seed: int = 0,
    threads: int = 1,
    restarts: int = 1,
    design: Design | None = None,
) -> BootstrapRun:
    """Bootstrap SQLR centred at ``phi_hat``.

    Each replication refits the weighted criterion with and without the
    restriction ``phi = phi_hat`` (both warm-started at ``fit``) and records
    ``n (Q_B(restricted) - Q_B(unrestricted)) / sigma_omega^2``, floored at 0.
    NPQIV refits use ``restarts`` simplex restarts.
    """
    design = _design(spec, data, fit, design)
    cf = compile_functional(functional, design.spec.qbasis)
    phi_hat = cf.value(fit.beta)
    config = config or OptimConfig()

    def one(b):
        rng = replication_rng(seed, b)
        w = gen_weights(scheme, design.n, rng)
        u = fit_design(design, config, weights=w, start=fit.beta, restarts=restarts, rng=rng)
        r = fit_restricted_design(design, cf, phi_hat, config, weights=w, start=fit.beta,
                                  restarts=restarts, rng=rng)
        return max(0.0, design.n * (r.qhat - u.qhat) / scheme.sigma_omega_sq)

    return _collect(parallel_map(_guarded(one), range(B), threads), seed, "sqlr", scheme)


def bootstrap_sieve_variance(gamma_star, dmhat, sigma, rho_hat, weights) -> float:
    """``gamma' Upsilon_B gamma`` with ``Upsilon_B`` built from ``(w_i - 1)^2 rho_i^2``."""
    w = np.asarray(weights, dtype=float)
    return float(gamma_star @ upsilon_matrix(dmhat, sigma, (w - 1.0) * rho_hat) @ gamma_star)


def bootstrap_wald(
    spec: ModelSpec,
    data,
    fit: FitResult,
    functional: Functional,
    variance_sq: float,
    scheme: WeightScheme,
    B: int,
    config: OptimConfig | None = None,
    flavor: str = "W1",
    seed: int = 0,
    threads: int = 1,
    restarts: int = 1,
    design: Design | None = None,
) -> BootstrapRun:
    """Bootstrap sieve t statistics ``sqrt(n) (phi(beta_B) - phi_hat) / se``.

    ``W1`` divides by ``sigma_omega sqrt(variance_sq)``; ``W2`` by the
    per-replication bootstrap sieve variance (needs a smooth residual).
    """
    if flavor not in ("W1", "W2"):
        raise ValueError("flavor must be 'W1' or 'W2'")
    if not variance_sq > 0:
        raise ValueError("sieve variance must be positive")
    design = _design(spec, data, fit, design)
    cf = compile_functional(functional, design.spec.qbasis)
    phi_hat = cf.value(fit.beta)
    config = config or OptimConfig()
    rootn = math.sqrt(design.n)
    if flavor == "W2":
        if not design.spec.smooth:
            raise NonSmoothResidualError("the bootstrap sieve variance")
        dm = design.dmhat(fit.beta)
        gamma = riesz(d_matrix(dm, design.sigma), cf.gradient(fit.beta)).gamma_star
        rho = design.residuals(fit.beta)

    def one(b):
        rng = replication_rng(seed, b)
        w = gen_weights(scheme, design.n, rng)
        fb = fit_design(design, config, weights=w, start=fit.beta, restarts=restarts, rng=rng)
        diff = rootn * (cf.value(fb.beta) - phi_hat)
        if flavor == "W1":
            return diff / math.sqrt(scheme.sigma_omega_sq * variance_sq)
        vb = bootstrap_sieve_variance(gamma, dm, design.sigma, rho, w)
        if not vb > 0:
            raise ArithmeticError("bootstrap sieve variance is zero")
        return diff / math.sqrt(vb)

    return _collect(parallel_map(_guarded(one), range(B), threads), seed, flavor, scheme)


def bootstrap_score(
    spec: ModelSpec,
    data,
    fit_restricted: FitResult,
    functional: Functional,
    scheme: WeightScheme,
    B: int,
    seed: int = 0,
    design: Design | None = None,
) -> BootstrapRun:
    """Bootstrap score ``n^{-1/2} sum_i g_i (w_i - 1) rho_i / Sigma_i`` at the restricted fit.

    No refitting is needed; the conditional variance equals ``sigma_omega^2``.
    """
    if not spec.smooth:
        raise NonSmoothResidualError("the bootstrap score statistic")
    design = _design(spec, data, fit_restricted, design)
    g, _ = _score_direction(design, fit_restricted, functional)
    a = g * design.residuals(fit_restricted.beta) / design.sigma / math.sqrt(design.n)
    W = np.stack([gen_weights(scheme, design.n, replication_rng(seed, b)) for b in range(B)])
    return _collect((W - 1.0) @ a, seed, "score", scheme)


def bootstrap_ci(
    run: BootstrapRun,
    spec: ModelSpec,
    data,
    fit: FitResult,
    functional: Functional,
    level: float = 0.95,
    config: OptimConfig | None = None,
    xtol: float | None = None,
) -> ConfidenceSet:
    """``{r : QLR(r) <= bootstrap critical value}`` by the same inversion as the asymptotic set."""
    return invert_sqlr_ci(spec, data, fit, functional, level, config,
                          critical=run.critical_value(level), xtol=xtol)
