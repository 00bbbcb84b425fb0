"""Sieve Wald, SQLR and score tests and SQLR-inverted confidence sets."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import optimize
from scipy.stats import chi2, norm

from .functionals import Functional, compile_functional
from .models import NonSmoothResidualError
from .psmd import FitResult, OptimConfig, RestrictedFitError, fit_restricted_design, prepare_design
from .variance import d_matrix, riesz, upsilon_matrix

__all__ = [
    "ConfidenceSet",
    "InferenceReport",
    "invert_sqlr_ci",
    "qlr_statistic",
    "score_test",
    "sqlr_test",
    "wald_test",
]

MAX_EXPANSIONS = 50


@dataclass(frozen=True)
class InferenceReport:
    """Outcome of one test of ``phi(h) = phi0``.

    ``pvalue`` is None for a non-optimally weighted SQLR, whose null law is
    not chi-square; use a bootstrap critical value instead.
    """

    statistic: float
    pvalue: float | None
    method: str
    phi_hat: float
    phi0: float
    variance: float | None = None
    ci: tuple[float, float] | None = None
    df: int = 1

    def as_rows(self) -> list[dict]:
        """Key/value records for :func:`sievei.data_io.write_table`."""
        d = asdict(self)
        ci = d.pop("ci")
        d["ci_lower"], d["ci_upper"] = ci if ci is not None else (None, None)
        return [{"key": k, "value": "" if v is None else v} for k, v in d.items()]


def _normal_pvalue(t: float) -> float:
    return float(min(1.0, 2.0 * norm.sf(abs(t))))


def wald_test(fit: FitResult, functional: Functional, phi0: float, variance_sq: float, n: int,
              level: float = 0.95) -> InferenceReport:
    """Sieve t test ``sqrt(n) (phi_hat - phi0) / sqrt(V)`` with its normal CI."""
    if not variance_sq > 0:
        raise ValueError("sieve variance must be positive")
    phi_hat = compile_functional(functional, fit.spec.qbasis).value(fit.beta)
    se = math.sqrt(variance_sq / n)
    t = (phi_hat - phi0) / se
    z = norm.ppf(0.5 + level / 2.0)
    return InferenceReport(
        statistic=float(t),
        pvalue=_normal_pvalue(t),
        method="wald",
        phi_hat=phi_hat,
        phi0=float(phi0),
        variance=float(variance_sq),
        ci=(phi_hat - z * se, phi_hat + z * se),
    )


def qlr_statistic(unrestricted: FitResult, restricted: FitResult, n: int) -> float:
    """``n (Q(restricted) - Q(unrestricted))`` floored at zero."""
    return max(0.0, n * (restricted.qhat - unrestricted.qhat))


def sqlr_test(fit_unrestricted: FitResult, fit_restricted: FitResult, n: int, optimal: bool,
              functional: Functional | None = None, phi0: float | None = None) -> InferenceReport:
    """Sieve quasi likelihood ratio test; chi-square(1) p-value only if ``optimal``."""
    if fit_unrestricted.spec != fit_restricted.spec:
        raise ValueError("unrestricted and restricted fits use different models")
    stat = qlr_statistic(fit_unrestricted, fit_restricted, n)
    phi_hat = math.nan
    if functional is not None:
        cf = compile_functional(functional, fit_unrestricted.spec.qbasis)
        phi_hat = cf.value(fit_unrestricted.beta)
        if phi0 is None:
            phi0 = cf.value(fit_restricted.beta)
    return InferenceReport(
        statistic=stat,
        pvalue=float(chi2.sf(stat, 1)) if optimal else None,
        method="opt_sqlr" if optimal else "sqlr",
        phi_hat=phi_hat,
        phi0=math.nan if phi0 is None else float(phi0),
    )


@dataclass(frozen=True)
class ConfidenceSet:
    """Interval ``{r : QLR(r) <= critical}``; an unbounded side is +-inf."""

    lower: float
    upper: float
    critical: float
    unbounded_lower: bool = False
    unbounded_upper: bool = False

    @property
    def interval(self) -> tuple[float, float]:
        return (self.lower, self.upper)


def invert_sqlr_ci(
    spec,
    data,
    fit: FitResult,
    functional: Functional,
    level: float = 0.95,
    config: OptimConfig | None = None,
    critical: float | None = None,
    xtol: float | None = None,
    design=None,
) -> ConfidenceSet:
    """Invert the SQLR test over ``r``.

    From ``phi_hat`` the bracket doubles outward on each side (at most 50
    times) until ``QLR(r)`` exceeds the critical value, and the crossing is
    then located to ``xtol`` (default ``1e-4 (1 + |phi_hat|)``). The
    critical value defaults to the chi-square(1) quantile, valid for optimal
    weighting; pass a bootstrap critical value otherwise.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    design = design if design is not None else prepare_design(spec, data, sigma=fit.sigma)
    cf = compile_functional(functional, design.spec.qbasis)
    phi_hat = cf.value(fit.beta)
    crit = float(chi2.ppf(level, 1)) if critical is None else float(critical)
    xtol = 1e-4 * (1.0 + abs(phi_hat)) if xtol is None else xtol
    n = design.n

    def excess(r: float) -> float:
        try:
            rf = fit_restricted_design(design, cf, r, config, start=fit.beta)
        except RestrictedFitError:
            return math.inf
        return qlr_statistic(fit, rf, n) - crit

    step0 = max(1.0, abs(phi_hat)) / math.sqrt(n)
    ends, flags = [], []
    for sign in (-1.0, 1.0):
        inside, step = phi_hat, step0
        found = False
        for _ in range(MAX_EXPANSIONS):
            r = phi_hat + sign * step
            f_out = excess(r)
            if f_out > 0:
                found = True
                break
            inside, step = r, 2.0 * step
        if not found:
            ends.append(sign * math.inf)
            flags.append(True)
            continue
        if math.isinf(f_out):
            # the functional cannot reach r (e.g. exp(h) <= 0): bisect on feasibility too
            root = _bisect(excess, inside, r, xtol)
        else:
            lo, hi = sorted((inside, r))
            root = optimize.brentq(excess, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps)
        ends.append(root)
        flags.append(False)
    return ConfidenceSet(ends[0], ends[1], crit, flags[0], flags[1])


def _bisect(excess, inside: float, outside: float, xtol: float) -> float:
    while abs(outside - inside) > xtol:
        mid = 0.5 * (inside + outside)
        if excess(mid) > 0:
            outside = mid
        else:
            inside = mid
    return 0.5 * (inside + outside)


def score_test(spec, data, fit_restricted: FitResult, functional: Functional, design=None) -> InferenceReport:
    """Sieve score statistic from the restricted fit (smooth residuals only).

    ``S = n^{-1/2} sum_i g_i m_hat_i / Sigma_i`` with ``g = dmhat gamma / ||v||``,
    ``gamma = D^- F`` and ``||v||^2 = gamma' Upsilon gamma``, all at the
    restricted estimate.
    """
    if not spec.smooth:
        raise NonSmoothResidualError("the sieve score statistic")
    design = design if design is not None else prepare_design(spec, data, sigma=fit_restricted.sigma)
    g, norm_v = _score_direction(design, fit_restricted, functional)
    m = design.cache.project(design.residuals(fit_restricted.beta))
    stat = float(np.sum(g * m / design.sigma)) / math.sqrt(design.n)
    cf = compile_functional(functional, design.spec.qbasis)
    return InferenceReport(
        statistic=stat,
        pvalue=_normal_pvalue(stat),
        method="score",
        phi_hat=math.nan,
        phi0=cf.value(fit_restricted.beta),
        variance=norm_v**2,
    )


def _score_direction(design, fit: FitResult, functional: Functional) -> tuple[np.ndarray, float]:
    """``dmhat gamma / ||v||`` at ``fit`` and ``||v||``."""
    dm = design.dmhat(fit.beta)
    F = compile_functional(functional, design.spec.qbasis).gradient(fit.beta)
    sol = riesz(d_matrix(dm, design.sigma), F)
    v2 = sol.variance(upsilon_matrix(dm, design.sigma, design.residuals(fit.beta)))
    if not v2 > 0:
        raise ArithmeticError("restricted sieve variance is zero")
    norm_v = math.sqrt(v2)
    return dm @ sol.gamma_star / norm_v, norm_v
