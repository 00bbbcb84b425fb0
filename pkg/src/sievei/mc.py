"""Monte Carlo harness: size, variance-accuracy and power experiments."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import chi2, kstest, norm

from ._parallel import parallel_map
from .bootstrap import WeightScheme, bootstrap_sqlr
from .dgp import DGPSpec, gen_dgp, h0
from .functionals import Functional, compile_functional
from .inference import qlr_statistic
from .models import ModelSpec
from .psmd import OptimConfig, RestrictedFitError, fit_design, fit_restricted_design, prepare_design
from .variance import plugin_variances

__all__ = [
    "DESIGNS",
    "DGPSpec",
    "ExperimentConfig",
    "PowerTable",
    "QQData",
    "SizeTable",
    "VarianceTable",
    "design_config",
    "gen_dgp",
    "qq_data",
    "run_power_curve",
    "run_size_experiment",
    "run_variance_experiment",
]

log = logging.getLogger(__name__)

LEVELS = (0.10, 0.05, 0.01)
_FAILURES = (RestrictedFitError, ArithmeticError, np.linalg.LinAlgError, ValueError)


@dataclass(frozen=True)
class ExperimentConfig:
    """One Monte Carlo experiment.

    ``stat`` is ``"sqlr"`` (chi-square critical values) or ``"wald"`` (sieve t
    with both plug-in variances). ``boot`` adds a bootstrap-SQLR comparison
    with ``(scheme, B)``; ``boot_restarts`` and ``boot_optim`` set the simplex
    restarts and tolerances of each bootstrap refit (``optim`` by default).
    """

    dgp: DGPSpec
    model: ModelSpec
    functional: Functional
    phi0: float
    reps: int = 500
    stat: str = "sqlr"
    boot: tuple[WeightScheme, int] | None = None
    boot_restarts: int = 0
    boot_optim: OptimConfig | None = None
    levels: tuple[float, ...] = LEVELS
    optim: OptimConfig = field(default_factory=OptimConfig)

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.stat not in ("sqlr", "wald"):
            raise ValueError(f"unknown statistic {self.stat!r}")

    def data(self, rep: int):
        """Sample for replication ``rep``; depends only on the seed and ``rep``."""
        return gen_dgp(self.dgp, np.random.default_rng([self.dgp.seed, rep]))


def _binomial_se(p: float, m: int) -> float:
    return math.sqrt(max(p * (1 - p), 0.0) / m) if m else math.nan


@dataclass
class SizeTable:
    """Rejection frequencies at each nominal level."""

    levels: tuple[float, ...]
    rejection: dict[float, float]
    stats: np.ndarray
    n_failed: int

    @property
    def reps(self) -> int:
        return int(np.isfinite(self.stats).sum())

    def rows(self) -> list[dict]:
        return [
            {"level": a, "rejection": self.rejection[a], "se": _binomial_se(self.rejection[a], self.reps),
             "reps": self.reps, "failed": self.n_failed}
            for a in self.levels
        ]


def _sqlr_rep(cfg: ExperimentConfig, rep: int) -> float:
    design = prepare_design(cfg.model, cfg.data(rep))
    rng = np.random.default_rng([cfg.optim.seed, rep])
    u = fit_design(design, cfg.optim, rng=rng)
    r = fit_restricted_design(design, cfg.functional, cfg.phi0, cfg.optim, start=u.beta, rng=rng)
    return qlr_statistic(u, r, design.n)


def _failsafe(fn):
    def run(rep):
        try:
            return fn(rep)
        except _FAILURES as exc:
            log.debug("replication %d failed: %s", rep, exc)
            return None

    return run


def run_size_experiment(cfg: ExperimentConfig, threads: int | None = 1) -> SizeTable:
    """Rejection rates of the SQLR test of a true null over ``cfg.reps`` samples.

    For ``stat="wald"`` use :func:`run_variance_experiment`, which also
    reports the sieve t rejection rates.
    """
    if cfg.stat != "sqlr":
        raise ValueError("run_size_experiment handles the SQLR statistic")
    out = parallel_map(_failsafe(lambda rep: _sqlr_rep(cfg, rep)), range(cfg.reps), threads)
    stats = np.array([math.nan if s is None else s for s in out])
    ok = stats[np.isfinite(stats)]
    rej = {a: float(np.mean(ok > chi2.ppf(1 - a, 1))) if ok.size else math.nan for a in cfg.levels}
    return SizeTable(tuple(cfg.levels), rej, stats, int(np.isnan(stats).sum()))


@dataclass
class VarianceTable:
    """Accuracy of the plug-in variances against the MC variance of ``sqrt(n) phi_hat``."""

    reference: float
    med_v1: float
    med_v2: float
    rejection_t1: dict[float, float]
    rejection_t2: dict[float, float]
    t1: np.ndarray
    t2: np.ndarray
    phi_hat: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    n_failed: int

    def rows(self) -> list[dict]:
        row = {"reference": self.reference, "med_v1": self.med_v1, "med_v2": self.med_v2}
        for a in sorted(self.rejection_t1, reverse=True):
            row[f"t1_{a:g}"] = self.rejection_t1[a]
            row[f"t2_{a:g}"] = self.rejection_t2[a]
        row["ks_t1"] = qq_data(self.t1).ks
        row["ks_t2"] = qq_data(self.t2).ks
        row["reps"] = int(self.t1.size)
        row["failed"] = self.n_failed
        return [row]


def _wald_rep(cfg: ExperimentConfig, rep: int):
    design = prepare_design(cfg.model, cfg.data(rep))
    fit = fit_design(design, cfg.optim)
    est = plugin_variances(design, fit, cfg.functional)
    phi = compile_functional(cfg.functional, design.spec.qbasis).value(fit.beta)
    return phi, est.v1, est.v2


def run_variance_experiment(cfg: ExperimentConfig, threads: int | None = 1) -> VarianceTable:
    """Plug-in variance accuracy and sieve t rejection rates.

    The reference variance is the MC variance of ``sqrt(n) phi_hat`` over the
    same replications; ``med_vj`` is the median of ``|Vj / reference - 1|``.
    """
    out = parallel_map(_failsafe(lambda rep: _wald_rep(cfg, rep)), range(cfg.reps), threads)
    good = [o for o in out if o is not None]
    if len(good) < 2:
        raise RuntimeError("fewer than two successful replications")
    phi, v1, v2 = (np.array(c) for c in zip(*good))
    n = cfg.dgp.n
    ref = float(np.var(math.sqrt(n) * phi, ddof=1))
    root = math.sqrt(n) * (phi - cfg.phi0)
    t1, t2 = root / np.sqrt(v1), root / np.sqrt(v2)

    def rej(t):
        return {a: float(np.mean(np.abs(t) > norm.ppf(1 - a / 2))) for a in cfg.levels}

    return VarianceTable(
        reference=ref,
        med_v1=float(np.median(np.abs(v1 / ref - 1))),
        med_v2=float(np.median(np.abs(v2 / ref - 1))),
        rejection_t1=rej(t1),
        rejection_t2=rej(t2),
        t1=t1,
        t2=t2,
        phi_hat=phi,
        v1=v1,
        v2=v2,
        n_failed=len(out) - len(good),
    )


@dataclass
class PowerTable:
    """Rejection probability of ``phi(h) = r`` for each ``r`` and level."""

    r_grid: np.ndarray
    levels: tuple[float, ...]
    sqlr: np.ndarray  # (len(r_grid), len(levels))
    boot: np.ndarray | None
    reps: int
    n_failed: int

    def rows(self) -> list[dict]:
        rows = []
        for i, r in enumerate(self.r_grid):
            for j, a in enumerate(self.levels):
                row = {"r": float(r), "level": a, "sqlr": float(self.sqlr[i, j])}
                if self.boot is not None:
                    row["boot_sqlr"] = float(self.boot[i, j])
                rows.append(row)
        return rows


def _power_rep(cfg: ExperimentConfig, r_grid, rep: int):
    design = prepare_design(cfg.model, cfg.data(rep))
    rng = np.random.default_rng([cfg.optim.seed, rep])
    u = fit_design(design, cfg.optim, rng=rng)
    qlr = []
    for r in r_grid:
        rf = fit_restricted_design(design, cfg.functional, cfg.phi0 + r, cfg.optim, start=u.beta, rng=rng)
        qlr.append(qlr_statistic(u, rf, design.n))
    crit = None
    if cfg.boot is not None:
        scheme, B = cfg.boot
        run = bootstrap_sqlr(cfg.model, design.data, u, cfg.functional, scheme, B,
                             cfg.boot_optim or cfg.optim,
                             seed=int(np.random.SeedSequence([cfg.dgp.seed, rep, 1]).generate_state(1)[0]),
                             restarts=cfg.boot_restarts, design=design)
        crit = [run.critical_value(1 - a) for a in cfg.levels]
    return np.array(qlr), crit


def run_power_curve(cfg: ExperimentConfig, r_grid, threads: int | None = 1) -> PowerTable:
    """Rejection rates of ``phi(h) = phi0 + r`` on null data, across ``r_grid``.

    With ``cfg.boot`` set, each replication also computes bootstrap-SQLR
    critical values, which do not depend on ``r`` since the bootstrap
    statistic is centred at the estimate.
    """
    r_grid = np.asarray(r_grid, dtype=float)
    out = parallel_map(_failsafe(lambda rep: _power_rep(cfg, r_grid, rep)), range(cfg.reps), threads)
    good = [o for o in out if o is not None]
    if not good:
        raise RuntimeError("every replication failed")
    Q = np.stack([g[0] for g in good])  # (reps, grid)
    asym = np.array([chi2.ppf(1 - a, 1) for a in cfg.levels])
    sqlr = (Q[:, :, None] > asym[None, None, :]).mean(axis=0)
    boot = None
    if cfg.boot is not None:
        C = np.array([g[1] for g in good])  # (reps, levels)
        boot = (Q[:, :, None] > C[:, None, :]).mean(axis=0)
    return PowerTable(r_grid, tuple(cfg.levels), sqlr, boot, len(good), len(out) - len(good))


@dataclass(frozen=True)
class QQData:
    """Normal QQ pairs and the Kolmogorov-Smirnov distance to N(0, 1)."""

    theoretical: np.ndarray
    empirical: np.ndarray
    ks: float

    def rows(self) -> list[dict]:
        return [{"theoretical": float(t), "empirical": float(e)} for t, e in zip(self.theoretical, self.empirical)]


def qq_data(stats) -> QQData:
    """Pairs ``(Phi^-1((i - 0.5) / m), stat_(i))`` and the KS distance."""
    s = np.sort(np.asarray(stats, dtype=float))
    s = s[np.isfinite(s)]
    m = s.size
    if m == 0:
        raise ValueError("no finite statistics")
    theo = norm.ppf((np.arange(1, m + 1) - 0.5) / m)
    return QQData(theo, s, float(kstest(s, "norm").statistic))


# Bootstrap refits stop at this coefficient tolerance: far below the spacing at
# which observations flip sign, so the step criterion is unchanged, and much faster.
BOOT_XTOL = 1e-4

# Desk-scale designs reproduced by ``sievei mc --design``.
DESIGNS = ("npqiv-sqlr", "npiv-ve", "npiv-ve-nonlinear", "power")


def design_config(name: str, reps: int = 500, n: int = 750, seed: int = 0, B: int = 200,
                  optim: OptimConfig | None = None) -> ExperimentConfig:
    """Experiment for a named design.

    ``npqiv-sqlr``: NPQIV, Pol(4)/Pol(7), lam=2e-4, SQLR of h(0)=0.
    ``npiv-ve``: NPIV, Pol(4)/Pol(16), lam=1e-5, sieve t of h(0)=0.
    ``npiv-ve-nonlinear``: NPIV, Pol(4)/Pol(6), lam=1e-5, sieve t of exp(h(0))=1.
    ``power``: NPQIV, P-Spline(3,2)/Pol(10), lam=1e-5, SQLR and multinomial
    bootstrap SQLR of h(0)=r.
    """
    optim = optim or OptimConfig(seed=seed)
    point = Functional("eval", 0.0)
    if name == "npqiv-sqlr":
        model = ModelSpec("npqiv", "pol:4", "pol:7", lam=2e-4, gamma=0.5, weighting="known", sigma2=0.25)
        return ExperimentConfig(DGPSpec("npqiv", n, 0.5, seed), model, point, float(h0(0.0)), reps,
                                "sqlr", optim=optim)
    if name == "npiv-ve":
        model = ModelSpec("npiv", "pol:4", "pol:16", lam=1e-5)
        return ExperimentConfig(DGPSpec("npiv", n, seed=seed), model, point, float(h0(0.0)), reps,
                                "wald", optim=optim)
    if name == "npiv-ve-nonlinear":
        model = ModelSpec("npiv", "pol:4", "pol:6", lam=1e-5)
        return ExperimentConfig(DGPSpec("npiv", n, seed=seed), model, Functional("expeval", 0.0),
                                math.exp(float(h0(0.0))), reps, "wald", optim=optim)
    if name == "power":
        model = ModelSpec("npqiv", "pspline:3:2", "pol:10", lam=1e-5, gamma=0.5, weighting="known",
                          sigma2=0.25)
        return ExperimentConfig(DGPSpec("npqiv", n, 0.5, seed), model, point, float(h0(0.0)), reps,
                                "sqlr", boot=(WeightScheme("multinomial"), B), optim=optim,
                                boot_optim=replace(optim, xtol=BOOT_XTOL))
    raise ValueError(f"unknown design {name!r}; expected one of {DESIGNS}")


def power_grid(n: int, points: int = 9) -> np.ndarray:
    """``r`` values spanning ``[0, 8 / sqrt(n)]``."""
    return np.linspace(0.0, 8.0 / math.sqrt(n), points)


def with_reps(cfg: ExperimentConfig, reps: int) -> ExperimentConfig:
    return replace(cfg, reps=reps)
