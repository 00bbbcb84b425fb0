from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.stats import chi2, norm

from sievei.dgp import DGPSpec, gen_dgp
from sievei.functionals import Functional, compile_functional
from sievei.inference import invert_sqlr_ci, qlr_statistic, score_test, sqlr_test, wald_test
from sievei.mc import qq_data
from sievei.models import ModelSpec, NonSmoothResidualError
from sievei.psmd import OptimConfig, fit, fit_design, fit_restricted, fit_restricted_design, prepare_design
from sievei.variance import d_matrix, riesz

POINT = Functional("eval", 0.0)
NPIV = ModelSpec("npiv", "pol:4", "pol:6")
NPQIV = ModelSpec("npqiv", "pol:4", "pol:7", lam=2e-4, weighting="known", sigma2=0.25)


def _phi(f, res):
    return compile_functional(f, res.spec.qbasis).value(res.beta)


def test_wald_at_estimate(npiv_sample):
    res = fit(NPIV, npiv_sample)
    rep = wald_test(res, POINT, _phi(POINT, res), 2.0, npiv_sample.n)
    assert rep.statistic == 0.0 and rep.pvalue == 1.0


def test_wald_pvalue_at_196(npiv_sample):
    res = fit(NPIV, npiv_sample)
    n, v = npiv_sample.n, 1.7
    phi0 = _phi(POINT, res) - 1.96 * math.sqrt(v / n)
    rep = wald_test(res, POINT, phi0, v, n)
    assert rep.statistic == pytest.approx(1.96)
    assert rep.pvalue == pytest.approx(0.05, abs=1e-3)
    mirror = wald_test(res, POINT, 2 * _phi(POINT, res) - phi0, v, n)
    assert mirror.pvalue == pytest.approx(rep.pvalue, rel=1e-12)
    lo, hi = rep.ci
    assert hi - lo == pytest.approx(2 * norm.ppf(0.975) * math.sqrt(v / n))


def test_wald_rejects_nonpositive_variance(npiv_sample):
    res = fit(NPIV, npiv_sample)
    with pytest.raises(ValueError):
        wald_test(res, POINT, 0.0, 0.0, npiv_sample.n)


def test_sqlr_at_estimate_and_pvalues(npiv_sample):
    spec = ModelSpec("npiv", "pol:4", "pol:6", weighting="sigma0")
    u = fit(spec, npiv_sample)
    r = fit_restricted(spec, npiv_sample, POINT, _phi(POINT, u), sigma=u.sigma)
    rep = sqlr_test(u, r, npiv_sample.n, spec.optimal, POINT)
    assert rep.statistic == pytest.approx(0.0, abs=1e-8)
    assert rep.pvalue == pytest.approx(1.0, abs=1e-4)
    assert rep.method == "opt_sqlr"


def test_sqlr_without_optimal_weighting_has_no_pvalue(npiv_sample):
    u = fit(NPIV, npiv_sample)
    r = fit_restricted(NPIV, npiv_sample, POINT, 0.5)
    rep = sqlr_test(u, r, npiv_sample.n, False)
    assert rep.pvalue is None and rep.method == "sqlr" and rep.statistic > 0


def test_sqlr_mismatched_specs(npiv_sample):
    u = fit(NPIV, npiv_sample)
    r = fit_restricted(ModelSpec("npiv", "pol:3", "pol:6"), npiv_sample, POINT, 0.0)
    with pytest.raises(ValueError):
        sqlr_test(u, r, npiv_sample.n, False)


def test_sqlr_nonnegative_and_monotone(npiv_sample):
    u = fit(NPIV, npiv_sample)
    phi_hat = _phi(POINT, u)
    stats = []
    for d in np.linspace(0.0, 0.5, 11):
        stats.append([qlr_statistic(u, fit_restricted(NPIV, npiv_sample, POINT, phi_hat + s * d), npiv_sample.n)
                      for s in (-1, 1)])
    stats = np.array(stats)
    assert np.all(stats >= 0)
    assert np.all(np.diff(stats, axis=0) > 0)


def _fixed_alternative(n: int, seeds=range(4)) -> float:
    out = []
    for s in seeds:
        data = gen_dgp(DGPSpec("npqiv", n, 0.5, seed=s), np.random.default_rng([s, n]))
        design = prepare_design(NPQIV, data)
        cfg = OptimConfig(restarts=1, seed=s)
        u = fit_design(design, cfg)
        r = fit_restricted_design(design, POINT, 1.0, cfg, start=u.beta)
        out.append(qlr_statistic(u, r, n))
    return float(np.mean(out))


def test_sqlr_diverges_under_fixed_alternative():
    small, large = _fixed_alternative(250), _fixed_alternative(750)
    assert small > chi2.ppf(0.99, 1)
    # the statistic is n times a positive limit: the ratio tracks 750 / 250
    assert 2.0 < large / small < 4.5


def test_quadratic_ci_matches_wald(npiv_sample):
    for f in (POINT, Functional("eval", 0.4), Functional("wderiv")):
        design = prepare_design(NPIV, npiv_sample)
        res = fit_design(design)
        F = compile_functional(f, design.spec.qbasis).gradient(res.beta)
        V = riesz(d_matrix(design.dmhat(), design.sigma), F).norm_sq
        wald = wald_test(res, f, 0.0, V, design.n, 0.95).ci
        cs = invert_sqlr_ci(NPIV, npiv_sample, res, f, 0.95, xtol=1e-12, design=design)
        assert cs.interval == pytest.approx(wald, abs=1e-6)
        assert not (cs.unbounded_lower or cs.unbounded_upper)


def test_ci_nested_in_level(npiv_sample):
    res = fit(NPIV, npiv_sample)
    sets = [invert_sqlr_ci(NPIV, npiv_sample, res, POINT, lv) for lv in (0.8, 0.9, 0.95, 0.99)]
    for a, b in zip(sets, sets[1:]):
        assert b.lower <= a.lower and a.upper <= b.upper


def test_ci_unbounded_when_not_identified():
    # a constant instrument cannot see the slope, so the criterion is flat in h'(0)
    data = gen_dgp(DGPSpec("npiv", 60, seed=1), np.random.default_rng(1))
    spec = ModelSpec("npiv", "pol:2", "pol:1")
    with pytest.warns(UserWarning):
        res = fit(spec, data)
        cs = invert_sqlr_ci(spec, data, res, Functional("wderiv"), 0.95)
    assert cs.unbounded_lower and cs.unbounded_upper
    assert cs.interval == (-math.inf, math.inf)


def test_npqiv_bands_widen_toward_extremes(npqiv_sample):
    cfg = OptimConfig(restarts=1)
    design = prepare_design(NPQIV, npqiv_sample)
    res = fit_design(design, cfg)
    lo, hi = np.quantile(npqiv_sample.y2, [0.02, 0.98])
    width = {}
    for y in (lo, 0.0, hi):
        cs = invert_sqlr_ci(NPQIV, npqiv_sample, res, Functional("eval", float(y)), 0.95, cfg, design=design)
        width[y] = cs.upper - cs.lower
        assert cs.lower < _phi(Functional("eval", float(y)), res) < cs.upper
    assert width[lo] > width[0.0] and width[hi] > width[0.0]


def test_score_rejects_npqiv(npqiv_sample):
    r = fit_restricted(NPQIV, npqiv_sample, POINT, 0.0, OptimConfig(restarts=0))
    with pytest.raises(NonSmoothResidualError):
        score_test(NPQIV, npqiv_sample, r, POINT)


def test_score_vanishes_at_nonbinding_restriction(npiv_sample):
    u = fit(NPIV, npiv_sample)
    r = fit_restricted(NPIV, npiv_sample, POINT, _phi(POINT, u))
    rep = score_test(NPIV, npiv_sample, r, POINT)
    assert rep.statistic == pytest.approx(0.0, abs=1e-8)
    assert rep.variance > 0 and rep.pvalue == pytest.approx(1.0, abs=1e-6)


def test_score_under_null_is_standard_normal():
    spec = ModelSpec("npiv", "pol:4", "pol:6", lam=1e-5)
    stats = []
    for rep in range(400):
        data = gen_dgp(DGPSpec("npiv", 500, seed=7), np.random.default_rng([7, rep]))
        design = prepare_design(spec, data)
        r = fit_restricted_design(design, POINT, 0.0)
        stats.append(score_test(spec, data, r, POINT, design=design).statistic)
    assert qq_data(stats).ks < 0.08
