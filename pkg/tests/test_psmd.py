from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from sievei.basis import eval_basis, penalty_gram
from sievei.data_io import Dataset
from sievei.functionals import Functional, compile_functional
from sievei.models import ModelSpec
from sievei.psmd import (
    OptimConfig,
    RestrictedFitError,
    fit,
    fit_design,
    fit_restricted,
    fit_restricted_design,
    prepare_design,
)
from sievei.variance import d_matrix, riesz, upsilon_matrix

from conftest import random_dataset


def _normal_equations(spec, data, lam):
    """Brute-force ``[C (P'P)^- C' + n lam R] beta = C (P'P)^- P' y1``."""
    spec = spec.resolve(data)
    Q = eval_basis(spec.qbasis, data.y2)
    P = eval_basis(spec.pbasis, data.x[:, 0])
    C = Q.T @ P
    G = np.linalg.pinv(P.T @ P)
    R = penalty_gram(spec.qbasis)
    return np.linalg.solve(C @ G @ C.T + data.n * lam * R, C @ G @ P.T @ data.y1)


def test_exogenous_npiv_is_ols():
    rng = np.random.default_rng(0)
    y = rng.uniform(-1, 1, 12)
    d = Dataset(np.cos(y) + 0.1 * rng.normal(size=12), y, y)
    res = fit(ModelSpec("npiv", "pol:3", "pol:3"), d)
    ols = np.linalg.lstsq(np.vander(y, 3, increasing=True), d.y1, rcond=None)[0]
    np.testing.assert_allclose(res.beta, ols, rtol=1e-9, atol=1e-12)
    assert res.method == "closed_form" and res.converged


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("lam", [0.0, 1e-3])
def test_closed_form_matches_normal_equations(seed, lam):
    d = random_dataset(12, seed=seed)
    spec = ModelSpec("npiv", "pol:3", "pol:5", lam=lam)
    res = fit(spec, d)
    np.testing.assert_allclose(res.beta, _normal_equations(spec, d, lam), rtol=1e-8, atol=1e-10)


def test_large_penalty_shrinks_to_zero(small_data):
    res = fit(ModelSpec("npiv", "pol:3", "pol:5", lam=1e12), small_data)
    assert np.max(np.abs(res.beta)) < 1e-8


def test_fit_result_invariants(small_data):
    res = fit(ModelSpec("npiv", "pol:3", "pol:5", lam=0.1), small_data)
    assert res.qhat >= 0 and res.penalized_value >= res.qhat


def test_warns_when_sieve_exceeds_instruments(small_data):
    with pytest.warns(UserWarning, match="exceeds"):
        fit(ModelSpec("npiv", "pol:4", "pol:2"), small_data)


@pytest.mark.parametrize("seed", range(3))
def test_restricted_point_eval_matches_kkt(seed):
    d = random_dataset(10, seed=seed)
    spec = ModelSpec("npiv", "pol:3", "pol:5")
    design = prepare_design(spec, d)
    H, g, _ = design.quadratic_form()
    F = eval_basis(design.spec.qbasis, [0.0])[0]
    k = H.shape[0]
    K = np.block([[2 * H, F[:, None]], [F[None, :], np.zeros((1, 1))]])
    sol = np.linalg.solve(K, np.concatenate([2 * g, [0.0]]))
    res = fit_restricted(spec, d, Functional("eval", 0.0), 0.0)
    np.testing.assert_allclose(res.beta, sol[:k], rtol=1e-8, atol=1e-10)


def test_nonbinding_restriction_reproduces_fit(npiv_sample):
    spec = ModelSpec("npiv", "pol:4", "pol:6", lam=1e-5)
    u = fit(spec, npiv_sample)
    f = Functional("eval", 0.3)
    r = fit_restricted(spec, npiv_sample, f, compile_functional(f, u.spec.qbasis).value(u.beta))
    assert r.penalized_value == pytest.approx(u.penalized_value, abs=1e-10)


def test_restricted_never_below_unrestricted():
    rng = np.random.default_rng(123)
    for i in range(100):
        d = random_dataset(int(rng.integers(8, 40)), seed=1000 + i)
        spec = ModelSpec("npiv", "pol:3", "pol:5", lam=float(rng.choice([0.0, 1e-3])))
        u = fit(spec, d)
        r = fit_restricted(spec, d, Functional("eval", float(rng.uniform(-0.5, 0.5))), float(rng.normal()))
        assert r.penalized_value >= u.penalized_value - 1e-10


def test_reparametrization_invariance(npiv_sample):
    spec = ModelSpec("npiv", "pol:4", "pol:8")
    design = prepare_design(spec, npiv_sample)
    A = np.random.default_rng(9).normal(size=(4, 4)) + 3 * np.eye(4)
    alt = replace(design, Q=design.Q @ A.T)
    u, v = fit_design(design), fit_design(alt)
    np.testing.assert_allclose(design.Q @ u.beta, alt.Q @ v.beta, rtol=1e-8, atol=1e-10)
    assert v.qhat == pytest.approx(u.qhat, rel=1e-8)
    F = eval_basis(design.spec.qbasis, [0.0])[0]
    assert (A @ F) @ v.beta == pytest.approx(F @ u.beta, rel=1e-8)

    def v1(des, fitted, grad):
        dm = des.dmhat()
        rho = des.residuals(fitted.beta)
        return riesz(d_matrix(dm, des.sigma), grad).variance(upsilon_matrix(dm, des.sigma, rho))

    assert v1(alt, v, A @ F) == pytest.approx(v1(design, u, F), rel=1e-8)


def test_npqiv_fit_beats_initializer(npqiv_sample):
    spec = ModelSpec("npqiv", "pol:4", "pol:7", lam=2e-4, weighting="known", sigma2=0.25)
    design = prepare_design(spec, npqiv_sample)
    start = fit_design(replace(design, spec=replace(design.spec, kind="npiv"))).beta
    res = fit_design(design, OptimConfig(restarts=2))
    assert res.method == "simplex"
    assert res.penalized_value <= design.objective(start) + 1e-15
    assert res.converged


def test_npqiv_deterministic(npqiv_sample):
    spec = ModelSpec("npqiv", "pol:3", "pol:5", weighting="known", sigma2=0.25)
    a = fit(spec, npqiv_sample, OptimConfig(restarts=2, seed=4))
    b = fit(spec, npqiv_sample, OptimConfig(restarts=2, seed=4))
    np.testing.assert_array_equal(a.beta, b.beta)


def test_npqiv_restricted_linear_and_nonlinear(npqiv_sample):
    spec = ModelSpec("npqiv", "pol:4", "pol:7", lam=2e-4, weighting="known", sigma2=0.25)
    cfg = OptimConfig(restarts=1)
    u = fit(spec, npqiv_sample, cfg)
    for f, phi0 in ((Functional("eval", 0.0), 0.1), (Functional("expeval", 0.0), 1.1)):
        r = fit_restricted(spec, npqiv_sample, f, phi0, cfg, start=u.beta)
        assert abs(compile_functional(f, r.spec.qbasis).value(r.beta) - phi0) <= 1e-6 * (1 + phi0)
        assert r.penalized_value >= u.penalized_value - 1e-12


def test_npiv_nonlinear_restriction_feasible(npiv_sample):
    spec = ModelSpec("npiv", "pol:4", "pol:6", lam=1e-5)
    f = Functional("expeval", 0.0)
    r = fit_restricted(spec, npiv_sample, f, 1.3)
    assert compile_functional(f, r.spec.qbasis).value(r.beta) == pytest.approx(1.3, abs=1e-6 * 2.3)
    assert r.method == "continuation"


def test_infeasible_restriction_raises(npiv_sample):
    spec = ModelSpec("npiv", "pol:4", "pol:6")
    with pytest.raises(RestrictedFitError) as info:
        fit_restricted(spec, npiv_sample, Functional("expeval", 0.0), -1.0)
    assert info.value.gap > 1e-6


@pytest.mark.parametrize("kwargs", [{"xtol": 0.0}, {"ftol": -1.0}, {"max_iters": 0}, {"restarts": -1}])
def test_optim_config_validation(kwargs):
    with pytest.raises(ValueError):
        OptimConfig(**kwargs)
