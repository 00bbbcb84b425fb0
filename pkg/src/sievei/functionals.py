"""Scalar functionals of the structural function and their sieve gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .basis import BasisSpec, eval_basis, integrate

__all__ = [
    "CompiledFunctional",
    "Functional",
    "WeightFn",
    "compile_functional",
    "gradient",
    "parse_functional",
    "value",
]

KINDS = ("eval", "expeval", "wderiv", "quad", "curv")


@dataclass(frozen=True)
class WeightFn:
    """Weight function, optionally a Gaussian bump, restricted to ``[lo, hi]``."""

    kind: str = "uniform"
    lo: float = -math.inf
    hi: float = math.inf
    mu: float = 0.0
    sd: float = 1.0

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        inside = (y >= self.lo) & (y <= self.hi)
        if self.kind == "uniform":
            return inside.astype(float)
        z = (y - self.mu) / self.sd
        return np.where(inside, np.exp(-0.5 * z * z) / self.sd, 0.0)

    @classmethod
    def from_sample(cls, y, kind: str = "gauss", lo_q: float = 0.01, hi_q: float = 0.99) -> WeightFn:
        """Weight truncated at sample quantiles; the Gaussian uses the sample mean and sd."""
        y = np.asarray(y, dtype=float)
        lo, hi = np.quantile(y, [lo_q, hi_q])
        return cls(kind, float(lo), float(hi), float(np.mean(y)), float(np.std(y)))


@dataclass(frozen=True)
class Functional:
    """A functional ``phi(h)``.

    ``eval`` is ``h(point)``, ``expeval`` is ``exp(h(point))``, ``wderiv`` is
    ``int w h'``, ``quad`` is ``1/2 int w h^2`` and ``curv`` is ``int w (h'')^2``.
    Integrals run over the basis support intersected with the weight's range,
    split at spline knots, with ``quad_nodes`` Gauss-Legendre points per piece.
    """

    kind: str
    point: float = 0.0
    weight: WeightFn | None = None
    quad_nodes: int = 64

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown functional {self.kind!r}; expected one of {KINDS}")

    @property
    def is_linear(self) -> bool:
        return self.kind in ("eval", "wderiv")

    def __str__(self) -> str:
        if self.kind in ("eval", "expeval"):
            return f"{self.kind}:{self.point:g}"
        return self.kind

    def _weight(self) -> WeightFn:
        return self.weight if self.weight is not None else WeightFn()

    def _integral(self, basis: BasisSpec, integrand):
        w = self._weight()
        a, b = basis.support
        return integrate(basis, integrand, self.quad_nodes, max(a, w.lo), min(b, w.hi))

    def linear_map(self, basis: BasisSpec) -> np.ndarray:
        """``F`` with ``phi(beta) = F' beta`` (linear kinds only)."""
        if self.kind == "eval":
            return eval_basis(basis, [self.point])[0]
        if self.kind == "wderiv":
            w = self._weight()
            return self._integral(basis, lambda y: w(y)[:, None] * eval_basis(basis, y, 1))
        raise ValueError(f"{self.kind} is not linear")

    def gram(self, basis: BasisSpec) -> np.ndarray:
        """``G`` with ``phi(beta) = c beta' G beta`` (quadratic kinds only)."""
        w = self._weight()
        order = 0 if self.kind == "quad" else 2

        def integrand(y):
            B = eval_basis(basis, y, order)
            return w(y)[:, None, None] * B[:, :, None] * B[:, None, :]

        G = self._integral(basis, integrand)
        return 0.5 * (G + G.T)


def _check(basis: BasisSpec, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (basis.dim,):
        raise ValueError(f"beta has shape {beta.shape}, expected ({basis.dim},)")
    return beta


@dataclass(frozen=True)
class CompiledFunctional:
    """A functional bound to one basis, with its basis-dependent pieces precomputed.

    ``vec`` is ``F`` for linear kinds and ``q(point)`` for ``expeval``; ``mat``
    is the Gram matrix of the quadratic kinds.
    """

    functional: Functional
    basis: BasisSpec
    vec: np.ndarray | None = None
    mat: np.ndarray | None = None

    @property
    def is_linear(self) -> bool:
        return self.functional.is_linear

    def value(self, beta) -> float:
        beta = _check(self.basis, beta)
        kind = self.functional.kind
        if kind in ("eval", "wderiv"):
            return float(self.vec @ beta)
        if kind == "expeval":
            return math.exp(float(self.vec @ beta))
        c = 0.5 if kind == "quad" else 1.0
        return float(c * beta @ self.mat @ beta)

    def gradient(self, beta) -> np.ndarray:
        beta = _check(self.basis, beta)
        kind = self.functional.kind
        if kind in ("eval", "wderiv"):
            return self.vec.copy()
        if kind == "expeval":
            return math.exp(float(self.vec @ beta)) * self.vec
        c = 1.0 if kind == "quad" else 2.0
        return c * self.mat @ beta

    def hessian(self, beta) -> np.ndarray:
        beta = _check(self.basis, beta)
        kind = self.functional.kind
        if kind in ("eval", "wderiv"):
            return np.zeros((beta.size, beta.size))
        if kind == "expeval":
            return math.exp(float(self.vec @ beta)) * np.outer(self.vec, self.vec)
        c = 1.0 if kind == "quad" else 2.0
        return c * self.mat


def compile_functional(f: Functional, basis: BasisSpec) -> CompiledFunctional:
    """Precompute the basis-dependent vectors / matrices of ``f``."""
    if isinstance(f, CompiledFunctional):
        if f.basis == basis:
            return f
        f = f.functional
    if f.kind in ("eval", "wderiv"):
        return CompiledFunctional(f, basis, vec=f.linear_map(basis))
    if f.kind == "expeval":
        return CompiledFunctional(f, basis, vec=eval_basis(basis, [f.point])[0])
    return CompiledFunctional(f, basis, mat=f.gram(basis))


def value(f: Functional, basis: BasisSpec, beta) -> float:
    """``phi(h)`` for ``h = q' beta``."""
    return compile_functional(f, basis).value(beta)


def gradient(f: Functional, basis: BasisSpec, beta) -> np.ndarray:
    """Sieve gradient ``d phi(h) / dh [q]`` (length ``basis.dim``)."""
    return compile_functional(f, basis).gradient(beta)


def parse_functional(text: str, sample=None) -> Functional:
    """Parse ``eval:Y``, ``expeval:Y``, ``wderiv``, ``quad`` or ``curv``.

    Integral functionals take an optional ``:uniform`` or ``:gauss`` suffix; the
    default is the Gaussian weight truncated at the 1% / 99% quantiles of
    ``sample`` (uniform over the support when no sample is given).
    """
    parts = text.strip().lower().split(":")
    kind = parts[0]
    if kind in ("eval", "expeval"):
        if len(parts) != 2:
            raise ValueError(f"{kind} needs a point, e.g. '{kind}:0'")
        return Functional(kind, point=float(parts[1]))
    if kind not in KINDS or len(parts) > 2:
        raise ValueError(f"cannot parse functional {text!r}")
    wkind = parts[1] if len(parts) == 2 else ("gauss" if sample is not None else "uniform")
    if wkind not in ("gauss", "uniform"):
        raise ValueError(f"unknown weight {wkind!r}")
    if sample is None:
        weight = None
    else:
        weight = WeightFn.from_sample(sample, kind=wkind)
    return Functional(kind, weight=weight)
