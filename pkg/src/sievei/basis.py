"""Linear sieve bases: power series and truncated-power polynomial splines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .linalg import gauss_legendre

__all__ = [
    "BasisError",
    "BasisSpec",
    "DegenerateKnotsError",
    "UnsupportedDerivativeError",
    "eval_basis",
    "eval_tensor",
    "parse_basis",
    "penalty_gram",
    "quantile_knots",
]

SUPPORT_PAD = 1e-9


class BasisError(ValueError):
    pass


class DegenerateKnotsError(BasisError):
    pass


class UnsupportedDerivativeError(BasisError):
    pass


@dataclass(frozen=True)
class BasisSpec:
    """A univariate sieve basis.

    ``kind="pol"`` is the power series ``1, y, ..., y**(J-1)``;
    ``kind="pspline"`` is the degree-``degree`` spline in truncated-power form
    ``1, y, ..., y**r, (y - t_1)_+**r, ..., (y - t_k)_+**r``.

    Knots and support are data dependent; an unresolved spec (``knots`` empty
    for a spline, ``support`` None) is completed by :meth:`resolve`.
    """

    kind: str
    size: int
    degree: int = 0
    support: tuple[float, float] | None = None
    knots: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.kind not in ("pol", "pspline"):
            raise BasisError(f"unknown basis kind {self.kind!r}")
        if self.kind == "pol" and self.size < 1:
            raise BasisError("power series needs at least one term")
        if self.kind == "pspline":
            if self.degree < 0 or self.size < 0:
                raise BasisError("spline degree and knot count must be non-negative")
            if self.knots and len(self.knots) != self.size:
                raise BasisError(f"expected {self.size} knots, got {len(self.knots)}")
        if self.support is not None:
            a, b = self.support
            if not a < b:
                raise BasisError(f"empty support {self.support}")
            if self.knots:
                t = np.asarray(self.knots)
                if np.any(np.diff(t) <= 0):
                    raise DegenerateKnotsError(f"knots not strictly increasing: {self.knots}")
                if t[0] <= a or t[-1] >= b:
                    raise DegenerateKnotsError("knots must lie strictly inside the support")

    @property
    def dim(self) -> int:
        if self.kind == "pol":
            return self.size
        return self.degree + 1 + self.size

    @property
    def poly_degree(self) -> int:
        return self.size - 1 if self.kind == "pol" else self.degree

    @property
    def resolved(self) -> bool:
        return self.support is not None and (self.kind == "pol" or len(self.knots) == self.size)

    def resolve(self, points) -> BasisSpec:
        """Fill in knots (empirical quantiles) and support (widened sample range)."""
        points = np.asarray(points, dtype=float).ravel()
        support = self.support
        if support is None:
            lo, hi = float(points.min()), float(points.max())
            pad = SUPPORT_PAD * max(1.0, hi - lo)
            support = (lo - pad, hi + pad)
        knots = self.knots
        if self.kind == "pspline" and len(knots) != self.size:
            knots = tuple(quantile_knots(points, self.size)) if self.size else ()
        return replace(self, support=support, knots=knots)

    def __str__(self) -> str:
        if self.kind == "pol":
            return f"pol:{self.size}"
        return f"pspline:{self.degree}:{self.size}"


def parse_basis(text: str) -> BasisSpec:
    """Parse ``"pol:J"`` or ``"pspline:r:k"`` into an unresolved :class:`BasisSpec`."""
    parts = text.strip().lower().split(":")
    try:
        if parts[0] == "pol" and len(parts) == 2:
            return BasisSpec("pol", int(parts[1]))
        if parts[0] == "pspline" and len(parts) == 3:
            return BasisSpec("pspline", int(parts[2]), degree=int(parts[1]))
    except ValueError:
        pass
    raise BasisError(f"cannot parse basis {text!r}; expected 'pol:J' or 'pspline:r:k'")


def quantile_knots(data, k: int) -> np.ndarray:
    """Knots at the empirical quantiles ``j / (k + 1)``, ``j = 1..k``."""
    data = np.asarray(data, dtype=float).ravel()
    if k < 1:
        raise BasisError("need k >= 1 knots")
    if np.unique(data).size < k + 2:
        raise DegenerateKnotsError(f"{k} knots need at least {k + 2} distinct values")
    knots = np.quantile(data, np.arange(1, k + 1) / (k + 1))
    if np.any(np.diff(knots) <= 0) or knots[0] <= data.min() or knots[-1] >= data.max():
        raise DegenerateKnotsError(f"quantile knots collapse: {knots}")
    return knots


def _falling(j: int, d: int) -> float:
    # j * (j-1) * ... * (j-d+1)
    return float(math.perm(j, d)) if j >= d else 0.0


def eval_basis(spec: BasisSpec, points, deriv_order: int = 0) -> np.ndarray:
    """Evaluate the ``deriv_order``-th derivative of every basis function.

    Returns an array of shape ``(len(points), spec.dim)``.
    """
    y = np.asarray(points, dtype=float).ravel()
    d = int(deriv_order)
    if d < 0:
        raise BasisError("deriv_order must be >= 0")
    if spec.kind == "pspline" and d > spec.degree:
        raise UnsupportedDerivativeError(
            f"derivative of order {d} exceeds spline degree {spec.degree}"
        )
    if spec.kind == "pspline" and len(spec.knots) != spec.size:
        raise BasisError("spline basis has unresolved knots; call resolve() first")
    deg = spec.poly_degree
    out = np.zeros((y.size, spec.dim))
    for j in range(d, deg + 1):
        out[:, j] = _falling(j, d) * y ** (j - d)
    if spec.kind == "pspline":
        r = spec.degree
        c = _falling(r, d)
        for m, t in enumerate(spec.knots):
            z = y - t
            if r - d == 0:
                out[:, r + 1 + m] = c * (z > 0)
            else:
                out[:, r + 1 + m] = c * np.where(z > 0, z, 0.0) ** (r - d)
    return out


def eval_tensor(specs, X, deriv_order: int = 0) -> np.ndarray:
    """Row-wise tensor product of univariate bases, one per column of ``X``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if len(specs) != X.shape[1]:
        raise BasisError(f"{len(specs)} bases for {X.shape[1]} columns")
    out = eval_basis(specs[0], X[:, 0], deriv_order)
    for j, s in enumerate(specs[1:], start=1):
        B = eval_basis(s, X[:, j], deriv_order)
        out = (out[:, :, None] * B[:, None, :]).reshape(X.shape[0], -1)
    return out


def integration_pieces(spec: BasisSpec, a: float | None = None, b: float | None = None):
    """Sub-intervals of ``[a, b]`` (default: the support) split at the knots."""
    if spec.support is None:
        raise BasisError("basis support unresolved")
    lo = spec.support[0] if a is None else a
    hi = spec.support[1] if b is None else b
    cuts = [t for t in spec.knots if lo < t < hi]
    edges = [lo, *cuts, hi]
    return list(zip(edges[:-1], edges[1:]))


def integrate(spec: BasisSpec, fn, quad_nodes: int, a=None, b=None):
    """Piecewise Gauss-Legendre integral of ``fn(y)`` (vectorised) over the support."""
    total = None
    for lo, hi in integration_pieces(spec, a, b):
        if hi <= lo:
            continue
        y, w = gauss_legendre(quad_nodes, lo, hi)
        val = np.tensordot(w, fn(y), axes=(0, 0))
        total = val if total is None else total + val
    if total is None:
        raise BasisError("empty integration range")
    return total


def penalty_gram(spec: BasisSpec, quad_nodes: int | None = None) -> np.ndarray:
    """Gram matrix of ``Pen(h) = ||h||^2 + ||h'||^2`` over the support.

    ``beta' R beta`` equals the penalty of ``h = q' beta``.
    """
    if quad_nodes is None:
        quad_nodes = spec.dim + 2
    if quad_nodes < spec.dim:
        raise BasisError(f"quad_nodes={quad_nodes} below exactness threshold {spec.dim}")

    def integrand(y):
        q0 = eval_basis(spec, y, 0)
        q1 = eval_basis(spec, y, 1)
        return q0[:, :, None] * q0[:, None, :] + q1[:, :, None] * q1[:, None, :]

    R = integrate(spec, integrand, quad_nodes)
    return 0.5 * (R + R.T)
