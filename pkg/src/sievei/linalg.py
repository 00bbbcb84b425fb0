"""Numerical kernels shared by the estimators.

Moore-Penrose inverses, series least-squares projections and Gauss-Legendre rules.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ProjectionCache",
    "build_projection",
    "gauss_legendre",
    "pinv",
    "projection_quadform",
]


def _default_rtol(shape) -> float:
    return 1e-12 * max(shape)


def pinv(M, rtol: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via the SVD.

    Singular values at or below ``rtol * sigma_max`` are treated as zero;
    ``rtol`` defaults to ``1e-12 * max(M.shape)``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if rtol is None:
        rtol = _default_rtol(M.shape)
    if M.size == 0:
        return np.zeros(M.T.shape)
    u, s, vt = np.linalg.svd(M, full_matrices=False)
    if s[0] == 0.0:
        return np.zeros(M.T.shape)
    keep = s > rtol * s[0]
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    return (vt.T * inv_s) @ u.T


@dataclass(frozen=True)
class ProjectionCache:
    """Series least-squares projection onto the columns of an instrument design.

    Attributes
    ----------
    P : ndarray (n, J)
        Instrument design matrix.
    PtP_pinv : ndarray (J, J)
        Generalized inverse of ``P'P``.
    rank : int
        Number of retained directions.
    U : ndarray (n, rank)
        Orthonormal basis of the retained column space, so that
        ``P (P'P)^- P' = U U'``.
    """

    P: np.ndarray
    PtP_pinv: np.ndarray
    rank: int
    U: np.ndarray

    @property
    def n(self) -> int:
        return self.P.shape[0]

    def project(self, v: np.ndarray) -> np.ndarray:
        """Fitted values ``P (P'P)^- P' v`` at the sample points."""
        return self.U @ (self.U.T @ v)

    def coords(self, v: np.ndarray) -> np.ndarray:
        """``U' v``: coordinates of the projection of ``v``."""
        return self.U.T @ v


def build_projection(P, rtol: float | None = None) -> ProjectionCache:
    """Build the projection for design ``P``.

    ``(P'P)^-`` uses the same truncation rule as :func:`pinv` applied to
    ``P'P`` (eigenvalues at or below ``rtol * lambda_max`` dropped), but is
    computed from the SVD of ``P`` itself, which avoids squaring the condition
    number of high-order power-series designs.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    J = P.shape[1]
    if rtol is None:
        rtol = _default_rtol((J, J))
    u, s, vt = np.linalg.svd(P, full_matrices=False)
    s2 = s**2
    if s2.size == 0 or s2[0] == 0.0:
        return ProjectionCache(P, np.zeros((J, J)), 0, np.zeros((P.shape[0], 0)))
    keep = s2 > rtol * s2[0]
    r = int(keep.sum())
    v_r = vt[:r].T
    PtP_pinv = (v_r / s2[:r]) @ v_r.T
    return ProjectionCache(P, PtP_pinv, r, np.ascontiguousarray(u[:, :r]))


def projection_quadform(cache: ProjectionCache, v) -> float:
    """``v' P (P'P)^- P' v``, the sum of squared series-LS fitted values of ``v``."""
    v = np.asarray(v, dtype=float)
    if v.shape[0] != cache.n:
        raise ValueError(f"vector length {v.shape[0]} does not match n={cache.n}")
    c = cache.U.T @ v
    return float(c @ c)


def gauss_legendre(nodes: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on ``[a, b]``.

    Exact for polynomials of degree up to ``2 * nodes - 1``.
    """
    if nodes < 1:
        raise ValueError("nodes must be >= 1")
    if not a < b:
        raise ValueError(f"need a < b, got [{a}, {b}]")
    t, w = np.polynomial.legendre.leggauss(nodes)
    half = 0.5 * (b - a)
    return half * t + 0.5 * (a + b), half * w
