"""Simulation designs for the Monte Carlo harness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .data_io import Dataset

__all__ = ["COVARIANCE", "DGPSpec", "gen_dgp", "h0"]

# Joint law of (Y2*, X*, U*)
COVARIANCE = np.array([[1.0, 0.8, 0.5], [0.8, 1.0, 0.0], [0.5, 0.0, 1.0]])
NPIV_NOISE = 0.76


def h0(y):
    """True structural function ``2 sin(pi y)``."""
    return 2.0 * np.sin(np.pi * np.asarray(y, dtype=float))


@dataclass(frozen=True)
class DGPSpec:
    """Simulation design: ``kind`` is ``"npiv"`` or ``"npqiv"`` (quantile ``gamma``)."""

    kind: str = "npqiv"
    n: int = 750
    gamma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("npiv", "npqiv"):
            raise ValueError(f"unknown design {self.kind!r}")
        if self.n < 10:
            raise ValueError("designs need n >= 10")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")


def gen_dgp(spec: DGPSpec, rng=None) -> Dataset:
    """Draw ``n`` i.i.d. rows.

    ``(Y2*, X*, U*)`` is trivariate normal with :data:`COVARIANCE`;
    ``Y2 = 2 (Phi(Y2*/3) - 1/2)`` and ``X = 2 (Phi(X*/3) - 1/2)``. NPQIV sets
    ``U = 2 (Phi(U*) - gamma)`` so that ``P(U <= 0 | X) = gamma``; NPIV sets
    ``U = 0.76 U*``. In both cases ``Y1 = h0(Y2) + U``.
    """
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    L = np.linalg.cholesky(COVARIANCE)
    z = rng.standard_normal((spec.n, 3)) @ L.T
    y2 = 2.0 * (ndtr(z[:, 0] / 3.0) - 0.5)
    x = 2.0 * (ndtr(z[:, 1] / 3.0) - 0.5)
    if spec.kind == "npqiv":
        u = 2.0 * (ndtr(z[:, 2]) - spec.gamma)
    else:
        u = NPIV_NOISE * z[:, 2]
    return Dataset(h0(y2) + u, y2, x[:, None])
