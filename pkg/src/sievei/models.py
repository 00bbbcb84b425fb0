"""Conditional moment models, series LS conditional means and the MD criterion."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .basis import BasisSpec, eval_basis, eval_tensor, parse_basis, penalty_gram
from .data_io import Dataset
from .linalg import ProjectionCache, build_projection

__all__ = [
    "Design",
    "ModelSpec",
    "NonSmoothResidualError",
    "WeightingError",
    "build_design",
    "criterion",
    "dmhat_matrix",
    "m_hat",
    "residuals",
    "sigma0_series",
]


class NonSmoothResidualError(ValueError):
    """The NPQIV residual is a step function of the coefficients."""

    def __init__(self, what: str = "this statistic"):
        super().__init__(
            f"{what} needs the derivative of the residual, which is not pointwise smooth "
            "for NPQIV; use SQLR / slope-variance inference or enable numeric derivatives"
        )


class WeightingError(ValueError):
    pass


WEIGHTINGS = ("identity", "known", "sigma0")


@dataclass(frozen=True)
class ModelSpec:
    """Residual model, sieve bases, weighting rule and penalty weight.

    Parameters
    ----------
    kind : {"npiv", "npqiv"}
        ``rho = y1 - h(y2)`` or ``rho = 1{y1 <= h(y2)} - gamma``.
    qbasis, pbasis : BasisSpec or str
        Sieve for ``h`` (on ``y2``) and series LS basis for the instruments.
    lam : float
        Penalty weight on ``||h||^2 + ||h'||^2``.
    weighting : {"identity", "known", "sigma0"}
        ``known`` divides the criterion by the constant ``sigma2``; ``sigma0``
        uses the series LS fit of squared first-step residuals (the constant
        ``gamma (1 - gamma)`` for NPQIV).
    tensor : bool
        Tensor-product instrument basis over all columns of ``x``; otherwise
        only the first column is used.
    """

    kind: str = "npiv"
    qbasis: BasisSpec | str = "pol:4"
    pbasis: BasisSpec | str = "pol:6"
    lam: float = 0.0
    gamma: float = 0.5
    weighting: str = "identity"
    sigma2: float | None = None
    tensor: bool = False
    numeric_derivative: bool = False
    pbasis_extra: tuple[BasisSpec, ...] = field(default=(), repr=False)

    def __post_init__(self):
        if isinstance(self.qbasis, str):
            object.__setattr__(self, "qbasis", parse_basis(self.qbasis))
        if isinstance(self.pbasis, str):
            object.__setattr__(self, "pbasis", parse_basis(self.pbasis))
        if self.kind not in ("npiv", "npqiv"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "npqiv" and not 0.0 < self.gamma < 1.0:
            raise ValueError("NPQIV quantile must lie strictly inside (0, 1)")
        if not self.lam >= 0.0:
            raise ValueError("penalty weight must be >= 0")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")
        if self.weighting == "known" and not (self.sigma2 is not None and self.sigma2 > 0):
            raise WeightingError("known weighting needs sigma2 > 0")

    @property
    def smooth(self) -> bool:
        return self.kind == "npiv"

    @property
    def optimal(self) -> bool:
        """Whether the criterion is optimally weighted (chi-square SQLR)."""
        if self.weighting == "sigma0":
            return True
        if self.kind == "npqiv" and self.weighting == "known":
            return bool(np.isclose(self.sigma2, self.gamma * (1 - self.gamma)))
        return False

    @property
    def resolved(self) -> bool:
        return self.qbasis.resolved and self.pbasis.resolved

    def resolve(self, data: Dataset) -> ModelSpec:
        """Fix knots and supports of both bases from the sample."""
        if self.resolved and (not self.tensor or len(self.pbasis_extra) == data.x.shape[1] - 1):
            return self
        q = self.qbasis.resolve(data.y2)
        p = self.pbasis.resolve(data.x[:, 0])
        extra = ()
        if self.tensor:
            extra = tuple(self.pbasis.resolve(data.x[:, j]) for j in range(1, data.x.shape[1]))
        return replace(self, qbasis=q, pbasis=p, pbasis_extra=extra)

    def instrument_design(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if self.tensor and x.shape[1] > 1:
            return eval_tensor((self.pbasis, *self.pbasis_extra), x)
        return eval_basis(self.pbasis, x[:, 0])

    def constant_sigma(self) -> float | None:
        """The constant weighting value, or None when it is data dependent."""
        if self.weighting == "identity":
            return 1.0
        if self.weighting == "known":
            return float(self.sigma2)
        if self.kind == "npqiv":
            return self.gamma * (1.0 - self.gamma)
        return None


def _resolved(spec: ModelSpec, data: Dataset) -> ModelSpec:
    return spec if spec.resolved else spec.resolve(data)


def residuals(spec: ModelSpec, data: Dataset, beta) -> np.ndarray:
    """Generalized residuals ``rho(Z_i, beta)``."""
    spec = _resolved(spec, data)
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (spec.qbasis.dim,):
        raise ValueError(f"beta has shape {beta.shape}, expected ({spec.qbasis.dim},)")
    h = eval_basis(spec.qbasis, data.y2) @ beta
    if spec.kind == "npiv":
        return data.y1 - h
    return (data.y1 <= h).astype(float) - spec.gamma


def _check_cache(cache: ProjectionCache, data: Dataset):
    if cache.n != data.n:
        raise ValueError(f"projection built for n={cache.n}, data has n={data.n}")


def m_hat(spec: ModelSpec, data: Dataset, beta, cache: ProjectionCache, eval_x=None) -> np.ndarray:
    """Series LS estimate of ``E[rho | X = x]``, at the sample points by default."""
    spec = _resolved(spec, data)
    _check_cache(cache, data)
    rho = residuals(spec, data, beta)
    if eval_x is None:
        return cache.project(rho)
    px = spec.instrument_design(eval_x)
    return px @ (cache.PtP_pinv @ (cache.P.T @ rho))


def _sigma_array(sigma, n: int) -> np.ndarray:
    s = np.broadcast_to(np.asarray(sigma, dtype=float), (n,))
    if not np.all(np.isfinite(s)) or np.any(s <= 0):
        raise WeightingError("weighting values must be finite and strictly positive")
    return s


def criterion(spec: ModelSpec, data: Dataset, beta, cache: ProjectionCache, sigma=1.0) -> float:
    """Sample minimum-distance criterion ``n^-1 sum m_hat(X_i)^2 / Sigma(X_i)``."""
    spec = _resolved(spec, data)
    _check_cache(cache, data)
    s = _sigma_array(sigma, data.n)
    rho = residuals(spec, data, beta)
    if np.all(s == s[0]):
        c = cache.coords(rho)
        return float(c @ c) / (data.n * s[0])
    m = cache.project(rho)
    return float(np.mean(m * m / s))


def dmhat_matrix(
    spec: ModelSpec,
    data: Dataset,
    beta,
    cache: ProjectionCache,
    numeric: bool | None = None,
    bandwidth: float | None = None,
) -> np.ndarray:
    """Derivative of ``m_hat(X_i, .)`` in each sieve direction, shape ``(n, k)``.

    For NPIV row ``i`` is ``[C_n (P'P)^- p(X_i)]'`` with ``C_n = sum_j q(Y2_j) p(X_j)'``,
    the same for every ``beta``. NPQIV is only supported with ``numeric=True``:
    the indicator is replaced by a Gaussian-smoothed version with bandwidth
    ``n^(-1/5) sd(rho)`` and differentiated by symmetric differences.
    """
    spec = _resolved(spec, data)
    _check_cache(cache, data)
    numeric = spec.numeric_derivative if numeric is None else numeric
    Q = eval_basis(spec.qbasis, data.y2)
    if spec.kind == "npiv":
        return cache.project(Q)
    if not numeric:
        raise NonSmoothResidualError("the derivative of m_hat")
    from scipy.special import ndtr

    beta = np.asarray(beta, dtype=float)
    u = data.y1 - Q @ beta
    if bandwidth is None:
        bandwidth = data.n ** (-0.2) * max(float(np.std(u)), 1e-12)
    step = 1e-6 * bandwidth
    k = Q.shape[1]
    out = np.empty((data.n, k))
    for j in range(k):
        # 1{y1 <= h} ~ Phi((h - y1) / bw); the sign convention cancels in every quadratic form
        plus = ndtr((-u + step * Q[:, j]) / bandwidth)
        minus = ndtr((-u - step * Q[:, j]) / bandwidth)
        out[:, j] = (plus - minus) / (2 * step)
    return cache.project(out)


def sigma0_series(
    spec: ModelSpec, data: Dataset, beta, cache: ProjectionCache, floor: float | None = None
) -> np.ndarray:
    """Conditional residual variance ``Sigma_0(X_i)`` by series LS on squared residuals.

    NPQIV returns the exact constant ``gamma (1 - gamma)``. For NPIV the fit is
    clamped below at ``floor`` (default ``1e-6 * mean(U^2)``).
    """
    spec = _resolved(spec, data)
    _check_cache(cache, data)
    if spec.kind == "npqiv":
        return np.full(data.n, spec.gamma * (1.0 - spec.gamma))
    u2 = residuals(spec, data, beta) ** 2
    mean_u2 = float(np.mean(u2))
    if mean_u2 == 0.0:
        raise WeightingError("all residuals are zero; conditional variance is degenerate")
    if floor is None:
        floor = 1e-6 * mean_u2
    return np.maximum(cache.project(u2), floor)


@dataclass
class Design:
    """Precomputed matrices of a (resolved) model on one sample.

    The projection coordinates ``A = U'Q`` and ``b = U'y1`` reduce every NPIV
    criterion evaluation to ``rank``-dimensional algebra.
    """

    spec: ModelSpec
    data: Dataset
    Q: np.ndarray
    cache: ProjectionCache
    R: np.ndarray
    sigma: np.ndarray

    @property
    def n(self) -> int:
        return self.data.n

    @property
    def k(self) -> int:
        return self.Q.shape[1]

    def with_sigma(self, sigma) -> Design:
        return replace(self, sigma=_sigma_array(sigma, self.n).copy())

    @property
    def sigma_constant(self) -> float | None:
        s = self.sigma
        return float(s[0]) if np.all(s == s[0]) else None

    def residuals(self, beta, weights=None) -> np.ndarray:
        h = self.Q @ beta
        if self.spec.kind == "npiv":
            rho = self.data.y1 - h
        else:
            rho = (self.data.y1 <= h).astype(float) - self.spec.gamma
        return rho if weights is None else weights * rho

    def criterion(self, beta, weights=None) -> float:
        rho = self.residuals(np.asarray(beta, dtype=float), weights)
        c = self.sigma_constant
        if c is not None:
            v = self.cache.coords(rho)
            return float(v @ v) / (self.n * c)
        m = self.cache.project(rho)
        return float(np.mean(m * m / self.sigma))

    def penalty(self, beta) -> float:
        beta = np.asarray(beta, dtype=float)
        return float(beta @ self.R @ beta)

    def objective(self, beta, weights=None) -> float:
        return self.criterion(beta, weights) + self.spec.lam * self.penalty(beta)

    def dmhat(self, beta=None) -> np.ndarray:
        if self.spec.kind == "npiv":
            return self.cache.project(self.Q)
        return dmhat_matrix(self.spec, self.data, beta, self.cache)

    def quadratic_form(self, weights=None) -> tuple[np.ndarray, np.ndarray, float]:
        """NPIV objective as ``beta' H beta - 2 g' beta + c0``."""
        U = self.cache.U
        Qw = self.Q if weights is None else weights[:, None] * self.Q
        yw = self.data.y1 if weights is None else weights * self.data.y1
        c = self.sigma_constant
        if c is not None:
            A = U.T @ Qw
            b = U.T @ yw
            H = A.T @ A / (self.n * c)
            g = A.T @ b / (self.n * c)
            c0 = float(b @ b) / (self.n * c)
        else:
            PQ = U @ (U.T @ Qw)
            Py = U @ (U.T @ yw)
            w = 1.0 / self.sigma
            H = PQ.T @ (w[:, None] * PQ) / self.n
            g = PQ.T @ (w * Py) / self.n
            c0 = float(Py @ (w * Py)) / self.n
        H = H + self.spec.lam * self.R
        return 0.5 * (H + H.T), g, c0


def build_design(spec: ModelSpec, data: Dataset, sigma=None, quad_nodes: int | None = None) -> Design:
    """Resolve ``spec`` on ``data`` and precompute bases, projection and penalty Gram."""
    spec = _resolved(spec, data)
    Q = eval_basis(spec.qbasis, data.y2)
    cache = build_projection(spec.instrument_design(data.x))
    R = penalty_gram(spec.qbasis, quad_nodes) if spec.lam > 0 else np.zeros((Q.shape[1],) * 2)
    if sigma is None:
        c = spec.constant_sigma()
        sigma = 1.0 if c is None else c
    return Design(spec, data, Q, cache, R, _sigma_array(sigma, data.n).copy())
