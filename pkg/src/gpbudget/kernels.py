"""Covariance kernel families and their pointwise / matrix evaluation.

Stationary families (``matern1d``, ``matern_tensor``, ``gaussian``,
``exponential``, ``triangular``) are stored as unit-variance correlations
with a separate ``variance`` multiplier.  ``fbm`` uses the form

    k(x, y) = x^{2H} + y^{2H} - |x - y|^{2H}

which is *twice* the conventional fractional-Brownian covariance; with
H = 1/2 it reduces to 2*min(x, y).  ``brownian`` is the plain min(x, y)
kernel.  ``finite_rank`` builds degenerate kernels from an explicit list
of (weight, basis id) terms with cosine or Legendre bases orthonormal for
the uniform measure on [0, 1].
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import eval_legendre, gammaln, kv

FAMILIES = (
    "matern1d",
    "matern_tensor",
    "gaussian",
    "fbm",
    "brownian",
    "exponential",
    "triangular",
    "finite_rank",
)

_ONE_D_FAMILIES = ("fbm", "brownian", "finite_rank")

# below this scaled distance the Matern correlation is 1 to double precision
_MATERN_U_FLOOR = 1e-10


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family tag plus hyperparameters.

    ``lengthscales`` sets the input dimension for stationary families;
    ``fbm``, ``brownian`` and ``finite_rank`` are one-dimensional.
    """

    family: str
    nu: float | None = None
    lengthscales: tuple[float, ...] = (1.0,)
    variance: float = 1.0
    hurst: float | None = None
    rank_terms: tuple[tuple[float, str], ...] | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        object.__setattr__(self, "lengthscales", tuple(float(l) for l in self.lengthscales))
        if any(l <= 0 for l in self.lengthscales):
            raise ValueError("lengthscales must all be > 0")
        if self.variance <= 0:
            raise ValueError("variance must be > 0")
        if self.family in ("matern1d", "matern_tensor"):
            if self.nu is None or self.nu <= 0:
                raise ValueError("Matern kernels require nu > 0")
        if self.family == "matern1d" and len(self.lengthscales) != 1:
            raise ValueError("matern1d is one-dimensional")
        if self.family == "fbm":
            if self.hurst is None or not 0 < self.hurst < 1:
                raise ValueError("fbm requires hurst in (0, 1)")
        if self.family in _ONE_D_FAMILIES and len(self.lengthscales) != 1:
            raise ValueError(f"{self.family} is one-dimensional")
        if self.family == "finite_rank":
            if not self.rank_terms:
                raise ValueError("finite_rank requires nonempty rank_terms")
            terms = tuple((float(w), str(b)) for w, b in self.rank_terms)
            if any(w <= 0 for w, _ in terms):
                raise ValueError("rank_terms weights must be > 0")
            for _, b in terms:
                _parse_basis_id(b)
            object.__setattr__(self, "rank_terms", terms)

    @property
    def dim(self) -> int:
        return len(self.lengthscales)

    def to_json(self) -> dict:
        out = {
            "family": self.family,
            "lengthscales": list(self.lengthscales),
            "variance": self.variance,
        }
        if self.nu is not None:
            out["nu"] = self.nu
        if self.hurst is not None:
            out["hurst"] = self.hurst
        if self.rank_terms is not None:
            out["rank_terms"] = [[w, b] for w, b in self.rank_terms]
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "KernelSpec":
        known = {"family", "nu", "lengthscales", "variance", "hurst", "rank_terms"}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown KernelSpec fields: {sorted(unknown)}")
        kwargs = dict(obj)
        if "lengthscales" in kwargs:
            kwargs["lengthscales"] = tuple(kwargs["lengthscales"])
        if "rank_terms" in kwargs:
            kwargs["rank_terms"] = tuple((w, b) for w, b in kwargs["rank_terms"])
        return cls(**kwargs)


def modified_bessel_K(nu: float, z: float) -> float:
    """Modified Bessel function of the second kind, K_nu(z).

    Symmetric in the sign of ``nu``.  Overflow near z = 0 with large nu
    saturates to +inf with a warning rather than raising.
    """
    if not np.isfinite(z) or z <= 0:
        raise ValueError(f"modified_bessel_K requires z > 0, got {z}")
    val = float(kv(abs(nu), z))
    if np.isinf(val):
        warnings.warn(
            f"K_nu overflow for nu={nu}, z={z}; returning inf",
            RuntimeWarning,
            stacklevel=2,
        )
    return val


def _matern_corr(r: np.ndarray, nu: float) -> np.ndarray:
    """Matern correlation of scaled distance r >= 0 for regularity nu."""
    r = np.asarray(r, dtype=float)
    half = 2 * nu
    if abs(half - round(half)) < 1e-12 and round(half) in (1, 3, 5):
        u = np.sqrt(2 * nu) * r
        if round(half) == 1:
            return np.exp(-u)
        if round(half) == 3:
            return (1 + u) * np.exp(-u)
        return (1 + u + u * u / 3) * np.exp(-u)
    u = np.sqrt(2 * nu) * r
    out = np.ones_like(u)
    mask = u > _MATERN_U_FLOOR
    um = u[mask]
    # 2^{1-nu}/Gamma(nu) * u^nu * K_nu(u), evaluated in log space up front
    # so the prefactor stays finite for large nu
    pref = np.exp((1 - nu) * np.log(2.0) - gammaln(nu) + nu * np.log(um))
    vals = pref * kv(nu, um)
    # inf * 0 at the small-u end means the r -> 0 limit: correlation 1
    vals = np.where(np.isnan(vals), 1.0, vals)
    out[mask] = vals
    return out


def _parse_basis_id(basis_id: str) -> tuple[str, int]:
    try:
        kind, idx = basis_id.split(":")
        idx = int(idx)
    except ValueError:
        raise ValueError(f"bad basis id {basis_id!r}; expected 'cos:j' or 'leg:j'")
    if kind not in ("cos", "leg") or idx < 0:
        raise ValueError(f"bad basis id {basis_id!r}; expected 'cos:j' or 'leg:j'")
    return kind, idx


def _basis_values(basis_id: str, x: np.ndarray) -> np.ndarray:
    """Orthonormal basis functions for the uniform measure on [0, 1]."""
    kind, j = _parse_basis_id(basis_id)
    if kind == "cos":
        if j == 0:
            return np.ones_like(x)
        return np.sqrt(2.0) * np.cos(j * np.pi * x)
    return np.sqrt(2 * j + 1.0) * eval_legendre(j, 2 * x - 1)


def _as_points(x, dim: int) -> np.ndarray:
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    elif pts.ndim == 1:
        # a length-d vector is one point; a vector in 1-D is many points
        pts = pts.reshape(-1, 1) if dim == 1 else pts.reshape(1, -1)
    if pts.ndim != 2 or pts.shape[1] != dim:
        raise ValueError(f"points have dimension {pts.shape[-1]}, kernel expects {dim}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points contain non-finite coordinates")
    return pts


def cross_matrix(spec: KernelSpec, x, y) -> np.ndarray:
    """Covariance matrix k(x_i, y_j) for two point sets, shape (n, m)."""
    X = _as_points(x, spec.dim)
    Y = _as_points(y, spec.dim)
    fam = spec.family
    if fam in ("matern1d", "matern_tensor"):
        out = np.ones((len(X), len(Y)))
        for j, l in enumerate(spec.lengthscales):
            r = np.abs(X[:, j][:, None] - Y[:, j][None, :]) / l
            out *= _matern_corr(r, spec.nu)
        return spec.variance * out
    if fam == "gaussian":
        sq = np.zeros((len(X), len(Y)))
        for j, l in enumerate(spec.lengthscales):
            d = (X[:, j][:, None] - Y[:, j][None, :]) / l
            sq += d * d
        return spec.variance * np.exp(-0.5 * sq)
    if fam == "exponential":
        r = np.zeros((len(X), len(Y)))
        for j, l in enumerate(spec.lengthscales):
            r += np.abs(X[:, j][:, None] - Y[:, j][None, :]) / l
        return spec.variance * np.exp(-r)
    if fam == "triangular":
        out = np.ones((len(X), len(Y)))
        for j, l in enumerate(spec.lengthscales):
            r = np.abs(X[:, j][:, None] - Y[:, j][None, :]) / l
            out *= np.maximum(0.0, 1.0 - r)
        return spec.variance * out
    if fam == "brownian":
        return spec.variance * np.minimum(X[:, 0][:, None], Y[:, 0][None, :])
    if fam == "fbm":
        h2 = 2 * spec.hurst
        a = np.abs(X[:, 0])[:, None] ** h2
        b = np.abs(Y[:, 0])[None, :] ** h2
        d = np.abs(X[:, 0][:, None] - Y[:, 0][None, :]) ** h2
        return spec.variance * (a + b - d)
    # finite_rank
    out = np.zeros((len(X), len(Y)))
    for w, bid in spec.rank_terms:
        fx = _basis_values(bid, X[:, 0])
        fy = _basis_values(bid, Y[:, 0])
        out += w * np.outer(fx, fy)
    return spec.variance * out


def eval_kernel(spec: KernelSpec, x, y) -> float:
    """Covariance between two points."""
    return float(cross_matrix(spec, x, y)[0, 0])


def kernel_diag(spec: KernelSpec, x) -> np.ndarray:
    """Vector of k(x_i, x_i) values."""
    X = _as_points(x, spec.dim)
    fam = spec.family
    if fam in ("matern1d", "matern_tensor", "gaussian", "exponential", "triangular"):
        return np.full(len(X), spec.variance)
    if fam == "brownian":
        return spec.variance * X[:, 0].copy()
    if fam == "fbm":
        h2 = 2 * spec.hurst
        return spec.variance * 2 * np.abs(X[:, 0]) ** h2
    vals = np.zeros(len(X))
    for w, bid in spec.rank_terms:
        vals += w * _basis_values(bid, X[:, 0]) ** 2
    return spec.variance * vals


def _pairwise_values(spec: KernelSpec, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Elementwise k(A_i, B_i) for two equally long point lists."""
    fam = spec.family
    if fam in ("matern1d", "matern_tensor"):
        out = np.ones(len(A))
        for j, l in enumerate(spec.lengthscales):
            out *= _matern_corr(np.abs(A[:, j] - B[:, j]) / l, spec.nu)
        return spec.variance * out
    if fam == "gaussian":
        sq = np.zeros(len(A))
        for j, l in enumerate(spec.lengthscales):
            d = (A[:, j] - B[:, j]) / l
            sq += d * d
        return spec.variance * np.exp(-0.5 * sq)
    if fam == "exponential":
        r = np.zeros(len(A))
        for j, l in enumerate(spec.lengthscales):
            r += np.abs(A[:, j] - B[:, j]) / l
        return spec.variance * np.exp(-r)
    if fam == "triangular":
        out = np.ones(len(A))
        for j, l in enumerate(spec.lengthscales):
            r = np.abs(A[:, j] - B[:, j]) / l
            out *= np.maximum(0.0, 1.0 - r)
        return spec.variance * out
    if fam == "brownian":
        return spec.variance * np.minimum(A[:, 0], B[:, 0])
    if fam == "fbm":
        h2 = 2 * spec.hurst
        a = np.abs(A[:, 0]) ** h2
        b = np.abs(B[:, 0]) ** h2
        d = np.abs(A[:, 0] - B[:, 0]) ** h2
        return spec.variance * (a + b - d)
    out = np.zeros(len(A))
    for w, bid in spec.rank_terms:
        out += w * _basis_values(bid, A[:, 0]) * _basis_values(bid, B[:, 0])
    return spec.variance * out


def gram_matrix(spec: KernelSpec, points) -> np.ndarray:
    """Symmetric covariance matrix of a point set.

    Only the strict upper triangle is evaluated through the kernel; the
    result is exactly symmetric with kernel_diag on the diagonal.
    """
    X = _as_points(points, spec.dim)
    if len(X) == 0:
        raise ValueError("gram_matrix requires at least one point")
    n = len(X)
    K = np.empty((n, n))
    rows, cols = np.triu_indices(n, k=1)
    vals = _pairwise_values(spec, X[rows], X[cols])
    K[rows, cols] = vals
    K[cols, rows] = vals
    K[np.diag_indices(n)] = kernel_diag(spec, X)
    return K
