"""BLUP fitting and prediction under heteroscedastic observation noise.

Observations enter in a canonical form: per design point a mean value and
the variance of that mean (sigma_eps^2(x_i) / s_i for s_i averaged
replicates).  The predictor is the usual kriging mean

    fhat(x) = m + k(x)' (K + Delta)^{-1} (z - m)

with pointwise mean squared error

    sigma^2(x) = k(x, x) - k(x)' (K + Delta)^{-1} k(x)

and the learning-curve functional is its integral against the design
measure, evaluated by quadrature.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular

from .kernels import KernelSpec, cross_matrix, gram_matrix, kernel_diag, _as_points

_JITTER_SCALES = (1e-10, 1e-8)
_FLOAT_FMT = "%.17g"


class SingularCovarianceError(RuntimeError):
    """Raised when K + Delta cannot be factorized even after jitter."""

    def __init__(self, minor: int):
        self.minor = minor
        super().__init__(
            f"covariance matrix is numerically singular "
            f"(leading minor of order {minor} not positive definite after jitter)"
        )


@dataclass(frozen=True)
class UniformBox:
    """Uniform probability measure on an axis-aligned box."""

    bounds: tuple[tuple[float, float], ...] = ((0.0, 1.0),)

    def __post_init__(self):
        b = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if not b or any(hi <= lo for lo, hi in b):
            raise ValueError("box bounds must satisfy lo < hi in every dimension")
        object.__setattr__(self, "bounds", b)

    @property
    def dim(self) -> int:
        return len(self.bounds)

    def contains(self, points, tol: float = 1e-9) -> bool:
        pts = _as_points(points, self.dim)
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        return bool(np.all(pts >= lo - tol) and np.all(pts <= hi + tol))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        return rng.uniform(lo, hi, size=(n, self.dim))


@dataclass(frozen=True)
class Quadrature:
    """Nodes and nonnegative weights summing to one (a probability measure)."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.nodes, dtype=float)
        # a flat vector is a list of 1-D nodes, not one high-dimensional node
        nodes = raw[:, None] if raw.ndim == 1 else np.atleast_2d(raw)
        w = np.asarray(self.weights, dtype=float).ravel()
        if len(nodes) == 0:
            raise ValueError("quadrature must have at least one node")
        if len(w) != len(nodes):
            raise ValueError("weights length must match node count")
        if np.any(w < 0):
            raise ValueError("quadrature weights must be nonnegative")
        total = w.sum()
        if not np.isclose(total, 1.0, rtol=1e-8, atol=1e-12):
            raise ValueError(f"quadrature weights sum to {total}, expected 1")
        w = w / total
        nodes.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    def __len__(self) -> int:
        return len(self.weights)

    @classmethod
    def trapezoid(cls, m: int, lo: float = 0.0, hi: float = 1.0) -> "Quadrature":
        """Trapezoidal rule on [lo, hi], normalized to a probability measure."""
        if m < 2:
            raise ValueError("trapezoid rule needs at least 2 nodes")
        x = np.linspace(lo, hi, m)
        w = np.full(m, 1.0 / (m - 1))
        w[0] *= 0.5
        w[-1] *= 0.5
        return cls(x[:, None], w)

    @classmethod
    def tensor_trapezoid(cls, m_per_dim, bounds) -> "Quadrature":
        """Tensor-product trapezoidal grid over an axis-aligned box.

        A scalar ``m_per_dim`` is broadcast across all axes of ``bounds``.
        """
        m_per_dim = [int(m) for m in np.atleast_1d(m_per_dim)]
        if len(m_per_dim) == 1:
            m_per_dim = m_per_dim * len(bounds)
        axes, wts = [], []
        for m, (lo, hi) in zip(m_per_dim, bounds, strict=True):
            q = cls.trapezoid(m, lo, hi)
            axes.append(q.nodes.ravel())
            wts.append(q.weights)
        grids = np.meshgrid(*axes, indexing="ij")
        nodes = np.column_stack([g.ravel() for g in grids])
        w = wts[0]
        for wi in wts[1:]:
            w = np.outer(w, wi).ravel()
        return cls(nodes, w)


@dataclass(frozen=True)
class Design:
    """Input locations together with the measure they were drawn from."""

    points: np.ndarray
    measure: object = field(default_factory=UniformBox)

    def __post_init__(self):
        dim = getattr(self.measure, "dim", None)
        pts = _as_points(self.points, dim if dim is not None else np.atleast_2d(self.points).shape[-1])
        if len(pts) < 1:
            raise ValueError("design needs at least one point")
        if isinstance(self.measure, UniformBox) and not self.measure.contains(pts):
            raise ValueError("design points fall outside the measure's support")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class ObservationSet:
    """Averaged observations: mean value, variance of the mean, replicate count."""

    means: np.ndarray
    noise_var: np.ndarray
    s: np.ndarray
    replicates: tuple | None = None

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float).ravel()
        nv = np.asarray(self.noise_var, dtype=float).ravel()
        s = np.asarray(self.s).ravel().astype(int)
        if not (len(means) == len(nv) == len(s)):
            raise ValueError("means, noise_var and s must have equal length")
        if np.any(s < 1):
            raise ValueError("replication counts must be >= 1")
        if np.any(nv < 0):
            raise ValueError("noise variances must be >= 0")
        if not np.all(np.isfinite(means)):
            raise ValueError("observation means must be finite")
        for arr in (means, nv, s):
            arr.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "noise_var", nv)
        object.__setattr__(self, "s", s)
        if self.replicates is not None:
            reps = tuple(np.asarray(r, dtype=float).ravel() for r in self.replicates)
            if len(reps) != len(means) or any(len(r) != si for r, si in zip(reps, s)):
                raise ValueError("replicate lists inconsistent with s")
            object.__setattr__(self, "replicates", reps)

    def __len__(self) -> int:
        return len(self.means)

    @classmethod
    def from_replicates(cls, replicates, noise_var=None) -> "ObservationSet":
        """Build from raw replicate lists.

        With ``noise_var`` omitted the variance of each mean is the
        per-point sample variance over s_i - 1 divided by s_i, which
        requires s_i >= 2 everywhere.
        """
        reps = [np.asarray(r, dtype=float).ravel() for r in replicates]
        if not reps or any(len(r) < 1 for r in reps):
            raise ValueError("every point needs at least one replicate")
        s = np.array([len(r) for r in reps])
        means = np.array([r.mean() for r in reps])
        if noise_var is None:
            if np.any(s < 2):
                raise ValueError(
                    "estimating noise from replicates requires s_i >= 2; "
                    "pass noise_var explicitly otherwise"
                )
            noise_var = np.array([r.var(ddof=1) / len(r) for r in reps])
        return cls(means, noise_var, s, replicates=tuple(reps))


@dataclass(frozen=True)
class Predictor:
    """Fitted BLUP state; immutable after construction."""

    kernel: KernelSpec
    design: Design
    mean: float
    noise: np.ndarray
    chol: np.ndarray
    weights: np.ndarray
    jitter: float = 0.0

    def __post_init__(self):
        for name in ("noise", "chol", "weights"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def _factor_with_jitter(A: np.ndarray, force_jitter: bool) -> tuple[np.ndarray, float]:
    n = len(A)
    base = np.trace(A) / n
    scales = _JITTER_SCALES if force_jitter else (0.0,) + tuple(_JITTER_SCALES[1:])
    last_minor = n
    for scale in scales:
        try:
            c, _ = cho_factor(A + scale * base * np.eye(n), lower=True)
            return np.tril(c), scale * base
        except LinAlgError as e:
            m = re.search(r"(\d+)-th leading minor", str(e))
            if m:
                last_minor = int(m.group(1))
    raise SingularCovarianceError(last_minor)


def fit_blup(kernel: KernelSpec, design: Design, obs: ObservationSet, mean: float = 0.0) -> Predictor:
    """Factorize K + Delta and precompute the prediction weights.

    A diagonal jitter of 1e-10 * trace(K)/n is added whenever some noise
    entry is exactly zero; on factorization failure one retry at 1e-8
    scale is made before raising SingularCovarianceError.
    """
    if len(obs) != design.n:
        raise ValueError("observation count does not match design size")
    K = gram_matrix(kernel, design.points)
    A = K + np.diag(obs.noise_var)
    L, jitter = _factor_with_jitter(A, force_jitter=float(np.min(obs.noise_var)) == 0.0)
    resid = obs.means - mean
    w = cho_solve((L, True), resid)
    return Predictor(
        kernel=kernel,
        design=design,
        mean=float(mean),
        noise=obs.noise_var,
        chol=L,
        weights=w,
        jitter=jitter,
    )


def _cross(p: Predictor, x) -> tuple[np.ndarray, bool]:
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 0 or (pts.ndim == 1 and (p.design.dim > 1 or pts.size == 1))
    X = _as_points(x, p.design.dim)
    return cross_matrix(p.kernel, X, p.design.points), single


def predict_mean(p: Predictor, x):
    """Kriging mean at one point (scalar) or at a stack of points (vector)."""
    Kx, single = _cross(p, x)
    out = p.mean + Kx @ p.weights
    return float(out[0]) if single else out


def predict_mse(p: Predictor, x):
    """Pointwise mean squared error of the kriging mean; clamped at zero."""
    Kx, single = _cross(p, x)
    V = solve_triangular(p.chol, Kx.T, lower=True)
    X = _as_points(x, p.design.dim)
    out = kernel_diag(p.kernel, X) - np.einsum("ij,ij->j", V, V)
    out = np.maximum(out, 0.0)
    return float(out[0]) if single else out


def integrated_mse(p: Predictor, quadrature: Quadrature) -> float:
    """Quadrature approximation of the integral of predict_mse over mu."""
    if quadrature.dim != p.design.dim:
        raise ValueError("quadrature dimension does not match predictor")
    mse = predict_mse(p, quadrature.nodes)
    mse = np.atleast_1d(mse)
    return float(quadrature.weights @ mse)


def empirical_mse(p: Predictor, test_points, test_values) -> float:
    """Mean squared prediction error on held-out (point, value) pairs."""
    vals = np.asarray(test_values, dtype=float).ravel()
    X = _as_points(test_points, p.design.dim)
    if len(X) != len(vals) or len(vals) == 0:
        raise ValueError("test points and values must have equal nonzero length")
    pred = np.atleast_1d(predict_mean(p, X))
    return float(np.mean((pred - vals) ** 2))


def max_squared_error(p: Predictor, test_points, test_values) -> float:
    """Largest squared prediction error over a test set."""
    vals = np.asarray(test_values, dtype=float).ravel()
    X = _as_points(test_points, p.design.dim)
    pred = np.atleast_1d(predict_mean(p, X))
    return float(np.max((pred - vals) ** 2))


def save_observations_csv(path, points, obs: ObservationSet) -> None:
    """Write design points and averaged observations (columns x_1.., z, s, sigma_eps2)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] != len(obs):
        raise ValueError("points and observations must have equal length")
    d = pts.shape[1]
    header = [f"x_{j + 1}" for j in range(d)] + ["z", "s", "sigma_eps2"]
    sigma_eps2 = obs.noise_var * obs.s
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(len(obs)):
            row = [_FLOAT_FMT % v for v in pts[i]]
            row += [_FLOAT_FMT % obs.means[i], str(int(obs.s[i])), _FLOAT_FMT % sigma_eps2[i]]
            writer.writerow(row)


def load_observations_csv(path) -> tuple[np.ndarray, ObservationSet]:
    """Read a design/observation CSV in either accepted layout.

    Layout A: x_1..x_d, z, s, sigma_eps2 (averaged form; noise_var is
    sigma_eps2 / s).  Layout B: x_1..x_d, z_1..z_s (raw replicates, equal
    count per row).  The header row is mandatory.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, header row is mandatory")
        rows = [r for r in reader if r]
    header = [h.strip() for h in header]
    xcols = [i for i, h in enumerate(header) if re.fullmatch(r"x_\d+", h)]
    if xcols != list(range(len(xcols))) or not xcols:
        raise ValueError(f"{path}: header must start with x_1..x_d, got {header}")
    d = len(xcols)
    rest = header[d:]
    data = np.array([[float(v) for v in r] for r in rows])
    if data.size == 0:
        raise ValueError(f"{path}: no data rows")
    pts = data[:, :d]
    if rest == ["z", "s", "sigma_eps2"]:
        z, s, se2 = data[:, d], data[:, d + 1], data[:, d + 2]
        obs = ObservationSet(z, se2 / s, s)
        return pts, obs
    if rest and all(re.fullmatch(r"z_\d+", h) for h in rest):
        reps = [data[i, d:] for i in range(len(data))]
        return pts, ObservationSet.from_replicates(reps)
    raise ValueError(
        f"{path}: expected columns z,s,sigma_eps2 or z_1..z_s after x columns, got {rest}"
    )
