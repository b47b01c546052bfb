"""Budget planning: noise estimation, hyperparameter fitting, IMSE
extrapolation, and solving for the budget that meets a target accuracy.

The workflow mirrors a replication-based simulation campaign: estimate
the observation-noise variance from replicates, fit kernel
hyperparameters by maximizing the concentrated Gaussian log-likelihood

    -1/2 (z - m)' (sigma^2 K + sigma_eps_bar^2 I)^{-1} (z - m)
    -1/2 log det(sigma^2 K + sigma_eps_bar^2 I)

with the mean m fixed at the sample mean, then extrapolate the current
IMSE along the closed-form decay law

    IMSE_T = IMSE_T0 * g(T / sigma_eps_bar^2) / g(T0 / sigma_eps_bar^2),
    g(u) = log(u)^q / u^a,

and invert it for the smallest budget T reaching the target.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import minimize

from .gp_core import Design, ObservationSet
from .kernels import KernelSpec, gram_matrix
from .learning_curve import RateLaw

DEFAULT_N_RANDOM = 10000
DEFAULT_N_POLISH = 150
_FD_REL_STEP = 1e-6


@dataclass(frozen=True)
class HyperparameterFit:
    """Best concentrated-likelihood parameters and search diagnostics."""

    nu: float
    theta: tuple[float, ...]
    sigma2: float
    mean: float
    loglik: float
    n_local_maxima: int
    polish_improved: bool


@dataclass(frozen=True)
class BudgetForecast:
    """Predicted IMSE decay and the budget solving IMSE_T = target."""

    imse_T0: float
    T0: int
    sigma_eps2_bar: float
    rate: RateLaw
    target: float
    solved_T: int
    curve: tuple[tuple[int, float], ...]
    s_per_point: int | None = None


def estimate_noise(obs: ObservationSet) -> tuple[np.ndarray, float]:
    """Per-point noise variances and their arithmetic mean.

    With raw replicates attached, uses the unbiased sample variance over
    s_i - 1 (requires s_i >= 2 everywhere).  Without replicates the
    stored variance-of-the-mean entries are taken as externally supplied
    and scaled back up by s_i.
    """
    if obs.replicates is not None:
        if np.any(obs.s < 2):
            raise ValueError(
                "noise estimation from replicates needs s_i >= 2 at every point"
            )
        per_point = np.array([r.var(ddof=1) for r in obs.replicates])
    else:
        per_point = obs.noise_var * obs.s
    return per_point, float(per_point.mean())


def _kernel_from_params(params, d: int) -> KernelSpec:
    nu = float(params[0])
    theta = tuple(float(t) for t in params[1 : 1 + d])
    if d == 1:
        return KernelSpec(family="matern1d", nu=nu, lengthscales=theta)
    return KernelSpec(family="matern_tensor", nu=nu, lengthscales=theta)


def concentrated_log_likelihood(params, design: Design, values, m: float, noise: float) -> float:
    """Gaussian log-likelihood of the averaged data at fixed mean m.

    ``params`` is (nu, theta_1..theta_d, sigma2); the covariance is
    sigma2 * K_corr + noise * I with K_corr the unit-variance Matern
    correlation matrix.  Evaluated through a Cholesky factorization.
    """
    params = np.asarray(params, dtype=float).ravel()
    d = design.dim
    if len(params) != d + 2:
        raise ValueError(f"expected (nu, {d} lengthscales, sigma2), got {len(params)} values")
    sigma2 = float(params[-1])
    if sigma2 < 0 or noise < 0 or sigma2 + noise <= 0:
        raise ValueError("variances must be nonnegative and not both zero")
    z = np.asarray(values, dtype=float).ravel()
    if len(z) != design.n:
        raise ValueError("values length must match the design")
    r = z - m
    n = design.n
    if sigma2 == 0.0:
        return float(-0.5 * np.dot(r, r) / noise - 0.5 * n * math.log(noise))
    spec = _kernel_from_params(params, d)
    C = sigma2 * gram_matrix(spec, design.points) + noise * np.eye(n)
    c, low = cho_factor(C, lower=True)
    alpha = cho_solve((c, low), r)
    logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
    return float(-0.5 * np.dot(r, alpha) - 0.5 * logdet)


def default_bounds(d: int) -> list[tuple[float, float]]:
    """Search box for (nu, theta_1..theta_d, sigma2)."""
    return [(0.5, 3.0)] + [(0.01, 2.0)] * d + [(0.01, 1.0)]


def fit_hyperparameters(
    design: Design,
    values,
    *,
    noise: float,
    seed: int,
    bounds=None,
    n_random: int = DEFAULT_N_RANDOM,
    n_polish: int = DEFAULT_N_POLISH,
    mean: float | None = None,
) -> HyperparameterFit:
    """Multi-start maximization of the concentrated log-likelihood.

    ``n_random`` uniform draws in the bounds box are scored, the best
    ``n_polish`` are refined by bounded L-BFGS-B with central-difference
    gradients, and the overall best point wins (ties broken by draw
    order).  Distinct polished optima are counted as a multimodality
    diagnostic.
    """
    z = np.asarray(values, dtype=float).ravel()
    d = design.dim
    if bounds is None:
        bounds = default_bounds(d)
    bounds = [(float(lo), float(hi)) for lo, hi in bounds]
    if len(bounds) != d + 2 or any(hi <= lo for lo, hi in bounds):
        raise ValueError(f"bounds must be {d + 2} (lo, hi) pairs with lo < hi")
    if n_random < 1 or n_polish < 1:
        raise ValueError("n_random and n_polish must be >= 1")
    m = float(np.mean(z)) if mean is None else float(mean)

    def objective(params) -> float:
        try:
            return -concentrated_log_likelihood(params, design, z, m, noise)
        except (LinAlgError, ValueError, FloatingPointError):
            return np.inf

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    starts = rng.uniform(lo, hi, size=(n_random, len(bounds)))
    scores = np.array([objective(p) for p in starts])
    top = np.argsort(scores, kind="stable")[: min(n_polish, n_random)]

    best_raw_idx = int(top[0])
    best_val = scores[best_raw_idx]
    best_x = starts[best_raw_idx]
    polished_pts: list[np.ndarray] = []
    improved = False
    for idx in top:
        if not np.isfinite(scores[idx]):
            continue
        res = minimize(
            objective,
            starts[idx],
            method="L-BFGS-B",
            bounds=bounds,
            jac="3-point",
            options={"finite_diff_rel_step": _FD_REL_STEP},
        )
        if np.isfinite(res.fun):
            polished_pts.append(np.clip(res.x, lo, hi))
            if res.fun < best_val:
                best_val = res.fun
                best_x = polished_pts[-1]
                improved = True
    if not improved:
        warnings.warn(
            "no polish improved on the best raw start; returning the raw optimum",
            RuntimeWarning,
            stacklevel=2,
        )
    if polished_pts:
        rounded = {tuple(np.round(p, 2)) for p in polished_pts}
        n_clusters = len(rounded)
    else:
        n_clusters = 0
    return HyperparameterFit(
        nu=float(best_x[0]),
        theta=tuple(float(t) for t in best_x[1 : 1 + d]),
        sigma2=float(best_x[-1]),
        mean=m,
        loglik=float(-best_val),
        n_local_maxima=n_clusters,
        polish_improved=improved,
    )


def _decay_g(u: float, rate: RateLaw) -> float:
    return math.log(u) ** rate.log_power / u**rate.exponent


def imse_decay(imse_T0: float, T0: int, sigma_eps2_bar: float, rate: RateLaw, T: int) -> float:
    """Predicted IMSE at budget T, anchored at (T0, imse_T0).

    Valid on the region where g(T/sigma_eps2_bar) is decreasing, i.e.
    T0/sigma_eps2_bar > exp(log_power/exponent).
    """
    if imse_T0 <= 0 or sigma_eps2_bar <= 0 or T0 < 1:
        raise ValueError("need imse_T0 > 0, sigma_eps2_bar > 0, T0 >= 1")
    if T < T0:
        raise ValueError("extrapolation runs forward: T >= T0 required")
    u0 = T0 / sigma_eps2_bar
    threshold = math.exp(rate.log_power / rate.exponent)
    if u0 <= threshold:
        raise ValueError(
            f"T0/sigma_eps2_bar = {u0:.3g} is below e^(q/a) = {threshold:.3g} where the "
            "decay law is not yet monotone; increase T0"
        )
    return imse_T0 * _decay_g(T / sigma_eps2_bar, rate) / _decay_g(u0, rate)


def required_budget(
    imse_T0: float,
    T0: int,
    sigma_eps2_bar: float,
    rate: RateLaw,
    target: float,
    n: int | None = None,
    curve_points: int = 50,
) -> BudgetForecast:
    """Smallest integer budget T with predicted IMSE at or below target.

    Solved by doubling plus integer bisection on the monotone decay; the
    forecast carries a log-spaced (T, IMSE) curve and, when the design
    size n is given, the uniform per-point count ceil(T/n).
    """
    if target <= 0:
        raise ValueError("target_imse must be positive")
    if target >= imse_T0:
        raise ValueError(
            f"target_imse = {target} is not below the current IMSE {imse_T0}; nothing to plan"
        )
    decay = lambda T: imse_decay(imse_T0, T0, sigma_eps2_bar, rate, T)
    hi = max(T0 + 1, 2 * T0)
    while decay(hi) > target:
        hi *= 2
        if hi > 10**15:
            raise RuntimeError("budget search exceeded 1e15 without reaching the target")
    lo = T0
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if decay(mid) <= target:
            hi = mid
        else:
            lo = mid
    solved = hi
    ts = np.unique(
        np.round(np.geomspace(T0, max(solved, T0 + 1), curve_points)).astype(int)
    )
    curve = tuple((int(t), decay(int(t))) for t in ts)
    return BudgetForecast(
        imse_T0=imse_T0,
        T0=int(T0),
        sigma_eps2_bar=sigma_eps2_bar,
        rate=rate,
        target=target,
        solved_T=int(solved),
        curve=curve,
        s_per_point=None if n is None else int(math.ceil(solved / n)),
    )
