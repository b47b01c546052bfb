"""Synthetic stochastic simulator and the experiment drivers built on it.

The simulator produces replicated noisy evaluations of a fixed smooth
2-D response (optionally roughened by a seeded Karhunen-Loeve draw) with
a strictly positive, spatially varying noise field.  The drivers
regenerate the learning-curve figures and run the budget-planning case
study end to end: noise estimation, hyperparameter fitting, budget
forecasting, replication allocation, and a uniform-vs-optimal
comparison on held-out data.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.stats import qmc, spearmanr

from .allocation import plan_allocation, heteroscedastic_imse, round_allocation, save_plan_csv
from .gp_core import (
    Design,
    ObservationSet,
    Quadrature,
    UniformBox,
    empirical_mse,
    fit_blup,
    max_squared_error,
    save_observations_csv,
    _FLOAT_FMT,
)
from .kernels import KernelSpec, _as_points
from .learning_curve import (
    asymptotic_imse,
    empirical_learning_curve,
    fit_loglog_slope,
    rate_law,
)
from .planner import estimate_noise, fit_hyperparameters, required_budget
from .spectrum import eigenfunction_matrix, nystrom_spectrum

_TRUTH_IDS = ("smooth2d", "smooth2d_kl", "sine1d")
_NOISE_IDS = ("constant", "smooth")
_VARIANCE_FLOOR = 1e-30

# Karhunen-Loeve roughening of the 2-D truth: fixed kernel, grid and
# term count so the surface depends only on the simulator seed
_KL_KERNEL = KernelSpec(family="matern_tensor", nu=1.5, lengthscales=(0.4, 0.4), variance=0.04)
_KL_GRID = 40
_KL_TERMS = 40


@dataclass(frozen=True)
class SyntheticSimulator:
    """Deterministic ground truth plus a positive noise-variance field."""

    truth: str = "smooth2d_kl"
    noise_field: str = "smooth"
    noise_level: float = 3.3e-3
    noise_contrast: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.truth not in _TRUTH_IDS:
            raise ValueError(f"unknown truth id {self.truth!r}")
        if self.noise_field not in _NOISE_IDS:
            raise ValueError(f"unknown noise field id {self.noise_field!r}")
        if self.noise_level < 0:
            raise ValueError("noise_level must be >= 0")
        if self.noise_contrast < 1:
            raise ValueError("noise_contrast must be >= 1")

    @property
    def dim(self) -> int:
        return 1 if self.truth == "sine1d" else 2

    @cached_property
    def _kl(self):
        quad = Quadrature.tensor_trapezoid([_KL_GRID, _KL_GRID], ((0.0, 1.0), (0.0, 1.0)))
        spec = nystrom_spectrum(_KL_KERNEL, quad, _KL_TERMS)
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 20251]))
        xi = rng.standard_normal(_KL_TERMS)
        n_pos = int(np.sum(spec.eigenvalues > 0))
        coef = np.sqrt(spec.eigenvalues[:n_pos]) * xi[:n_pos]
        return spec, coef

    def truth_values(self, x) -> np.ndarray:
        X = _as_points(x, self.dim)
        if self.truth == "sine1d":
            t = X[:, 0]
            return 0.65 + 0.4 * np.sin(2 * math.pi * t)
        x1, x2 = X[:, 0], X[:, 1]
        base = 0.65 + 0.3 * np.sin(2 * math.pi * x1) * np.cos(math.pi * x2) + 0.2 * (x2 - 0.5)
        if self.truth == "smooth2d":
            return base
        spec, coef = self._kl
        phi = eigenfunction_matrix(spec, _KL_KERNEL, X, p_max=len(coef))
        return base + phi @ coef

    def noise_variance(self, x) -> np.ndarray:
        X = _as_points(x, self.dim)
        if self.noise_field == "constant":
            raw = np.ones(len(X))
        else:
            b = 0.5 * math.log(self.noise_contrast)
            if self.dim == 1:
                u = np.sin(2 * math.pi * X[:, 0])
            else:
                u = np.sin(2 * math.pi * X[:, 0]) * np.cos(math.pi * X[:, 1])
            raw = np.exp(b * u)
        mean = self._noise_mean
        return np.maximum(self.noise_level * raw / mean, _VARIANCE_FLOOR)

    @cached_property
    def _noise_mean(self) -> float:
        if self.noise_field == "constant":
            return 1.0
        b = 0.5 * math.log(self.noise_contrast)
        if self.dim == 1:
            g = np.linspace(0, 1, 2001)
            u = np.sin(2 * math.pi * g)
            w = np.full(g.size, 1.0 / (g.size - 1))
            w[0] *= 0.5
            w[-1] *= 0.5
        else:
            quad = Quadrature.tensor_trapezoid([81, 81], ((0.0, 1.0), (0.0, 1.0)))
            u = np.sin(2 * math.pi * quad.nodes[:, 0]) * np.cos(math.pi * quad.nodes[:, 1])
            w = quad.weights
        return float(w @ np.exp(b * u))


def sample_observations(sim: SyntheticSimulator, design: Design, s, seed) -> ObservationSet:
    """Replicated Gaussian observations of the truth at the design points.

    Each point gets its own spawned random stream, so changing one
    point's replicate count leaves the draws at other points untouched.
    """
    n = design.n
    s_arr = np.asarray(s, dtype=int)
    s = np.full(n, int(s_arr)) if s_arr.ndim == 0 else s_arr.ravel().copy()
    if len(s) != n or np.any(s < 1):
        raise ValueError("replicate counts must match the design and be >= 1")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    streams = ss.spawn(n)
    truth = sim.truth_values(design.points)
    var = sim.noise_variance(design.points)
    reps = []
    noise_var = np.empty(n)
    for i in range(n):
        rng = np.random.default_rng(streams[i])
        z = truth[i] + math.sqrt(var[i]) * rng.standard_normal(s[i])
        reps.append(z)
        noise_var[i] = z.var(ddof=1) / s[i] if s[i] >= 2 else var[i] / s[i]
    means = np.array([r.mean() for r in reps])
    return ObservationSet(means, noise_var, s, replicates=tuple(reps))


def latin_hypercube_design(n: int, dim: int, seed, box: UniformBox | None = None) -> Design:
    """Stratified Latin hypercube design scaled to the box."""
    if box is None:
        box = UniformBox(tuple((0.0, 1.0) for _ in range(dim)))
    rng = np.random.default_rng(
        seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    )
    sampler = qmc.LatinHypercube(d=dim, seed=rng)
    unit = sampler.random(n)
    lo = [b[0] for b in box.bounds]
    hi = [b[1] for b in box.bounds]
    return Design(qmc.scale(unit, lo, hi), box)


def _merge_config(defaults: dict, overrides: dict | None, context: str) -> dict:
    if overrides is None:
        return dict(defaults)
    unknown = set(overrides) - set(defaults)
    if unknown:
        raise ValueError(f"unknown {context} config keys: {sorted(unknown)}")
    out = dict(defaults)
    for key, val in overrides.items():
        if isinstance(defaults[key], dict):
            out[key] = _merge_config(defaults[key], val, f"{context}.{key}")
        else:
            out[key] = val
    return out


def _write_curve_csv(path, inv_tau, mean, stderr, theory) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["inv_tau", "imse_mean", "imse_stderr", "theory_value"])
        for row in zip(inv_tau, mean, stderr, theory):
            writer.writerow([_FLOAT_FMT % v for v in row])


def _inv_tau_grid(lo: float, hi: float, count: int) -> np.ndarray:
    return np.geomspace(lo, hi, count)


FIGURE1_DEFAULTS = {
    "n": 200,
    "n_designs": 10,
    "inv_tau_min": 5.0,
    "inv_tau_max": 100.0,
    "inv_tau_count": 12,
    "hurst": [0.5, 0.9],
    "quad_m": 4000,
    "spectrum_m": 2000,
    "spectrum_p": 200,
}


def run_figure1(out_dir, seed: int, config: dict | None = None) -> dict:
    """Learning curves for the doubled fractional Brownian kernels.

    One CSV per Hurst value with the Monte-Carlo curve and the spectral
    limit overlay; the report holds fitted log-log slopes against 1/tau.
    """
    cfg = _merge_config(FIGURE1_DEFAULTS, config, "figure1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    inv_tau = _inv_tau_grid(cfg["inv_tau_min"], cfg["inv_tau_max"], cfg["inv_tau_count"])
    taus = 1.0 / inv_tau
    streams = np.random.SeedSequence(seed).spawn(len(cfg["hurst"]))
    report = {"files": [], "curves": {}}
    for h, ss in zip(cfg["hurst"], streams):
        spec = KernelSpec(family="fbm", hurst=float(h))
        quad = Quadrature.trapezoid(cfg["quad_m"], 0.0, 1.0)
        mean, stderr = empirical_learning_curve(
            spec, cfg["n"], taus, cfg["n_designs"],
            seed=ss.generate_state(1)[0], quadrature=quad,
        )
        sp = nystrom_spectrum(spec, Quadrature.trapezoid(cfg["spectrum_m"], 0.0, 1.0), cfg["spectrum_p"])
        theory = np.array([asymptotic_imse(sp, t) for t in taus])
        name = f"figure1_h{h}.csv"
        _write_curve_csv(out / name, inv_tau, mean, stderr, theory)
        slope, _, r2 = fit_loglog_slope(inv_tau, mean)
        t_slope, _, _ = fit_loglog_slope(inv_tau, theory)
        law = rate_law("fbm", hurst=float(h))
        report["files"].append(name)
        report["curves"][str(h)] = {
            "empirical_slope": slope,
            "theory_slope": t_slope,
            "ideal_slope": -law.exponent,
            "r2": r2,
        }
    return report


FIGURE2_DEFAULTS = {
    "n": 200,
    "n_designs": 10,
    "matern": {
        "nu": 2.5,
        "theta": 0.2,
        "inv_tau_min": 10.0,
        "inv_tau_max": 100.0,
        "inv_tau_count": 8,
        "quad_m": 63,
    },
    "gaussian": {
        "theta": 0.2,
        "inv_tau_min": 5.0,
        "inv_tau_max": 100.0,
        "inv_tau_count": 10,
        "quad_m": 4000,
    },
}


def _fit_log_constant(values: np.ndarray, shape: np.ndarray) -> float:
    """Least-squares multiplier C for values ~ C * shape, fitted in log space."""
    return float(np.exp(np.mean(np.log(values) - np.log(shape))))


def run_figure2(out_dir, seed: int, config: dict | None = None) -> dict:
    """Learning curves for the 2-D tensorised Matern and 1-D Gaussian kernels."""
    cfg = _merge_config(FIGURE2_DEFAULTS, config, "figure2")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ss_mat, ss_gau = np.random.SeedSequence(seed).spawn(2)
    report = {"files": []}

    mc = cfg["matern"]
    inv_tau = _inv_tau_grid(mc["inv_tau_min"], mc["inv_tau_max"], mc["inv_tau_count"])
    taus = 1.0 / inv_tau
    spec = KernelSpec(family="matern_tensor", nu=mc["nu"], lengthscales=(mc["theta"], mc["theta"]))
    quad = Quadrature.tensor_trapezoid([mc["quad_m"]] * 2, ((0.0, 1.0), (0.0, 1.0)))
    mean, stderr = empirical_learning_curve(
        spec, cfg["n"], taus, cfg["n_designs"],
        seed=ss_mat.generate_state(1)[0], quadrature=quad,
    )
    law = rate_law("matern_tensor", nu=mc["nu"], d=2)
    shape = law.shape(taus)
    theory = _fit_log_constant(mean, shape) * shape
    _write_curve_csv(out / "figure2_matern2d.csv", inv_tau, mean, stderr, theory)
    emp_slope, _, _ = fit_loglog_slope(inv_tau, mean)
    th_slope, _, _ = fit_loglog_slope(inv_tau, theory)
    report["files"].append("figure2_matern2d.csv")
    report["matern2d"] = {
        "empirical_slope": emp_slope,
        "theory_slope_same_grid": th_slope,
        "slope_gap": abs(emp_slope - th_slope),
    }

    gc = cfg["gaussian"]
    inv_tau_g = _inv_tau_grid(gc["inv_tau_min"], gc["inv_tau_max"], gc["inv_tau_count"])
    taus_g = 1.0 / inv_tau_g
    spec_g = KernelSpec(family="gaussian", lengthscales=(gc["theta"],))
    quad_g = Quadrature.trapezoid(gc["quad_m"], 0.0, 1.0)
    mean_g, stderr_g = empirical_learning_curve(
        spec_g, cfg["n"], taus_g, cfg["n_designs"],
        seed=ss_gau.generate_state(1)[0], quadrature=quad_g,
    )
    law_g = rate_law("gaussian", d=1)
    shape_g = law_g.shape(taus_g)
    # smallest constant whose tau*log(1/tau) curve stays above the data;
    # tightness says how far the curve sags below that envelope at worst
    c_g = float(np.max(mean_g / shape_g))
    theory_g = c_g * shape_g
    _write_curve_csv(out / "figure2_gaussian1d.csv", inv_tau_g, mean_g, stderr_g, theory_g)
    report["files"].append("figure2_gaussian1d.csv")
    report["gaussian1d"] = {
        "envelope_constant": c_g,
        "envelope_tightness": float(np.min(mean_g / theory_g)),
    }
    return report


CASE_STUDY_DEFAULTS = {
    "n": 100,
    "s0": 10,
    "noise_level": 3.3e-3,
    "noise_contrast": 16.0,
    "kl_truth": True,
    "test_grid": 30,
    "test_s": 200,
    "target_ratio": 0.35,
    "n_random": 600,
    "n_polish": 12,
    "eta_m": 41,
    "s_scan_max": 200,
}


def run_case_study(out_dir, seed: int, config: dict | None = None) -> dict:
    """End-to-end budget-planning study on the synthetic simulator.

    Pilot replicates feed noise estimation and hyperparameter fitting;
    the fitted model's IMSE is extrapolated to solve for the budget
    reaching a target accuracy, which is compared with the budget
    actually needed on fresh data; finally a uniform and an optimal
    replication allocation of the predicted budget are compared on a
    held-out test grid.
    """
    cfg = _merge_config(CASE_STUDY_DEFAULTS, config, "casestudy")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    master = np.random.SeedSequence(seed)
    (ss_design, ss_obs0, ss_fit, ss_scan, ss_alloc, ss_test) = master.spawn(6)

    sim = SyntheticSimulator(
        truth="smooth2d_kl" if cfg["kl_truth"] else "smooth2d",
        noise_field="smooth",
        noise_level=cfg["noise_level"],
        noise_contrast=cfg["noise_contrast"],
        seed=seed,
    )
    n, s0 = cfg["n"], cfg["s0"]
    design = latin_hypercube_design(n, 2, ss_design)
    obs0 = sample_observations(sim, design, s0, ss_obs0)
    noise_pp, noise_bar = estimate_noise(obs0)

    fit = fit_hyperparameters(
        design, obs0.means,
        noise=noise_bar / s0,
        seed=int(ss_fit.generate_state(1)[0]),
        n_random=cfg["n_random"],
        n_polish=cfg["n_polish"],
    )
    kernel = KernelSpec(
        family="matern_tensor", nu=fit.nu, lengthscales=fit.theta, variance=fit.sigma2
    )
    eta = Quadrature.tensor_trapezoid([cfg["eta_m"]] * 2, ((0.0, 1.0), (0.0, 1.0)))
    imse_t0 = heteroscedastic_imse(kernel, design, noise_pp, np.full(n, s0), eta)

    # held-out test grid; its reference values are replicate means, so a
    # noise floor of sigma_eps2_bar / test_s remains in every EMSE figure
    g = np.linspace(0.0, 1.0, cfg["test_grid"])
    gx, gy = np.meshgrid(g, g, indexing="ij")
    test_design = Design(np.column_stack([gx.ravel(), gy.ravel()]), design.measure)
    test_values = sample_observations(sim, test_design, cfg["test_s"], ss_test).means

    pred0 = fit_blup(kernel, design, obs0, mean=fit.mean)
    emse_t0 = empirical_mse(pred0, test_design.points, test_values)

    nu_for_rate = max(fit.nu, 0.51)
    law = rate_law("matern_tensor", nu=nu_for_rate, d=2)
    target = cfg["target_ratio"] * imse_t0
    forecast = required_budget(imse_t0, n * s0, noise_bar, law, target, n=n)
    t_pred = forecast.solved_T
    s_pred = forecast.s_per_point

    # measured budget: scan uniform replication counts on fresh draws
    # until the test error first drops to the target
    scan_streams = ss_scan.spawn(cfg["s_scan_max"])
    s_meas = None
    scan_rows = []
    for s in range(1, cfg["s_scan_max"] + 1):
        obs_s = sample_observations(sim, design, s, scan_streams[s - 1])
        pred_s = fit_blup(
            kernel, design,
            ObservationSet(obs_s.means, noise_pp / s, np.full(n, s)),
            mean=fit.mean,
        )
        e = empirical_mse(pred_s, test_design.points, test_values)
        scan_rows.append((s, e))
        if e <= target:
            s_meas = s
            break
    t_meas = None if s_meas is None else n * s_meas

    # uniform vs optimal split of the predicted budget
    ss_u, ss_o = ss_alloc.spawn(2)
    s_uniform = round_allocation(np.full(n, t_pred / n), t_pred)
    plan = plan_allocation(kernel, design, noise_pp, t_pred, eta)
    table = {}
    for label, s_vec, ss_run in (("uniform", s_uniform, ss_u), ("optimal", plan.s_int, ss_o)):
        obs_a = sample_observations(sim, design, s_vec, ss_run)
        pred_a = fit_blup(
            kernel, design,
            ObservationSet(obs_a.means, noise_pp / s_vec, s_vec),
            mean=fit.mean,
        )
        table[label] = {
            "mse": empirical_mse(pred_a, test_design.points, test_values),
            "maxse": max_squared_error(pred_a, test_design.points, test_values),
            "imse_model": heteroscedastic_imse(kernel, design, noise_pp, s_vec, eta),
        }
    rho = float(spearmanr(plan.s_int, noise_pp)[0])

    report = {
        "n": n,
        "s0": s0,
        "sigma_eps2_bar": noise_bar,
        "fit": {
            "nu": fit.nu,
            "theta": list(fit.theta),
            "sigma2": fit.sigma2,
            "mean": fit.mean,
            "loglik": fit.loglik,
            "n_local_maxima": fit.n_local_maxima,
        },
        "nu_floored_for_rate": bool(nu_for_rate != fit.nu),
        "imse_T0": imse_t0,
        "emse_T0": emse_t0,
        "emse_over_imse": emse_t0 / imse_t0,
        "target_imse": target,
        "predicted_budget": t_pred,
        "predicted_s": s_pred,
        "measured_s": s_meas,
        "measured_budget": t_meas,
        "budget_ratio": None if t_meas is None else t_pred / t_meas,
        "allocation": {
            "i_star": plan.i_star,
            "quasi_optimal": plan.quasi_optimal,
            "spearman_s_vs_noise": rho,
        },
        "table": table,
        "test_noise_floor": noise_bar / cfg["test_s"],
    }

    save_observations_csv(out / "pilot_observations.csv", design.points, obs0)
    save_plan_csv(out / "allocation.csv", design, noise_pp, plan)
    with open(out / "budget_curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["T", "imse_predicted"])
        for t, v in forecast.curve:
            writer.writerow([t, _FLOAT_FMT % v])
    with open(out / "budget_scan.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["s", "emse"])
        for s, e in scan_rows:
            writer.writerow([s, _FLOAT_FMT % e])
    with open(out / "case_study.json", "w") as fh:
        json.dump(report, fh, indent=2)
    report["files"] = [
        "pilot_observations.csv", "allocation.csv", "budget_curve.csv",
        "budget_scan.csv", "case_study.json",
    ]
    return report
