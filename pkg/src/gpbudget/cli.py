"""Command-line front end.

Every subcommand takes --config (JSON), --seed (mandatory; all
randomness flows from it) and --out (output directory).  Exit codes:
0 success, 1 numerical failure, 2 configuration/usage error.  Each run
writes a ``run_manifest.json`` recording the subcommand, a hash of the
config, the seed, output files, wall-clock time and package version.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .allocation import heteroscedastic_imse, plan_allocation, round_allocation, save_plan_csv
from .gp_core import Design, Quadrature, UniformBox, load_observations_csv, save_observations_csv
from .kernels import KernelSpec
from .learning_curve import asymptotic_imse, empirical_learning_curve, rate_law
from .planner import (
    DEFAULT_N_POLISH,
    DEFAULT_N_RANDOM,
    estimate_noise,
    fit_hyperparameters,
    required_budget,
)
from .sim_harness import (
    SyntheticSimulator,
    _write_curve_csv,
    latin_hypercube_design,
    run_case_study,
    run_figure1,
    run_figure2,
    sample_observations,
)
from .spectrum import nystrom_spectrum, save_spectrum_csv

SUBCOMMANDS = (
    "spectrum", "curve", "fit", "plan", "allocate", "simulate",
    "figure1", "figure2", "casestudy",
)


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (exit code 2)."""


@dataclass(frozen=True)
class RunManifest:
    subcommand: str
    config_hash: str
    seed: int
    outputs: tuple[str, ...]
    wall_clock_s: float
    version: str


def _config_hash(config: dict | None) -> str:
    canon = json.dumps(config or {}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _write_manifest(out: Path, name: str, config, seed: int, outputs, wall: float) -> None:
    manifest = RunManifest(
        subcommand=name,
        config_hash=_config_hash(config),
        seed=seed,
        outputs=tuple(outputs),
        wall_clock_s=wall,
        version=__version__,
    )
    with open(out / "run_manifest.json", "w") as fh:
        json.dump(asdict(manifest), fh, indent=2)


def _check_keys(cfg: dict, required: set, optional: set, context: str) -> None:
    if not isinstance(cfg, dict):
        raise ConfigError(f"{context}: expected a JSON object")
    missing = required - set(cfg)
    if missing:
        raise ConfigError(f"{context}: missing required keys {sorted(missing)}")
    unknown = set(cfg) - required - optional
    if unknown:
        raise ConfigError(f"{context}: unknown keys {sorted(unknown)}")


def _parse_kernel(obj, context: str) -> KernelSpec:
    try:
        return KernelSpec.from_json(obj)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"{context}: {e}")


def _parse_measure(obj, context: str) -> Quadrature:
    _check_keys(obj, {"type"}, {"m", "lo", "hi", "bounds", "nodes", "weights"}, context)
    kind = obj["type"]
    try:
        if kind == "trapezoid":
            return Quadrature.trapezoid(int(obj["m"]), float(obj.get("lo", 0.0)), float(obj.get("hi", 1.0)))
        if kind == "tensor_trapezoid":
            bounds = obj.get("bounds") or [[0.0, 1.0]] * len(obj["m"])
            return Quadrature.tensor_trapezoid(obj["m"], [tuple(b) for b in bounds])
        if kind == "explicit":
            return Quadrature(np.asarray(obj["nodes"], dtype=float), np.asarray(obj["weights"], dtype=float))
    except (KeyError, ValueError, TypeError) as e:
        raise ConfigError(f"{context}: {e}")
    raise ConfigError(f"{context}: unknown measure type {kind!r}")


def _default_eta(dim: int) -> Quadrature:
    if dim == 1:
        return Quadrature.trapezoid(2001, 0.0, 1.0)
    return Quadrature.tensor_trapezoid([41] * dim, [(0.0, 1.0)] * dim)


def _parse_rate(obj, context: str):
    _check_keys(obj, {"family"}, {"nu", "hurst", "d"}, context)
    try:
        return rate_law(
            obj["family"],
            nu=obj.get("nu"),
            hurst=obj.get("hurst"),
            d=int(obj.get("d", 1)),
        )
    except ValueError as e:
        raise ConfigError(f"{context}: {e}")


def _load_config(path: str | None) -> dict | None:
    if path is None:
        return None
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}")


def _cmd_spectrum(cfg: dict | None, seed: int, out: Path) -> list[str]:
    if cfg is None:
        raise ConfigError("spectrum: --config is required")
    _check_keys(cfg, {"kernel", "measure", "p"}, {"nodes_table"}, "spectrum")
    spec = _parse_kernel(cfg["kernel"], "spectrum.kernel")
    quad = _parse_measure(cfg["measure"], "spectrum.measure")
    P = int(cfg["p"])
    if P < 1 or 10 * P > len(quad):
        raise ConfigError(f"spectrum.p: need 1 <= p <= {len(quad) // 10} for {len(quad)} nodes")
    s = nystrom_spectrum(spec, quad, P)
    outputs = ["spectrum.csv"]
    nodes_path = None
    if cfg.get("nodes_table"):
        nodes_path = out / "spectrum_nodes.csv"
        outputs.append("spectrum_nodes.csv")
    save_spectrum_csv(s, out / "spectrum.csv", nodes_path)
    return outputs


def _inv_tau_from_cfg(cfg: dict, context: str) -> np.ndarray:
    if "tau_values" in cfg:
        taus = np.asarray(cfg["tau_values"], dtype=float)
        if np.any(taus <= 0):
            raise ConfigError(f"{context}: tau values must be positive")
        return 1.0 / taus
    grid = cfg.get("inv_tau", {"min": 5.0, "max": 100.0, "count": 12})
    _check_keys(grid, {"min", "max", "count"}, set(), f"{context}.inv_tau")
    return np.geomspace(float(grid["min"]), float(grid["max"]), int(grid["count"]))


def _cmd_curve(cfg: dict | None, seed: int, out: Path) -> list[str]:
    if cfg is None:
        raise ConfigError("curve: --config is required")
    _check_keys(
        cfg, {"kernel", "n"},
        {"n_designs", "inv_tau", "tau_values", "quadrature", "theory"},
        "curve",
    )
    spec = _parse_kernel(cfg["kernel"], "curve.kernel")
    n = int(cfg["n"])
    n_designs = int(cfg.get("n_designs", 10))
    inv_tau = _inv_tau_from_cfg(cfg, "curve")
    taus = 1.0 / inv_tau
    quad = _parse_measure(cfg["quadrature"], "curve.quadrature") if "quadrature" in cfg else None
    mean, stderr = empirical_learning_curve(spec, n, taus, n_designs, seed, quadrature=quad)
    theory_cfg = cfg.get("theory", {})
    if theory_cfg is False:
        theory = np.full_like(mean, math.nan)
    else:
        _check_keys(theory_cfg, set(), {"spectrum_m", "p"}, "curve.theory")
        if spec.dim == 1:
            sq = Quadrature.trapezoid(int(theory_cfg.get("spectrum_m", 2000)), 0.0, 1.0)
        else:
            m1 = int(theory_cfg.get("spectrum_m", 45))
            sq = Quadrature.tensor_trapezoid([m1] * spec.dim, [(0.0, 1.0)] * spec.dim)
        P = int(theory_cfg.get("p", min(200, len(sq) // 10)))
        s = nystrom_spectrum(spec, sq, P)
        theory = np.array([asymptotic_imse(s, t) for t in taus])
    _write_curve_csv(out / "curve.csv", inv_tau, mean, stderr, theory)
    return ["curve.csv"]


def _cmd_fit(cfg: dict | None, seed: int, out: Path) -> list[str]:
    if cfg is None:
        raise ConfigError("fit: --config is required")
    _check_keys(
        cfg, {"data_csv"},
        {"noise", "bounds", "n_random", "n_polish", "mean"},
        "fit",
    )
    try:
        points, obs = load_observations_csv(cfg["data_csv"])
    except (OSError, ValueError) as e:
        raise ConfigError(f"fit.data_csv: {e}")
    design = Design(points, UniformBox(tuple((float(points[:, j].min()), float(max(points[:, j].max(), points[:, j].min() + 1e-9))) for j in range(points.shape[1]))))
    noise = float(cfg["noise"]) if "noise" in cfg else float(np.mean(obs.noise_var))
    bounds = [tuple(b) for b in cfg["bounds"]] if "bounds" in cfg else None
    fit = fit_hyperparameters(
        design, obs.means,
        noise=noise,
        seed=seed,
        bounds=bounds,
        n_random=int(cfg.get("n_random", DEFAULT_N_RANDOM)),
        n_polish=int(cfg.get("n_polish", DEFAULT_N_POLISH)),
        mean=cfg.get("mean"),
    )
    with open(out / "fit.json", "w") as fh:
        json.dump(
            {
                "nu": fit.nu,
                "theta": list(fit.theta),
                "sigma2": fit.sigma2,
                "mean": fit.mean,
                "loglik": fit.loglik,
                "n_local_maxima": fit.n_local_maxima,
                "polish_improved": fit.polish_improved,
                "noise": noise,
            },
            fh, indent=2,
        )
    return ["fit.json"]


def _cmd_plan(cfg: dict | None, seed: int, out: Path) -> list[str]:
    if cfg is None:
        raise ConfigError("plan: --config is required")
    _check_keys(
        cfg, {"imse_T0", "T0", "sigma_eps2_bar", "rate", "target_imse"},
        {"n", "curve_points"},
        "plan",
    )
    law = _parse_rate(cfg["rate"], "plan.rate")
    imse_t0 = float(cfg["imse_T0"])
    target = float(cfg["target_imse"])
    if target >= imse_t0:
        raise ConfigError(
            f"plan.target_imse: target {target} must be below the current IMSE {imse_t0}"
        )
    forecast = required_budget(
        imse_t0, int(cfg["T0"]), float(cfg["sigma_eps2_bar"]), law, target,
        n=int(cfg["n"]) if "n" in cfg else None,
        curve_points=int(cfg.get("curve_points", 50)),
    )
    with open(out / "forecast.json", "w") as fh:
        json.dump(
            {
                "imse_T0": forecast.imse_T0,
                "T0": forecast.T0,
                "sigma_eps2_bar": forecast.sigma_eps2_bar,
                "rate": {
                    "family": law.family,
                    "exponent": law.exponent,
                    "log_power": law.log_power,
                },
                "target_imse": forecast.target,
                "solved_T": forecast.solved_T,
                "s_per_point": forecast.s_per_point,
                "curve": [[t, v] for t, v in forecast.curve],
            },
            fh, indent=2,
        )
    return ["forecast.json"]


def _cmd_allocate(cfg: dict | None, seed: int, out: Path) -> list[str]:
    if cfg is None:
        raise ConfigError("allocate: --config is required")
    _check_keys(
        cfg, {"kernel", "T"},
        {"points", "sigma_eps2", "data_csv", "eta"},
        "allocate",
    )
    spec = _parse_kernel(cfg["kernel"], "allocate.kernel")
    if "data_csv" in cfg:
        try:
            points, obs = load_observations_csv(cfg["data_csv"])
        except (OSError, ValueError) as e:
            raise ConfigError(f"allocate.data_csv: {e}")
        noise = obs.noise_var * obs.s
    elif "points" in cfg:
        points = np.asarray(cfg["points"], dtype=float)
        if "sigma_eps2" not in cfg:
            raise ConfigError("allocate: inline points require sigma_eps2")
        noise = np.asarray(cfg["sigma_eps2"], dtype=float)
        if noise.ndim == 0:
            noise = np.full(len(points), float(noise))
    else:
        raise ConfigError("allocate: provide either points or data_csv")
    T = int(cfg["T"])
    if T < len(points):
        raise ConfigError(f"allocate.T: budget {T} below the number of points {len(points)}")
    if np.any(noise <= 0):
        raise ConfigError("allocate.sigma_eps2: noise variances must be positive")
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    box = UniformBox(tuple((float(l), float(max(h, l + 1e-9))) for l, h in zip(lo, hi)))
    design = Design(points, box)
    eta = _parse_measure(cfg["eta"], "allocate.eta") if "eta" in cfg else _default_eta(design.dim)
    plan = plan_allocation(spec, design, noise, T, eta)
    s_uni = round_allocation(np.full(design.n, T / design.n), T)
    imse_uni = heteroscedastic_imse(spec, design, noise, s_uni, eta)
    save_plan_csv(out / "plan.csv", design, noise, plan)
    with open(out / "summary.json", "w") as fh:
        json.dump(
            {
                "T": T,
                "i_star": plan.i_star,
                "imse_optimal": plan.achieved_imse,
                "imse_uniform": imse_uni,
                "quasi_optimal": plan.quasi_optimal,
            },
            fh, indent=2,
        )
    return ["plan.csv", "summary.json"]


def _cmd_simulate(cfg: dict | None, seed: int, out: Path) -> list[str]:
    if cfg is None:
        raise ConfigError("simulate: --config is required")
    _check_keys(
        cfg, {"design", "s"},
        {"truth", "noise_field", "noise_level", "noise_contrast", "sim_seed"},
        "simulate",
    )
    try:
        sim = SyntheticSimulator(
            truth=cfg.get("truth", "smooth2d_kl"),
            noise_field=cfg.get("noise_field", "smooth"),
            noise_level=float(cfg.get("noise_level", 3.3e-3)),
            noise_contrast=float(cfg.get("noise_contrast", 4.0)),
            seed=int(cfg.get("sim_seed", seed)),
        )
    except ValueError as e:
        raise ConfigError(f"simulate: {e}")
    dcfg = cfg["design"]
    _check_keys(dcfg, {"type"}, {"n", "points"}, "simulate.design")
    if dcfg["type"] == "lhs":
        design = latin_hypercube_design(int(dcfg["n"]), sim.dim, seed)
    elif dcfg["type"] == "points":
        design = Design(np.asarray(dcfg["points"], dtype=float),
                        UniformBox(tuple((0.0, 1.0) for _ in range(sim.dim))))
    else:
        raise ConfigError(f"simulate.design.type: unknown type {dcfg['type']!r}")
    obs = sample_observations(sim, design, cfg["s"], np.random.SeedSequence([seed, 1]))
    save_observations_csv(out / "observations.csv", design.points, obs)
    return ["observations.csv"]


def _cmd_figure1(cfg, seed, out):
    report = run_figure1(out, seed, cfg)
    with open(out / "figure1_report.json", "w") as fh:
        json.dump(report, fh, indent=2)
    return report["files"] + ["figure1_report.json"]


def _cmd_figure2(cfg, seed, out):
    report = run_figure2(out, seed, cfg)
    with open(out / "figure2_report.json", "w") as fh:
        json.dump(report, fh, indent=2)
    return report["files"] + ["figure2_report.json"]


def _cmd_casestudy(cfg, seed, out):
    report = run_case_study(out, seed, cfg)
    return report["files"]


_HANDLERS = {
    "spectrum": _cmd_spectrum,
    "curve": _cmd_curve,
    "fit": _cmd_fit,
    "plan": _cmd_plan,
    "allocate": _cmd_allocate,
    "simulate": _cmd_simulate,
    "figure1": _cmd_figure1,
    "figure2": _cmd_figure2,
    "casestudy": _cmd_casestudy,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpbudget",
        description="Gaussian-process learning curves and simulation-budget planning",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="|".join(SUBCOMMANDS))
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, required=True, help="random seed (mandatory)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker cap (default 1)")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0
    started = time.perf_counter()
    try:
        config = _load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        outputs = _HANDLERS[args.command](config, args.seed, out)
    except ConfigError as e:
        print(f"gpbudget {args.command}: {e}", file=sys.stderr)
        return 2
    except (ArithmeticError, np.linalg.LinAlgError, RuntimeError) as e:
        print(f"gpbudget {args.command}: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        # config-shaped mistakes surfacing from module validation
        print(f"gpbudget {args.command}: {e}", file=sys.stderr)
        return 2
    _write_manifest(out, args.command, config, args.seed, outputs,
                    time.perf_counter() - started)
    return 0


if __name__ == "__main__":
    sys.exit(main())
