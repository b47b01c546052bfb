"""Mercer eigen-decomposition of (kernel, measure) pairs.

The numerical route is the Nystrom method: with quadrature nodes t_j and
weights w_j approximating the measure mu, the integral operator is
discretized as the symmetric matrix W^{1/2} K W^{1/2}.  Its eigenvalues
approximate the Mercer eigenvalues and the rescaled eigenvectors
u_{jp} / sqrt(w_j) give eigenfunction values at the nodes, extendable to
arbitrary points through

    phi_p(x) = (1/lambda_p) sum_j w_j k(x, t_j) phi_p(t_j).

Closed-form large-p eigenvalue laws for the standard families live in
``analytic_eigenvalue``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh
from scipy.special import gamma

from .gp_core import Quadrature, _FLOAT_FMT
from .kernels import KernelSpec, cross_matrix, gram_matrix, _as_points


@dataclass(frozen=True)
class Spectrum:
    """Nonincreasing eigenvalues, optionally with the node data needed to
    evaluate eigenfunctions (absent for purely analytic/truncated spectra)."""

    eigenvalues: np.ndarray
    nodes: np.ndarray | None = None
    weights: np.ndarray | None = None
    eigvec_table: np.ndarray | None = None
    residual_trace: float = 0.0

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float).ravel()
        if len(lam) == 0:
            raise ValueError("spectrum needs at least one eigenvalue")
        if np.any(lam < 0):
            raise ValueError("eigenvalues must be nonnegative (clip round-off first)")
        if np.any(np.diff(lam) > 1e-12 * max(lam[0], 1.0)):
            raise ValueError("eigenvalues must be nonincreasing")
        if self.residual_trace < -1e-8:
            raise ValueError("residual_trace must be nonnegative up to round-off")
        lam.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "residual_trace", float(max(self.residual_trace, 0.0)))
        if self.eigvec_table is not None:
            if self.nodes is None or self.weights is None:
                raise ValueError("a node table requires nodes and weights")
            nodes = np.atleast_2d(np.asarray(self.nodes, dtype=float))
            w = np.asarray(self.weights, dtype=float).ravel()
            tab = np.asarray(self.eigvec_table, dtype=float)
            if tab.shape != (len(w), len(lam)) or len(nodes) != len(w):
                raise ValueError("eigvec_table must be (n_nodes, n_eigenvalues)")
            for arr in (nodes, w, tab):
                arr.setflags(write=False)
            object.__setattr__(self, "nodes", nodes)
            object.__setattr__(self, "weights", w)
            object.__setattr__(self, "eigvec_table", tab)

    @property
    def n_terms(self) -> int:
        return len(self.eigenvalues)

    def trace(self) -> float:
        return float(self.eigenvalues.sum() + self.residual_trace)


def nystrom_spectrum(spec: KernelSpec, measure: Quadrature, P: int) -> Spectrum:
    """Top-P eigenpairs of the kernel integral operator under ``measure``.

    Requires at least 10 nodes per requested eigenvalue; negative
    round-off eigenvalues are clipped to zero, with the clipped mass
    folded into ``residual_trace``.
    """
    m = len(measure)
    if P < 1:
        raise ValueError("P must be >= 1")
    if P > m:
        raise ValueError(f"cannot extract {P} eigenvalues from {m} nodes")
    if 10 * P > m:
        raise ValueError(f"need at least 10 nodes per eigenvalue: 10*{P} > {m}")
    w = measure.weights
    if np.any(w <= 0):
        raise ValueError("Nystrom nodes must all carry positive weight")
    K = gram_matrix(spec, measure.nodes)
    sw = np.sqrt(w)
    B = sw[:, None] * K * sw[None, :]
    lam_all, U = eigh(B)
    order = np.argsort(lam_all)[::-1]
    lam = np.clip(lam_all[order[:P]], 0.0, None)
    phi = U[:, order[:P]] / sw[:, None]
    # pin the arbitrary sign: largest-magnitude node value positive
    for p in range(P):
        j = int(np.argmax(np.abs(phi[:, p])))
        if phi[j, p] < 0:
            phi[:, p] = -phi[:, p]
    trace = float(w @ np.diag(K))
    residual = trace - float(lam.sum())
    return Spectrum(
        eigenvalues=lam,
        nodes=measure.nodes,
        weights=w,
        eigvec_table=phi,
        residual_trace=residual,
    )


def _require_table(s: Spectrum) -> None:
    if s.eigvec_table is None:
        raise ValueError("this spectrum carries no node table; rebuild via nystrom_spectrum")


def eigenfunction_matrix(s: Spectrum, spec: KernelSpec, x, p_max: int | None = None) -> np.ndarray:
    """Nystrom extension of the first p_max eigenfunctions, shape (n_x, p_max).

    Only eigenfunctions with strictly positive eigenvalue can be extended.
    """
    _require_table(s)
    P = s.n_terms if p_max is None else int(p_max)
    if P < 1 or P > s.n_terms:
        raise ValueError(f"p_max must be in 1..{s.n_terms}")
    lam = s.eigenvalues[:P]
    if np.any(lam <= 0):
        raise ValueError("cannot extend an eigenfunction with zero eigenvalue")
    X = _as_points(x, s.nodes.shape[1])
    Kx = cross_matrix(spec, X, s.nodes)
    return (Kx @ (s.weights[:, None] * s.eigvec_table[:, :P])) / lam[None, :]


def eigenfunction_at(s: Spectrum, spec: KernelSpec, p: int, x) -> float:
    """Value of the p-th eigenfunction at a single point."""
    if p < 0 or p >= s.n_terms:
        raise ValueError(f"eigenfunction index {p} out of range")
    if s.eigenvalues[p] <= 0:
        raise ValueError(f"eigenvalue {p} is zero; extension undefined")
    _require_table(s)
    lam = s.eigenvalues[p]
    X = _as_points(x, s.nodes.shape[1])
    Kx = cross_matrix(spec, X, s.nodes)
    val = (Kx @ (s.weights * s.eigvec_table[:, p])) / lam
    return float(val[0])


def analytic_eigenvalue(family: str, p: int, *, nu: float | None = None,
                        hurst: float | None = None, d: int = 1) -> float:
    """Closed-form large-p eigenvalue laws.

    fbm: nu_H / p^(2H+1) with nu_H = sin(pi H) Gamma(2H+1) / pi^(2H+1);
    matern1d: p^(-2 nu); matern_tensor: log(1+p)^(2(d-1)nu) / p^(2 nu);
    gaussian: exp(-p^(1/d)).  These are asymptotic laws, not exact
    finite-p eigenvalues.
    """
    if p < 1:
        raise ValueError("analytic eigenvalue laws require p >= 1")
    if family == "fbm":
        if hurst is None or not 0 < hurst < 1:
            raise ValueError("fbm law requires hurst in (0,1)")
        nu_h = math.sin(math.pi * hurst) * gamma(2 * hurst + 1) / math.pi ** (2 * hurst + 1)
        return nu_h / p ** (2 * hurst + 1)
    if family == "matern1d":
        if nu is None or nu <= 0:
            raise ValueError("matern law requires nu > 0")
        return p ** (-2.0 * nu)
    if family == "matern_tensor":
        if nu is None or nu <= 0:
            raise ValueError("matern law requires nu > 0")
        return math.log(1 + p) ** (2 * (d - 1) * nu) / p ** (2.0 * nu)
    if family == "gaussian":
        return math.exp(-(p ** (1.0 / d)))
    raise ValueError(f"no analytic eigenvalue law for family {family!r}")


def save_spectrum_csv(s: Spectrum, path, nodes_path=None) -> None:
    """Write eigenvalues (columns p, lambda); optionally the node table."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["p", "lambda"])
        for p, lam in enumerate(s.eigenvalues):
            writer.writerow([p, _FLOAT_FMT % lam])
    if nodes_path is not None:
        _require_table(s)
        d = s.nodes.shape[1]
        with open(nodes_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = [f"x_{j + 1}" for j in range(d)] + ["weight"]
            header += [f"phi_{p}" for p in range(s.n_terms)]
            writer.writerow(header)
            for j in range(len(s.weights)):
                row = [_FLOAT_FMT % v for v in s.nodes[j]]
                row.append(_FLOAT_FMT % s.weights[j])
                row += [_FLOAT_FMT % v for v in s.eigvec_table[j]]
                writer.writerow(row)
