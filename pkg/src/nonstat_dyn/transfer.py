"""Discretized transfer operators: construction, composition, averaging,
fixed densities, spectra, and empirical operator inequalities."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
import scipy.optimize
import scipy.sparse.linalg

from .densities import (DEFAULT_EPS0, GridDensity, GridMismatchError,
                        l1_norm, quasi_holder_seminorm)
from .maps import MapFamily, MapInstance, instantiate
from .seeding import substream


class NonConvergenceError(RuntimeError):
    """An iterative solver failed to reach the requested tolerance."""


@dataclass(frozen=True)
class UlamOperator:
    """Finite-rank transfer operator on cell averages.

    Entries M[i][j] approximate m(U_j ∩ F^{-1} U_i)/m(U_j); columns sum to
    one, so the action on cell-average vectors preserves mass and L1-contracts.
    """

    matrix: np.ndarray
    provenance: str = "explicit"

    def __post_init__(self):
        mat = np.array(self.matrix, dtype=float, copy=True)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValueError("operator matrix must be square")
        if np.any(mat < 0):
            raise ValueError("operator matrix must be entrywise nonnegative")
        mat.flags.writeable = False
        object.__setattr__(self, "matrix", mat)

    @property
    def n_cells(self) -> int:
        return self.matrix.shape[0]

    def apply(self, phi: GridDensity) -> GridDensity:
        if phi.n_cells != self.n_cells:
            raise GridMismatchError(
                f"grid mismatch: operator {self.n_cells}, density {phi.n_cells}")
        return GridDensity(self.matrix @ phi.values, circle=phi.circle,
                           density=phi.density)

    def column_sum_error(self) -> float:
        return float(np.max(np.abs(self.matrix.sum(axis=0) - 1.0)))


def _exact_affine_matrix(instance: MapInstance, n: int) -> np.ndarray:
    mat = np.zeros((n, n))
    for br in instance.branches:
        a, b = br.affine
        j0 = int(np.floor(br.lo * n))
        j1 = int(np.ceil(br.hi * n))
        for j in range(j0, j1):
            s0 = max(br.lo, j / n)
            s1 = min(br.hi, (j + 1) / n)
            if s1 - s0 <= 0:
                continue
            y0 = a * s0 + b - br.offset
            y1 = a * s1 + b - br.offset
            if y1 < y0:
                y0, y1 = y1, y0
            i_start = max(0, int(np.floor(y0 * n + 1e-12)))
            i_end = min(n - 1, int(np.ceil(y1 * n - 1e-12)) - 1)
            for i in range(i_start, i_end + 1):
                lo_t = max(y0, i / n)
                hi_t = min(y1, (i + 1) / n)
                if hi_t > lo_t:
                    mat[i % n, j % n] += n * (hi_t - lo_t) / abs(a)
    return mat


def _chord_triplets(instance: MapInstance, n: int, quadrature: int):
    """(target, source, weight) triplets of the chord discretization.

    Every source cell is split into `quadrature` subintervals; each
    subinterval's image (the chord through the lift values at its edges) is
    distributed over target cells by exact overlap.  Exact for affine
    branches, and smooth in the map parameter for all branches, unlike
    point binning.  Weights per source cell sum to one.
    """
    t_parts, s_parts, w_parts = [], [], []
    nq = n * quadrature
    for piece in instance.pieces:
        k0 = int(np.ceil(piece.lo * nq - 1e-12))
        k1 = int(np.floor(piece.hi * nq + 1e-12))
        inner = np.arange(k0, k1 + 1) / nq
        chunks = [inner]
        if inner.size == 0 or piece.lo < inner[0] - 1e-15:
            chunks.insert(0, np.array([piece.lo]))
        if inner.size == 0 or piece.hi > inner[-1] + 1e-15:
            chunks.append(np.array([piece.hi]))
        edges = np.concatenate(chunks)
        widths = np.diff(edges)
        keep = widths > 1e-15
        ys = np.asarray(piece.lift(edges), dtype=float) * n
        y0 = ys[:-1][keep]
        y1 = ys[1:][keep]
        ylo = np.minimum(y0, y1)
        yhi = np.maximum(y0, y1)
        src = np.floor((edges[:-1][keep] + edges[1:][keep]) * 0.5 * n).astype(np.int64)
        wt = widths[keep] * n            # fraction of the source cell
        c0 = np.floor(ylo + 1e-9).astype(np.int64)
        c1 = np.maximum(np.ceil(yhi - 1e-9).astype(np.int64) - 1, c0)
        simple = c0 == c1
        t_parts.append(c0[simple] % n)
        s_parts.append(src[simple])
        w_parts.append(wt[simple])
        two = (~simple) & (c1 == c0 + 1)
        if np.any(two):
            span = yhi[two] - ylo[two]
            cut = c0[two] + 1.0
            t_parts.append(c0[two] % n)
            s_parts.append(src[two])
            w_parts.append(wt[two] * (cut - ylo[two]) / span)
            t_parts.append((c0[two] + 1) % n)
            s_parts.append(src[two])
            w_parts.append(wt[two] * (yhi[two] - cut) / span)
        # images spanning three or more cells (steep branches only)
        for idx in np.nonzero((~simple) & (c1 > c0 + 1))[0]:
            span = yhi[idx] - ylo[idx]
            for c in range(c0[idx], c1[idx] + 1):
                overlap = min(yhi[idx], c + 1.0) - max(ylo[idx], float(c))
                if overlap <= 0:
                    continue
                t_parts.append(np.array([c % n], dtype=np.int64))
                s_parts.append(np.array([src[idx]], dtype=np.int64))
                w_parts.append(np.array([wt[idx] * overlap / span]))
    return (np.concatenate(t_parts), np.concatenate(s_parts),
            np.concatenate(w_parts))


def _quadrature_matrix(instance: MapInstance, n: int, quadrature: int) -> np.ndarray:
    targets, sources, weights = _chord_triplets(instance, n, quadrature)
    mat = np.zeros((n, n))
    np.add.at(mat, (targets, sources), weights)
    return mat


def build_ulam(instance: MapInstance, n_cells: int, quadrature: int = 32) -> UlamOperator:
    """Discretize the transfer operator of a realized map.

    All-affine instances get exact interval-intersection entries; otherwise
    entries come from a deterministic midpoint rule with `quadrature`
    points per cell, which makes columns sum to one exactly.
    """
    if n_cells < 2:
        raise ValueError("n_cells must be at least 2")
    if quadrature < 1:
        raise ValueError("quadrature must be at least 1")
    if instance.is_affine:
        mat = _exact_affine_matrix(instance, n_cells)
        method = "exact-intervals"
    else:
        mat = _quadrature_matrix(instance, n_cells, quadrature)
        method = f"chord-{quadrature}"
    tag = "unsafe " if instance.unsafe else ""
    prov = (f"{tag}{instance.family.name} gamma={instance.gamma!r} "
            f"n={n_cells} {method}")
    return UlamOperator(matrix=mat, provenance=prov)


class SequenceApplier:
    """Applies one discretized operator to cell-average vectors without
    materializing the matrix (chord pushforward via bincount)."""

    def __init__(self, instance: MapInstance, n_cells: int, quadrature: int = 32):
        self.n_cells = n_cells
        self.quadrature = quadrature
        self.targets, self.sources, self.weights = _chord_triplets(
            instance, n_cells, quadrature)

    def apply_values(self, values: np.ndarray) -> np.ndarray:
        return np.bincount(self.targets, weights=self.weights * values[self.sources],
                           minlength=self.n_cells)


class ApplierCache:
    """Per-parameter cache of SequenceAppliers for one family and grid."""

    def __init__(self, family: MapFamily, n_cells: int, quadrature: int = 32,
                 unsafe: bool = False):
        self.family = family
        self.n_cells = n_cells
        self.quadrature = quadrature
        self.unsafe = unsafe
        self._cache: dict = {}

    def get(self, gamma: float) -> SequenceApplier:
        key = float(gamma)
        if key not in self._cache:
            inst = instantiate(self.family, key, unsafe=self.unsafe)
            self._cache[key] = SequenceApplier(inst, self.n_cells, self.quadrature)
        return self._cache[key]


def apply_sequence(ops, phi: GridDensity, record_every: Optional[int] = None):
    """Compose operators in time order: L_{gamma_n} ... L_{gamma_1} phi.

    `ops` is either a sequence of UlamOperators or a tuple
    ``(family, gammas)``; in the latter case the midpoint-rule applier is
    used for every step.  With `record_every`, a list of intermediate
    densities (including start and end) is returned alongside the result.
    """
    snapshots = []
    if isinstance(ops, tuple) and len(ops) == 2 and isinstance(ops[0], MapFamily):
        family, gammas = ops
        cache = ApplierCache(family, phi.n_cells)
        vals = phi.values.copy()
        if record_every:
            snapshots.append(GridDensity(vals, circle=phi.circle))
        for k, gamma in enumerate(gammas, start=1):
            vals = cache.get(float(gamma)).apply_values(vals)
            if record_every and k % record_every == 0:
                snapshots.append(GridDensity(vals, circle=phi.circle))
        out = GridDensity(vals, circle=phi.circle)
    else:
        out = phi
        if record_every:
            snapshots.append(out)
        for k, op in enumerate(ops, start=1):
            out = op.apply(out)
            if record_every and k % record_every == 0:
                snapshots.append(out)
    if record_every:
        return out, snapshots
    return out


# --- averaging over a perturbation law -----------------------------------

@dataclass(frozen=True)
class AveragingLaw:
    """Sampling specification for the averaged operator.

    kinds: 'point' (Dirac at center), 'two_point' (center ± radius),
    'uniform' (midpoint quadrature on [center-radius, center+radius]),
    'atoms' (explicit atoms/weights), 'sample' (iid uniform draws, seeded).
    """

    center: float
    radius: float = 0.0
    law: str = "point"
    n_samples: int = 64
    seed: Optional[int] = None
    atoms: Optional[tuple] = None
    weights: Optional[tuple] = None

    def nodes(self):
        if self.law == "point":
            return np.array([self.center]), np.array([1.0])
        if self.law == "two_point":
            return (np.array([self.center - self.radius, self.center + self.radius]),
                    np.array([0.5, 0.5]))
        if self.law == "uniform":
            if self.n_samples < 1:
                raise ValueError("n_samples must be positive")
            k = np.arange(self.n_samples)
            nodes = self.center - self.radius + (2.0 * self.radius) * (k + 0.5) / self.n_samples
            return nodes, np.full(self.n_samples, 1.0 / self.n_samples)
        if self.law == "atoms":
            atoms = np.asarray(self.atoms, dtype=float)
            weights = (np.full(atoms.size, 1.0 / atoms.size) if self.weights is None
                       else np.asarray(self.weights, dtype=float))
            if abs(weights.sum() - 1.0) > 1e-12:
                raise ValueError("atom weights must sum to 1")
            return atoms, weights
        if self.law == "sample":
            if self.n_samples < 1:
                raise ValueError("n_samples must be positive")
            rng = substream(self.seed or 0, "averaged-operator")
            nodes = rng.uniform(self.center - self.radius,
                                self.center + self.radius, self.n_samples)
            return nodes, np.full(self.n_samples, 1.0 / self.n_samples)
        raise ValueError(f"unknown averaging law {self.law!r}")


def averaged_operator(family: MapFamily, nu: AveragingLaw, n_cells: int,
                      quadrature: int = 32) -> UlamOperator:
    """Entrywise average of member operators over the law nu.

    A convex combination of column-stochastic nonnegative matrices, so all
    operator properties are inherited; a point mass reproduces the member
    operator exactly.
    """
    nodes, weights = nu.nodes()
    if nodes.size == 0:
        raise ValueError("averaging law produced zero sample nodes")
    if nodes.size == 1:
        member = build_ulam(instantiate(family, float(nodes[0])), n_cells, quadrature)
        prov = f"averaged({nu.law}) == {member.provenance}"
        return UlamOperator(matrix=member.matrix, provenance=prov)
    acc = np.zeros((n_cells, n_cells))
    for gamma, w in zip(nodes, weights):
        member = build_ulam(instantiate(family, float(gamma)), n_cells, quadrature)
        acc += w * member.matrix
    prov = (f"averaged({nu.law} center={nu.center!r} radius={nu.radius!r} "
            f"k={nodes.size}) {family.name} n={n_cells}")
    return UlamOperator(matrix=acc, provenance=prov)


# --- fixed densities and spectra -----------------------------------------

def fixed_density(op: UlamOperator, tol: float = 1e-12,
                  max_iter: int = 20000) -> GridDensity:
    """Power iteration from the uniform start; returns a probability density
    with residual ||M phi - phi||_1 <= tol."""
    vals = np.ones(op.n_cells)
    residual = np.inf
    for _ in range(max_iter):
        nxt = op.matrix @ vals
        m = nxt.mean()
        if m <= 0:
            raise NonConvergenceError("mass vanished during power iteration")
        nxt = nxt / m
        residual = float(np.mean(np.abs(nxt - vals)))
        vals = nxt
        if residual <= tol:
            return GridDensity(np.clip(vals, 0.0, None))
    raise NonConvergenceError(
        f"power iteration did not reach tol={tol} in {max_iter} steps "
        f"(final residual {residual:.3e}); the spectral gap may be too small "
        "or the operator invalid")


@dataclass(frozen=True)
class SpectralSummary:
    eigenvalues: np.ndarray      # top-k by modulus
    gap: float                   # 1 - |lambda_2|
    leading_density: GridDensity
    has_gap: bool


def spectral_summary(op: UlamOperator, k: int = 5,
                     gap_floor: float = 1e-6) -> SpectralSummary:
    """Top-k eigenvalues by modulus and the normalized leading eigenvector.

    Dense solve for n <= 2048, implicitly restarted Arnoldi above (with a
    fixed start vector for determinism).  Operators without a spectral gap
    (|lambda_2| ~ 1) are flagged, not rejected.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    n = op.n_cells
    if n <= 2048:
        eigvals, eigvecs = np.linalg.eig(op.matrix)
    else:
        eigvals, eigvecs = scipy.sparse.linalg.eigs(
            op.matrix, k=min(k, n - 2), which="LM", v0=np.ones(n))
    order = np.argsort(-np.abs(eigvals))
    eigvals = eigvals[order][:k]
    lead = np.real(eigvecs[:, order[0]])
    if lead.sum() < 0:
        lead = -lead
    lead = np.clip(lead, 0.0, None)
    if lead.mean() <= 0:
        raise NonConvergenceError("leading eigenvector has no positive part")
    lead = lead / lead.mean()
    gap = float(1.0 - np.abs(eigvals[1])) if len(eigvals) > 1 else 1.0
    return SpectralSummary(eigenvalues=eigvals, gap=gap,
                           leading_density=GridDensity(lead),
                           has_gap=gap > gap_floor)


# --- empirical operator inequalities -------------------------------------

@dataclass(frozen=True)
class LasotaYorkeFit:
    """Fitted one-step envelope |L phi|_alpha <= eta |phi|_alpha + C ||phi||_1."""

    eta_hat: float
    c_hat: float                 # inflated so the envelope covers the test set
    c_least_squares: float
    satisfied_fraction: float    # fraction covered by the raw least-squares fit
    alpha: float
    eps0: float
    n_test: int
    iterated_margin: Optional[float] = None  # worst ratio against the n-step bound


def lasota_yorke_fit(family: MapFamily, gamma: float, alpha: float,
                     test_set: Sequence[GridDensity], n_powers: int = 0,
                     eps0: float = DEFAULT_EPS0,
                     quadrature: int = 32) -> LasotaYorkeFit:
    """Fit the regularity-contraction envelope on a set of test densities.

    The coefficients are empirical surrogates obtained by nonnegative least
    squares plus an inflation of C so every test pair satisfies the bound.
    With `n_powers` > 0 the iterated bound
    eta^n |phi|_alpha + C/(1-eta) ||phi||_1 is also checked for n up to
    n_powers on the whole test set, and the worst margin is reported.
    """
    if not test_set:
        raise ValueError("test_set must be nonempty")
    n_cells = test_set[0].n_cells
    op = build_ulam(instantiate(family, gamma), n_cells, quadrature)
    xs, zs, ys = [], [], []
    for phi in test_set:
        xs.append(quasi_holder_seminorm(phi, alpha, eps0).seminorm)
        zs.append(l1_norm(phi))
        ys.append(quasi_holder_seminorm(op.apply(phi), alpha, eps0).seminorm)
    xs = np.array(xs)
    zs = np.array(zs)
    ys = np.array(ys)
    if np.all(xs == 0):
        raise ValueError("degenerate test set: all seminorms vanish")
    design = np.column_stack([xs, zs])
    coef, _ = scipy.optimize.nnls(design, ys)
    eta, c_ls = float(coef[0]), float(coef[1])
    satisfied = float(np.mean(ys <= eta * xs + c_ls * zs + 1e-12))
    with np.errstate(divide="ignore", invalid="ignore"):
        c_needed = np.where(zs > 0, (ys - eta * xs) / zs, 0.0)
    c_hat = max(c_ls, float(np.max(c_needed)))
    fit = LasotaYorkeFit(eta_hat=eta, c_hat=c_hat, c_least_squares=c_ls,
                         satisfied_fraction=satisfied, alpha=alpha,
                         eps0=eps0, n_test=len(test_set))
    if n_powers > 0 and eta < 1.0:
        margin = max(iterated_bound_margin(op, phi, fit, n_powers)
                     for phi in test_set)
        fit = replace(fit, iterated_margin=margin)
    return fit


def iterated_bound_margin(op: UlamOperator, phi: GridDensity, fit: LasotaYorkeFit,
                          n_powers: int, slack: float = 0.05) -> float:
    """Worst ratio of |L^n phi|_alpha against the iterated envelope
    eta^n |phi|_alpha + C/(1-eta) ||phi||_1, for n = 1..n_powers."""
    if fit.eta_hat >= 1.0:
        raise ValueError("iterated bound needs eta_hat < 1")
    x0 = quasi_holder_seminorm(phi, fit.alpha, fit.eps0).seminorm
    z0 = l1_norm(phi)
    worst = 0.0
    cur = phi
    for n in range(1, n_powers + 1):
        cur = op.apply(cur)
        lhs = quasi_holder_seminorm(cur, fit.alpha, fit.eps0).seminorm
        rhs = (fit.eta_hat ** n * x0 +
               fit.c_hat / (1.0 - fit.eta_hat) * z0) * (1.0 + slack)
        worst = max(worst, lhs / rhs if rhs > 0 else np.inf)
    return worst


@dataclass(frozen=True)
class DecayEnvelope:
    c_fit: float
    s_fit: float
    c_dominating: float
    rel_residual: float


def fit_decay_envelope(curve: np.ndarray, scale: float) -> DecayEnvelope:
    """Fit curve_n ~ C s^n * scale with s in (0,1] by least squares over a
    grid of rates, then inflate C so the envelope dominates the curve."""
    curve = np.asarray(curve, dtype=float)
    ns = np.arange(len(curve))
    mask = ns >= 1
    y = curve[mask]
    if np.all(y <= 0) or scale <= 0:
        return DecayEnvelope(0.0, 1.0, 0.0, 0.0)
    best = None
    for s in np.linspace(0.50, 1.0, 51):
        basis = scale * s ** ns[mask]
        c = float(np.dot(basis, y) / np.dot(basis, basis))
        resid = float(np.sqrt(np.mean((y - c * basis) ** 2)))
        if best is None or resid < best[0]:
            best = (resid, c, s)
    resid, c_fit, s_fit = best
    rel = resid / float(np.sqrt(np.mean(y ** 2)))
    with np.errstate(divide="ignore"):
        needed = curve[mask] / (scale * s_fit ** ns[mask])
    c_dom = max(c_fit, float(np.max(needed)))
    return DecayEnvelope(c_fit=c_fit, s_fit=s_fit, c_dominating=c_dom,
                         rel_residual=rel)


@dataclass(frozen=True)
class PerturbationProbe:
    deltas_used: np.ndarray      # the sampled parameter sequence
    curve: np.ndarray            # n -> ||L^n_seq phi - L^n_const phi||_1
    envelope: DecayEnvelope
    norm_alpha: float
    dominated: bool


def perturbation_probe(family: MapFamily, gamma_hat: float, delta: float,
                       n_max: int, phi: GridDensity, seq_seed: int,
                       alpha: Optional[float] = None,
                       eps0: float = DEFAULT_EPS0,
                       quadrature: int = 32) -> PerturbationProbe:
    """Deviation curve between one random perturbed composition and the
    constant composition at gamma_hat, with a fitted geometric envelope
    C s^n ||phi||_alpha."""
    if alpha is None:
        alpha = min(family.holder_exponent, 1.0)
    rng = substream(seq_seed, "perturbation-probe")
    gammas = rng.uniform(gamma_hat - delta, gamma_hat + delta, n_max)
    lo, hi = family.gamma_range
    gammas = np.clip(gammas, lo, hi)
    cache = ApplierCache(family, phi.n_cells, quadrature)
    base = cache.get(float(gamma_hat))
    cur_seq = phi.values.copy()
    cur_const = phi.values.copy()
    curve = np.zeros(n_max + 1)
    for k in range(1, n_max + 1):
        cur_seq = cache.get(float(gammas[k - 1])).apply_values(cur_seq)
        cur_const = base.apply_values(cur_const)
        curve[k] = float(np.mean(np.abs(cur_seq - cur_const)))
    norm_alpha = quasi_holder_seminorm(phi, alpha, eps0).norm_alpha
    env = fit_decay_envelope(curve, norm_alpha)
    dominated = bool(np.all(
        curve <= env.c_dominating * norm_alpha * env.s_fit ** np.arange(n_max + 1)
        + 1e-12))
    return PerturbationProbe(deltas_used=gammas, curve=curve, envelope=env,
                             norm_alpha=norm_alpha, dominated=dominated)


# --- serialization --------------------------------------------------------

def operator_to_csv(op: UlamOperator, path, threshold: float = 0.0):
    """Sparse triplet CSV with a JSON header line (row, col, value)."""
    rows, cols = np.nonzero(op.matrix > threshold)
    payload = "".join(f"{r},{c},{float(op.matrix[r, c])!r}\n"
                      for r, c in zip(rows.tolist(), cols.tolist()))
    header = {
        "provenance": op.provenance,
        "n_cells": op.n_cells,
        "checksum": hashlib.sha256(payload.encode()).hexdigest(),
    }
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        fh.write("row,col,value\n")
        fh.write(payload)


def operator_from_csv(path) -> UlamOperator:
    with open(path) as fh:
        header = json.loads(fh.readline().lstrip("# ").strip())
        reader = csv.DictReader(fh)
        n = int(header["n_cells"])
        mat = np.zeros((n, n))
        for row in reader:
            mat[int(row["row"]), int(row["col"])] = float(row["value"])
    return UlamOperator(matrix=mat, provenance=header.get("provenance", "loaded"))
