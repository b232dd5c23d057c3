"""Birkhoff averages along nonautonomous orbits, covariance decay, the
summability criterion for the strong law, and a Levy-Prokhorov estimator."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .densities import (DEFAULT_EPS0, GridDensity, cell_centers,
                        quasi_holder_seminorm)
from .maps import MapFamily, instantiate
from .seeding import substream
from .sequences import _as_gammas
from .transfer import ApplierCache

DEFAULT_DITHER = 1e-12


@dataclass(frozen=True)
class Observable:
    """Scalar observable with cached norms; `fn` evaluates along orbits and
    `values` are cell-center samples used for grid integrals."""

    fn: Callable
    values: np.ndarray
    name: str = "psi"

    @staticmethod
    def from_callable(fn, n_cells: int, name: str = "psi") -> "Observable":
        vals = np.asarray(fn(cell_centers(n_cells)), dtype=float)
        return Observable(fn=fn, values=vals, name=name)

    @property
    def n_cells(self) -> int:
        return self.values.size

    @property
    def norm_l1(self) -> float:
        return float(np.mean(np.abs(self.values)))

    @property
    def norm_sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def seminorm(self, alpha: float, eps0: float = DEFAULT_EPS0) -> float:
        grid = GridDensity(self.values, density=False)
        return quasi_holder_seminorm(grid, alpha, eps0).seminorm


BUILTIN_OBSERVABLES = {
    "x": lambda x: np.asarray(x, dtype=float),
    "cos": lambda x: np.cos(2.0 * np.pi * np.asarray(x, dtype=float)),
    "sin": lambda x: np.sin(2.0 * np.pi * np.asarray(x, dtype=float)),
    "one": lambda x: np.ones_like(np.asarray(x, dtype=float)),
}


def observable(name: str, n_cells: int) -> Observable:
    if name not in BUILTIN_OBSERVABLES:
        raise ValueError(f"unknown observable {name!r}; known: "
                         f"{sorted(BUILTIN_OBSERVABLES)}")
    return Observable.from_callable(BUILTIN_OBSERVABLES[name], n_cells, name=name)


# --- orbits ----------------------------------------------------------------

def _step_points(instance_cache, gamma, x, dither: float, rng) -> np.ndarray:
    fx = instance_cache(gamma).evaluate(x)
    if dither > 0:
        fx = fx + rng.uniform(-0.5 * dither, 0.5 * dither, x.shape)
    return fx % 1.0


class _InstanceCache:
    def __init__(self, family: MapFamily, unsafe: bool = False):
        self.family = family
        self.unsafe = unsafe
        self._cache: dict = {}

    def __call__(self, gamma: float):
        key = float(gamma)
        if key not in self._cache:
            self._cache[key] = instantiate(self.family, key, unsafe=self.unsafe)
        return self._cache[key]


def orbit_points(family: MapFamily, seq, x0, n: int, seed: int = 0,
                 dither: float = DEFAULT_DITHER) -> np.ndarray:
    """Full trajectory (n+1 rows) of one or more initial points under the
    nonautonomous composition, with per-step dithering."""
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    gammas = _as_gammas(seq, n)
    rng = substream(seed, "orbit-dither")
    cache = _InstanceCache(family)
    out = np.empty((n + 1,) + x.shape)
    out[0] = x
    for k in range(n):
        x = _step_points(cache, float(gammas[k]), x, dither, rng)
        out[k + 1] = x
    return out


@dataclass(frozen=True)
class BirkhoffResult:
    names: tuple
    averages: np.ndarray       # (n_obs, points) final running averages
    tail_min: np.ndarray       # (n_obs, points) min running average, last 10%
    tail_max: np.ndarray
    curve_steps: np.ndarray    # downsampled checkpoints
    curves: np.ndarray         # (n_obs, len(curve_steps), points)
    n: int


def birkhoff_averages(family: MapFamily, seq, initial_points: int, psi,
                      n: int, seed: int = 0, dither: float = DEFAULT_DITHER,
                      curve_samples: int = 200) -> BirkhoffResult:
    """Running Birkhoff averages S_n(psi)(x)/n for Lebesgue-sampled points.

    `psi` may be a single Observable or a sequence of them; all observables
    share one orbit ensemble.  Tail extrema over the final 10% of steps
    proxy the limit superior/inferior of the averages.
    """
    obs = [psi] if isinstance(psi, Observable) else list(psi)
    if n < 1:
        raise ValueError("n must be at least 1")
    rng_init = substream(seed, "birkhoff-init")
    x = rng_init.uniform(0.0, 1.0, initial_points)
    gammas = _as_gammas(seq, max(n - 1, 0))
    rng = substream(seed, "birkhoff-dither")
    cache = _InstanceCache(family)
    sums = np.zeros((len(obs), initial_points))
    for j, o in enumerate(obs):
        sums[j] = o.fn(x)
    tail_start = int(np.floor(0.9 * n))
    tail_min = np.full((len(obs), initial_points), np.inf)
    tail_max = np.full((len(obs), initial_points), -np.inf)
    stride = max(n // curve_samples, 1)
    curve_steps, curves = [], []

    def snapshot(t):
        curve_steps.append(t)
        curves.append(sums / t)

    if tail_start <= 1:
        avg = sums / 1.0
        tail_min = np.minimum(tail_min, avg)
        tail_max = np.maximum(tail_max, avg)
    snapshot(1)
    for k in range(1, n):
        x = _step_points(cache, float(gammas[k - 1]), x, dither, rng)
        for j, o in enumerate(obs):
            sums[j] += o.fn(x)
        t = k + 1
        if t >= tail_start:
            avg = sums / t
            tail_min = np.minimum(tail_min, avg)
            tail_max = np.maximum(tail_max, avg)
        if t % stride == 0 or t == n:
            snapshot(t)
    return BirkhoffResult(names=tuple(o.name for o in obs),
                          averages=sums / n, tail_min=tail_min,
                          tail_max=tail_max,
                          curve_steps=np.array(curve_steps),
                          curves=np.array(curves).swapaxes(0, 1), n=n)


@dataclass(frozen=True)
class QuasiBirkhoffBand:
    center: float      # integral of psi against the reference density
    halfwidth: float   # eps * ||psi||_1
    lo: float
    hi: float


def quasi_birkhoff_band(psi: Observable, phi_ref: GridDensity,
                        eps: float) -> QuasiBirkhoffBand:
    """Band [int psi phi_ref dm - eps ||psi||_1, ... + eps ||psi||_1]."""
    phi_ref.assert_probability(1e-9)
    center = float(np.mean(psi.values * phi_ref.values))
    half = eps * psi.norm_l1
    return QuasiBirkhoffBand(center=center, halfwidth=half,
                             lo=center - half, hi=center + half)


def wilson_interval(successes: int, total: int, z: float = 1.96) -> tuple:
    if total == 0:
        return (0.0, 1.0)
    p = successes / total
    den = 1.0 + z * z / total
    mid = (p + z * z / (2 * total)) / den
    spread = z * np.sqrt(p * (1 - p) / total + z * z / (4 * total * total)) / den
    return (max(0.0, mid - spread), min(1.0, mid + spread))


@dataclass(frozen=True)
class BandCheck:
    fraction: float
    inside: np.ndarray
    wilson: tuple


def band_pass_check(result: BirkhoffResult, band: QuasiBirkhoffBand,
                    obs_index: int = 0) -> BandCheck:
    """Fraction of points whose tail extrema both lie inside the band."""
    inside = ((result.tail_min[obs_index] >= band.lo) &
              (result.tail_max[obs_index] <= band.hi))
    frac = float(np.mean(inside))
    return BandCheck(fraction=frac, inside=inside,
                     wilson=wilson_interval(int(inside.sum()), inside.size))


# --- covariance decay and the strong-law criterion --------------------------

@dataclass(frozen=True)
class CovarianceTable:
    indices: np.ndarray          # time indices of the window
    R: np.ndarray                # covariance estimates over the window
    se: np.ndarray               # Monte-Carlo standard errors
    means_ensemble: np.ndarray
    means_spectral: np.ndarray
    c_fit: float
    q_fit: float
    fit_residual: float          # relative rms misfit on the log scale
    lags: np.ndarray
    r_of_lag: np.ndarray         # max |R_ij| per lag


def covariance_decay(family: MapFamily, seq, psi: Observable, window: tuple,
                     ensemble: int = 10000, seed: int = 0,
                     dither: float = DEFAULT_DITHER,
                     quadrature: int = 32) -> CovarianceTable:
    """Monte-Carlo covariances of psi_i = psi o F_{gamma_i} o ... o F_{gamma_1}
    over a Lebesgue ensemble, with spectrally computed means as cross-check,
    and a geometric fit |R_ij| <= C q^{|j-i|}."""
    i_max, j_max = window
    if not (0 <= i_max <= j_max):
        raise ValueError("window must satisfy 0 <= i_max <= j_max")
    gammas = _as_gammas(seq, j_max)
    rng_init = substream(seed, "covariance-init")
    x = rng_init.uniform(0.0, 1.0, ensemble)
    rng = substream(seed, "covariance-dither")
    cache = _InstanceCache(family)
    n_cells = psi.n_cells
    samples = np.empty((j_max + 1, ensemble))
    samples[0] = psi.fn(x)
    for k in range(1, j_max + 1):
        x = _step_points(cache, float(gammas[k - 1]), x, dither, rng)
        samples[k] = psi.fn(x)
    # spectral means: int psi L_{gamma_k} ... L_{gamma_1} 1 dm
    appliers = ApplierCache(family, n_cells, quadrature)
    dens = np.ones(n_cells)
    means_spectral = np.empty(j_max + 1)
    means_spectral[0] = float(np.mean(psi.values))
    for k in range(1, j_max + 1):
        dens = appliers.get(float(gammas[k - 1])).apply_values(dens)
        means_spectral[k] = float(np.mean(psi.values * dens))
    means_ens = samples.mean(axis=1)
    centered = samples - means_ens[:, None]
    idx = np.arange(j_max + 1)
    R = np.empty((j_max + 1, j_max + 1))
    se = np.empty_like(R)
    for i in range(j_max + 1):
        prod = centered * centered[i][None, :]
        R[i] = prod.mean(axis=1)
        se[i] = prod.std(axis=1) / np.sqrt(ensemble)
    lags = np.arange(1, j_max + 1)
    r_of_lag = np.array([np.max(np.abs(np.diagonal(R, offset=k)))
                         for k in lags])
    # geometric fit on positive lags, log-linear least squares
    usable = r_of_lag > 0
    if np.count_nonzero(usable) >= 2:
        coeffs = np.polyfit(lags[usable], np.log(r_of_lag[usable]), 1)
        q_fit = float(np.exp(coeffs[0]))
        c_fit = float(np.exp(coeffs[1]))
        pred = coeffs[1] + coeffs[0] * lags[usable]
        resid = float(np.sqrt(np.mean((np.log(r_of_lag[usable]) - pred) ** 2)))
    else:
        q_fit, c_fit, resid = 1.0, float(r_of_lag.max(initial=0.0)), np.inf
    q_fit = min(q_fit, 1.0)
    c_fit = max(c_fit, float(np.max(r_of_lag / np.power(q_fit, lags))))
    return CovarianceTable(indices=idx, R=R, se=se,
                           means_ensemble=means_ens,
                           means_spectral=means_spectral,
                           c_fit=c_fit, q_fit=q_fit, fit_residual=resid,
                           lags=lags, r_of_lag=r_of_lag)


@dataclass(frozen=True)
class SummabilityReport:
    verdict: str               # "summable" or "inconclusive"
    partial_sum: float         # sum_{k<=k_max} C q^k / k
    unit_partial_sum: float    # sum_{k<=k_max} q^k / k
    closed_form: float         # -C log(1 - q) for q < 1
    tail_bound: float
    k_max: int


def lln_summability(cov: CovarianceTable, k_max: int = 1000) -> SummabilityReport:
    """Partial sums of r(k)/k with the fitted geometric envelope; the strong
    law's criterion holds whenever the fitted rate is below one."""
    q, c = cov.q_fit, cov.c_fit
    ks = np.arange(1, k_max + 1)
    if q >= 1.0:
        partial = float(np.sum(c / ks))
        return SummabilityReport(verdict="inconclusive", partial_sum=partial,
                                 unit_partial_sum=float(np.sum(1.0 / ks)),
                                 closed_form=np.inf, tail_bound=np.inf,
                                 k_max=k_max)
    powers = np.power(q, ks)
    partial = float(np.sum(c * powers / ks))
    unit = float(np.sum(powers / ks))
    closed = float(-c * np.log1p(-q))
    tail = float(c * q ** (k_max + 1) / ((k_max + 1) * (1.0 - q)))
    return SummabilityReport(verdict="summable", partial_sum=partial,
                             unit_partial_sum=unit, closed_form=closed,
                             tail_bound=tail, k_max=k_max)


# --- Levy-Prokhorov estimator ------------------------------------------------

@dataclass(frozen=True)
class LPReport:
    estimate: float
    ball_radius: float
    ball_count: int
    s_grid: np.ndarray
    worst_surplus: np.ndarray   # max mu(B) - nu(B_s) over the test family, per s


def _cdf_from_density(phi: GridDensity) -> np.ndarray:
    # cumulative integral at cell edges 0, 1/n, ..., 1
    return np.concatenate([[0.0], np.cumsum(phi.values) / phi.n_cells])


def lp_distance(empirical, mu_ref: GridDensity, ball_count: int = 64,
                s_grid: Optional[np.ndarray] = None) -> LPReport:
    """Levy-Prokhorov estimate via a finite cover of equal balls.

    The defining inequality mu(A) <= nu(A_s) + s is tested (both ways) on
    all contiguous unions of cover balls plus the positive-surplus union;
    the estimate is the smallest grid s passing every test.  Restricting to
    a finite family underestimates the true distance by at most one ball
    diameter, while the piecewise-constant reference biases it upward for
    measures smoother than the cover.
    """
    if ball_count < 8:
        raise ValueError("ball_count must be at least 8")
    if isinstance(empirical, tuple):
        points, weights = empirical
        points = np.asarray(points, dtype=float) % 1.0
        weights = np.asarray(weights, dtype=float)
        weights = weights / weights.sum()
    else:
        points = np.asarray(empirical, dtype=float) % 1.0
        if points.size == 0:
            raise ValueError("empirical sample must be nonempty")
        weights = np.full(points.size, 1.0 / points.size)
    J = ball_count
    mu_ball = np.bincount(np.minimum((points * J).astype(int), J - 1),
                          weights=weights, minlength=J)
    ref_cdf = _cdf_from_density(mu_ref)
    ref_edges = np.arange(mu_ref.n_cells + 1) / mu_ref.n_cells
    order = np.argsort(points, kind="stable")
    pts_sorted = points[order]
    emp_cum = np.concatenate([[0.0], np.cumsum(weights[order])])

    def ref_at(q):
        return np.interp(q, ref_edges, ref_cdf)

    def emp_at(q):
        return emp_cum[np.searchsorted(pts_sorted, q, side="left")]

    def circ_measure(cdf_at, lo, hi):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        full = (hi - lo) >= 1.0
        lo_m = lo % 1.0
        hi_m = hi % 1.0
        plain = cdf_at(hi_m) - cdf_at(lo_m)
        wrapped = 1.0 - cdf_at(lo_m) + cdf_at(hi_m)
        return np.where(full, 1.0, np.where(lo_m <= hi_m, plain, wrapped))

    nu_ball = np.asarray(circ_measure(ref_at, np.arange(J) / J,
                                      (np.arange(J) + 1) / J))
    radius = 0.5 / J
    if s_grid is None:
        s_grid = np.unique(np.concatenate([
            np.geomspace(0.25 / J, 0.06, 24),
            np.arange(0.06, 0.5, 0.25 / J), [0.5]]))
    # all contiguous unions of cover balls
    starts = np.repeat(np.arange(J), J)
    lengths = np.tile(np.arange(1, J + 1), J)
    mu_cum2 = np.concatenate([[0.0], np.cumsum(np.tile(mu_ball, 2))])
    nu_cum2 = np.concatenate([[0.0], np.cumsum(np.tile(nu_ball, 2))])
    mu_arc = mu_cum2[starts + lengths] - mu_cum2[starts]
    nu_arc = nu_cum2[starts + lengths] - nu_cum2[starts]
    arc_lo = starts / J
    arc_hi = (starts + lengths) / J

    worst_per_s = []
    for s in s_grid:
        worst = float(np.max(mu_arc - circ_measure(ref_at, arc_lo - s,
                                                   arc_hi + s)))
        worst = max(worst, float(np.max(
            nu_arc - circ_measure(emp_at, arc_lo - s, arc_hi + s))))
        # positive-surplus union of balls (mu -> nu), enlarged intervals merged
        ball_lo = np.arange(J) / J - s
        ball_hi = (np.arange(J) + 1) / J + s
        surplus = mu_ball - circ_measure(ref_at, ball_lo, ball_hi)
        chosen = np.nonzero(surplus > 0)[0]
        if chosen.size:
            ivals = sorted((ball_lo[i], ball_hi[i]) for i in chosen)
            merged = [list(ivals[0])]
            for lo_i, hi_i in ivals[1:]:
                if lo_i <= merged[-1][1]:
                    merged[-1][1] = max(merged[-1][1], hi_i)
                else:
                    merged.append([lo_i, hi_i])
            nu_union = min(sum(float(circ_measure(ref_at, a, b))
                               for a, b in merged), 1.0)
            worst = max(worst, float(mu_ball[chosen].sum()) - nu_union)
        worst_per_s.append(worst)
    worst_per_s = np.array(worst_per_s)
    passing = np.nonzero(worst_per_s <= s_grid)[0]
    estimate = float(s_grid[passing[0]]) if passing.size else float(s_grid[-1])
    return LPReport(estimate=estimate, ball_radius=radius, ball_count=J,
                    s_grid=np.asarray(s_grid), worst_surplus=worst_per_s)
