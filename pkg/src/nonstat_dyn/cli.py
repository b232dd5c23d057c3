"""Reproducible experiment runner: config parsing, seeding, artifacts, manifests.

Exit codes: 0 ok, 1 numeric failure, 2 config error.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .birkhoff import (band_pass_check, birkhoff_averages, covariance_decay,
                       lln_summability, lp_distance, observable, orbit_points,
                       quasi_birkhoff_band)
from .cones import (ConeParams, cone_image_check, contraction_and_diameter,
                    sample_cone_density, theta_holder, theta_plus)
from .densities import GridDensity, l1_distance, quasi_holder_seminorm
from .maps import family_by_name, instantiate, pm_family
from .network import NetworkSystem, gen_schedule, simulate_ensemble
from .seeding import substream
from .sequences import (ParameterSequence, adversarial_demo,
                        doubling_gap_schedule, evolve_density,
                        stability_experiment)
from .transfer import (NonConvergenceError, build_ulam, fit_decay_envelope,
                       fixed_density, lasota_yorke_fit, perturbation_probe)

ENV_OUT_ROOT = "NONSTAT_DYN_OUT"


class ConfigError(ValueError):
    pass


# --- artifact plumbing -----------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


class ArtifactWriter:
    def __init__(self, outdir: str, config: dict):
        self.outdir = outdir
        self.config = config
        blob = json.dumps({"config": config, "version": __version__},
                          sort_keys=True).encode()
        self.run_id = hashlib.sha256(blob).hexdigest()[:16]
        self.checksums: dict = {}
        self.timings: dict = {}
        os.makedirs(outdir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.outdir, name)

    def _register(self, name: str):
        with open(self.path(name), "rb") as fh:
            self.checksums[name] = hashlib.sha256(fh.read()).hexdigest()

    def write_csv(self, name: str, header, rows, meta: dict | None = None):
        lines = [f"# manifest {self.run_id}"]
        for k in sorted((meta or {})):
            lines.append(f"# {k} = {_fmt((meta or {})[k])}")
        lines.append(",".join(header))
        for row in rows:
            lines.append(",".join(_fmt(v) for v in row))
        with open(self.path(name), "w") as fh:
            fh.write("\n".join(lines) + "\n")
        self._register(name)

    def write_json(self, name: str, obj):
        payload = {"manifest": self.run_id, "data": obj}
        with open(self.path(name), "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)
            fh.write("\n")
        self._register(name)

    def finish(self) -> str:
        manifest = {
            "run_id": self.run_id,
            "version": __version__,
            "config": self.config,
            "artifacts": self.checksums,
            "timings_ms": self.timings,
        }
        path = self.path("run_manifest.json")
        with open(path, "w") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=1)
            fh.write("\n")
        return path


def _family_from_config(cfg: dict):
    name = cfg.get("family", "doubling")
    kwargs = {}
    if name in ("pm", "lsv"):
        kwargs["kappa"] = float(cfg.get("kappa", 0.5))
    if name == "breakpoint":
        kwargs["b0"] = float(cfg.get("b0", 0.4))
    return family_by_name(name, **kwargs)


def _phi0_from_config(cfg: dict, n_cells: int) -> GridDensity:
    kind = cfg.get("phi0", "uniform")
    if kind == "uniform":
        return GridDensity.uniform(n_cells)
    if kind == "half":
        return GridDensity.indicator(0.0, 0.5, n_cells, height=2.0)
    raise ConfigError(f"phi0: unknown initial density {kind!r}")


def _positive(cfg: dict, key: str, value: float) -> float:
    if value <= 0:
        raise ConfigError(f"{key}: must be positive, got {value}")
    return value


# --- experiment runners ------------------------------------------------------

def run_invariant(cfg: dict, writer: ArtifactWriter) -> int:
    family = _family_from_config(cfg)
    gamma = float(cfg.get("gamma", 0.0))
    cells = int(_positive(cfg, "cells", float(cfg.get("cells", 4096))))
    op = build_ulam(instantiate(family, gamma), cells,
                    quadrature=int(cfg.get("quadrature", 32)))
    phi = fixed_density(op, tol=float(cfg.get("tol", 1e-12)))
    applied = op.apply(phi)
    residual = l1_distance(applied, phi)
    writer.write_csv("invariant_density.csv", ["cell", "value"],
                     [(i, float(v)) for i, v in enumerate(phi.values)],
                     meta={"family": family.name, "gamma": gamma,
                           "residual": residual})
    writer.write_json("invariant_report.json",
                      {"residual": residual, "mass": phi.mass,
                       "family": family.name, "gamma": gamma, "cells": cells})
    return 0


def run_stability(cfg: dict, writer: ArtifactWriter) -> int:
    family = _family_from_config(cfg)
    gamma_hat = float(cfg.get("gamma_hat", 0.1))
    deltas = [float(d) for d in str(cfg.get("deltas", "0.02,0.01,0.005")).split(",")]
    for d in deltas:
        if d < 0:
            raise ConfigError(f"deltas: must be nonnegative, got {d}")
    cells = int(cfg.get("cells", 1024))
    n = int(cfg.get("n", 2000))
    n_seqs = int(cfg.get("sequences", 20))
    seed = int(cfg.get("seed", 0))
    phi0 = _phi0_from_config(cfg, cells)
    table = stability_experiment(family, gamma_hat, deltas, phi0, n, n_seqs,
                                 seed, checkpoint_every=int(cfg.get("checkpoint", 50)))
    rows = [(r.delta, r.worst_post_transient, r.stationary_distance,
             r.n_sequences) for r in table.rows]
    writer.write_csv("stability.csv",
                     ["delta", "worst_post_transient", "stationary_distance",
                      "sequences"], rows,
                     meta={"family": family.name, "gamma_hat": gamma_hat,
                           "n": n, "cells": cells})
    return 0


def run_evolve(cfg: dict, writer: ArtifactWriter) -> int:
    family = _family_from_config(cfg)
    gamma_hat = float(cfg.get("gamma_hat", 0.1))
    delta = float(cfg.get("delta", 0.01))
    cells = int(cfg.get("cells", 1024))
    n = int(cfg.get("n", 1000))
    seed = int(cfg.get("seed", 0))
    phi0 = _phi0_from_config(cfg, cells)
    ref = fixed_density(build_ulam(instantiate(family, gamma_hat), cells))
    seq = ParameterSequence.iid(gamma_hat, delta, seed)
    trace = evolve_density(family, seq, phi0, n,
                           checkpoint_every=int(cfg.get("checkpoint", 50)),
                           reference=ref, track_seminorm=True)
    rows = list(zip(trace.steps.tolist(), trace.masses.tolist(),
                    trace.distances.tolist(), trace.seminorms.tolist()))
    writer.write_csv("evolve_trace.csv",
                     ["step", "mass", "l1_to_reference", "seminorm"], rows,
                     meta={"family": family.name, "gamma_hat": gamma_hat,
                           "delta": delta, "n": n})
    return 0


def run_adversarial(cfg: dict, writer: ArtifactWriter) -> int:
    kappa = float(cfg.get("kappa", 0.5))
    eps = _positive(cfg, "eps", float(cfg.get("eps", 0.1)))
    n_max = int(cfg.get("n", 10000))
    first_gap = int(cfg.get("first_gap", 64))
    cells = int(cfg.get("cells", 1024))
    family = pm_family(kappa=kappa)
    schedule = doubling_gap_schedule(first_gap, n_max)
    run = adversarial_demo(family, eps, schedule, n_max=n_max, n_cells=cells)
    stride = max(n_max // 2000, 1)
    keep = np.arange(0, n_max, stride)
    rows = list(zip(run.steps[keep].tolist(), run.mass_low[keep].tolist(),
                    run.dist_plus[keep].tolist()))
    writer.write_csv("adversarial_curve.csv",
                     ["step", "mass_near_zero", "l1_to_plus_density"], rows,
                     meta={"kappa": kappa, "eps": eps, "w": run.w})
    writer.write_json("adversarial_report.json", {
        "block_ends": [[int(k), kind] for k, kind in run.block_ends],
        "reached_concentration": run.reached_concentration,
        "reached_return": run.reached_return,
        "schedule": list(schedule),
    })
    return 0


def run_birkhoff(cfg: dict, writer: ArtifactWriter) -> int:
    family = _family_from_config(cfg)
    gamma_hat = float(cfg.get("gamma_hat", 0.1))
    delta = float(cfg.get("delta", 0.01))
    cells = int(cfg.get("cells", 1024))
    n = int(cfg.get("n", 100000))
    points = int(cfg.get("points", 100))
    seed = int(cfg.get("seed", 0))
    eps_band = float(cfg.get("band_eps", 0.05))
    psi = observable(cfg.get("psi", "x"), cells)
    seq = ParameterSequence.iid(gamma_hat, delta, seed)
    result = birkhoff_averages(family, seq, points, psi, n, seed=seed)
    phi_hat = fixed_density(build_ulam(instantiate(family, gamma_hat), cells))
    band = quasi_birkhoff_band(psi, phi_hat, eps_band)
    check = band_pass_check(result, band)
    writer.write_csv("birkhoff_averages.csv",
                     ["point", "average", "tail_min", "tail_max", "inside"],
                     [(i, float(result.averages[0, i]),
                       float(result.tail_min[0, i]),
                       float(result.tail_max[0, i]), int(check.inside[i]))
                      for i in range(points)],
                     meta={"psi": psi.name, "band_lo": band.lo,
                           "band_hi": band.hi})
    writer.write_json("birkhoff_band.json", {
        "band": {"lo": band.lo, "hi": band.hi, "center": band.center},
        "pass_fraction": check.fraction,
        "wilson": list(check.wilson), "n": n, "points": points,
    })
    if cfg.get("covariance", "0") not in ("0", "false", "False"):
        window = (int(cfg.get("i_max", 4)), int(cfg.get("j_max", 14)))
        cov = covariance_decay(family, seq, psi, window,
                               ensemble=int(cfg.get("ensemble", 10000)),
                               seed=seed)
        lln = lln_summability(cov)
        writer.write_csv("covariance.csv", ["i", "j", "R", "se"],
                         [(i, j, float(cov.R[i, j]), float(cov.se[i, j]))
                          for i in range(window[1] + 1)
                          for j in range(window[1] + 1)])
        writer.write_json("lln_verdict.json", {
            "verdict": lln.verdict, "q_fit": cov.q_fit, "c_fit": cov.c_fit,
            "partial_sum": lln.partial_sum, "closed_form": lln.closed_form,
        })
    if cfg.get("lp", "0") not in ("0", "false", "False"):
        rng = substream(seed, "lp-orbit-start")
        orbit = orbit_points(family, seq, rng.uniform(0, 1, 1), n, seed=seed)
        report = lp_distance(orbit[:, 0], phi_hat,
                             ball_count=int(cfg.get("balls", 64)))
        writer.write_json("lp_estimate.json", {
            "estimate": report.estimate, "ball_radius": report.ball_radius,
            "ball_count": report.ball_count,
        })
    return 0


def run_cone(cfg: dict, writer: ArtifactWriter) -> int:
    family = _family_from_config(cfg)
    gamma = float(cfg.get("gamma", 0.0))
    cells = int(cfg.get("cells", 256))
    cone = ConeParams(a=float(cfg.get("a", 2.0)), nu=float(cfg.get("nu", 0.5)),
                      rho0=float(cfg.get("rho0", 0.25)),
                      lam=float(cfg.get("lam", 0.75)))
    seed = int(cfg.get("seed", 0))
    samples = int(cfg.get("samples", 100))
    op = build_ulam(instantiate(family, gamma), cells)
    image = cone_image_check(op, cone, samples=samples, seed=seed)
    contraction = contraction_and_diameter([op], cone, pairs=samples, seed=seed)
    rng = substream(seed, "cone-demo")
    phi1 = sample_cone_density(cells, cone, rng)
    phi2 = sample_cone_density(cells, cone, rng)
    writer.write_json("cone_report.json", {
        "cone": {"a": cone.a, "nu": cone.nu, "rho0": cone.rho0, "lam": cone.lam},
        "image_check": {"passed": image.passed, "worst_a_min": image.worst_a_min,
                        "target": image.target},
        "contraction": {"q_hat": contraction.q_hat,
                        "diameter_hat": contraction.diameter_hat,
                        "bound_ok": contraction.bound_ok},
        "example_pair": {"theta_plus": theta_plus(phi1, phi2).theta,
                         "theta_holder": theta_holder(phi1, phi2, cone).theta},
    })
    return 0


def run_network(cfg: dict, writer: ArtifactWriter) -> int:
    family = _family_from_config({"family": cfg.get("family", "doubling")})
    gamma = float(cfg.get("gamma", 0.0))
    n_nodes = int(cfg.get("nodes", 8))
    alpha_c = float(cfg.get("alpha_c", 0.01))
    steps = int(cfg.get("n", 10000))
    ensemble = int(cfg.get("ensemble", 10000))
    seed = int(cfg.get("seed", 0))
    kind = cfg.get("schedule", "bursty")
    schedule = gen_schedule(kind, n_nodes, steps, seed=seed,
                            p=float(cfg.get("p", 0.9)),
                            fail_rate=float(cfg.get("fail_rate", 0.05)),
                            period=int(cfg.get("period", 2)))
    h_name = cfg.get("coupling", "diffusive")
    system = NetworkSystem(node_map=instantiate(family, gamma),
                           n_nodes=n_nodes, alpha_c=alpha_c, h_name=h_name)
    summary = simulate_ensemble(system, schedule, ensemble, steps, seed=seed,
                                n_bins=int(cfg.get("bins", 64)))
    rows = []
    for c, t in enumerate(summary.checkpoints.tolist()):
        for node in range(n_nodes):
            for b in range(summary.n_bins):
                rows.append((t, node, b, int(summary.counts[c, node, b])))
    writer.write_csv("network_marginals.csv", ["step", "node", "bin", "count"],
                     rows, meta={"ensemble": ensemble, "bins": summary.n_bins})
    writer.write_json("network_summary.json", {
        "checkpoints": summary.checkpoints.tolist(),
        "max_distance": summary.max_distance.tolist(),
        "noise_floor": summary.noise_floor,
        "mean_failure_run": schedule.mean_failure_run_length(),
        "note": ("marginal-based evidence; the product-system density is "
                 "not simulated directly"),
    })
    return 0


def run_ly_fit(cfg: dict, writer: ArtifactWriter) -> int:
    family = _family_from_config(cfg)
    gamma = float(cfg.get("gamma", 0.0))
    cells = int(cfg.get("cells", 512))
    alpha = float(cfg.get("alpha", 0.5))
    n_test = int(cfg.get("n_test", 100))
    seed = int(cfg.get("seed", 0))
    rng = substream(seed, "ly-test-set")
    test_set = [random_step_density(cells, rng) for _ in range(n_test)]
    fit = lasota_yorke_fit(family, gamma, alpha, test_set,
                           n_powers=int(cfg.get("powers", 10)))
    writer.write_json("ly_fit.json", {
        "eta_hat": fit.eta_hat, "c_hat": fit.c_hat,
        "c_least_squares": fit.c_least_squares,
        "satisfied_fraction": fit.satisfied_fraction,
        "iterated_margin": fit.iterated_margin,
        "alpha": alpha, "n_test": n_test,
    })
    return 0


def run_perturb_probe(cfg: dict, writer: ArtifactWriter) -> int:
    family = _family_from_config(cfg)
    gamma_hat = float(cfg.get("gamma_hat", 0.0))
    deltas = [float(d) for d in str(cfg.get("deltas", "0.02,0.01")).split(",")]
    n_max = int(cfg.get("n", 30))
    cells = int(cfg.get("cells", 512))
    seeds = int(cfg.get("seeds", 10))
    phi0 = _phi0_from_config({**cfg, "phi0": cfg.get("phi0", "half")}, cells)
    rows = []
    fits = {}
    for delta in deltas:
        if delta < 0:
            raise ConfigError(f"deltas: must be nonnegative, got {delta}")
        curves = []
        for s in range(seeds):
            probe = perturbation_probe(family, gamma_hat, delta, n_max, phi0,
                                       seq_seed=s)
            curves.append(probe.curve)
        mean_curve = np.mean(curves, axis=0)
        spread = np.std(curves, axis=0)
        for n, (m, sd) in enumerate(zip(mean_curve, spread)):
            rows.append((delta, n, float(m), float(sd)))
        norm_alpha = quasi_holder_seminorm(
            phi0, min(family.holder_exponent, 1.0)).norm_alpha
        env = fit_decay_envelope(mean_curve, norm_alpha)
        fits[repr(delta)] = {"c_fit": env.c_fit, "s_fit": env.s_fit,
                             "c_dominating": env.c_dominating,
                             "rel_residual": env.rel_residual}
    writer.write_csv("perturbation_probe.csv",
                     ["delta", "n", "mean_deviation", "seed_spread"], rows,
                     meta={"family": family.name, "gamma_hat": gamma_hat})
    writer.write_json("perturbation_fit.json", fits)
    return 0


def random_step_density(n_cells: int, rng: np.random.Generator,
                        n_jumps: int = 8) -> GridDensity:
    """Random positive step density with a handful of jumps, mass one."""
    edges = np.sort(rng.integers(0, n_cells, n_jumps))
    levels = rng.uniform(0.2, 2.0, n_jumps + 1)
    vals = np.empty(n_cells)
    prev = 0
    for e, lv in zip(edges, levels[:-1]):
        vals[prev:e] = lv
        prev = e
    vals[prev:] = levels[-1]
    return GridDensity(vals / vals.mean())


EXPERIMENTS = {
    "invariant": run_invariant,
    "stability": run_stability,
    "evolve": run_evolve,
    "adversarial": run_adversarial,
    "birkhoff": run_birkhoff,
    "cone": run_cone,
    "network": run_network,
    "ly-fit": run_ly_fit,
    "perturb-probe": run_perturb_probe,
}

_COMMON_FLAGS = {
    "family": str, "kappa": float, "b0": float, "gamma": float,
    "gamma_hat": float, "delta": float, "deltas": str, "cells": int,
    "n": int, "seed": int, "sequences": int, "points": int, "psi": str,
    "phi0": str, "eps": float, "first_gap": int, "nodes": int,
    "alpha_c": float, "ensemble": int, "schedule": str, "p": float,
    "fail_rate": float, "alpha": float, "n_test": int, "seeds": int,
    "a": float, "nu": float, "rho0": float, "lam": float, "samples": int,
    "quadrature": int, "checkpoint": int, "band_eps": float, "powers": int,
    "covariance": str, "lp": str, "balls": int, "bins": int,
    "coupling": str, "period": int, "i_max": int, "j_max": int, "tol": float,
}


def load_config(path: str | None, section: str) -> dict:
    """Key-value config: a [common] section plus one section per experiment."""
    if path is None:
        return {}
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file {path!r} not found")
    cfg = {}
    for sect in ("common", section):
        if parser.has_section(sect):
            cfg.update(dict(parser.items(sect)))
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nonstat-dyn",
        description="Transfer-operator experiments for nonautonomously "
                    "perturbed expanding maps")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for kind in EXPERIMENTS:
        p = sub.add_parser(kind)
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--out", default=None, help="output directory")
        for flag, typ in _COMMON_FLAGS.items():
            p.add_argument(f"--{flag.replace('_', '-')}", dest=flag,
                           type=typ, default=None)
    return parser


def run(experiment: str, cfg: dict, outdir: str) -> int:
    writer = ArtifactWriter(outdir, {"experiment": experiment, **cfg})
    start = time.perf_counter()
    status = EXPERIMENTS[experiment](cfg, writer)
    writer.timings["total"] = round(1000.0 * (time.perf_counter() - start), 3)
    writer.finish()
    return status


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.experiment)
        for flag in _COMMON_FLAGS:
            val = getattr(args, flag, None)
            if val is not None:
                cfg[flag] = val
        out_root = os.environ.get(ENV_OUT_ROOT, ".")
        outdir = args.out or os.path.join(out_root, f"out-{args.experiment}")
        return run(args.experiment, cfg, outdir)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NonConvergenceError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
