"""Command-line front end: generate, validate, ensemble, sweep, theory."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io, plot
from .config import ConfigError, ExperimentConfig
from .diffusion import DivergenceError, derive_seed
from .experiment import compare_to_theory, run_ensemble, run_pilot, run_seeds, sweep_ns_rho
from .network import (
    ConnectivityError,
    SparsityProfile,
    build_combiner,
    generate_geometric_topology,
    network_from_dict,
    network_to_dict,
    select_sparsity_set,
    validate_assumption_I,
)
from .theory import (
    MomentEstimates,
    StabilityError,
    TheoryContext,
    TheoryReport,
    check_stability,
    msd_floor_structured,
    phi_curve,
    rho_opt_homogeneous,
)

log = logging.getLogger("sparse_diffusion")

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4


def _meta(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.digest(), "seed": cfg.seed}


def _comment(cfg: ExperimentConfig) -> str:
    return f"config_hash={cfg.digest()} seed={cfg.seed}"


def _network(cfg: ExperimentConfig):
    if cfg.network_file:
        doc = json.loads(Path(cfg.network_file).read_text())
        topology, cmat = network_from_dict(doc)
        if topology.n != cfg.n_nodes:
            raise ConfigError(f"network file has {topology.n} nodes but n_nodes = {cfg.n_nodes}")
        return topology, cmat
    topology = generate_geometric_topology(cfg.n_nodes, cfg.radius, cfg.topology_seed)
    return topology, build_combiner(topology, cfg.rule)


def _placements(cfg: ExperimentConfig, cmat) -> dict[int, SparsityProfile]:
    return {ns: select_sparsity_set(cmat, ns, 0.0, derive_seed(cfg.placement_seed, ns), cfg.search_budget)
            for ns in cfg.resolved_ns_list()}


def _validation_doc(cfg, cmat, placements) -> dict:
    per_ns = []
    for ns, prof in placements.items():
        rep = validate_assumption_I(cmat, prof, cfg.validation_tol)
        per_ns.append({"ns": ns, "aware_set": list(prof.aware_set), **rep.to_dict()})
    return {
        **_meta(cfg),
        "rule": cmat.rule,
        "tol": cfg.validation_tol,
        "row_sum_residual": cmat.row_sum_deviation(),
        "column_sum_residual": cmat.column_sum_deviation(),
        "ia_passed": cmat.row_sum_deviation() <= cfg.validation_tol,
        "placements": per_ns,
    }


def cmd_generate(cfg: ExperimentConfig, out: Path) -> int:
    topology, cmat = _network(cfg)
    io.write_json(out / "network.json", {**_meta(cfg), **network_to_dict(topology, cmat)})
    doc = _validation_doc(cfg, cmat, _placements(cfg, cmat))
    io.write_json(out / "assumption_I.json", doc)
    print(f"network: N={topology.n}, edges={len(topology.edges)}, rule={cmat.rule}, "
          f"I.A {'pass' if doc['ia_passed'] else 'FAIL'} (row residual {doc['row_sum_residual']:.3g})")
    return EXIT_OK


def cmd_validate(cfg: ExperimentConfig, out: Path) -> int:
    _, cmat = _network(cfg)
    doc = _validation_doc(cfg, cmat, _placements(cfg, cmat))
    io.write_json(out / "validation.json", doc)
    print(f"I.A row residual {doc['row_sum_residual']:.3g} -> {'pass' if doc['ia_passed'] else 'FAIL'}")
    for row in doc["placements"]:
        print(f"  N_s={row['ns']:3d}  I.B residual {row['ib_residual']:.4f}  "
              f"{'pass' if row['passed'] else 'fail'} at tol {cfg.validation_tol:g}")
    return EXIT_OK


def cmd_ensemble(cfg: ExperimentConfig, out: Path) -> int:
    topology, cmat = _network(cfg)
    model, sim = cfg.system_model(), cfg.simulation()
    ns = cfg.n_nodes if cfg.ensemble_ns is None else cfg.ensemble_ns
    profile = select_sparsity_set(cmat, ns, cfg.ensemble_rho, derive_seed(cfg.placement_seed, ns),
                                  cfg.search_budget)
    res = run_ensemble(model, topology, cmat, profile, sim, cfg.runs, cfg.workers)
    io.write_csv(out / "ensemble_trace.csv", ["iteration", "msd"],
                 ((i, float(v)) for i, v in enumerate(res.mean_trace)), _comment(cfg))
    io.write_json(out / "ensemble.json", {
        **_meta(cfg),
        "config": cfg.provenance(),
        "ns": ns,
        "rho": cfg.ensemble_rho,
        "aware_set": list(profile.aware_set),
        "ib_residual": profile.ib_residual,
        "run_seeds": run_seeds(sim.seed, cfg.runs),
        **res.summary(),
    })
    it = np.arange(res.mean_trace.size)
    stride = max(1, it.size // 600)
    fig = plot.Figure("Network MSD learning curve", "iteration", "MSD (dB)", comment=_comment(cfg))
    fig.series.append(plot.Series(f"N_s={ns}, rho={cfg.ensemble_rho:g}", it[::stride].tolist(),
                                  (10 * np.log10(res.mean_trace[::stride])).tolist(), points=False))
    (out / "learning_curve.svg").write_text(plot.render(fig))
    print(f"steady MSD {res.steady_msd:.6g} ({res.steady_msd_db:.3f} dB) +/- {res.confidence_halfwidth:.3g}, "
          f"{res.run_count} runs")
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, out: Path) -> int:
    topology, cmat = _network(cfg)
    model, sim = cfg.system_model(), cfg.simulation()
    sweep = sweep_ns_rho(model, topology, cmat, cfg.resolved_ns_list(), cfg.rho_list, sim, cfg.runs,
                         cfg.workers, cfg.placement_seed, cfg.search_budget)
    write_sweep(cfg, out, sweep, topology, cmat, model)
    if cfg.compare_theory:
        floor = msd_floor_structured(TheoryContext(cmat, cfg.taps, cfg.mu, cfg.sigma_u_sq, cfg.sigma_v_sq))
        m, _, _ = _moments(cfg, topology, cmat, model, sim)
        reports = {ns: TheoryReport.heterogeneous(floor, m, cfg.mu, cfg.sigma_u_sq, cmat.n, ns)
                   for ns in sweep.ns_list if ns > 0}
        table = compare_to_theory(sweep, reports, cfg.theory_tolerance_db)
        cols = ["ns", "rho", "predicted_msd", "predicted_db", "simulated_db", "abs_error_db", "passed"]
        io.write_csv(out / "theory_comparison.csv", cols, ([r[k] for k in cols] for r in table), _comment(cfg))
        passed = sum(r["passed"] for r in table)
        print(f"theory comparison: {passed}/{len(table)} cells within {cfg.theory_tolerance_db} dB")
    for rho, (ns, db) in sweep.minimizers().items():
        print(f"rho={rho:<8g} N_s*={ns:3d}  min steady MSD {db:.3f} dB")
    return EXIT_OK


def write_sweep(cfg, out: Path, sweep, topology, cmat, model) -> None:
    rows = [(c.n_aware, c.rho, c.result.steady_msd, c.result.steady_msd_db, c.result.confidence_halfwidth,
             c.result.run_count) for c in sweep.cells]
    io.write_csv(out / "sweep.csv", ["ns", "rho", "steady_msd", "steady_msd_db", "ci_halfwidth", "runs"],
                 rows, _comment(cfg))
    sim = cfg.simulation()
    io.write_json(out / "sweep.json", {
        **_meta(cfg),
        "config": cfg.provenance(),
        "simulation_seed": sim.seed,
        "run_seeds": run_seeds(sim.seed, cfg.runs),
        "w0_support": np.flatnonzero(model.w0).tolist(),
        "network": network_to_dict(topology, cmat),
        "placements": [{"ns": ns, "aware_set": list(p.aware_set), "ib_residual": p.ib_residual}
                       for ns, p in sweep.profiles.items()],
        "minimizers": [{"rho": rho, "ns_star": ns, "min_steady_msd_db": db}
                       for rho, (ns, db) in sweep.minimizers().items()],
        "cells": [{"ns": c.n_aware, "rho": c.rho, **c.result.summary()} for c in sweep.cells],
    })
    if cfg.write_traces:
        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)
        for c in sweep.cells:
            io.write_csv(tdir / f"trace_ns{c.n_aware}_rho{c.rho:g}.csv", ["iteration", "msd"],
                         ((i, float(v)) for i, v in enumerate(c.result.mean_trace)), _comment(cfg))
    fig = plot.Figure("Network MSD versus number of sparsity-aware nodes", "N_s", "steady-state MSD (dB)",
                      comment=_comment(cfg))
    for rho in sweep.rho_list:
        ns, db = sweep.minimizer(rho)
        fig.series.append(plot.Series(f"rho={rho:g}", list(sweep.ns_list), sweep.curve_db(rho).tolist(),
                                      marker=(ns, db)))
    (out / "sweep.svg").write_text(plot.render(fig))


def _moments(cfg, topology, cmat, model, sim):
    """Supplied moments, else a homogeneous pilot ensemble at a small coefficient."""
    if cfg.moments is not None:
        m = MomentEstimates(cfg.moments["tr_theta"], cfg.moments["tr_psi"],
                            int(cfg.moments.get("sample_count", 0)), 0.0, 0.0)
        return m, None, None
    if cfg.pilot_rho is not None:
        pilot_rho = cfg.pilot_rho
    else:
        positive = [r for r in cfg.rho_list if r > 0]
        pilot_rho = min(positive) if positive else 0.0
    profile = SparsityProfile.for_set(cmat, range(cmat.n), pilot_rho)
    pilot = run_pilot(model, topology, cmat, profile, sim, cfg.pilot_runs, cfg.pilot_stride, cfg.workers)
    return pilot.moments, pilot, pilot_rho


def cmd_theory(cfg: ExperimentConfig, out: Path) -> int:
    check_stability(cfg.mu, cfg.sigma_u_sq)
    topology, cmat = _network(cfg)
    model, sim = cfg.system_model(), cfg.simulation()
    ctx = TheoryContext(cmat, cfg.taps, cfg.mu, cfg.sigma_u_sq, cfg.sigma_v_sq)
    floor = msd_floor_structured(ctx)
    n = cmat.n

    m, pilot, pilot_rho = _moments(cfg, topology, cmat, model, sim)
    homogeneous = None
    if pilot is not None and pilot.beta > 0:
        hom_rho, hom_phi = rho_opt_homogeneous(pilot.alpha, pilot.beta, n)
        homogeneous = {"alpha": pilot.alpha, "beta": pilot.beta, "rho_opt": hom_rho, "phi_min": hom_phi}

    reports = []
    for ns in cfg.resolved_ns_list():
        if ns == 0:
            continue
        rep = TheoryReport.heterogeneous(floor, m, cfg.mu, cfg.sigma_u_sq, n, ns)
        reports.append(rep)
        if cfg.theory_rho_grid is not None:
            grid = np.asarray(cfg.theory_rho_grid, dtype=float)
        else:
            top = 2.5 * rep.rho_opt if rep.rho_opt > 0 else max(cfg.rho_list + [1.0])
            grid = np.linspace(0.0, top, 101)
        phi = phi_curve(m, cfg.mu, cfg.sigma_u_sq, n, ns, grid)
        io.write_csv(out / f"phi_curve_ns{ns}.csv", ["rho", "phi", "predicted_total_msd"],
                     ((float(r), float(p), float(floor + p)) for r, p in zip(grid, phi)), _comment(cfg))

    io.write_json(out / "theory.json", {
        **_meta(cfg),
        "config": cfg.provenance(),
        "msd_floor": floor,
        "msd_floor_db": 10 * np.log10(floor) if floor > 0 else None,
        "moments": m.to_dict(),
        "pilot": None if pilot is None else {"rho": pilot_rho, "runs": cfg.pilot_runs},
        "homogeneous": homogeneous,
        "reports": [r.to_dict() for r in reports],
    })
    print(f"floor {floor:.6g}; Tr[theta]={m.tr_theta:.4g} Tr[psi]={m.tr_psi:.4g}")
    for r in reports:
        print(f"  N_s={r.n_aware:3d}  rho_opt={r.rho_opt:.6g}  phi_min={r.phi_min:.6g}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "validate": cmd_validate,
    "ensemble": cmd_ensemble,
    "sweep": cmd_sweep,
    "theory": cmd_theory,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparse-diffusion",
                                     description="Heterogeneous zero-attracting diffusion LMS experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment configuration")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--workers", type=int, help="parallel runs")
        p.add_argument("--full-scale", action="store_true", help="1000 runs over N_s = 0..N")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config)
        overrides = {k: v for k, v in (("out", args.out), ("seed", args.seed), ("workers", args.workers))
                     if v is not None}
        if args.full_scale:
            overrides["full_scale"] = True
        cfg = cfg.updated(**overrides).effective()
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except (ConfigError, StabilityError, ConnectivityError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except DivergenceError as exc:
        log.error("%s", exc)
        return EXIT_DIVERGED
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
