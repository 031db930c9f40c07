"""Command-line front end: ``mgsta {synth,search,analyze,simulate,trailer}``.

Exit codes: 0 success, 2 infeasible design or failed certificate check,
1 any other error. Results go to ``--out``; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import __version__, analysis, config, synthesis, trailer
from .errors import AllInfeasible, Infeasible, MgstaError
from .sim import check_cost_bound, detect_sliding, export_csv, simulate

log = logging.getLogger("mgsta")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2


def _header() -> str:
    return f"mgsta {__version__}"


def _load(args) -> dict:
    return config.apply_overrides(config.load_config(args.config), args.set)


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _print_result(res: synthesis.SynthesisResult) -> None:
    with np.printoptions(precision=4, suppress=True):
        print(f"theta = {res.theta:.4f}  (alpha = {res.alpha:g}, rho = {res.rho:g}, status {res.status})")
        print(f"delta = {res.delta:.4f}  per vertex {np.array2string(res.delta_per_vertex)}")
        for name in ("K0", "K1", "K2"):
            print(f"{name} =\n{getattr(res, name)}")


def cmd_synth(args) -> int:
    cfg = _load(args)
    plant = config.build_plant(cfg)
    design = config.build_design(cfg, plant)
    res = synthesis.solve_inner(plant, design, config.build_solver(cfg))
    out = _outdir(args)
    synthesis.save_result(res, os.path.join(out, "result.json"))
    _print_result(res)
    log.info("solved in %.2f s; worst LMI margin %.3g", res.solve_seconds, res.worst_margin)
    return EXIT_OK


def cmd_search(args) -> int:
    cfg = _load(args)
    plant = config.build_plant(cfg)
    design = config.build_design(cfg, plant)
    best, rows = synthesis.outer_search(
        plant, design, config.build_grid(cfg), workers=args.threads
    )
    out = _outdir(args)
    synthesis.export_landscape(rows, os.path.join(out, "landscape.csv"))
    synthesis.save_result(best, os.path.join(out, "result.json"))
    print(f"{len(rows)} points evaluated")
    _print_result(best)
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _load(args)
    plant = config.build_plant(cfg)
    design = config.build_design(cfg, plant)
    res = synthesis.load_result(args.result)
    cert = analysis.Certificates.from_result(res)
    report = analysis.verify_all(
        plant, cert, res.K0, res.K, design.H, design.J, samples=args.samples, seed=args.seed, min_scaled=args.min_scaled
    )
    try:
        report.delta, report.delta_per_vertex, _ = synthesis.compute_delta(plant, res.K2, res.gamma)
    except MgstaError as exc:
        log.warning("%s", exc)
    out = _outdir(args)
    report.export_csv(os.path.join(out, "report.csv"))
    for name in ("lemma1", "lemma2", "coupling", "performance", "performance_coupling"):
        w = report.worst(name)
        flag = "ok" if all(r.passed for r in report.rows if r.inequality == name) else "FAIL"
        print(f"{name:22s} worst margin {w.margin: .3e}  scaled {w.scaled_margin: .3e}  at {w.point}  {flag}")
    if report.delta is not None:
        print(f"delta = {report.delta:.4f}")
    if not report.passed:
        print("certificate check failed", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def _gains_and_certificates(args, cfg):
    if args.result:
        res = synthesis.load_result(args.result)
        return res.gains(), analysis.Certificates.from_result(res), res
    gains = config.build_gains(cfg)
    if gains is None:
        raise MgstaError("no gains: pass --result or give a 'gains' section")
    return gains, None, None


def cmd_simulate(args) -> int:
    cfg = _load(args)
    if config.is_trailer(cfg):
        return _run_trailer(args, cfg)
    plant = config.build_plant(cfg)
    design = config.build_design(cfg, plant)
    gains, cert, res = _gains_and_certificates(args, cfg)
    sim_cfg = config.build_sim(cfg)
    dist = config.build_disturbance(cfg, plant.n)
    indices = args.vertex if args.vertex is not None else range(plant.N)
    out = _outdir(args)
    status = EXIT_OK
    for i in indices:
        rec = simulate(
            plant[i], gains, dist, sim_cfg, zeta0=design.zeta0, sigma0=design.sigma0, eta0=design.eta0,
            H=design.H, J=design.J, certificates=cert, on_blowup="truncate",
        )
        export_csv(rec, os.path.join(out, trailer.vertex_filename(i)), _header())
        t_s = detect_sliding(rec)
        line = f"vertex {i}: t_s = {'none' if t_s is None else f'{t_s:.4f}'}  final |sigma| = {np.linalg.norm(rec.sigma[-1]):.3e}"
        if res is not None:
            line += f"  cost = {check_cost_bound(rec, res.theta).cost:.4g}"
        print(line)
        if rec.failure:
            print(f"vertex {i}: {rec.failure}", file=sys.stderr)
            status = EXIT_ERROR
    return status


def _run_trailer(args, cfg) -> int:
    scenario = config.build_scenario(cfg)
    if args.vertex is not None:
        scenario = trailer.with_overrides(scenario, vertices=list(args.vertex))
    cert = None
    res = None
    if getattr(args, "synthesize", False):
        plant = config.build_plant(cfg)
        design = config.build_design(cfg, plant)
        if getattr(args, "search", False):
            res, rows = synthesis.outer_search(plant, design, config.build_grid(cfg), workers=args.threads)
            synthesis.export_landscape(rows, os.path.join(_outdir(args), "landscape.csv"))
        else:
            res = synthesis.solve_inner(plant, design, config.build_solver(cfg))
        synthesis.save_result(res, os.path.join(_outdir(args), "result.json"))
        _print_result(res)
        gains, cert = res.gains(), analysis.Certificates.from_result(res)
    else:
        gains, cert, res = _gains_and_certificates(args, cfg)
    runs, rows = trailer.run_benchmark(scenario, gains, cert, threads=args.threads)
    trailer.write_outputs(runs, _outdir(args), _header(), gnuplot=not args.no_plot)
    w = csv.DictWriter(sys.stdout, fieldnames=trailer.SUMMARY_FIELDS)
    w.writeheader()
    w.writerows(rows)
    failed = [r for r in runs if r.error]
    for r in failed:
        print(f"vertex {r.index}: {r.error}", file=sys.stderr)
    return EXIT_ERROR if failed else EXIT_OK


def cmd_trailer(args) -> int:
    cfg = _load(args)
    if not config.is_trailer(cfg):
        raise MgstaError("the trailer command needs a configuration with plant.trailer")
    return _run_trailer(args, cfg)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration (default: built-in trailer benchmark)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration entry, dotted keys, JSON values")
    common.add_argument("--out", default="mgsta_out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker processes/threads")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("-q", "--quiet", action="store_true")

    p = argparse.ArgumentParser(prog="mgsta", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=_header())
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="solve the LMIs at the configured (alpha, rho)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("search", parents=[common], help="grid plus refinement over (alpha, rho)")
    s.set_defaults(func=cmd_search)

    s = sub.add_parser("analyze", parents=[common], help="check a stored design at vertices and samples")
    s.add_argument("--result", required=True, help="result.json written by synth or search")
    s.add_argument("--samples", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--min-scaled", type=float, default=0.0, help="required scaled margin")
    s.set_defaults(func=cmd_analyze)

    for name, func, text in (
        ("simulate", cmd_simulate, "closed-loop simulation per vertex"),
        ("trailer", cmd_trailer, "trailer benchmark at every vertex"),
    ):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--result", help="use gains and certificates from this result.json")
        s.add_argument("--vertex", type=int, action="append", help="vertex index (repeatable)")
        s.add_argument("--synthesize", action="store_true", help="solve for gains before simulating")
        s.add_argument("--search", action="store_true", help="with --synthesize, run the outer search")
        s.add_argument("--no-plot", action="store_true", help="skip the gnuplot script")
        s.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.ERROR if args.quiet else (logging.INFO if args.verbose == 1 else logging.DEBUG if args.verbose > 1 else logging.WARNING)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (Infeasible, AllInfeasible) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (MgstaError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        if args.verbose > 1:
            raise
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
