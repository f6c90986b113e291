"""Command-line entry point.

Exit codes: 0 success, 1 an acceptance check failed, 2 configuration error.
The default output directory comes from ``SDCE_OUTPUT_DIR`` when set.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

import numpy as np

from sdce import __version__
from sdce.estimation import Dataset, reduced_form_fit, scaling_fit
from sdce.harness import replicate as rp
from sdce.harness.config import ConfigError, load_config
from sdce.harness.emit import EmitError, aligned_table, emit, read_csv, record_rows
from sdce.harness.sweep import run_sweep
from sdce.pmir import Regime, pmir_run
from sdce.welfare import PolicyConfigError, PolicyKind

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
    common.add_argument("--out", help="output directory (default: $SDCE_OUTPUT_DIR or the config value)")
    common.add_argument("--format", choices=("csv", "jsonl", "text"), help="result file format")
    common.add_argument("--workers", type=int, default=1, help="parallel worker processes for sweeps")
    common.add_argument("--scale", choices=("desk", "baseline"), default="desk",
                        help="desk: N=8, M=2 unless the config sets them; baseline: N=1024, M=16")

    p = argparse.ArgumentParser(prog="sdce", description="Contamination-equilibrium data market simulator.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("simulate", parents=[common], help="one learning run")
    s.add_argument("--regime", choices=[r.value for r in Regime], default="pmir")
    s.add_argument("--rho", type=float, help="force the contamination ratio")
    sub.add_parser("sweep", parents=[common], help="cross product of the configured sweep axes")
    r = sub.add_parser("replicate", parents=[common], help="reproduce a results table and check it")
    r.add_argument("table", choices=("scaling", "regimes", "policies", "reduced_form"))
    r.add_argument("--noiseless", action="store_true", help="reduced_form: generator without noise")
    f = sub.add_parser("fit", parents=[common], help="collapse-rate regression on a result CSV")
    f.add_argument("csv")
    k = sub.add_parser("policy", parents=[common], help="compare one intervention with none")
    k.add_argument("kind", choices=[x.value for x in PolicyKind if x is not PolicyKind.NONE])
    sub.add_parser("calibrate", parents=[common], help="fit elasticity slopes to the target decay rate")
    return p


def _out_dir(args, cfg) -> str:
    return args.out or os.environ.get("SDCE_OUTPUT_DIR") or cfg.output_dir


def _seeds(args, cfg):
    return [args.seed] if args.seed is not None else list(cfg.sweep.seeds)


def cmd_simulate(args, cfg) -> int:
    seed = args.seed if args.seed is not None else cfg.pmir.seed
    pc = dataclasses.replace(cfg.pmir, seed=seed, forced_rho=args.rho if args.rho is not None else cfg.pmir.forced_rho)
    rec = pmir_run(pc, cfg.schedule, cfg.policy, Regime(args.regime))
    rows = record_rows(rec, f"{args.regime}-{cfg.policy.kind.value}-s{seed}")
    path = emit(rows, _out_dir(args, cfg), f"simulate-s{seed}", args.format or cfg.output_format)
    body = [[r.generation, r.rho, r.quality_rel, r.w2_target, r.welfare.total, r.residual] for r in rec.rows]
    print(aligned_table(["t", "rho", "Q_rel", "W2", "welfare", "residual"], body), end="")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_sweep(args, cfg) -> int:
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, sweep=dataclasses.replace(cfg.sweep, seeds=(args.seed,)))
    res = run_sweep(cfg, _out_dir(args, cfg), args.workers, args.format,
                    progress=lambda c, e: print(f"{c.run_id} {'ok' if e is None else 'FAILED ' + e}", file=sys.stderr))
    print(f"{len(res.rows)} rows, {res.skipped} cells resumed, {len(res.failed)} failed -> {res.output}")
    return EXIT_FAIL if res.failed else EXIT_OK


def _report(rep: rp.Report, args, cfg, stem: str) -> int:
    text = rep.text()
    print(text, end="")
    out = _out_dir(args, cfg)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, f"{stem}.txt"), "w") as fh:
        fh.write(text)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_replicate(args, cfg) -> int:
    seeds = [args.seed] if args.seed is not None else None
    if args.table == "scaling":
        rep = rp.replicate_scaling(cfg, args.scale, seeds)
    elif args.table == "regimes":
        rep = rp.replicate_regimes(cfg, args.scale, seeds)
    elif args.table == "policies":
        rep = rp.replicate_policies(cfg, args.scale, seeds)
    else:
        rep = rp.replicate_reduced_form(sigma_u=0.0 if args.noiseless else 0.05,
                                        n_seeds=1 if args.noiseless else 200)
        if args.noiseless:
            b = rep.data["slopes"][0]
            rep.checks = [rp.Check("noiseless slope", abs(b - rp.TARGET_SLOPE) <= 1e-10, f"b = {b:.12f}")]
    return _report(rep, args, cfg, f"replicate-{args.table}")


def cmd_fit(args, cfg) -> int:
    try:
        rows = read_csv(args.csv)
    except ValueError:
        rows = None
    if rows is not None:
        # result files: decay of relative quality in forced-contamination runs
        pts = [(r["generation"], r["rho"], r["quality_rel"]) for r in rows if r["generation"] >= 1]
        if not pts:
            raise ConfigError(f"{args.csv}: no generation >= 1 rows to fit")
        t, rho, q = map(np.array, zip(*pts))
        fit = scaling_fit(t, rho, q)
    else:
        # generic panels with columns t, rho, outcome (e.g. log perplexity)
        with open(args.csv, newline="") as fh:
            raw = list(csv.DictReader(fh))
        try:
            data = Dataset([float(r["t"]) for r in raw], [float(r["rho"]) for r in raw],
                           [float(r["outcome"]) for r in raw])
        except KeyError as exc:
            raise ConfigError(f"{args.csv}: expected result columns or t, rho, outcome (missing {exc})") from None
        fit = reduced_form_fit(data)
    print(json.dumps(fit.as_dict(), indent=1))
    return EXIT_OK


def cmd_policy(args, cfg) -> int:
    rep = rp.replicate_policies(cfg, args.scale, _seeds(args, cfg) if args.seed is not None else None,
                                kinds=(PolicyKind.NONE, PolicyKind(args.kind)))
    return _report(rep, args, cfg, f"policy-{args.kind}")


def cmd_calibrate(args, cfg) -> int:
    seeds = [args.seed] if args.seed is not None else None
    sched, hist = rp.calibrate(cfg, args.scale, seeds)
    for k, b in hist:
        print(f"slope scale {k:.6f} -> b = {b:.5f}")
    print(f"human_slope = {sched.human_slope:.6g}\nsynth_slope = {sched.synth_slope:.6g}")
    ok = abs(hist[-1][1] - rp.TARGET_SLOPE) <= 1e-3
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "replicate": cmd_replicate, "fit": cmd_fit,
            "policy": cmd_policy, "calibrate": cmd_calibrate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).at_scale(args.scale)
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        return COMMANDS[args.verb](args, cfg)
    except (ConfigError, PolicyConfigError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EmitError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
