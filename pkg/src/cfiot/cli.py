"""Command-line entry point: ``cfiot {validate,simulate,baseline,sweep}``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import simctl
from .errors import ConfigError, ContractError, SolverError
from .netmodel import SystemConfig


def _config(args) -> SystemConfig:
    cfg = SystemConfig.from_file(args.config) if args.config else SystemConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "slots", None) is not None:
        changes["T_max"] = args.slots
    if getattr(args, "finite_tau", False):
        changes["finite_tau_accounting"] = True
    w = getattr(args, "w", None)
    if isinstance(w, float):
        changes["W"] = w
    return cfg.replace(**changes) if changes else cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run(records, summary, out: Path):
    simctl.write_slots_csv(records, out / "slots.csv")
    simctl.write_json(summary.to_dict(), out / "summary.json")


def cmd_validate(args):
    cfg = _config(args)
    if args.trials < 100:
        raise ConfigError("--trials must be at least 100")
    tables = simctl.validate_asymptotics(cfg, args.trials)
    simctl.write_validation(tables, _out(args))


def cmd_simulate(args):
    cfg = _config(args)
    out = _out(args)
    trace = None
    fh = None
    if args.trace:
        fh = open(out / "trace.jsonl", "w")

        def trace(rec):
            fh.write(json.dumps(rec) + "\n")
    try:
        records, summary = simctl.run_lyapunov(cfg, trace=trace)
    finally:
        if fh is not None:
            fh.close()
    _write_run(records, summary, out)
    print(f"min time-average rate {summary.min_rate[-1]:.6g} bits/s/Hz "
          f"({summary.harvest_slots} harvest / {summary.transmit_slots} transmit slots)")


def cmd_baseline(args):
    cfg = _config(args)
    records, summary = simctl.run_greedy(cfg)
    _write_run(records, summary, _out(args))
    print(f"min time-average rate {summary.min_rate[-1]:.6g} bits/s/Hz")


def cmd_sweep(args):
    base = _config(args)
    out = _out(args)
    seeds = args.seeds if args.seeds else [base.seed]
    ws = args.w if args.w else [base.W]
    rows = []
    for seed in seeds:
        for w in ws:
            cfg = base.replace(seed=seed, W=w)
            runs = [("lyapunov", simctl.run_lyapunov)]
            if not args.no_baseline:
                runs.append(("greedy", simctl.run_greedy))
            for name, fn in runs:
                records, summary = fn(cfg)
                d = out / f"{name}_seed{seed}_W{simctl.fmt(float(w))}"
                d.mkdir(exist_ok=True)
                _write_run(records, summary, d)
                rows.append({"scheme": name, "seed": seed, "W": float(w),
                             "min_rate": summary.min_rate[-1],
                             "sigma_hat": summary.sigma_hat[-1],
                             "X_bar": summary.X_bar[-1], "Y_bar": summary.Y_bar[-1]})
    simctl.write_table(rows, out / "sweep.csv")


def build_parser():
    p = argparse.ArgumentParser(prog="cfiot", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default):
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--seed", type=int, help="root PRNG seed")
        sp.add_argument("--out", default=out_default, help="output directory")

    v = sub.add_parser("validate", help="closed forms vs Monte Carlo tables")
    common(v, "validate_out")
    v.add_argument("--trials", type=int, default=500)
    v.set_defaults(func=cmd_validate)

    for name, func, help_ in (("simulate", cmd_simulate, "drift-plus-penalty scheduler run"),
                              ("baseline", cmd_baseline, "greedy benchmark run")):
        s = sub.add_parser(name, help=help_)
        common(s, f"{name}_out")
        s.add_argument("--slots", type=int, help="number of slots (T_max)")
        s.add_argument("--w", type=float, help="drift-penalty weight W")
        s.add_argument("--finite-tau", action="store_true",
                       help="account energy and rates with one pilot draw per slot")
        if name == "simulate":
            s.add_argument("--trace", action="store_true",
                           help="write per-slot solver records to trace.jsonl")
        s.set_defaults(func=func)

    w = sub.add_parser("sweep", help="scheduler (and baseline) over seeds and W values")
    common(w, "sweep_out")
    w.add_argument("--seeds", type=int, nargs="+")
    w.add_argument("--w", type=float, nargs="+")
    w.add_argument("--slots", type=int)
    w.add_argument("--finite-tau", action="store_true")
    w.add_argument("--no-baseline", action="store_true")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ConfigError, ContractError, SolverError, ValueError, OSError) as exc:
        print(f"cfiot {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
