"""Command-line pipeline: generate-data, train, validate, simulate, compare.

Every command reads one config (INI file over built-in defaults),
validates it before touching the filesystem, and exchanges data with
the other commands through CSV and plain-text files in the output
directory. All randomness flows from the four config seeds, so any
command run twice writes byte-identical files.

Exit codes: 0 success, 2 config error, 3 I/O or input-file error,
4 numerical or optimization failure, 5 plant fault.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .config import Config, ConfigError, load_config
from .gp import IllConditionedKernelError, load_gp, predict, save_gp
from .harness import (compare, compute_metrics, format_comparison,
                      ramp_scenario, read_trace_csv, run, step_scenario,
                      write_trace_csv)
from .plant import Plant, PlantFault
from .plots import plot_inputs, plot_pressure, plot_voltage
from .training import (TRAIN_BOUNDS, OptimizationFailure, collect, lhs_sample,
                       optimize_hyperparams, validate)

__all__ = ["main"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_FAULT = 5

_DATA_HEADER = "q_h2,q_air,current,prior,target"
_TARGETS = ("voltage", "pressure")


# --------------------------------------------------------------- file I/O

def _data_path(cfg, split, target):
    return os.path.join(cfg.out_dir, f"data_{split}_{target}.csv")


def _model_path(cfg, target):
    return os.path.join(cfg.out_dir, f"model_{target}.txt")


def _write_xy(path, X, y):
    lines = [_DATA_HEADER]
    for row, t in zip(X, y):
        lines.append(",".join(repr(float(v)) for v in row) + f",{float(t)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_xy(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != _DATA_HEADER:
        raise OSError(f"{path}: not a dataset file (bad header)")
    rows = np.array([[float(tok) for tok in ln.split(",")] for ln in lines[1:]])
    if rows.ndim != 2 or rows.shape[1] != 5:
        raise OSError(f"{path}: malformed rows")
    return rows[:, :4], rows[:, 4]


def _load_model(path):
    try:
        return load_gp(path)
    except ValueError as exc:
        raise OSError(str(exc)) from None


def _require(*paths):
    missing = [p for p in paths if not os.path.exists(p)]
    if missing:
        raise OSError("missing input file(s): " + ", ".join(missing))


def _ensure_out(cfg):
    os.makedirs(cfg.out_dir, exist_ok=True)


# --------------------------------------------------------------- commands

def cmd_generate_data(cfg: Config, args) -> int:
    """Excite the plant over the sampling box and write regression CSVs."""
    n_inputs = args.samples if args.samples is not None else cfg.n_train + 1
    if n_inputs < 2:
        raise ConfigError("--samples must be at least 2 (one row needs a lag)")
    plant = Plant(cfg.stack, cfg.gas)
    _ensure_out(cfg)

    for split, n, seed in (("train", n_inputs, cfg.seed_data_train),
                           ("test", cfg.n_test + 1, cfg.seed_data_test)):
        inputs = lhs_sample(TRAIN_BOUNDS, n, rng=seed)
        ds = collect(plant, inputs, noise_std=cfg.noise_std, rng=seed)
        _write_xy(_data_path(cfg, split, "voltage"), ds.X_v, ds.y_v)
        _write_xy(_data_path(cfg, split, "pressure"), ds.X_p, ds.y_p)
        print(f"{split}: {ds.y_v.size} rows per target "
              f"({n} inputs, {ds.n_skipped} skipped)")
    return EXIT_OK


def cmd_train(cfg: Config, args) -> int:
    """Fit both one-step models by evidence maximization and save them."""
    paths = [_data_path(cfg, "train", t) for t in _TARGETS]
    _require(*paths)
    _ensure_out(cfg)

    for target, path in zip(_TARGETS, paths):
        X, y = _read_xy(path)
        try:
            gp, info = optimize_hyperparams(
                X, y, seed=cfg.seed_hyperopt, restarts=cfg.restarts,
                maxiter=cfg.maxiter, gtol=cfg.gtol, name=target)
        except OptimizationFailure as exc:
            # partial report: show what each restart reached before bailing
            print(f"{target}: optimization failed: {exc}", file=sys.stderr)
            raise
        save_gp(gp, _model_path(cfg, target))
        p = gp.params
        print(f"{target}: n={gp.n} lml={info['lml']!r}")
        print(f"  sigma_iso={p.sigma_iso:.6g} l_iso={p.l_iso:.6g} "
              f"sigma_ard={p.sigma_ard:.6g} sigma_n={p.sigma_n:.6g}")
        print("  l_ard=" + " ".join(f"{v:.6g}" for v in p.l_ard))
    return EXIT_OK


def cmd_validate(cfg: Config, args) -> int:
    """Score the saved models on the held-out set; write per-point CSV."""
    model_paths = [_model_path(cfg, t) for t in _TARGETS]
    data_paths = [_data_path(cfg, "test", t) for t in _TARGETS]
    _require(*model_paths, *data_paths)
    _ensure_out(cfg)

    for target, mpath, dpath in zip(_TARGETS, model_paths, data_paths):
        gp = _load_model(mpath)
        X, y = _read_xy(dpath)
        rep = validate(gp, X, y)
        mean, var = predict(gp, X)
        std = np.sqrt(var + (gp.params.sigma_n * gp.y_std) ** 2)
        out = os.path.join(cfg.out_dir, f"validate_{target}.csv")
        lines = ["truth,mean,std"]
        lines += [f"{float(t)!r},{float(m)!r},{float(s)!r}"
                  for t, m, s in zip(y, mean, std)]
        with open(out, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        print(f"{target}: n={rep.n} rmse={rep.rmse:.6g} "
              f"coverage_2s={rep.coverage_2s:.4f}")
    return EXIT_OK


def _scenario_for(cfg: Config, name: str):
    make = {"step": step_scenario, "ramp": ramp_scenario}[name]
    sc = make(seed=cfg.seed_simulate)
    return dataclasses.replace(sc, reference=cfg.mpc.v_ref)


def _metrics_dict(trace, m) -> dict:
    return {
        "controller": trace.controller,
        "scenario": trace.name,
        "overshoot_V": float(m.overshoot),
        "settle_time_s": float(m.settle_time),
        "p_violation_max_atm": float(m.p_violation_max),
        "rate_violations": int(m.rate_violations),
        "steady_rmse_V": float(m.steady_rmse),
        "fault": trace.fault,
    }


def cmd_simulate(cfg: Config, args) -> int:
    """Run one controller over one scenario; write trace, metrics, plots."""
    controller = args.controller
    scenario_name = args.scenario or cfg.scenario
    models = None
    if controller == "gp":
        paths = [_model_path(cfg, t) for t in _TARGETS]
        _require(*paths)
        models = tuple(_load_model(p) for p in paths)
    plant = Plant(cfg.stack, cfg.gas)
    scenario = _scenario_for(cfg, scenario_name)
    _ensure_out(cfg)

    trace = run(scenario, controller, plant, models=models,
                mpc_params=cfg.mpc, noise_std=cfg.noise_std)
    m = compute_metrics(trace, p_limit=cfg.mpc.p_limit)
    tag = f"{controller}_{scenario_name}"

    write_trace_csv(trace, os.path.join(cfg.out_dir, f"trace_{tag}.csv"))

    diag = os.path.join(cfg.out_dir, f"diagnostics_{tag}.csv")
    lines = ["t,v_pred1,p_pred1,slack,qp_iterations,qp_status"]
    for k in range(len(trace)):
        lines.append(",".join([
            repr(float(trace.t[k])), repr(float(trace.v_pred1[k])),
            repr(float(trace.p_pred1[k])), repr(float(trace.slack[k])),
            str(int(trace.qp_iterations[k])), trace.qp_status[k]]))
    with open(diag, "w") as fh:
        fh.write("\n".join(lines) + "\n")

    md = _metrics_dict(trace, m)
    with open(os.path.join(cfg.out_dir, f"metrics_{tag}.txt"), "w") as fh:
        fh.write("".join(f"{k}={_fmt_val(v)}\n" for k, v in md.items()))
    with open(os.path.join(cfg.out_dir, f"metrics_{tag}.json"), "w") as fh:
        json.dump(md, fh, sort_keys=True, indent=2)
        fh.write("\n")

    plot_voltage(trace, os.path.join(cfg.out_dir, f"plot_voltage_{tag}.svg"))
    plot_pressure(trace, os.path.join(cfg.out_dir, f"plot_pressure_{tag}.svg"),
                  p_limit=cfg.mpc.p_limit)
    plot_inputs(trace, os.path.join(cfg.out_dir, f"plot_inputs_{tag}.svg"))

    for k, v in md.items():
        print(f"{k}={_fmt_val(v)}")
    if trace.fault:
        print(f"plant fault truncated the run: {trace.fault}", file=sys.stderr)
        return EXIT_FAULT
    return EXIT_OK


def _fmt_val(v):
    return repr(v) if isinstance(v, float) else str(v)


def cmd_compare(cfg: Config, args) -> int:
    """Ratio table of the two controllers' metrics on one scenario."""
    scenario_name = args.scenario or cfg.scenario
    p_mpc = os.path.join(cfg.out_dir, f"trace_physical_{scenario_name}.csv")
    p_gp = os.path.join(cfg.out_dir, f"trace_gp_{scenario_name}.csv")
    _require(p_mpc, p_gp)
    trace_mpc = read_trace_csv(p_mpc, name=scenario_name, controller="physical")
    trace_gp = read_trace_csv(p_gp, name=scenario_name, controller="gp")
    try:
        cmp_rec = compare(trace_mpc, trace_gp, r=cfg.mpc.v_ref,
                          p_limit=cfg.mpc.p_limit)
    except ValueError as exc:
        raise OSError(f"mismatched runs: {exc}") from None
    table = format_comparison(cmp_rec)
    _ensure_out(cfg)
    out = os.path.join(cfg.out_dir, f"compare_{scenario_name}.txt")
    with open(out, "w") as fh:
        fh.write(table)
    print(table, end="")
    return EXIT_OK


# ----------------------------------------------------------------- parser

def _add_globals(parser, suppress):
    d = {"default": argparse.SUPPRESS} if suppress else {}
    parser.add_argument("--config", metavar="PATH",
                        help="INI config file layered over defaults", **d)
    parser.add_argument("--seed", type=int, metavar="N",
                        help="override all seeds as N, N+1, N+2, N+3", **d)
    parser.add_argument("--out", metavar="DIR",
                        help="output directory (default: from config)", **d)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="fcmpc",
        description="Fuel-cell voltage control pipeline: sample the plant, "
                    "train one-step models, validate, and run the "
                    "receding-horizon controllers.")
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="COMMAND")

    def add(name, func, help):
        p = sub.add_parser(name, help=help, add_help=True)
        _add_globals(p, suppress=True)
        p.set_defaults(func=func)
        return p

    g = add("generate-data", cmd_generate_data,
            "sample the plant and write train/test regression CSVs")
    g.add_argument("--samples", type=int, metavar="N",
                   help="raw excitation samples for the training split "
                        "(N inputs give N-1 rows); default from config")

    add("train", cmd_train,
        "fit both one-step models by evidence maximization")
    add("validate", cmd_validate,
        "score the saved models on the held-out test set")

    s = add("simulate", cmd_simulate,
            "closed-loop run of one controller over one scenario")
    s.add_argument("--controller", choices=("gp", "physical"), default="gp",
                   help="which linearization feeds the controller")
    s.add_argument("--scenario", choices=("step", "ramp"), default=None,
                   help="load profile (default: from config)")

    c = add("compare", cmd_compare,
            "ratio table from two completed simulate runs")
    c.add_argument("--scenario", choices=("step", "ramp"), default=None,
                   help="which scenario's traces to compare")
    return parser


def _apply_flags(cfg: Config, args) -> Config:
    over = {}
    if getattr(args, "seed", None) is not None:
        s = args.seed
        over.update(seed_data_train=s, seed_data_test=s + 1,
                    seed_hyperopt=s + 2, seed_simulate=s + 3)
    if getattr(args, "out", None):
        over["out_dir"] = args.out
    return dataclasses.replace(cfg, **over) if over else cfg


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _apply_flags(load_config(getattr(args, "config", None)), args)
        return args.func(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PlantFault as exc:
        print(f"plant fault: {exc}", file=sys.stderr)
        return EXIT_FAULT
    except (OptimizationFailure, IllConditionedKernelError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
