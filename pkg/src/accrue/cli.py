"""Command-line driver: ``accrue <subcommand> ...``.

Exit codes: 0 success, 2 invalid input or configuration (including a
missing ``--seed``), 3 fit or sampler failure, 64 usage error.
"""

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import warnings

import numpy as np

from . import __version__
from .data import (ingest_csv, load_snapshot, read_metadata, snapshot_from_dict,
                   snapshot_to_dict, write_snapshot)
from .diagnostics import (calibrated_slope_test, initial_period_qq, random_effect_qq,
                          slope_test)
from .exceptions import (AccrueError, FitFailureError, NumericOverflowError,
                         SamplerFailureError, ValidationError)
from .homogeneity import TABLE_EXPECTATIONS, TABLE_RATIOS, power_study, run_test
from .inference import ensemble_from_dict, ensemble_to_dict, fit_all_models
from .prediction import sample_accrual_paths, time_to_completion
from .priors import PriorConfig
from .shapes import kappa_label
from .simulation import SimConfig, simulate_trial

EXIT_OK, EXIT_INVALID, EXIT_FIT, EXIT_USAGE = 0, 2, 3, 64

log = logging.getLogger("accrue")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------
# Provenance
# --------------------------------------------------------------------------

def _config_hash(args):
    # Thread count and verbosity never change outputs, so they stay out.
    cfg = {k: v for k, v in sorted(vars(args).items())
           if k not in ("func", "threads", "verbose")}
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _provenance(args, argv):
    return {"version": __version__, "invocation": "accrue " + " ".join(argv),
            "config_hash": _config_hash(args)}


def _comment(prov):
    extra = "".join(f" | {k}={v}" for k, v in prov.items()
                    if k not in ("version", "invocation", "config_hash"))
    return (f"accrue {prov['version']} | {prov['invocation']} | "
            f"config_hash={prov['config_hash']}{extra}")


def _write_json(path, payload, prov):
    payload = {"_provenance": prov, **payload}
    text = json.dumps(payload, indent=2, allow_nan=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _write_csv(path, header, rows, prov):
    fh = sys.stdout if path in (None, "-") else open(path, "w", newline="")
    try:
        fh.write(f"# {_comment(prov)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        if math.isinf(x):
            return "inf"
        return repr(float(x))
    return x


def _require_seed(args):
    if args.seed is None:
        raise ValidationError(f"'{args.command}' is stochastic and requires --seed")
    return args.seed


def _load(args):
    if getattr(args, "snapshot", None) is None:
        raise ValidationError("--snapshot is required")
    if args.meta is None:
        raise ValidationError("--meta is required alongside --snapshot")
    return load_snapshot(args.snapshot, args.meta)


def _load_fit(path):
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc.msg})") from None
    if "ensemble" not in d or "snapshot" not in d:
        raise ValidationError(f"{path} is not an accrue fit file")
    return d, ensemble_from_dict(d["ensemble"]), snapshot_from_dict(d["snapshot"])


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_ingest(args, prov):
    meta = read_metadata(args.meta) if args.meta else {}
    census = args.census if args.census is not None else meta.get("census_day")
    if census is None:
        raise ValidationError("census day required (--census or metadata)")
    snap = ingest_csv(
        args.csv, census, initiations=meta.get("initiations"),
        planned_initiations=meta.get("planned_initiations", ()),
        target=args.target if args.target is not None else meta.get("target"),
        deterministic_first_recruitment=meta.get("deterministic_first_recruitment", False))
    write_snapshot(snap, args.out_csv, args.out_meta, _comment(prov))
    log.info("ingested %d centres, %d recruits", snap.n_centres, snap.total_recruits)


def cmd_test(args, prov):
    snap = _load(args)
    method = args.method.upper()
    seed = _require_seed(args) if method == "BST" else args.seed
    res = run_test(snap, method, args.bootstrap, seed)
    out = res.as_dict()
    out["level"] = args.level
    out["reject"] = bool(res.p_value <= args.level)
    _write_json(args.out, out, prov)


def cmd_fit(args, prov):
    seed = _require_seed(args)
    snap = _load(args)
    priors = PriorConfig.from_json(args.priors) if args.priors else PriorConfig()
    kappas = args.kappas.split(",") if args.kappas else None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ens = fit_all_models(snap, priors, args.samples, seed, kappas, args.threads)
    payload = {"priors": priors.to_dict(),
               "warnings": [str(w.message) for w in caught],
               "ensemble": ensemble_to_dict(ens, args.store_draws, seed),
               "snapshot": snapshot_to_dict(snap)}
    _write_json(args.out, payload, prov)


def cmd_forecast(args, prov):
    seed = _require_seed(args)
    _, ens, snap = _load_fit(args.fit)
    fe = sample_accrual_paths(ens, snap, args.horizon, args.draws, seed,
                              threads=args.threads)
    if args.aggregate:
        fe = fe.aggregate(args.aggregate)
    bands = fe.quantile_bands
    rows = [(int(d), _fmt(b[0]), _fmt(b[1]), _fmt(b[2]))
            for d, b in zip(fe.horizon_days, bands)]
    _write_csv(args.out, ["day", "q025", "mean", "q975"], rows, prov)
    if args.paths:
        _write_csv(args.paths, ["draw"] + [str(int(d)) for d in fe.horizon_days],
                   [[i] + p.tolist() for i, p in enumerate(fe.paths)], prov)


def cmd_ttc(args, prov):
    seed = _require_seed(args)
    _, ens, snap = _load_fit(args.fit)
    target = args.target if args.target is not None else snap.target
    if target is None:
        raise ValidationError("--target is required (the fit has no target)")
    m = target - snap.total_recruits
    if m < 1:
        raise ValidationError(
            f"target {target} already reached ({snap.total_recruits} recruits)")
    fe = time_to_completion(ens, snap, m, args.draws, seed, threads=args.threads)
    prov = dict(prov, n_never=fe.meta["n_never"], remaining=m)
    _write_csv(args.out, ["completion_day"],
               [[_fmt(t)] for t in fe.completion_times], prov)


def cmd_diagnose(args, prov):
    _, ens, snap = _load_fit(args.fit)
    if args.snapshot:
        snap = _load(args)
    fit = ens.modal_fit()
    outs = list(args.out) + [None] * (2 - len(args.out))

    def summary(table):
        out = dict(prov, kind=table.kind, kappa=kappa_label(fit.kappa),
                   slope=f"{table.slope():.4f}", slope_ok=slope_test(table))
        if args.seed is not None:
            res = calibrated_slope_test(fit, snap, table.kind, seed=args.seed,
                                        t_prime=args.t_prime)
            out["calibrated_p"] = f"{res.p_value:.4f}"
        return out

    re_qq = random_effect_qq(fit, snap)
    _write_csv(outs[0], ["theoretical", "empirical"],
               [(_fmt(a), _fmt(b)) for a, b in re_qq.rows()], summary(re_qq))
    if outs[1] is not None:
        ip = initial_period_qq(fit, snap, args.t_prime)
        _write_csv(outs[1], ["theoretical", "empirical"],
                   [(_fmt(a), _fmt(b)) for a, b in ip.rows()], summary(ip))


def cmd_simulate(args, prov):
    seed = _require_seed(args)
    with open(args.config) as fh:
        try:
            cfg = SimConfig.from_dict(json.load(fh))
        except (json.JSONDecodeError, TypeError, KeyError) as exc:
            raise ValidationError(f"{args.config}: bad simulation config ({exc})") from None
    snap = simulate_trial(cfg, seed)
    if args.census is not None:
        snap = snap.at_census(args.census)
    csv_out, meta_out = (list(args.out) + [None])[:2]
    write_snapshot(snap, csv_out, meta_out, _comment(prov))


def cmd_power(args, prov):
    seed = _require_seed(args)
    es = [float(e) for e in args.expectations.split(",")]
    rs = [float(r) for r in args.ratios.split(",")]
    rows = []
    for e in es:
        rows.append([_fmt(e)] + [_fmt(power_study(
            e, r, args.method, args.replications, args.bootstrap, seed, args.level,
            threads=args.threads)) for r in rs])
    _write_csv(args.out, ["E_x1"] + [f"R={r:g}" for r in rs], rows, prov)


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="accrue", description="Interim recruitment modelling.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help):
        s = sub.add_parser(name, help=help)
        s.set_defaults(func=func)
        return s

    def snapshot_args(s, required=True):
        s.add_argument("--snapshot", required=required, help="snapshot CSV")
        s.add_argument("--meta", help="snapshot metadata JSON")

    def common(s, threads=True):
        s.add_argument("--seed", type=int)
        if threads:
            s.add_argument("--threads", type=int, default=None)

    s = add("ingest", cmd_ingest, "validate and normalise a recruitment CSV")
    s.add_argument("--csv", required=True)
    s.add_argument("--meta")
    s.add_argument("--census", type=int)
    s.add_argument("--target", type=int)
    s.add_argument("--out-csv", required=True)
    s.add_argument("--out-meta", required=True)

    s = add("test", cmd_test, "test for a decaying recruitment rate")
    snapshot_args(s)
    s.add_argument("--method", choices=["lrt", "bst", "LRT", "BST"], default="lrt")
    s.add_argument("--level", type=float, default=0.05)
    s.add_argument("--bootstrap", type=int, default=1000)
    s.add_argument("--out")
    common(s, threads=False)

    s = add("fit", cmd_fit, "fit every curve-shape model and average them")
    snapshot_args(s)
    s.add_argument("--priors")
    s.add_argument("--samples", type=int, default=10_000)
    s.add_argument("--kappas", help="comma-separated subset of the grid")
    s.add_argument("--store-draws", type=int, default=2000)
    s.add_argument("--out", required=True)
    common(s)

    s = add("forecast", cmd_forecast, "posterior-predictive accrual bands")
    s.add_argument("--fit", required=True)
    s.add_argument("--horizon", type=int, required=True)
    s.add_argument("--draws", type=int, default=2000)
    s.add_argument("--aggregate", type=int, default=0,
                   help="keep every N-th day, e.g. 30 for months")
    s.add_argument("--paths", help="also write every sampled path")
    s.add_argument("--out", required=True)
    common(s)

    s = add("ttc", cmd_ttc, "sample the time to reach the recruitment target")
    s.add_argument("--fit", required=True)
    s.add_argument("--target", type=int, help="total recruits required")
    s.add_argument("--draws", type=int, default=10_000)
    s.add_argument("--out", required=True)
    common(s)

    s = add("diagnose", cmd_diagnose, "QQ data for model checking")
    s.add_argument("--fit", required=True)
    snapshot_args(s, required=False)
    s.add_argument("--t-prime", type=int, default=60)
    s.add_argument("--out", nargs="+", required=True)
    common(s, threads=False)

    s = add("simulate", cmd_simulate, "simulate a trial")
    s.add_argument("--config", required=True)
    s.add_argument("--census", type=int)
    s.add_argument("--out", nargs="+", required=True)
    common(s, threads=False)

    s = add("power", cmd_power, "Monte Carlo power grid for a decay test")
    s.add_argument("--method", choices=["lrt", "bst", "LRT", "BST"], default="lrt")
    s.add_argument("--replications", type=int, default=100_000)
    s.add_argument("--bootstrap", type=int, default=1000)
    s.add_argument("--level", type=float, default=0.05)
    s.add_argument("--expectations", default=",".join(str(e) for e in TABLE_EXPECTATIONS))
    s.add_argument("--ratios", default=",".join(f"{r:g}" for r in TABLE_RATIOS))
    s.add_argument("--out")
    common(s)
    return p


def run(argv=None):
    """Run the CLI and return its exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"accrue: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", None) is None and hasattr(args, "threads"):
        args.threads = int(os.environ.get("ACCRUE_THREADS", "1") or 1)
    try:
        args.func(args, _provenance(args, argv))
    except (FitFailureError, SamplerFailureError, NumericOverflowError) as exc:
        print(f"accrue: fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (AccrueError, ValueError) as exc:
        print(f"accrue: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"accrue: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def main():
    sys.exit(run())
