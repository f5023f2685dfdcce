"""Command-line interface: ``illdeath {simulate,fit,bootstrap,benchmark}``.

Exit codes: 0 success, 2 invalid input, 3 estimation failure, 4 benchmark
finished with failed replicates.

Environment overrides: ``ILLDEATH_THREADS`` (default for ``--threads``) and
``ILLDEATH_CACHE_DIR`` (replicate cache of ``benchmark``).
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path

from . import __version__

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_ESTIMATION = 3
EXIT_PARTIAL = 4

MANIFEST = "manifest.json"

log = logging.getLogger("illdeath")


def _file_sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, args: dict, config_hash: str | None, seed, outputs) -> Path:
    """One ``manifest.json`` per output directory, listing outputs and their hashes."""
    manifest = {
        "command": command,
        "arguments": args,
        "config_hash": config_hash,
        "seed": seed,
        "version": __version__,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "outputs": {p.name: _file_sha(p) for p in sorted(outputs)},
    }
    path = out / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _threads(args) -> int:
    n = args.threads if args.threads is not None else int(os.environ.get("ILLDEATH_THREADS", "1"))
    return max(1, n)


def _vargs(args) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k != "func"}


# ---------------------------------------------------------------------------
# simulate


def _load_scenario(spec: str):
    from .simulation import BUNDLED_SCENARIOS, bundled_scenario, read_scenario

    if spec in BUNDLED_SCENARIOS:
        return bundled_scenario(spec)
    return read_scenario(spec)


def write_truth_csv(study, path) -> None:
    """Latent times behind a simulated cohort: ``T1,T2,omega,T13,C``."""
    t = study.truth
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["T1", "T2", "omega", "T13", "C"])
        for row in zip(t.T1, t.T2, t.omega, t.T13, t.C):
            w.writerow([repr(float(x)) for x in row])


def cmd_simulate(args) -> int:
    from .data import write_cohort_csv
    from .simulation import format_scenario, generate_cohort, true_lifetable

    sc = _load_scenario(args.scenario)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.n is not None:
        overrides["n"] = args.n
    sc = sc.replace(**overrides) if overrides else sc
    out = _out_dir(args.out)
    study = generate_cohort(sc)
    outputs = [out / "cohort.csv", out / "truth.csv", out / "scenario.txt"]
    write_cohort_csv(study.cohort, outputs[0])
    write_truth_csv(study, outputs[1])
    outputs[2].write_text(format_scenario(sc))
    if sc.delayed_entry:
        outputs.append(out / "lifetable.csv")
        true_lifetable(sc).to_csv(outputs[-1])
    write_manifest(out, "simulate", _vargs(args), sc.config_hash(), sc.seed, outputs)
    print(f"simulated {study.cohort.n} subjects ({study.n_generated} generated) into {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit / bootstrap


def _write_estimates(path: Path, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "estimate", "se", "mad"])
        for name, est, se, mad in rows:
            w.writerow([name, repr(float(est))] + ["" if v is None or math.isnan(v) else repr(float(v)) for v in (se, mad)])


def _check_fit_flags(args):
    from .data import ValidationError

    if not args.delayed_entry and (args.c_lower is not None or args.c_upper is not None):
        raise ValidationError("--c-lower/--c-upper require --delayed-entry")
    if args.delayed_entry and (args.c_lower is None or args.c_upper is None):
        raise ValidationError("--delayed-entry requires --c-lower and --c-upper")
    if args.lifetable is not None and not args.delayed_entry:
        raise ValidationError("--lifetable requires --delayed-entry")
    if args.model != "proposed" and (args.bootstrap or args.lifetable is not None or args.subsample is not None):
        raise ValidationError("--bootstrap, --lifetable and --subsample apply to --model proposed only")
    if args.bootstrap is not None and args.bootstrap < 2:
        raise ValidationError("--bootstrap needs at least 2 replicates")


def cmd_fit(args) -> int:
    from .bootstrap import BootstrapConfig, bootstrap_fit
    from .cox import fit_comparator
    from .data import StudyDesign, read_cohort_csv
    from .estimator import FitConfig, draw_subsample, fit
    from .lifetable import DEFAULT_KAPPA, read_lifetable_csv

    _check_fit_flags(args)
    cohort = read_cohort_csv(args.data)
    design = StudyDesign(True, args.c_lower, args.c_upper) if args.delayed_entry else StudyDesign()
    cohort.validate(design)
    out = _out_dir(args.out)
    outputs = []
    seed = None

    if args.model != "proposed":
        fits = fit_comparator(cohort, args.model, design)
        rows = []
        for tr, res in fits.items():
            rows += [(f"gamma{tr}_{nm}", c, s, None) for nm, c, s in zip(res.names, res.coef, res.se)]
            path = out / f"hazard_{tr}.csv"
            res.hazard.to_csv(path)
            outputs.append(path)
        outputs.append(out / "estimates.csv")
        _write_estimates(outputs[-1], rows)
        write_manifest(out, "fit", _vargs(args), None, seed, outputs)
        print(f"{args.model}: wrote {len(rows)} coefficients to {out}")
        return EXIT_OK

    config = FitConfig(max_outer_iterations=args.max_outer, rel_tol=args.rel_tol, fix_theta=args.fix_theta,
                       solve_fixed_point=not args.no_fixed_point)
    lifetable = None
    if args.lifetable is not None:
        lifetable = read_lifetable_csv(args.lifetable, design.c_lower, args.kappa or DEFAULT_KAPPA)
    if args.subsample is not None:
        n0 = int(cohort.censored.sum())
        n_tilde = min(args.subsample, n0)
        cohort, _ = draw_subsample(cohort, n_tilde, args.subsample_seed)
        seed = args.subsample_seed
    res = fit(cohort, design, config, lifetable)
    se = mad = {}
    if args.bootstrap:
        boot = bootstrap_fit(cohort, design, config, BootstrapConfig(args.bootstrap, args.bootstrap_seed), base=res,
                             lifetable=lifetable)
        se, mad = boot.se, boot.mad
        res.se, res.mad = se, mad
        path = out / "bootstrap.csv"
        boot.to_csv(path)
        outputs.append(path)
        seed = args.bootstrap_seed
        if boot.n_failed:
            log.warning("%d bootstrap replicates failed", boot.n_failed)
    rows = [(k, v, se.get(k), mad.get(k)) for k, v in res.params.as_dict().items()]
    outputs.append(out / "estimates.csv")
    _write_estimates(outputs[-1], rows)
    for tr in ("12", "13", "23"):
        path = out / f"hazard_{tr}.csv"
        res.hazards.get(tr).to_csv(path)
        outputs.append(path)
    path = out / "trace.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loglik"])
        for i, v in enumerate(res.loglik_trace, start=1):
            w.writerow([i, repr(float(v))])
    outputs.append(path)
    write_manifest(out, "fit", _vargs(args), None, seed, outputs)
    status = "converged" if res.converged else "did not converge"
    print(f"proposed: {status} after {res.n_outer} iterations, theta={res.params.theta:.4f}, "
          f"loglik={res.loglik:.6g}; outputs in {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# benchmark


def cmd_benchmark(args) -> int:
    from .benchmark import run_table, write_table_csv

    out = _out_dir(args.out)
    cache = args.cache or os.environ.get("ILLDEATH_CACHE_DIR") or (out / "cache")
    thetas = tuple(int(t) for t in args.thetas.split(","))
    rows = run_table(args.table, reps=args.reps, n=args.n, thetas=thetas, cache_dir=cache,
                     n_jobs=_threads(args), n_boot=args.boot, seed=args.seed)
    path = out / f"{args.table}.csv"
    write_table_csv(rows, path)
    write_manifest(out, "benchmark", _vargs(args), None, args.seed, [path])
    partial = [r for r in rows if r["n_ok"] < args.reps]
    print(f"benchmark {args.table}: {len(rows)} cells written to {path}")
    if partial:
        for r in partial:
            print(f"  theta={r['theta']} {r['method']} {r['quantity']}: {args.reps - r['n_ok']} failed replicates",
                  file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="illdeath", description="Frailty illness-death models with delayed entry.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--threads", type=int, default=None, help="cap on parallel workers (env ILLDEATH_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic cohort")
    s.add_argument("scenario", help="bundled scenario name or path to a key = value scenario file")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--seed", type=int)
    s.add_argument("--n", type=int)
    s.set_defaults(func=cmd_simulate)

    def fit_args(f, bootstrap_default=None):
        f.add_argument("data", type=Path, help="cohort CSV")
        f.add_argument("--out", required=True, type=Path)
        f.add_argument("--model", choices=("proposed", "cox1", "cox2", "cox3"), default="proposed")
        f.add_argument("--delayed-entry", action="store_true")
        f.add_argument("--c-lower", type=float)
        f.add_argument("--c-upper", type=float)
        f.add_argument("--lifetable", type=Path, help="age,hazard CSV of population death rates")
        f.add_argument("--kappa", type=int, help="number of life-table grid points below c_lower")
        f.add_argument("--subsample", type=int, metavar="N", help="keep N censored subjects (clipped to all)")
        f.add_argument("--subsample-seed", type=int, default=0)
        f.add_argument("--bootstrap", type=int, metavar="B", default=bootstrap_default)
        f.add_argument("--bootstrap-seed", type=int, default=0)
        f.add_argument("--max-outer", type=int, default=50)
        f.add_argument("--rel-tol", type=float, default=1e-4)
        f.add_argument("--fix-theta", type=float)
        f.add_argument("--no-fixed-point", action="store_true",
                       help="stop at the alternating iterations without solving for their fixed point")
        f.set_defaults(func=cmd_fit)

    fit_args(sub.add_parser("fit", help="fit the frailty model or a Cox comparator"))
    fit_args(sub.add_parser("bootstrap", help="fit with weighted-bootstrap standard errors"), bootstrap_default=100)

    b = sub.add_parser("benchmark", help="replicate simulation study against published tables")
    b.add_argument("table", choices=("T2", "T3", "S4", "S5"))
    b.add_argument("--out", required=True, type=Path)
    b.add_argument("--reps", type=int, default=20)
    b.add_argument("--n", type=int, default=5000)
    b.add_argument("--thetas", default="0,1,2")
    b.add_argument("--boot", type=int, default=0, help="bootstrap replicates per fit (0: no SE or coverage)")
    b.add_argument("--seed", type=int)
    b.add_argument("--cache", type=Path)
    b.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .data import ValidationError
    from .hazards import EstimationError

    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except EstimationError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
