"""Command-line interface: fit, test, region, simulate, bench, coefprofile.

Every command reads flat ``key = value`` config files (flags win), writes a
machine-readable JSON result (plus tidy CSV for ``bench``/``coefprofile``)
and prints a one-line summary.  Exit codes: 0 success, 2 data/configuration
error, 3 numeric failure.  Outputs carry no timestamps, so identical
configurations yield byte-identical files regardless of ``--threads``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import engine, sim
from .errors import DataError, ParameterError, PlausError
from .formula import formula_columns, parse_formula
from .model import Dataset, fit_mle, read_dataset_csv
from .penalized import PenaltySpec, cross_validate, fit_elastic_net, fit_ridge
from .weights import WeightSpec

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

_WEIGHT_KINDS = ("lr", "relative_lr", "gof", "penalized_lr")


def _emit_json(obj, path: str | None):
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _read_config_file(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _seed_default() -> int:
    env = os.environ.get("PLAUS_SEED")
    return int(env) if env else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plaus",
        description="Exact plausibility tests, regions and benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, input_required=True):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--input", required=False, help="input CSV path")
        p.add_argument("--output", help="output path (default stdout)")
        p.add_argument("--seed", type=int, default=None,
                       help="RNG seed (falls back to PLAUS_SEED, then 0)")
        p.add_argument("--family", default="binomial",
                       choices=("binomial", "gaussian"))
        p.add_argument("--threads", type=int, default=1)

    p_fit = sub.add_parser("fit", help="maximum-likelihood fit of a formula")
    common(p_fit)
    p_fit.add_argument("--formula", default="y ~ .")

    p_test = sub.add_parser("test", help="plausibility model comparison")
    common(p_test)
    p_test.add_argument("--null", help='e.g. "y ~ 1"')
    p_test.add_argument("--alt", help='e.g. "y ~ fid + poo"')
    p_test.add_argument("--weight", default="lr", choices=_WEIGHT_KINDS)
    p_test.add_argument("--backend", default="importance",
                        choices=("exact", "mc", "importance"))
    p_test.add_argument("--M", type=int, default=10_000)
    p_test.add_argument("--alpha-mix", type=float, default=1.0,
                        help="elastic-net mixing for penalized weights")
    p_test.add_argument("--penalty", default="cv",
                        help="penalty level for penalized weights (or 'cv')")

    p_region = sub.add_parser("region", help="marginal plausibility region")
    common(p_region)
    p_region.add_argument("--null")
    p_region.add_argument("--alt")
    p_region.add_argument("--psi",
                          help="interest term (a column/term of the alt model)")
    p_region.add_argument("--alpha", type=float, default=0.1)
    p_region.add_argument("--backend", default="importance",
                          choices=("exact", "importance"))
    p_region.add_argument("--M", type=int, default=5000)
    p_region.add_argument("--grid-points", type=int, default=21)
    p_region.add_argument("--grid-span", type=float, default=4.0,
                          help="grid half-width in standard errors")

    p_sim = sub.add_parser("simulate", help="write one simulated dataset")
    common(p_sim, input_required=False)
    p_sim.add_argument("--scenario", required=True)
    p_sim.add_argument("--full", action="store_true",
                       help="keep non-carriers in pedigree output")

    p_bench = sub.add_parser("bench", help="size/power replication study")
    common(p_bench, input_required=False)
    p_bench.add_argument("--scenario", required=True)
    p_bench.add_argument("--methods", required=True,
                         help="comma-separated method tags")
    p_bench.add_argument("--R", type=int, default=200)
    p_bench.add_argument("--alphas", default="0.05,0.1,0.2,0.3,0.5")
    p_bench.add_argument("--M", type=int, default=None)
    p_bench.add_argument("--B", type=int, default=None)

    p_cp = sub.add_parser("coefprofile",
                          help="penalized coefficient vectors per method")
    common(p_cp)
    p_cp.add_argument("--cv-replicates", type=int, default=11,
                      help="repeated CV runs; the median penalty is used")
    p_cp.add_argument("--cv-folds", type=int, default=5)

    return parser


def _load_dataset(args) -> Dataset:
    if not args.input:
        raise DataError("--input CSV is required for this command")
    return read_dataset_csv(args.input,
                            numeric_outcome=(args.family == "gaussian"))


def _apply_config_file(args, parser):
    if not getattr(args, "config", None):
        return args
    file_values = _read_config_file(args.config)
    for key, raw in file_values.items():
        if not hasattr(args, key):
            raise DataError(f"unknown config key {key!r}")
        current = getattr(args, key)
        default = parser.get_default(key)
        if current != default:
            continue  # explicit flags win
        if isinstance(default, bool):
            setattr(args, key, raw.lower() in ("1", "true", "yes"))
        elif isinstance(default, int):
            setattr(args, key, int(raw))
        elif isinstance(default, float):
            setattr(args, key, float(raw))
        elif default is None:
            # Untyped optional flags: numbers stay numbers.
            for cast in (int, float):
                try:
                    setattr(args, key, cast(raw))
                    break
                except ValueError:
                    continue
            else:
                setattr(args, key, raw)
        else:
            setattr(args, key, raw)
    return args


def _settings(args) -> engine.IntegrationSettings:
    seed = args.seed if args.seed is not None else _seed_default()
    return engine.IntegrationSettings(M=args.M, seed=seed,
                                      backend=args.backend)


def _cmd_fit(args):
    data = _load_dataset(args)
    cols = formula_columns(data, args.formula)
    if args.family == "binomial":
        from .model import BinomialLogisticFamily

        fam = BinomialLogisticFamily(null_cols=cols, alt_cols=cols,
                                     trials=data.trials)
    else:
        from .model import GaussianLinearFamily

        fam = GaussianLinearFamily(null_cols=cols, alt_cols=cols)
    fit = fit_mle(fam, data, "alt")
    out = {
        "command": "fit",
        "formula": args.formula,
        "family": args.family,
        "coefficients": {
            data.columns[c]: float(v)
            for c, v in zip(cols, fit.theta_hat.values)
        },
        "loglik": fit.loglik,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "sigma2": fit.theta_hat.sigma2,
    }
    _emit_json(out, args.output)
    print(f"fit: loglik {fit.loglik:.4f} converged {fit.converged}", file=sys.stderr)
    return EXIT_OK


def _require(args, *names):
    for name in names:
        if getattr(args, name, None) in (None, ""):
            raise DataError(f"--{name} is required (flag or config file)")


def _cmd_test(args):
    _require(args, "null", "alt")
    data = _load_dataset(args)
    settings = _settings(args)
    if args.family == "gaussian" and args.weight == "penalized_lr":
        null_cols = formula_columns(data, args.null)
        alt_cols = formula_columns(data, args.alt)
        pen_cols = [c - 1 for c in alt_cols if c not in null_cols]
        lam = "cv" if args.penalty == "cv" else float(args.penalty)
        penalty = PenaltySpec(alpha_mix=args.alpha_mix, lam=lam,
                              cv_folds=5, path_length=30)
        spec = WeightSpec(kind="penalized_lr", penalty=penalty)
        X = data.X[:, 1:]
        nuis = tuple(c - 1 for c in null_cols if c != 0)
        result = engine.gaussian_profile_plausibility(
            data.y, X, nuis, spec, settings
        )
    elif args.weight == "gof":
        if args.family != "binomial":
            raise ParameterError(
                "unweighted (gof) plausibility is degenerate for the "
                "Gaussian family; use a weight"
            )
        null_cols = formula_columns(data, args.null)
        from .model import BinomialLogisticFamily

        fam = BinomialLogisticFamily(null_cols=null_cols, alt_cols=null_cols,
                                     trials=data.trials)
        problem = engine.WeightedProblem(family=fam, settings=settings)
        result = engine.plausibility(problem, data)
    else:
        result = engine.weighted_test(
            data, args.null, args.alt, family=args.family,
            settings=settings, weight_kind=args.weight,
        )
    out = result.to_json_dict()
    out.update({"command": "test", "null": args.null, "alt": args.alt,
                "weight": args.weight})
    _emit_json(out, args.output)
    print(f"test: p_value {result.p_value:.6g} (backend {result.backend})", file=sys.stderr)
    return EXIT_OK


def _cmd_region(args):
    _require(args, "null", "alt", "psi")
    data = _load_dataset(args)
    settings = _settings(args)
    null_cols = formula_columns(data, args.null)
    alt_cols = formula_columns(data, args.alt)
    psi_term = data.terms.get(args.psi)
    if not psi_term:
        raise DataError(f"unknown interest term {args.psi!r}")
    if len(psi_term) != 1:
        raise DataError("the interest term must map to a single column")
    if psi_term[0] not in alt_cols:
        raise DataError("the interest term must be part of the alt model")
    if args.family != "binomial":
        raise ParameterError("regions are implemented for binomial data")
    psi_pos = alt_cols.index(psi_term[0])
    from .model import BinomialLogisticFamily

    fam = BinomialLogisticFamily(null_cols=null_cols, alt_cols=alt_cols,
                                 trials=data.trials)
    problem = engine.WeightedProblem(family=fam, settings=settings,
                                     psi_cols=(psi_pos,))
    fit = fit_mle(fam, data, "alt")
    from .engine import _fisher_se

    se = _fisher_se(fam, data, alt_cols, fit.theta_hat.values)[psi_pos]
    center = fit.theta_hat.values[psi_pos]
    grid = np.linspace(center - args.grid_span * se,
                       center + args.grid_span * se, args.grid_points)
    region = engine.marginal_region(problem, data, args.alpha, grid)
    out = region.to_json_dict()
    out.update({"command": "region", "psi": args.psi})
    _emit_json(out, args.output)
    lo = min(region.region) if region.region else None
    hi = max(region.region) if region.region else None
    print(f"region: alpha {args.alpha} -> [{lo}, {hi}] "
          f"({len(region.region)}/{len(grid)} grid points)", file=sys.stderr)
    return EXIT_OK


def _dataset_to_csv(data: Dataset, full: bool) -> str:
    meta = data.meta
    keep = np.ones(data.n, dtype=bool)
    if not full and "carrier" in meta:
        keep = np.asarray(meta["carrier"]) == 1
    names = ["family", "fid", "poo"] + (["carrier", "generation"] if full else [])
    columns = [("y", [str(int(v)) for v in data.y[keep]])]
    for name in names:
        if name in meta:
            columns.append(
                (name, [str(v) for v in np.asarray(meta[name])[keep]])
            )
    out = [",".join(name for name, _ in columns)]
    n_rows = len(columns[0][1])
    for i in range(n_rows):
        out.append(",".join(vals[i] for _, vals in columns))
    return "\n".join(out) + "\n"


def _cmd_simulate(args):
    seed = args.seed if args.seed is not None else _seed_default()
    scenario = sim.get_scenario(args.scenario, seed=seed)
    if isinstance(scenario, sim.PedigreeScenario):
        data = sim.simulate_pedigree(scenario)
        text = _dataset_to_csv(data, full=args.full)
    else:
        data = sim.simulate_highdim(scenario)
        header = ["y"] + [c for c in data.columns if c != "(Intercept)"]
        rows = [",".join(header)]
        X = data.X[:, 1:]
        for i in range(data.n):
            rows.append(",".join([repr(float(data.y[i]))]
                                 + [repr(float(v)) for v in X[i]]))
        text = "\n".join(rows) + "\n"
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    print(f"simulate: {args.scenario} seed {seed} ({data.n} rows)",
          file=sys.stderr)
    return EXIT_OK


def _cmd_bench(args):
    seed = args.seed if args.seed is not None else _seed_default()
    overrides = {}
    if args.M is not None:
        overrides["M"] = args.M
    if args.B is not None:
        overrides["B"] = args.B
    scenario = sim.get_scenario(args.scenario, **overrides)
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    alphas = tuple(float(a) for a in args.alphas.split(","))
    table = sim.run_replications(scenario, methods, R=args.R,
                                 alpha_grid=alphas, seed=seed,
                                 threads=args.threads)
    csv_text = table.to_csv()
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(csv_text)
        _emit_json(table.to_json_dict(), args.output + ".json")
    else:
        sys.stdout.write(csv_text)
    print(f"bench: {args.scenario} R={args.R} methods={len(methods)} "
          f"alphas={len(alphas)}", file=sys.stderr)
    return EXIT_OK


def _cmd_coefprofile(args):
    data = _load_dataset(args)
    y = np.asarray(data.y, dtype=float)
    X = data.X[:, 1:]
    methods = (
        ("lasso", 1.0),
        ("enet", 0.9),
        ("enet0_1", 0.1),
        ("ridge", 0.0),
    )
    seed = args.seed if args.seed is not None else _seed_default()
    rows = []
    for name, mix in methods:
        lams = []
        for rep in range(args.cv_replicates):
            spec = PenaltySpec(alpha_mix=mix, lam="cv", path_length=30,
                               cv_folds=args.cv_folds, cv_seed=seed + rep)
            lams.append(cross_validate(X, y, spec))
        lam = float(np.median(lams))
        if mix == 0.0:
            coefs = fit_ridge(X, y, lam)
        else:
            coefs = fit_elastic_net(
                X, y, PenaltySpec(alpha_mix=mix, lam=lam)
            ).coefficients[0]
        rows.append((name, lam, coefs))
    header = "method,lambda," + ",".join(
        c for c in data.columns if c != "(Intercept)"
    )
    lines = [header]
    for name, lam, coefs in rows:
        lines.append(f"{name},{lam:.10g}," + ",".join(f"{v:.10g}" for v in coefs))
    text = "\n".join(lines) + "\n"
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    nz = {name: int(np.count_nonzero(coefs)) for name, _, coefs in rows}
    print(f"coefprofile: nonzero per method {nz}", file=sys.stderr)
    return EXIT_OK


_COMMANDS = {
    "fit": _cmd_fit,
    "test": _cmd_test,
    "region": _cmd_region,
    "simulate": _cmd_simulate,
    "bench": _cmd_bench,
    "coefprofile": _cmd_coefprofile,
}


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _apply_config_file(args, parser)
        return _COMMANDS[args.command](args)
    except (DataError, ParameterError) as exc:
        _error_json(exc, EXIT_CONFIG)
        return EXIT_CONFIG
    except PlausError as exc:
        _error_json(exc, EXIT_NUMERIC)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        _error_json(exc, EXIT_CONFIG)
        return EXIT_CONFIG


def _error_json(exc, code):
    sys.stderr.write(json.dumps(
        {"error": str(exc), "type": type(exc).__name__, "exit": code},
        sort_keys=True,
    ) + "\n")


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
