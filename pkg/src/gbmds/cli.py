"""Command-line front end.

Subcommands:

* ``dissim``      -- build a dissimilarity matrix from raw observations or text.
* ``fit``         -- fit one model to a dissimilarity matrix.
* ``compare``     -- sweep families/metrics/dimensions and rank by log marginal.
* ``incremental`` -- batch-wise incremental inference.
* ``experiment``  -- run a named desk-scale simulation experiment.

All outputs are CSV or JSON, written under --out (default from the GBMDS_OUT
environment variable), with a manifest naming versions, configuration and
seed. Runs are idempotent: the same inputs and seed produce byte-identical
outputs.

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 iteration cap.
"""

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np
import scipy

from . import __version__
from .adaptive import BatchPlan, fit_gbmds, run_adaptive
from .dissimilarity import (
    DataMatrix,
    DissimilarityMatrix,
    build_matrix,
    load_stopwords,
    tokenize_documents,
)
from .errors import GBMDSError, InputError, IterationLimitError, NumericalError
from .harness import ExperimentSpec, parse_experiment_spec, run_experiment
from .model import HyperParams, ModelSpec
from .postprocess import sweep
from .smc import SMCConfig

_EXIT_OK = 0
_EXIT_INPUT = 2
_EXIT_NUMERICAL = 3
_EXIT_ITERATION_CAP = 4


def _out_dir(args) -> str:
    out = args.out or os.environ.get("GBMDS_OUT") or "gbmds_out"
    os.makedirs(out, exist_ok=True)
    return out


def _write_text(path: str, text: str):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _write_json(path: str, payload: dict):
    _write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_matrix_csv(path: str, values: np.ndarray):
    buffer = []
    for row in np.atleast_2d(values):
        buffer.append(",".join(f"{v:.17g}" for v in row))
    _write_text(path, "\n".join(buffer) + "\n")


def _write_samples_csv(path: str, samples: np.ndarray):
    K, n, p = samples.shape
    header = "sample,object," + ",".join(f"x{k + 1}" for k in range(p))
    lines = [header]
    for k in range(K):
        for i in range(n):
            coords = ",".join(f"{v:.17g}" for v in samples[k, i])
            lines.append(f"{k},{i},{coords}")
    _write_text(path, "\n".join(lines) + "\n")


def _manifest(args, command: str, inputs: list, outputs: list) -> dict:
    config = {
        key: value
        for key, value in sorted(vars(args).items())
        if key not in ("func",) and not key.startswith("_")
    }
    return {
        "command": command,
        "versions": {
            "gbmds": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "seed": getattr(args, "seed", None),
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
    }


def _smc_config(args) -> SMCConfig:
    return SMCConfig(
        n_particles=args.particles,
        rcess_threshold=args.phi,
        resample_threshold=args.ess_threshold,
        seed=args.seed,
        step_scale=args.cstep,
        subset_fraction=args.subset_fraction,
        workers=args.threads,
    )


def _load_input_matrix(args) -> DissimilarityMatrix:
    if getattr(args, "observations", False):
        data = DataMatrix.from_csv(args.input, header=args.header, weights=_load_weights(args))
        return build_matrix(data, args.metric)
    if getattr(args, "tokens", False):
        stop = load_stopwords(args.stopwords) if getattr(args, "stopwords", None) else None
        sets = tokenize_documents(args.input, args.ngram, stop)
        return build_matrix(sets, "jaccard")
    return DissimilarityMatrix.from_csv(args.input, metric=args.metric)


def _load_weights(args):
    if getattr(args, "weights", None) is None:
        return None
    return np.loadtxt(args.weights, delimiter=",").ravel()


def cmd_dissim(args) -> int:
    out = _out_dir(args)
    if args.tokens:
        stop = load_stopwords(args.stopwords) if args.stopwords else None
        sets = tokenize_documents(args.input, args.ngram, stop)
        metric = args.metric if args.metric == "jaccard" else "jaccard"
        D = build_matrix(sets, metric)
    else:
        data = DataMatrix.from_csv(args.input, header=args.header, weights=_load_weights(args))
        D = build_matrix(data, args.metric)
    matrix_path = os.path.join(out, "dissimilarities.csv")
    _write_text(matrix_path, D.to_csv_text())
    manifest_path = os.path.join(out, "manifest.json")
    _write_json(
        manifest_path,
        _manifest(args, "dissim", [args.input], ["dissimilarities.csv"])
        | {"n_objects": D.n, "metric": D.metric, "upper_bound": _json_float(D.upper_bound)},
    )
    print(f"wrote {matrix_path} ({D.n} x {D.n}, metric={D.metric})")
    return _EXIT_OK


def _json_float(value):
    if value is None or np.isfinite(value):
        return value
    return "inf" if value > 0 else "-inf"


def cmd_fit(args) -> int:
    out = _out_dir(args)
    D = _load_input_matrix(args)
    spec = ModelSpec(family=args.family, metric=_latent_metric(args.metric), p=args.dim)
    hyper = HyperParams.from_cmds(D, spec)
    config = _smc_config(args)
    fit = fit_gbmds(D, spec, config=config, hyper=hyper, diagnostics_dir=out)
    batch_diag = os.path.join(out, "diagnostics_batch1.csv")
    diag_path = os.path.join(out, "diagnostics.csv")
    if os.path.exists(batch_diag):
        os.replace(batch_diag, diag_path)

    _write_matrix_csv(os.path.join(out, "mode.csv"), fit.mode)
    _write_samples_csv(os.path.join(out, "samples.csv"), fit.samples)
    if fit.regions is not None:
        _write_json(
            os.path.join(out, "ellipses.json"),
            {"regions": [r.to_record(i) for i, r in enumerate(fit.regions)]},
        )
    summary = fit.summary_dict() | {"seed": args.seed}
    _write_json(os.path.join(out, "summary.json"), summary)
    outputs = ["mode.csv", "samples.csv", "ellipses.json", "diagnostics.csv", "summary.json"]
    _write_json(os.path.join(out, "manifest.json"), _manifest(args, "fit", [args.input], outputs))
    print(
        f"fit {spec.family}/{spec.metric} p={spec.p}: logM={fit.log_marginal:.4f} "
        f"stress={fit.stress:.4f} R={fit.n_iterations}"
    )
    return _EXIT_OK


def _latent_metric(metric: str) -> str:
    return metric if metric in ("euclidean", "cosine") else "euclidean"


def cmd_compare(args) -> int:
    out = _out_dir(args)
    D = _load_input_matrix(args)
    config = _smc_config(args)
    table = sweep(
        D,
        families=args.families.split(","),
        metrics=args.metrics.split(","),
        dims=[int(v) for v in args.dims.split(",")],
        config=config,
        workers=args.threads,
    )
    _write_text(os.path.join(out, "comparison.csv"), table.to_csv_text())
    _write_text(os.path.join(out, "comparison.json"), table.to_json_text())
    outputs = ["comparison.csv", "comparison.json"]
    _write_json(
        os.path.join(out, "manifest.json"), _manifest(args, "compare", [args.input], outputs)
    )
    if table.winner is not None:
        w = table.winner
        print(f"winner: {w.family}/{w.metric} p={w.p} logM={w.log_marginal:.4f}")
    else:
        print("no valid cells")
    return _EXIT_OK


def cmd_incremental(args) -> int:
    out = _out_dir(args)
    D = _load_input_matrix(args)
    if args.batches:
        cuts = [int(v) for v in args.batches.split(",")]
        if cuts[-1] != D.n:
            cuts.append(D.n)
        plan = BatchPlan(tuple(cuts))
    elif args.batch_size:
        plan = BatchPlan.uniform(D.n, args.batch_size)
    else:
        plan = BatchPlan.single(D.n)
    spec = ModelSpec(family=args.family, metric=_latent_metric(args.metric), p=args.dim)
    config = _smc_config(args)
    fits = run_adaptive(D, plan, spec, config, diagnostics_dir=out)

    outputs = []
    for b, fit in enumerate(fits, start=1):
        prefix = f"batch{b}"
        _write_matrix_csv(os.path.join(out, f"{prefix}_mode.csv"), fit.mode)
        _write_json(
            os.path.join(out, f"{prefix}_summary.json"),
            fit.summary_dict() | {"seed": args.seed, "batch": b},
        )
        outputs += [f"{prefix}_mode.csv", f"{prefix}_summary.json", f"diagnostics_{prefix}.csv"]
    _write_json(
        os.path.join(out, "manifest.json"),
        _manifest(args, "incremental", [args.input], outputs)
        | {"batch_boundaries": list(plan.boundaries)},
    )
    last = fits[-1]
    print(f"{len(fits)} batches: final stress={last.stress:.4f} logM={last.log_marginal:.4f}")
    return _EXIT_OK


def cmd_experiment(args) -> int:
    out = _out_dir(args)
    if args.spec_file:
        with open(args.spec_file, encoding="utf-8") as fh:
            spec = parse_experiment_spec(fh.read())
    else:
        if not args.name:
            raise InputError("experiment needs a name or --spec-file")
        kwargs = {"name": args.name, "n": args.n, "seed": args.seed,
                  "supplementary": args.supplementary, "p": args.dim}
        if args.fraction is not None:
            kwargs["outlier_fraction"] = args.fraction
        if args.dims:
            kwargs["dims"] = tuple(int(v) for v in args.dims.split(","))
        spec = ExperimentSpec(**kwargs)
    config = _smc_config(args)
    bundle = run_experiment(spec, config)

    _write_text(os.path.join(out, "dissimilarities.csv"), bundle.dissimilarities.to_csv_text())
    _write_text(os.path.join(out, "comparison.csv"), bundle.table.to_csv_text())
    _write_text(os.path.join(out, "comparison.json"), bundle.table.to_json_text())
    outputs = ["dissimilarities.csv", "comparison.csv", "comparison.json"]
    for name, values in bundle.extras.items():
        fname = f"{name}.csv"
        _write_matrix_csv(os.path.join(out, fname), values)
        outputs.append(fname)
    _write_json(
        os.path.join(out, "manifest.json"),
        _manifest(args, "experiment", [args.spec_file] if args.spec_file else [], outputs)
        | {"experiment": asdict(spec)},
    )
    if bundle.table.winner is not None:
        w = bundle.table.winner
        print(f"experiment {spec.name}: winner {w.family}/{w.metric} p={w.p}")
    return _EXIT_OK


def _add_common(parser: argparse.ArgumentParser, with_engine: bool = True):
    parser.add_argument("--seed", type=int, default=0, help="master random seed")
    parser.add_argument("--out", default=None,
                        help="output directory (default: $GBMDS_OUT or ./gbmds_out)")
    if with_engine:
        parser.add_argument("--particles", type=int, default=200, help="particle count K")
        parser.add_argument("--phi", type=float, default=0.8, help="rCESS threshold")
        parser.add_argument("--ess-threshold", type=float, default=0.5,
                            help="relative ESS below which particles are resampled")
        parser.add_argument("--cstep", type=float, default=None,
                            help="random-walk scale for the latent points "
                                 "(default 2.38^2 / p)")
        parser.add_argument("--subset-fraction", type=float, default=1.0,
                            help="fraction of latent rows moved per propagation")
        parser.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                            help="worker threads; results do not depend on this")


def _add_input(parser: argparse.ArgumentParser):
    parser.add_argument("input", help="input file (dissimilarity CSV unless flagged)")
    parser.add_argument("--metric", default="euclidean",
                        choices=("euclidean", "cosine", "jaccard"),
                        help="metric of the input (and latent metric where applicable)")
    parser.add_argument("--observations", action="store_true",
                        help="input holds raw observation rows, not a matrix")
    parser.add_argument("--tokens", action="store_true",
                        help="input holds one document per line")
    parser.add_argument("--header", action="store_true", help="input CSV has a header row")
    parser.add_argument("--ngram", type=int, default=2, help="n-gram size for token input")
    parser.add_argument("--stopwords", default=None, help="stop-word list, one per line")
    parser.add_argument("--weights", default=None,
                        help="CSV vector of per-column weights (must sum to 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gbmds",
        description="Bayesian multidimensional scaling with annealed sequential Monte Carlo",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_dissim = sub.add_parser("dissim", help="build a dissimilarity matrix")
    _add_input(p_dissim)
    _add_common(p_dissim, with_engine=False)
    p_dissim.set_defaults(func=cmd_dissim)

    p_fit = sub.add_parser("fit", help="fit one model")
    _add_input(p_fit)
    p_fit.add_argument("--family", default="tn", choices=("tn", "tsn", "tt"))
    p_fit.add_argument("--dim", type=int, default=2, help="latent dimension p")
    _add_common(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_cmp = sub.add_parser("compare", help="sweep families, metrics and dimensions")
    _add_input(p_cmp)
    p_cmp.add_argument("--families", default="tn,tsn,tt", help="comma-separated families")
    p_cmp.add_argument("--metrics", default="euclidean", help="comma-separated latent metrics")
    p_cmp.add_argument("--dims", default="2,3", help="comma-separated dimensions")
    _add_common(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    p_inc = sub.add_parser("incremental", help="batch-wise incremental inference")
    _add_input(p_inc)
    p_inc.add_argument("--family", default="tn", choices=("tn", "tsn", "tt"))
    p_inc.add_argument("--dim", type=int, default=2, help="latent dimension p")
    p_inc.add_argument("--batches", default=None,
                       help="comma-separated cumulative object counts")
    p_inc.add_argument("--batch-size", type=int, default=None, help="uniform batch size")
    _add_common(p_inc)
    p_inc.set_defaults(func=cmd_incremental)

    p_exp = sub.add_parser("experiment", help="run a named simulation experiment")
    p_exp.add_argument("name", nargs="?", default=None,
                       choices=(None, "known-dimension", "skewed-errors", "outliers"))
    p_exp.add_argument("--spec-file", default=None, help="key=value experiment description")
    p_exp.add_argument("--n", type=int, default=50, help="number of objects")
    p_exp.add_argument("--fraction", type=float, default=None, help="outlier fraction")
    p_exp.add_argument("--supplementary", action="store_true",
                       help="use the alternative 5%%/2%% contamination fractions")
    p_exp.add_argument("--dim", type=int, default=2, help="fit dimension for comparisons")
    p_exp.add_argument("--dims", default=None,
                       help="dimension grid for the known-dimension experiment")
    _add_common(p_exp)
    p_exp.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"gbmds: error: {exc}", file=sys.stderr)
        return _EXIT_INPUT
    except IterationLimitError as exc:
        print(f"gbmds: iteration cap: {exc}", file=sys.stderr)
        return _EXIT_ITERATION_CAP
    except (NumericalError, GBMDSError, np.linalg.LinAlgError) as exc:
        print(f"gbmds: numerical failure: {exc}", file=sys.stderr)
        return _EXIT_NUMERICAL


def entry_point():
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
