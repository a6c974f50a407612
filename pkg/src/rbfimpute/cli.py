"""Command line interface.

Subcommands cover the full pipeline: ``synth`` generates benchmark data,
``corrupt`` hides cells and keeps the truth on the side, ``fit-rbf`` fits
the continuous-function bank, ``fit-mirnn`` trains the recurrent refiner
against a bank, ``impute`` fills a CSV from a bank (optionally refined by a
model), ``eval`` scores an imputed CSV against hidden truth, and ``ablate``
runs the variant comparison harness.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from .bank import cf_eval_series, impute_with_cf, load_bank, save_bank
from .data import (
    CorruptionSpec,
    GroundTruthPair,
    corrupt,
    load_csv,
    lorenz96,
    save_csv,
    save_matrix_csv,
)
from .evaluation import (
    VARIANTS,
    evaluate,
    run_ablation_tolerant,
    summarize_ablation,
)
from .fitting import TrainConfig, fit
from .recurrent import (
    RecurrentTrainConfig,
    impute_mirnn,
    load_model,
    refine_series,
    save_model,
)
from .series import apply_normalization, denormalize_matrix, new_series, with_values


def _load_config(path, config_cls):
    """Build a config dataclass from JSON, keeping defaults for absent keys."""
    if path is None:
        return config_cls()
    doc = json.loads(Path(path).read_text())
    known = {f.name for f in fields(config_cls)}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
    if "term_range" in doc:
        doc["term_range"] = tuple(doc["term_range"])
    return config_cls(**doc)


def _cmd_synth(args):
    if args.system != "lorenz96":
        raise ValueError(f"unknown synthetic system {args.system!r}")
    series = lorenz96(
        n=args.n, d=args.d, forcing=args.f, dt=args.dt, seed=args.seed, spinup=args.spinup
    )
    save_csv(series, args.out)
    print(f"wrote {args.n}x{args.d} trajectory to {args.out}")


def _cmd_corrupt(args):
    series = load_csv(args.infile)
    terms = tuple(int(x) for x in args.terms.split(",")) if args.terms else (50, 80)
    spec = CorruptionSpec(mode=args.mode, rate=args.rate, term_range=terms, seed=args.seed)
    pair = corrupt(series, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(pair.corrupted, out / "corrupted.csv")
    save_matrix_csv(series.timestamps, pair.truth, series.variable_names, out / "truth.csv")
    save_matrix_csv(
        series.timestamps, pair.eval_mask, series.variable_names, out / "eval_mask.csv", as_int=True
    )
    hidden = int(pair.eval_mask.sum())
    print(f"hid {hidden} cells ({args.mode}); pair written to {out}/")


def _cmd_fit_rbf(args):
    series = load_csv(args.input, mask_path=args.mask)
    config = _load_config(args.config, TrainConfig)
    bank, reports = fit(series, config)
    save_bank(bank, args.out)
    if args.report:
        Path(args.report).write_text(
            json.dumps([asdict(r) for r in reports], indent=1)
        )
    last = reports[-1]
    print(
        f"fitted {bank.n_basis} bumps in {len(reports)} stage(s); "
        f"observed MAPE {last.mape:.4f}, MAE {last.mae:.4f}; bank at {args.out}"
    )


def _cmd_fit_mirnn(args):
    series = load_csv(args.input, mask_path=args.mask)
    bank = load_bank(args.bank)
    config = _load_config(args.config, RecurrentTrainConfig)
    _, params, curve = refine_series(series, bank, config)
    save_model(params, args.out)
    print(
        f"trained refiner for {config.epochs} epochs "
        f"(loss {curve[0]:.4f} -> {curve[-1]:.4f}); model at {args.out}"
    )


def _cmd_impute(args):
    series = load_csv(args.input, mask_path=args.mask)
    bank = load_bank(args.bank)
    work = series
    if bank.norm_stats is not None:
        work = apply_normalization(series, bank.norm_stats)
    if args.model:
        params = load_model(args.model)
        refined = impute_mirnn(params, work, bank)
        estimates = refined.values
    else:
        estimates = np.where(
            work.mask > 0.5, work.values, cf_eval_series(bank, work.timestamps)
        )
    if bank.norm_stats is not None:
        estimates = denormalize_matrix(estimates, bank.norm_stats)
    filled = np.where(series.mask > 0.5, series.values, estimates)
    out = with_values(series, filled, mask=np.ones_like(series.mask))
    save_csv(out, args.out)
    n_filled = int((series.mask < 0.5).sum())
    print(f"imputed {n_filled} cells -> {args.out}")


def _cmd_eval(args):
    pred = load_csv(args.pred)
    truth = load_csv(args.truth)
    eval_mask = load_csv(args.eval_mask)
    report = evaluate(
        pred.values, truth.values, eval_mask.values, truth.variable_names
    )
    Path(args.out).write_text(json.dumps(asdict(report), indent=1))
    print(f"MAE {report.mae:.4f}  MRE {report.mre:.4f}  MAPE {report.mape:.4f}  ({report.count} cells)")


def _load_pair(data_dir) -> GroundTruthPair:
    data_dir = Path(data_dir)
    corrupted = load_csv(data_dir / "corrupted.csv")
    truth = load_csv(data_dir / "truth.csv")
    eval_mask = load_csv(data_dir / "eval_mask.csv")
    return GroundTruthPair(
        corrupted=corrupted, truth=truth.values, eval_mask=eval_mask.values
    )


def _cmd_ablate(args):
    pair = _load_pair(args.data)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    seeds = [int(s) for s in args.seeds.split(",")]
    rbf_config = _load_config(args.rbf_config, TrainConfig)
    rnn_config = _load_config(args.rnn_config, RecurrentTrainConfig)
    results, failures = run_ablation_tolerant(
        pair, variants, seeds,
        rbf_config=rbf_config, rnn_config=rnn_config,
        knn_k=args.knn_k, out_dir=args.out,
    )
    for variant, exc in failures:
        print(f"variant {variant} failed: {exc}", file=sys.stderr)
    for variant, row in summarize_ablation(results).items():
        print(f"{variant:10s} MAE {row['mae']:.4f}  MRE {row['mre']:.4f}  (runs {row['runs']})")
    if results:
        print(f"results in {args.out}/")
    if failures:
        sys.exit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rbfimpute",
        description="Multivariate time-series imputation with a shared Gaussian "
        "basis bank and a bidirectional recurrent refiner.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic benchmark data")
    p.add_argument("system", choices=["lorenz96"])
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--d", type=int, default=5)
    p.add_argument("--f", type=float, default=8.0)
    p.add_argument("--dt", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spinup", type=int, default=0, help="discarded warm-up steps")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("corrupt", help="hide cells, keeping the truth on the side")
    p.add_argument("--mode", choices=["random", "long-term"], default="random")
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--terms", default=None, help="min,max run length (long-term mode)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True, help="output directory for the pair")
    p.set_defaults(func=_cmd_corrupt)

    p = sub.add_parser("fit-rbf", help="fit the continuous-function bank")
    p.add_argument("--input", required=True)
    p.add_argument("--mask", default=None, help="sidecar mask CSV")
    p.add_argument("--config", default=None, help="JSON mirroring the train config")
    p.add_argument("--out", required=True, help="bank JSON path")
    p.add_argument("--report", default=None, help="stage report JSON path")
    p.set_defaults(func=_cmd_fit_rbf)

    p = sub.add_parser("fit-mirnn", help="train the recurrent refiner against a bank")
    p.add_argument("--input", required=True)
    p.add_argument("--mask", default=None)
    p.add_argument("--bank", required=True)
    p.add_argument("--config", default=None, help="JSON mirroring the refiner config")
    p.add_argument("--out", required=True, help="model JSON path")
    p.set_defaults(func=_cmd_fit_mirnn)

    p = sub.add_parser("impute", help="fill a CSV from a bank (and optional model)")
    p.add_argument("--input", required=True)
    p.add_argument("--mask", default=None)
    p.add_argument("--bank", required=True)
    p.add_argument("--model", default=None, help="refiner model JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_impute)

    p = sub.add_parser("eval", help="score an imputed CSV against hidden truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--eval-mask", dest="eval_mask", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="compare model variants on a corrupted pair")
    p.add_argument("--data", required=True, help="directory from the corrupt command")
    p.add_argument("--variants", default=",".join(VARIANTS))
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--rbf-config", dest="rbf_config", default=None)
    p.add_argument("--rnn-config", dest="rnn_config", default=None)
    p.add_argument("--knn-k", dest="knn_k", type=int, default=10)
    p.add_argument("--out", required=True, help="results directory")
    p.set_defaults(func=_cmd_ablate)

    return parser


def main(argv=None) -> None:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()
