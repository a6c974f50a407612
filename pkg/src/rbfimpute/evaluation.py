"""Imputation metrics, simple baselines, and the ablation harness.

Metrics are always computed on the original data scale against the hidden
cells of a :class:`~rbfimpute.data.GroundTruthPair`. The harness trains any
requested subset of the model variants on the same pair and seed set and
emits a comparison table plus plot-ready CSV files.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from .bank import GrbfBank, cf_eval_series
from .data import GroundTruthPair
from .fitting import TrainConfig, fit, fit_and_impute
from .recurrent import RecurrentTrainConfig, refine_series
from .series import MultivariateSeries, denormalize_matrix, with_values

MAPE_TRUTH_FLOOR = 1e-8

VARIANTS = ("mim", "mim-rand", "mis", "mis-rand", "mirnn", "mean", "knn")


@dataclass(frozen=True)
class ImputationReport:
    """Error metrics over the evaluation cells.

    ``mre`` is the summed absolute error divided by the summed absolute
    truth (kept configurable via :func:`evaluate`'s ``mre_mode``); ``mape``
    skips cells whose true magnitude is below a small floor.
    """

    mae: float
    mre: float
    mape: float
    count: int
    per_variable: dict
    fingerprint: str = ""
    seconds: float = 0.0


@dataclass(frozen=True)
class AblationResult:
    variant: str
    seed: int
    report: ImputationReport


def _metric_block(pred, truth, cells):
    err = np.abs(pred - truth)[cells]
    truth_abs = np.abs(truth)[cells]
    mae = float(err.mean())
    mre = float(err.sum() / truth_abs.sum()) if truth_abs.sum() > 0 else float("inf")
    valid = truth_abs >= MAPE_TRUTH_FLOOR
    mape = float((err[valid] / truth_abs[valid]).mean()) if valid.any() else 0.0
    return mae, mre, mape, int(cells.sum())


def evaluate(imputed, truth, eval_mask, variable_names=None, mre_mode: str = "sum-ratio") -> ImputationReport:
    """Score an imputation against hidden truth cells.

    ``imputed`` may be a series or a dense matrix. ``mre_mode`` selects the
    relative-error convention: "sum-ratio" (sum |err| / sum |truth|) or
    "mean-ratio" (mean of per-cell ratios, i.e. equal to the MAPE
    convention without the floor).

    Raises
    ------
    ValueError
        On shape mismatch or an empty evaluation mask.
    """
    pred = imputed.values if isinstance(imputed, MultivariateSeries) else np.asarray(imputed, dtype=float)
    truth = np.asarray(truth, dtype=float)
    cells = np.asarray(eval_mask, dtype=float) > 0.5
    if pred.shape != truth.shape or pred.shape != cells.shape:
        raise ValueError(
            f"shape mismatch: pred {pred.shape}, truth {truth.shape}, eval mask {cells.shape}"
        )
    if not cells.any():
        raise ValueError("evaluation mask is empty")
    if mre_mode not in ("sum-ratio", "mean-ratio"):
        raise ValueError(f"unknown mre_mode {mre_mode!r}")

    mae, mre, mape, count = _metric_block(pred, truth, cells)
    if mre_mode == "mean-ratio":
        mre = mape
    names = variable_names or tuple(f"x{j}" for j in range(pred.shape[1]))
    per_variable = {}
    for j, name in enumerate(names):
        col = cells[:, j]
        if not col.any():
            continue
        v_mae, v_mre, v_mape, v_count = _metric_block(pred[:, j : j + 1], truth[:, j : j + 1], cells[:, j : j + 1])
        if mre_mode == "mean-ratio":
            v_mre = v_mape
        per_variable[name] = {"mae": v_mae, "mre": v_mre, "mape": v_mape, "count": v_count}
    return ImputationReport(mae=mae, mre=mre, mape=mape, count=count, per_variable=per_variable)


# ----------------------------------------------------------------------
# baselines
# ----------------------------------------------------------------------


def mean_baseline(series: MultivariateSeries) -> MultivariateSeries:
    """Fill each missing cell with its variable's observed mean.

    Raises
    ------
    ValueError
        If some variable has no observations at all.
    """
    obs = series.mask > 0.5
    filled = series.values.copy()
    for j in range(series.n_vars):
        col = series.values[obs[:, j], j]
        if col.size == 0:
            raise ValueError(f"variable {series.variable_names[j]!r} has no observed mean")
        filled[~obs[:, j], j] = col.mean()
    return with_values(series, filled, mask=np.ones_like(series.mask))


def knn_baseline(series: MultivariateSeries, k: int = 10) -> MultivariateSeries:
    """Fill missing cells from the k nearest rows.

    Row distance is the Euclidean distance over dimensions observed in both
    rows, normalized by the shared-dimension count; rows sharing no
    dimension sort last. Neighbors must observe the variable being filled;
    the observed column mean covers cells with no usable neighbor.

    Raises
    ------
    ValueError
        If k is not positive.
    """
    if k <= 0:
        raise ValueError("k must be positive")
    obs = series.mask > 0.5
    x = series.observed_values()
    n = series.n_steps

    diff = x[:, None, :] - x[None, :, :]  # (N, N, M)
    shared = obs[:, None, :] & obs[None, :, :]
    num = np.where(shared, diff**2, 0.0).sum(axis=2)
    cnt = shared.sum(axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        dist = np.where(cnt > 0, np.sqrt(num / np.maximum(cnt, 1)), np.inf)
    np.fill_diagonal(dist, np.inf)

    fallback = mean_baseline(series)
    filled = series.values.copy()
    for i, j in np.argwhere(~obs):
        candidates = np.flatnonzero(obs[:, j])
        candidates = candidates[candidates != i]
        if candidates.size == 0:
            filled[i, j] = fallback.values[i, j]
            continue
        order = candidates[np.lexsort((candidates, dist[i, candidates]))]
        neighbors = order[:k]
        filled[i, j] = x[neighbors, j].mean()
    return with_values(series, filled, mask=np.ones_like(series.mask))


# ----------------------------------------------------------------------
# ablation harness
# ----------------------------------------------------------------------


def _variant_configs(variant: str, seed: int, rbf_config: TrainConfig, rnn_config: RecurrentTrainConfig):
    by_tag = {
        "mim": ("shared", "time-gap-mean"),
        "mim-rand": ("shared", "random"),
        "mis": ("per-variable", "time-gap-mean"),
        "mis-rand": ("per-variable", "random"),
        "mirnn": ("shared", "time-gap-mean"),
    }
    bank_mode, sigma_mode = by_tag[variant]
    return (
        replace(rbf_config, bank_mode=bank_mode, sigma_init_mode=sigma_mode, seed=seed),
        replace(rnn_config, seed=seed),
    )


def impute_variant(variant: str, series: MultivariateSeries, seed: int = 0,
                   rbf_config: TrainConfig | None = None,
                   rnn_config: RecurrentTrainConfig | None = None, knn_k: int = 10):
    """Run one model variant end to end on the original scale.

    Returns (imputed series, fitted bank or None).
    """
    rbf_config = rbf_config or TrainConfig()
    rnn_config = rnn_config or RecurrentTrainConfig()
    if variant == "mean":
        return mean_baseline(series), None
    if variant == "knn":
        return knn_baseline(series, k=knn_k), None
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; pick from {', '.join(VARIANTS)}")
    cfg, rnn_cfg = _variant_configs(variant, seed, rbf_config, rnn_config)
    if variant == "mirnn":
        bank, _ = fit(series, cfg)
        imputed, _, _ = refine_series(series, bank, rnn_cfg)
        return imputed, bank
    imputed, bank, _ = fit_and_impute(series, cfg)
    return imputed, bank


def run_ablation(pair: GroundTruthPair, variants, seeds, rbf_config: TrainConfig | None = None,
                 rnn_config: RecurrentTrainConfig | None = None, knn_k: int = 10, out_dir=None):
    """Evaluate the requested variants on one ground-truth pair.

    Every variant sees the same pair and the same seed list. When
    ``out_dir`` is given, writes results.json, table.csv, and one
    plot-data CSV per bank-producing variant (first seed). The first
    variant failure propagates; see :func:`run_ablation_tolerant` to keep
    going instead.

    Returns the list of :class:`AblationResult`, in variant-major order.
    """
    results, failures = run_ablation_tolerant(
        pair, variants, seeds, rbf_config=rbf_config, rnn_config=rnn_config,
        knn_k=knn_k, out_dir=out_dir,
    )
    if failures:
        raise failures[0][1]
    return results


def run_ablation_tolerant(pair: GroundTruthPair, variants, seeds, rbf_config: TrainConfig | None = None,
                          rnn_config: RecurrentTrainConfig | None = None, knn_k: int = 10, out_dir=None):
    """Like :func:`run_ablation` but a failing variant does not abort the rest.

    Returns (results, failures) where failures is a list of
    (variant, exception). Outputs cover the variants that succeeded.
    """
    rbf_config = rbf_config or TrainConfig()
    rnn_config = rnn_config or RecurrentTrainConfig()
    results = []
    failures = []
    plot_banks = {}
    for variant in variants:
        try:
            for seed in seeds:
                start = time.perf_counter()
                imputed, bank = impute_variant(
                    variant, pair.corrupted, seed=seed,
                    rbf_config=rbf_config, rnn_config=rnn_config, knn_k=knn_k,
                )
                seconds = time.perf_counter() - start
                fingerprint = json.dumps(
                    {"variant": variant, "seed": seed, "rbf": asdict(rbf_config), "rnn": asdict(rnn_config)},
                    sort_keys=True,
                )
                report = evaluate(imputed, pair.truth, pair.eval_mask, pair.corrupted.variable_names)
                report = replace(report, fingerprint=fingerprint, seconds=seconds)
                results.append(AblationResult(variant=variant, seed=seed, report=report))
                if bank is not None and variant not in plot_banks:
                    plot_banks[variant] = (bank, imputed)
        except Exception as exc:  # noqa: BLE001 - isolate variant failures
            failures.append((variant, exc))
    if out_dir is not None and results:
        _write_ablation_outputs(results, pair, plot_banks, out_dir)
    return results, failures


def summarize_ablation(results) -> dict:
    """Per-variant means over seeds: {variant: {"mae": ..., "mre": ..., "mape": ...}}."""
    summary = {}
    for r in results:
        summary.setdefault(r.variant, []).append(r.report)
    return {
        variant: {
            "mae": float(np.mean([r.mae for r in reports])),
            "mre": float(np.mean([r.mre for r in reports])),
            "mape": float(np.mean([r.mape for r in reports])),
            "runs": len(reports),
        }
        for variant, reports in summary.items()
    }


def _write_ablation_outputs(results, pair, plot_banks, out_dir):
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = [
        {
            "variant": r.variant,
            "seed": r.seed,
            "mae": r.report.mae,
            "mre": r.report.mre,
            "mape": r.report.mape,
            "count": r.report.count,
            "seconds": r.report.seconds,
            "per_variable": r.report.per_variable,
            "fingerprint": r.report.fingerprint,
        }
        for r in results
    ]
    (out / "results.json").write_text(json.dumps(doc, indent=1))

    summary = summarize_ablation(results)
    with open(out / "table.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "mae", "mre", "mape", "runs"])
        for variant, row in summary.items():
            writer.writerow([variant, row["mae"], row["mre"], row["mape"], row["runs"]])

    for variant, (bank, imputed) in plot_banks.items():
        emit_plot_data(pair, bank, imputed, out / f"plot_{variant}.csv")


# ----------------------------------------------------------------------
# plot data
# ----------------------------------------------------------------------


def _dense_grid(timestamps, per_step: int = 10) -> np.ndarray:
    """per_step points per original timestamp; the last block reuses the
    final gap (the curve extends smoothly past the end). Every original
    timestamp appears as its block's first point."""
    t = np.asarray(timestamps, dtype=float)
    n = t.shape[0]
    gaps = np.diff(t)
    last = gaps[-1] if n > 1 else 1.0
    gaps = np.append(gaps, last)
    offsets = np.arange(per_step) / per_step
    return (t[:, None] + offsets[None, :] * gaps[:, None]).ravel()


def emit_plot_data(pair: GroundTruthPair, bank: GrbfBank, imputed: MultivariateSeries, path) -> None:
    """Write tidy plot rows: the continuous function sampled at 10x density
    ("cf" rows), every observed point ("observed"), and every hidden cell
    ("eval" rows carrying the imputed value and the truth).

    Row count: 10 * N per variable + #observed + #eval cells.
    """
    series = pair.corrupted
    grid = _dense_grid(series.timestamps)
    cf = cf_eval_series(bank, grid)
    if bank.norm_stats is not None:
        cf = denormalize_matrix(cf, bank.norm_stats)
    obs = series.mask > 0.5
    hidden = pair.eval_mask > 0.5
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variable", "timestamp", "kind", "value", "value2"])
        for j, name in enumerate(series.variable_names):
            for g, v in zip(grid, cf[:, j]):
                writer.writerow([name, repr(float(g)), "cf", repr(float(v)), ""])
        for i, j in np.argwhere(obs):
            writer.writerow(
                [series.variable_names[j], repr(float(series.timestamps[i])), "observed",
                 repr(float(series.values[i, j])), ""]
            )
        for i, j in np.argwhere(hidden):
            writer.writerow(
                [series.variable_names[j], repr(float(series.timestamps[i])), "eval",
                 repr(float(imputed.values[i, j])), repr(float(pair.truth[i, j]))]
            )


def load_plot_data(path):
    """Read back :func:`emit_plot_data` rows as a list of dicts."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for row in reader:
            rows.append(
                {
                    "variable": row["variable"],
                    "timestamp": float(row["timestamp"]),
                    "kind": row["kind"],
                    "value": float(row["value"]),
                    "value2": float(row["value2"]) if row["value2"] else None,
                }
            )
    return rows
