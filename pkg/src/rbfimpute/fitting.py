"""Incremental training of the shared Gaussian basis bank.

Fitting proceeds in stages. Each stage initializes a block of bumps from the
current regression target (centers at the largest-magnitude observed
timestamps, weights copied from the target, widths from the mean time gap),
then runs full-batch gradient descent on the masked mean squared error of
that block alone. After a stage, the block's contribution is subtracted from
the target at observed cells and the next stage fits the residual. Stages
stop once the cumulative fit's observed-cell MAPE drops under a threshold,
or at a stage cap.

Center/width gradients are pooled across variables (the shared bumps track
every variable at once); weight gradients are per variable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .bank import GrbfBank, append_stage, basis_matrix, cf_eval_series, empty_bank, impute_with_cf
from .series import (
    MultivariateSeries,
    denormalize_matrix,
    normalize,
    time_gap,
    with_values,
)

SIGMA_FLOOR = 1e-8
MAPE_TRUTH_FLOOR = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for the staged bank fit.

    sigma_init_mode is "time-gap-mean" (every width set to the mean time
    gap) or "random" (absolute unit-normal draws). bank_mode is "shared"
    (one bank for all variables) or "per-variable" (independent banks,
    packed into one block-diagonal-weight bank). k_per_stage counts the
    bumps a stage adds to the bank as a whole; per-variable mode splits it
    evenly across the variables so the two modes compare at matched
    capacity.
    """

    k_per_stage: int = 32
    max_stages: int = 5
    mape_threshold: float = 0.05
    lr: float = 1e-2
    epochs_per_stage: int = 2000
    sigma_init_mode: str = "time-gap-mean"
    bank_mode: str = "shared"
    seed: int = 0
    normalize: bool = True
    rescale_time: bool = True

    def __post_init__(self):
        if self.k_per_stage <= 0:
            raise ValueError("k_per_stage must be positive")
        if self.max_stages <= 0:
            raise ValueError("max_stages must be positive")
        if not 0.0 < self.mape_threshold < 1.0:
            raise ValueError("mape_threshold must lie in (0, 1)")
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")
        if self.epochs_per_stage <= 0:
            raise ValueError("epochs_per_stage must be positive")
        if self.sigma_init_mode not in ("time-gap-mean", "random"):
            raise ValueError(f"unknown sigma_init_mode {self.sigma_init_mode!r}")
        if self.bank_mode not in ("shared", "per-variable"):
            raise ValueError(f"unknown bank_mode {self.bank_mode!r}")


@dataclass(frozen=True)
class StageReport:
    """Cumulative observed-cell fit quality after one stage."""

    stage: int
    mape: float
    mae: float
    epochs: int


def init_centers(target: np.ndarray, series: MultivariateSeries, k: int) -> np.ndarray:
    """Pick K center times at the largest-magnitude target timestamps.

    Each timestamp is scored by the largest |target| over its observed
    cells; ties break toward earlier timestamps. If K exceeds the number of
    observed timestamps the ranking wraps and duplicates are jittered apart
    by a fraction of the mean time gap.
    """
    if k <= 0:
        raise ValueError("k must be positive")
    obs = series.mask > 0.5
    magnitude = np.where(obs, np.abs(target), -np.inf)  # (N, M)
    score = magnitude.max(axis=1)  # (N,)
    candidates = np.flatnonzero(score > -np.inf)
    if candidates.size == 0:
        raise ValueError("no observed cells to place centers on")
    # stable sort on (-score, index): descending score, earlier time wins ties
    order = candidates[np.argsort(-score[candidates], kind="stable")]
    deltas = time_gap(series).deltas
    mean_gap = deltas[1:].mean() if deltas.shape[0] > 1 else 1.0
    centers = np.empty(k)
    for i in range(k):
        base = series.timestamps[order[i % order.size]]
        wrap = i // order.size
        centers[i] = base + wrap * 1e-3 * mean_gap
    return centers


def init_weights(target: np.ndarray, series: MultivariateSeries, centers: np.ndarray) -> np.ndarray:
    """Copy the target value at each center's timestamp into the weights.

    A variable missing at a center's timestamp (the center was driven by
    another variable) starts at weight 0.
    """
    idx = np.abs(series.timestamps[None, :] - centers[:, None]).argmin(axis=1)  # (K,)
    obs = series.mask[idx] > 0.5  # (K, M)
    return np.where(obs, target[idx], 0.0)


def init_sigmas(deltas: np.ndarray, mode: str, k: int, seed: int = 0) -> np.ndarray:
    """Initial bump widths.

    "time-gap-mean" sets every width to the mean time gap over all rows
    after the first and all variables. "random" draws |unit normal| + 1e-3
    per bump, seeded.
    """
    if mode == "time-gap-mean":
        if deltas.shape[0] < 2:
            raise ValueError("cannot take a time-gap mean of a single-row series")
        mean_gap = float(deltas[1:].mean())
        if mean_gap <= 0.0:
            raise ValueError("degenerate time gaps: mean is zero")
        return np.full(k, mean_gap)
    if mode == "random":
        rng = np.random.default_rng(seed)
        return np.abs(rng.standard_normal(k)) + 1e-3
    raise ValueError(f"unknown sigma_init_mode {mode!r}")


def _stage_loss_and_grads(bank, stage, target, series):
    """Masked-MSE loss of one stage block and its parameter gradients.

    Returns (loss, d_weights (k, M), d_centers (k,), d_sigmas (k,)) for the
    bumps in ``stage`` = (start, stop). The loss is the mean over observed
    cells of the squared gap between the block's own prediction and the
    target; center/width gradients pool over variables.
    """
    start, stop = stage
    u = bank.to_internal_time(series.timestamps)
    obs = series.mask > 0.5
    n_obs = obs.sum()

    c = bank.centers[start:stop]  # (k,)
    s = bank.sigmas[start:stop]  # (k,)
    w = bank.weights[start:stop]  # (k, M)

    diff = u[:, None] - c[None, :]  # (N, k)
    phi = np.exp(-(diff**2) / s[None, :])  # (N, k)
    pred = phi @ w  # (N, M)
    err = np.where(obs, pred - np.where(obs, target, 0.0), 0.0)  # (N, M)
    loss = float((err**2).sum() / n_obs)

    scale = 2.0 / n_obs
    d_w = scale * (phi.T @ err)  # (k, M)
    back = err @ w.T  # (N, k), pooled over variables
    d_c = scale * (back * phi * (2.0 * diff / s[None, :])).sum(axis=0)  # (k,)
    d_s = scale * (back * phi * (diff**2 / s[None, :] ** 2)).sum(axis=0)  # (k,)
    return loss, d_w, d_c, d_s


def grad_step(bank: GrbfBank, stage, target: np.ndarray, series: MultivariateSeries, lr: float):
    """One full-batch gradient-descent step on one stage's bumps.

    Parameters outside ``stage`` = (start, stop) are untouched; widths are
    clamped at a small positive floor. Returns the updated bank and the
    pre-step loss.

    Raises
    ------
    FloatingPointError
        If the loss or a gradient is not finite.
    """
    start, stop = stage
    loss, d_w, d_c, d_s = _stage_loss_and_grads(bank, stage, target, series)
    if not np.isfinite(loss) or not (
        np.all(np.isfinite(d_w)) and np.all(np.isfinite(d_c)) and np.all(np.isfinite(d_s))
    ):
        raise FloatingPointError(
            f"non-finite loss or gradient while training bumps [{start}, {stop})"
        )
    centers = bank.centers.copy()
    sigmas = bank.sigmas.copy()
    weights = bank.weights.copy()
    weights[start:stop] -= lr * d_w
    centers[start:stop] -= lr * d_c
    sigmas[start:stop] = np.maximum(sigmas[start:stop] - lr * d_s, SIGMA_FLOOR)
    return replace(bank, centers=centers, sigmas=sigmas, weights=weights), loss


def observed_mape(pred: np.ndarray, series: MultivariateSeries) -> float:
    """Mean absolute percentage error over observed cells.

    Cells whose true magnitude is below a small floor are excluded from the
    mean (division guard). Returns 0.0 when no cell survives the guard.
    """
    obs = series.mask > 0.5
    truth = np.where(obs, series.values, 0.0)
    valid = obs & (np.abs(truth) >= MAPE_TRUTH_FLOOR)
    if not valid.any():
        return 0.0
    ratio = np.abs(pred - truth)[valid] / np.abs(truth)[valid]
    return float(ratio.mean())


def observed_mae(pred: np.ndarray, series: MultivariateSeries) -> float:
    """Mean absolute error over observed cells."""
    obs = series.mask > 0.5
    truth = np.where(obs, series.values, 0.0)
    return float(np.abs(pred - truth)[obs].mean())


def fit_stage(bank: GrbfBank | None, target: np.ndarray, series: MultivariateSeries, config: TrainConfig, stage_seed: int = 0):
    """Add one stage of bumps fitted to the current target.

    Initializes k_per_stage bumps from the target, appends them, and trains
    only the new block for epochs_per_stage steps. Earlier stages are
    untouched. The report's MAPE/MAE describe the cumulative fit against the
    original series.
    """
    if bank is None:
        bank = empty_bank(series.n_vars, series.variable_names)
    centers = init_centers(target, series, config.k_per_stage)
    weights = init_weights(target, series, centers)
    sigmas = init_sigmas(
        time_gap(series).deltas, config.sigma_init_mode, config.k_per_stage, stage_seed
    )
    bank = append_stage(bank, centers, sigmas, weights)
    stage = bank.stage_boundaries[-1]
    bank = _calibrate_stage_scale(bank, stage, target, series)
    for _ in range(config.epochs_per_stage):
        bank, _ = grad_step(bank, stage, target, series, config.lr)
    cumulative = cf_eval_series(bank, series.timestamps)
    report = StageReport(
        stage=len(bank.stage_boundaries) - 1,
        mape=observed_mape(cumulative, series),
        mae=observed_mae(cumulative, series),
        epochs=config.epochs_per_stage,
    )
    return bank, report


def _calibrate_stage_scale(bank: GrbfBank, stage, target: np.ndarray, series: MultivariateSeries) -> GrbfBank:
    """Least-squares rescale of a fresh stage's weights, per variable.

    Copied target values on strongly overlapping bumps sum to a large
    overshoot (the wider the bumps, the worse), and plain gradient descent
    recovers slowly. One scalar per variable fixes the magnitude at
    initialization while keeping the weights proportional to the copied
    values; gradient descent then refines shape, centers, and widths.
    """
    start, stop = stage
    phi = basis_matrix(bank, series.timestamps)[:, start:stop]
    pred = phi @ bank.weights[start:stop]  # (N, M)
    obs = series.mask > 0.5
    target_f = np.where(obs, target, 0.0)
    pred_f = np.where(obs, pred, 0.0)
    num = (pred_f * target_f).sum(axis=0)  # (M,)
    den = (pred_f**2).sum(axis=0)
    alpha = np.where(den > 1e-12, num / np.maximum(den, 1e-12), 1.0)
    weights = bank.weights.copy()
    weights[start:stop] *= alpha[None, :]
    return replace(bank, weights=weights)


def update_residual(target: np.ndarray, bank: GrbfBank, stage, series: MultivariateSeries) -> np.ndarray:
    """Subtract one stage's contribution from the target at observed cells."""
    start, stop = stage
    phi = basis_matrix(bank, series.timestamps)[:, start:stop]
    contribution = phi @ bank.weights[start:stop]
    obs = series.mask > 0.5
    return np.where(obs, np.where(obs, target, 0.0) - contribution, target)


def fit(series: MultivariateSeries, config: TrainConfig):
    """Fit a bank to a series by the staged procedure.

    With config.normalize the series is z-scored first and the returned
    bank carries the stats (its weights live on the normalized scale).
    With config.rescale_time training runs on timestamps rescaled to a
    mean step of 1 and the bank stores the affine map, so fits do not
    depend on the raw time units. In "per-variable" mode each variable
    gets an independent single-column pipeline; the results are packed
    into one bank whose weight matrix is block diagonal, so evaluation is
    uniform across modes.

    Returns (bank, stage reports).
    """
    if not np.any(series.mask > 0.5):
        raise ValueError("series has no observed data")
    stats = None
    if config.normalize:
        series, stats = normalize(series)

    offset, scale = 0.0, 1.0
    if config.rescale_time and series.n_steps > 1:
        offset = float(series.timestamps[0])
        scale = 1.0 / float(np.diff(series.timestamps).mean())
        series = MultivariateSeries(
            (series.timestamps - offset) * scale,
            series.values,
            series.mask,
            series.variable_names,
        )

    if config.bank_mode == "per-variable":
        bank, reports = _fit_per_variable(series, config)
    else:
        bank, reports = _fit_shared(series, config)
    return replace(bank, norm_stats=stats, time_offset=offset, time_scale=scale), reports


def _fit_shared(series, config):
    bank = empty_bank(series.n_vars, series.variable_names)
    target = series.observed_values()
    reports = []
    for stage_idx in range(config.max_stages):
        bank, report = fit_stage(bank, target, series, config, config.seed + stage_idx)
        reports.append(report)
        if report.mape <= config.mape_threshold:
            break
        target = update_residual(target, bank, bank.stage_boundaries[-1], series)
    return bank, reports


def _fit_per_variable(series, config):
    per_var_k = max(1, -(-config.k_per_stage // series.n_vars))  # ceil division
    sub_config = replace(config, bank_mode="shared", normalize=False, k_per_stage=per_var_k)
    banks = []
    reports = []
    for j in range(series.n_vars):
        sub = MultivariateSeries(
            series.timestamps,
            series.values[:, j : j + 1],
            series.mask[:, j : j + 1],
            (series.variable_names[j],),
        )
        sub_bank, sub_reports = _fit_shared(sub, sub_config)
        banks.append(sub_bank)
        reports.extend(sub_reports)

    centers = np.concatenate([b.centers for b in banks])
    sigmas = np.concatenate([b.sigmas for b in banks])
    weights = np.zeros((centers.shape[0], series.n_vars))
    boundaries = []
    offset = 0
    for j, b in enumerate(banks):
        weights[offset : offset + b.n_basis, j] = b.weights[:, 0]
        boundaries.extend(
            (offset + start, offset + stop) for start, stop in b.stage_boundaries
        )
        offset += b.n_basis
    packed = GrbfBank(
        centers=centers,
        sigmas=sigmas,
        weights=weights,
        stage_boundaries=tuple(boundaries),
        variable_names=series.variable_names,
    )
    return packed, reports


def fit_and_impute(series: MultivariateSeries, config: TrainConfig):
    """Fit a bank and fill the series' missing cells on the original scale.

    Observed cells pass through bit-for-bit. Returns (imputed series, bank,
    stage reports).
    """
    bank, reports = fit(series, config)
    if bank.norm_stats is None:
        return impute_with_cf(series, bank), bank, reports
    cf = cf_eval_series(bank, series.timestamps)
    cf_raw = denormalize_matrix(cf, bank.norm_stats)
    filled = np.where(series.mask > 0.5, series.values, cf_raw)
    imputed = with_values(series, filled, mask=np.ones_like(series.mask))
    return imputed, bank, reports
