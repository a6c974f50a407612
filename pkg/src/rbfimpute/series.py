"""Data model for incomplete multivariate time series.

A series couples a strictly increasing timestamp vector with an N x M value
matrix and an N x M binary observation mask (1 = observed, 0 = missing).
Missing cells hold NaN as a storage sentinel, but every computation in this
package gates on the mask and never reads the sentinel, so the stored value
at a masked-out cell is irrelevant.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

MISSING_SENTINEL = np.nan


@dataclass(frozen=True)
class MultivariateSeries:
    """Incomplete multivariate time series.

    Attributes
    ----------
    timestamps : np.ndarray, shape (N,)
        Strictly increasing real time stamps (arbitrary units).
    values : np.ndarray, shape (N, M)
        Value matrix; row n corresponds to timestamps[n]. Cells with
        mask == 0 hold a sentinel and must never be read.
    mask : np.ndarray, shape (N, M)
        Observation mask, 1.0 = observed, 0.0 = missing.
    variable_names : tuple of str, length M
    """

    timestamps: np.ndarray
    values: np.ndarray
    mask: np.ndarray
    variable_names: tuple = field(default=())

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]

    def observed_values(self) -> np.ndarray:
        """Values with masked-out cells replaced by 0, safe for arithmetic."""
        return np.where(self.mask > 0.5, self.values, 0.0)

    def is_fully_observed(self) -> bool:
        return bool(np.all(self.mask > 0.5))


@dataclass(frozen=True)
class TimeGapMatrix:
    """Per-variable elapsed time since the last observed value.

    deltas[n, m] is 0 for n = 0; otherwise it is the time from the most
    recent row < n at which variable m was observed (accumulating across
    missing rows).
    """

    deltas: np.ndarray


@dataclass(frozen=True)
class NormalizationStats:
    """Per-variable mean and sample standard deviation over observed cells."""

    mean: np.ndarray
    std: np.ndarray


def new_series(timestamps, values, mask, names=None) -> MultivariateSeries:
    """Validate inputs and build a series, writing sentinels at masked cells.

    Raises
    ------
    ValueError
        On dimension mismatch, non-increasing timestamps, or a mask entry
        outside {0, 1}.
    """
    timestamps = np.asarray(timestamps, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = np.asarray(mask, dtype=float)

    if timestamps.ndim != 1:
        raise ValueError("timestamps must be one-dimensional")
    if values.ndim != 2:
        raise ValueError("values must be an N x M matrix")
    if values.shape != mask.shape:
        raise ValueError(
            f"values shape {values.shape} does not match mask shape {mask.shape}"
        )
    n, m = values.shape
    if n == 0 or m == 0:
        raise ValueError("series must have at least one row and one variable")
    if timestamps.shape[0] != n:
        raise ValueError(
            f"{timestamps.shape[0]} timestamps for {n} value rows"
        )
    if n > 1 and not np.all(np.diff(timestamps) > 0):
        raise ValueError("non-increasing timestamps")
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise ValueError("mask not binary: entries must be 0 or 1")

    if names is None:
        names = tuple(f"x{i}" for i in range(m))
    else:
        names = tuple(str(s) for s in names)
        if len(names) != m:
            raise ValueError(f"{len(names)} names for {m} variables")

    values = np.where(mask > 0.5, values, MISSING_SENTINEL)
    return MultivariateSeries(timestamps, values, mask, names)


def with_values(series: MultivariateSeries, values, mask=None) -> MultivariateSeries:
    """Copy of ``series`` with a new value matrix (and optionally mask)."""
    values = np.asarray(values, dtype=float)
    if values.shape != series.values.shape:
        raise ValueError("replacement values must keep the original shape")
    out = replace(series, values=values)
    if mask is not None:
        out = replace(out, mask=np.asarray(mask, dtype=float))
    return out


def time_gap(series: MultivariateSeries) -> TimeGapMatrix:
    """Elapsed time since the last observation, per variable.

    Row 0 is zero. For n > 0 the gap restarts at t_n - t_{n-1} when the
    previous row was observed and accumulates the step otherwise.
    """
    t = series.timestamps
    mask = series.mask
    n, m = mask.shape
    deltas = np.zeros((n, m))
    if n == 1:
        return TimeGapMatrix(deltas)
    steps = np.diff(t)  # (N-1,)
    for i in range(1, n):
        prev_observed = mask[i - 1] > 0.5
        deltas[i] = np.where(prev_observed, steps[i - 1], deltas[i - 1] + steps[i - 1])
    return TimeGapMatrix(deltas)


def normalize(series: MultivariateSeries):
    """Z-score each variable over its observed cells.

    Uses the sample (n-1) standard deviation. Masked cells keep their
    sentinel. Returns the normalized series and the stats needed to invert.

    Raises
    ------
    ValueError
        If a variable has fewer than two observed cells or zero spread.
    """
    obs = series.mask > 0.5
    mean = np.zeros(series.n_vars)
    std = np.zeros(series.n_vars)
    for j in range(series.n_vars):
        col = series.values[obs[:, j], j]
        if col.size < 2:
            raise ValueError(
                f"variable {series.variable_names[j]!r} needs >= 2 observed cells"
            )
        mean[j] = col.mean()
        std[j] = col.std(ddof=1)
        if std[j] <= 0.0:
            raise ValueError(
                f"zero spread: variable {series.variable_names[j]!r} is constant"
            )
    normed = np.where(obs, (series.values - mean) / std, MISSING_SENTINEL)
    return with_values(series, normed), NormalizationStats(mean, std)


def apply_normalization(series: MultivariateSeries, stats: NormalizationStats) -> MultivariateSeries:
    """Z-score observed cells with precomputed stats (no recomputation)."""
    obs = series.mask > 0.5
    normed = np.where(obs, (series.values - stats.mean) / stats.std, MISSING_SENTINEL)
    return with_values(series, normed)


def denormalize(series: MultivariateSeries, stats: NormalizationStats) -> MultivariateSeries:
    """Invert :func:`normalize` on the observed cells of ``series``."""
    obs = series.mask > 0.5
    raw = np.where(obs, series.values * stats.std + stats.mean, MISSING_SENTINEL)
    return with_values(series, raw)


def denormalize_matrix(values: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """Invert normalization on a dense N x M matrix (no mask gating)."""
    return values * stats.std + stats.mean


def split_windows(series: MultivariateSeries, length: int, stride: int | None = None):
    """Cut consecutive windows of ``length`` rows at the given stride.

    The stride defaults to ``length`` (non-overlapping windows). A final
    partial window is dropped.
    """
    if stride is None:
        stride = length
    n = series.n_steps
    if not 1 <= length <= n:
        raise ValueError(f"window length {length} outside [1, {n}]")
    if stride < 1:
        raise ValueError("stride must be positive")
    windows = []
    for start in range(0, n - length + 1, stride):
        sl = slice(start, start + length)
        windows.append(
            MultivariateSeries(
                series.timestamps[sl],
                series.values[sl],
                series.mask[sl],
                series.variable_names,
            )
        )
    return windows


def reverse_series(series: MultivariateSeries) -> MultivariateSeries:
    """Time-reverse a series, remapping timestamps so they stay increasing.

    The reversed timestamps preserve the gap structure: the gap between
    consecutive reversed rows equals the original gap read backwards.
    """
    t = series.timestamps
    rev_t = t[-1] - t[::-1]
    return MultivariateSeries(
        rev_t,
        series.values[::-1].copy(),
        series.mask[::-1].copy(),
        series.variable_names,
    )
