"""Dataset ingestion, missingness injection, and the synthetic benchmark.

CSV contract: first column ``timestamp`` (real), one column per variable,
empty cell = missing. A sidecar mask CSV of identical layout holding {0,1}
overrides emptiness when supplied.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .series import MultivariateSeries, new_series


@dataclass(frozen=True)
class CorruptionSpec:
    """How to hide cells: mode "random" or "long-term"."""

    mode: str = "random"
    rate: float = 0.3
    term_range: tuple = (50, 80)
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("random", "long-term"):
            raise ValueError(f"unknown corruption mode {self.mode!r}")
        if not 0.0 < self.rate < 1.0:
            raise ValueError("rate must lie in (0, 1)")
        lo, hi = self.term_range
        if lo > hi or lo < 1:
            raise ValueError("term_range must satisfy 1 <= min <= max")


@dataclass(frozen=True)
class GroundTruthPair:
    """A corrupted series plus the hidden truth for evaluation.

    eval_mask is 1 exactly where a cell was hidden by the injector (known
    truth, invisible to models); it never overlaps the corrupted series'
    observation mask.
    """

    corrupted: MultivariateSeries
    truth: np.ndarray
    eval_mask: np.ndarray


def corrupt(series: MultivariateSeries, spec: CorruptionSpec) -> GroundTruthPair:
    if spec.mode == "random":
        return inject_random(series, spec.rate, spec.seed)
    return inject_long_term(series, spec.rate, spec.term_range, spec.seed)


# ----------------------------------------------------------------------
# CSV
# ----------------------------------------------------------------------


def load_csv(path, mask_path=None) -> MultivariateSeries:
    """Read a series per the CSV contract.

    Raises
    ------
    ValueError
        On ragged rows (with the line number), unparsable numbers, a
        missing ``timestamp`` header, or non-increasing timestamps.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "timestamp":
        raise ValueError(f"{path}: first column must be 'timestamp'")
    names = header[1:]
    if not names:
        raise ValueError(f"{path}: no variable columns")

    timestamps, values, mask = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValueError(
                f"{path}:{lineno}: ragged row ({len(row)} cells, expected {len(header)})"
            )
        try:
            timestamps.append(float(row[0]))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: bad timestamp {row[0]!r}") from exc
        vrow, mrow = [], []
        for name, cell in zip(names, row[1:]):
            cell = cell.strip()
            if cell == "":
                vrow.append(0.0)
                mrow.append(0.0)
            else:
                try:
                    vrow.append(float(cell))
                except ValueError as exc:
                    raise ValueError(
                        f"{path}:{lineno}: bad value {cell!r} in column {name!r}"
                    ) from exc
                mrow.append(1.0)
        values.append(vrow)
        mask.append(mrow)

    values = np.array(values)
    mask = np.array(mask)
    if mask_path is not None:
        sidecar = _load_mask_csv(mask_path, np.array(timestamps), names)
        conflict = (sidecar > 0.5) & (mask < 0.5)
        if conflict.any():
            raise ValueError(f"{mask_path}: mask marks an empty cell as observed")
        mask = sidecar
    return new_series(np.array(timestamps), values, mask, names)


def _load_mask_csv(path, timestamps, names):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = [h.strip() for h in rows[0]]
    if header != ["timestamp"] + list(names):
        raise ValueError(f"{path}: mask header must match the data header")
    if len(rows) - 1 != timestamps.shape[0]:
        raise ValueError(f"{path}: mask has {len(rows) - 1} rows, expected {timestamps.shape[0]}")
    mask = np.zeros((timestamps.shape[0], len(names)))
    for i, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise ValueError(f"{path}:{i + 2}: ragged mask row")
        mask[i] = [float(c) for c in row[1:]]
    return mask


def save_csv(series: MultivariateSeries, path) -> None:
    """Write a series per the CSV contract (missing cells left empty)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp"] + list(series.variable_names))
        for i in range(series.n_steps):
            row = [repr(float(series.timestamps[i]))]
            for j in range(series.n_vars):
                if series.mask[i, j] > 0.5:
                    row.append(repr(float(series.values[i, j])))
                else:
                    row.append("")
            writer.writerow(row)


def save_matrix_csv(timestamps, matrix, names, path, as_int=False) -> None:
    """Write a dense matrix (truth or mask) with the contract's layout."""
    matrix = np.asarray(matrix)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp"] + list(names))
        for i, t in enumerate(timestamps):
            if as_int:
                row = [repr(float(t))] + [str(int(v)) for v in matrix[i]]
            else:
                row = [repr(float(t))] + [repr(float(v)) for v in matrix[i]]
            writer.writerow(row)


# ----------------------------------------------------------------------
# missingness injection
# ----------------------------------------------------------------------


def inject_random(series: MultivariateSeries, rate: float, seed: int = 0) -> GroundTruthPair:
    """Hide round(rate * #observed) observed cells uniformly, seeded.

    One observed cell per variable is protected so no variable goes
    completely unobserved.

    Raises
    ------
    ValueError
        If the budget cannot be met while keeping every variable observed.
    """
    if not 0.0 < rate < 1.0:
        raise ValueError("rate must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    obs = series.mask > 0.5
    budget = int(round(rate * obs.sum()))

    protected = np.zeros_like(obs)
    for j in range(series.n_vars):
        rows = np.flatnonzero(obs[:, j])
        if rows.size == 0:
            raise ValueError(f"variable {series.variable_names[j]!r} has no observations")
        protected[rng.choice(rows), j] = True
    pool = np.argwhere(obs & ~protected)
    if budget > pool.shape[0]:
        raise ValueError(
            f"hiding {budget} cells would leave a variable with zero observations"
        )
    picked = pool[rng.choice(pool.shape[0], size=budget, replace=False)]

    eval_mask = np.zeros_like(series.mask)
    eval_mask[picked[:, 0], picked[:, 1]] = 1.0
    return _pair_from_eval_mask(series, eval_mask)


def inject_long_term(series: MultivariateSeries, rate: float, term_range=(50, 80), seed: int = 0) -> GroundTruthPair:
    """Hide cells in long contiguous per-variable runs plus random singles.

    Non-overlapping runs with lengths uniform in ``term_range`` are placed
    at random (variable, start) positions until the hidden-cell budget
    round(rate * #cells) would be exceeded; the remainder is finished with
    random single cells, making the rate exact. Seeded and deterministic.

    Raises
    ------
    ValueError
        If the minimum term exceeds the series length.
    """
    if not 0.0 < rate < 1.0:
        raise ValueError("rate must lie in (0, 1)")
    lo, hi = int(term_range[0]), int(term_range[1])
    if not 1 <= lo <= hi:
        raise ValueError("term_range must satisfy 1 <= min <= max")
    n, m = series.mask.shape
    if lo > n:
        raise ValueError(f"minimum term {lo} exceeds series length {n}")
    rng = np.random.default_rng(seed)
    obs = series.mask > 0.5
    budget = int(round(rate * n * m))
    hidden = np.zeros((n, m), dtype=bool)

    remaining = budget
    failures = 0
    while remaining >= lo and failures < 1000:
        length = int(rng.integers(lo, min(hi, remaining) + 1))
        j = int(rng.integers(m))
        start = int(rng.integers(0, n - length + 1))
        run = slice(start, start + length)
        if hidden[run, j].any() or not obs[run, j].all():
            failures += 1
            continue
        if obs[:, j].sum() - hidden[:, j].sum() - length < 1:
            failures += 1  # would wipe out the variable entirely
            continue
        hidden[run, j] = True
        remaining -= length
        failures = 0
    if remaining >= lo:
        raise ValueError("could not place enough runs; lower the rate or terms")

    if remaining > 0:
        pool = np.argwhere(obs & ~hidden)
        keep = np.ones(pool.shape[0], dtype=bool)
        for j in range(m):  # protect one surviving cell per variable
            rows = np.flatnonzero(obs[:, j] & ~hidden[:, j])
            if rows.size == 0:
                raise ValueError(f"variable {series.variable_names[j]!r} fully hidden")
            protect_row = rows[rng.integers(rows.size)]
            keep &= ~((pool[:, 0] == protect_row) & (pool[:, 1] == j))
        pool = pool[keep]
        if remaining > pool.shape[0]:
            raise ValueError("single-cell remainder exceeds the available cells")
        picked = pool[rng.choice(pool.shape[0], size=remaining, replace=False)]
        hidden[picked[:, 0], picked[:, 1]] = True

    return _pair_from_eval_mask(series, hidden.astype(float))


def _pair_from_eval_mask(series: MultivariateSeries, eval_mask: np.ndarray) -> GroundTruthPair:
    new_mask = series.mask * (1.0 - eval_mask)
    corrupted = new_series(series.timestamps, series.observed_values(), new_mask, series.variable_names)
    truth = series.values.copy()
    return GroundTruthPair(corrupted=corrupted, truth=truth, eval_mask=eval_mask)


def restore_pair(pair: GroundTruthPair) -> MultivariateSeries:
    """Un-hide the evaluation cells, reconstructing the original series."""
    mask = np.minimum(pair.corrupted.mask + pair.eval_mask, 1.0)
    values = np.where(mask > 0.5, pair.truth, pair.corrupted.values)
    return new_series(pair.corrupted.timestamps, values, mask, pair.corrupted.variable_names)


# ----------------------------------------------------------------------
# synthetic benchmark
# ----------------------------------------------------------------------


def _cyclic_drift(x: np.ndarray, forcing: float) -> np.ndarray:
    return (np.roll(x, -1) - np.roll(x, 2)) * np.roll(x, 1) - x + forcing


def lorenz96(n: int = 200, d: int = 5, forcing: float = 8.0, dt: float = 0.05, seed: int = 0, perturbation: float = 0.01, spinup: int = 0) -> MultivariateSeries:
    """Fully observed trajectory of the cyclic shell model
    dx_i/dt = (x_{i+1} - x_{i-2}) x_{i-1} - x_i + F, integrated with
    fixed-step RK4 from the equilibrium (F, ..., F) plus a seeded
    single-coordinate perturbation.

    ``spinup`` extra steps are integrated (and discarded) before recording,
    useful to start on the attractor rather than near the equilibrium.

    Raises
    ------
    ValueError
        On d < 4, or on numerical blow-up (suggesting a smaller dt).
    """
    if d < 4:
        raise ValueError("the cyclic drift needs at least 4 variables")
    rng = np.random.default_rng(seed)
    x = np.full(d, float(forcing))
    x[rng.integers(d)] += perturbation

    def rk4_step(state):
        k1 = _cyclic_drift(state, forcing)
        k2 = _cyclic_drift(state + 0.5 * dt * k1, forcing)
        k3 = _cyclic_drift(state + 0.5 * dt * k2, forcing)
        k4 = _cyclic_drift(state + dt * k3, forcing)
        return state + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    for _ in range(spinup):
        x = rk4_step(x)
    states = np.empty((n, d))
    states[0] = x
    for i in range(1, n):
        x = rk4_step(x)
        if not np.all(np.isfinite(x)):
            raise ValueError(f"state blew up at step {i}; try a smaller dt than {dt}")
        states[i] = x
    timestamps = np.arange(n) * dt
    return new_series(timestamps, states, np.ones((n, d)), tuple(f"x{i}" for i in range(d)))
