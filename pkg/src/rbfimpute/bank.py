"""Shared Gaussian radial-basis bank and per-variable continuous functions.

A bank holds K Gaussian bumps exp(-(t - c_k)^2 / sigma_k) whose centers and
widths are shared by all variables, plus a K x M weight matrix giving each
variable its own linear combination. Evaluating the weighted sum at any real
t yields a smooth continuous function per variable, usable at timestamps
where the original data is missing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .series import MultivariateSeries, NormalizationStats, with_values

BANK_FORMAT = "grbf-bank"
BANK_VERSION = 1


class BankFormatError(ValueError):
    """Raised when a bank file is malformed or has an unsupported version."""


@dataclass(frozen=True)
class GrbfBank:
    """Shared Gaussian basis bank with per-variable weights.

    Attributes
    ----------
    centers : np.ndarray, shape (K,)
        Center time of each Gaussian bump.
    sigmas : np.ndarray, shape (K,)
        Positive width parameter of each bump (squared-time units).
    weights : np.ndarray, shape (K, M)
        Column m holds variable m's linear weights over the shared bumps.
    stage_boundaries : tuple of (start, stop)
        Contiguous index ranges of bumps added by each training stage.
    variable_names : tuple of str
    norm_stats : NormalizationStats or None
        Scaling the bank was trained under, kept so that serialized banks
        can reproduce imputations on the original scale.
    time_offset, time_scale : float
        Affine map applied to query times before bump evaluation:
        u = (t - time_offset) * time_scale. Fitting rescales time so the
        mean sampling step is 1, which keeps gradient-descent step sizes
        meaningful regardless of the raw time units; centers and sigmas
        live in the rescaled units.
    """

    centers: np.ndarray
    sigmas: np.ndarray
    weights: np.ndarray
    stage_boundaries: tuple = field(default=())
    variable_names: tuple = field(default=())
    norm_stats: NormalizationStats | None = None
    time_offset: float = 0.0
    time_scale: float = 1.0

    def to_internal_time(self, t):
        return (np.asarray(t, dtype=float) - self.time_offset) * self.time_scale

    @property
    def n_basis(self) -> int:
        return self.centers.shape[0]

    @property
    def n_vars(self) -> int:
        return self.weights.shape[1]


def empty_bank(n_vars: int, variable_names=(), norm_stats=None) -> GrbfBank:
    """Bank with zero bumps; the continuous function is identically 0."""
    return GrbfBank(
        centers=np.zeros(0),
        sigmas=np.zeros(0),
        weights=np.zeros((0, n_vars)),
        stage_boundaries=(),
        variable_names=tuple(variable_names) or tuple(f"x{i}" for i in range(n_vars)),
        norm_stats=norm_stats,
    )


@dataclass(frozen=True)
class ContinuousFunction:
    """Callable view of a bank: one smooth function per variable, defined
    for every real t (not just the training timestamps)."""

    bank: GrbfBank

    def __call__(self, t) -> np.ndarray:
        """All variables at the query times; shape (len(t), M) or (M,)."""
        t = np.asarray(t, dtype=float)
        out = cf_eval_series(self.bank, np.atleast_1d(t))
        return out[0] if t.ndim == 0 else out

    def variable(self, var: int, t) -> np.ndarray:
        """One variable's function at the query times."""
        t = np.asarray(t, dtype=float)
        out = cf_eval_series(self.bank, np.atleast_1d(t))[:, var]
        return float(out[0]) if t.ndim == 0 else out

    @property
    def variable_names(self) -> tuple:
        return self.bank.variable_names


def grbf_eval(c: float, sigma: float, t) -> np.ndarray:
    """Gaussian bump exp(-(t - c)^2 / sigma); value in (0, 1].

    Raises
    ------
    ValueError
        If sigma is not positive.
    """
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    t = np.asarray(t, dtype=float)
    return np.exp(-((t - c) ** 2) / sigma)


def basis_matrix(bank: GrbfBank, timestamps) -> np.ndarray:
    """All bumps evaluated at all timestamps, shape (N, K)."""
    u = np.atleast_1d(bank.to_internal_time(timestamps))
    if bank.n_basis == 0:
        return np.zeros((u.shape[0], 0))
    diff = u[:, None] - bank.centers[None, :]  # (N, K)
    return np.exp(-(diff**2) / bank.sigmas[None, :])


def cf_eval(bank: GrbfBank, t: float, var: int) -> float:
    """Continuous function of one variable at one time point."""
    if not 0 <= var < bank.n_vars:
        raise IndexError(f"variable index {var} out of range for M={bank.n_vars}")
    if bank.n_basis == 0:
        return 0.0
    u = bank.to_internal_time(t)
    phi = np.exp(-((u - bank.centers) ** 2) / bank.sigmas)  # (K,)
    return float(phi @ bank.weights[:, var])


def cf_eval_series(bank: GrbfBank, timestamps) -> np.ndarray:
    """Continuous functions of all variables at all timestamps, shape (N, M)."""
    return basis_matrix(bank, timestamps) @ bank.weights


def impute_with_cf(series: MultivariateSeries, bank: GrbfBank) -> MultivariateSeries:
    """Fill missing cells from the continuous functions.

    Observed cells are copied through bit-for-bit; the output mask is all
    ones. The series and bank must be on the same scale.
    """
    if bank.n_vars != series.n_vars:
        raise ValueError(
            f"bank has {bank.n_vars} variables, series has {series.n_vars}"
        )
    cf = cf_eval_series(bank, series.timestamps)
    filled = np.where(series.mask > 0.5, series.values, cf)
    return with_values(series, filled, mask=np.ones_like(series.mask))


def bank_with_weights(bank: GrbfBank, weights: np.ndarray) -> GrbfBank:
    """Copy of ``bank`` with a replaced weight matrix."""
    weights = np.asarray(weights, dtype=float)
    if weights.shape != bank.weights.shape:
        raise ValueError("weight matrix must keep its shape")
    return replace(bank, weights=weights)


def append_stage(bank: GrbfBank, centers, sigmas, weights) -> GrbfBank:
    """Append a block of bumps as a new trained stage."""
    centers = np.asarray(centers, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if np.any(sigmas <= 0.0):
        raise ValueError("sigmas must be positive")
    start = bank.n_basis
    return replace(
        bank,
        centers=np.concatenate([bank.centers, centers]),
        sigmas=np.concatenate([bank.sigmas, sigmas]),
        weights=np.vstack([bank.weights, weights]),
        stage_boundaries=bank.stage_boundaries + ((start, start + centers.shape[0]),),
    )


def save_bank(bank: GrbfBank, path) -> None:
    """Write a bank as versioned JSON; floats round-trip exactly."""
    doc = {
        "format": BANK_FORMAT,
        "version": BANK_VERSION,
        "variable_names": list(bank.variable_names),
        "centers": bank.centers.tolist(),
        "sigmas": bank.sigmas.tolist(),
        "weights": bank.weights.tolist(),
        "stage_boundaries": [list(b) for b in bank.stage_boundaries],
        "time_offset": bank.time_offset,
        "time_scale": bank.time_scale,
        "normalization": None
        if bank.norm_stats is None
        else {
            "mean": bank.norm_stats.mean.tolist(),
            "std": bank.norm_stats.std.tolist(),
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_bank(path) -> GrbfBank:
    """Read a bank written by :func:`save_bank`.

    Raises
    ------
    BankFormatError
        On malformed JSON, missing fields, or an unsupported version tag.
    """
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise BankFormatError(f"malformed bank file {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != BANK_FORMAT:
        raise BankFormatError(f"{path} is not a {BANK_FORMAT} file")
    if doc.get("version") != BANK_VERSION:
        raise BankFormatError(
            f"unsupported bank version {doc.get('version')!r}, expected {BANK_VERSION}"
        )
    try:
        norm = doc["normalization"]
        stats = (
            None
            if norm is None
            else NormalizationStats(np.array(norm["mean"]), np.array(norm["std"]))
        )
        return GrbfBank(
            centers=np.array(doc["centers"], dtype=float),
            sigmas=np.array(doc["sigmas"], dtype=float),
            weights=np.array(doc["weights"], dtype=float).reshape(
                len(doc["centers"]), len(doc["variable_names"])
            ),
            stage_boundaries=tuple(tuple(b) for b in doc["stage_boundaries"]),
            variable_names=tuple(doc["variable_names"]),
            norm_stats=stats,
            time_offset=float(doc["time_offset"]),
            time_scale=float(doc["time_scale"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise BankFormatError(f"bank file {path} is missing or has bad fields: {exc}") from exc
