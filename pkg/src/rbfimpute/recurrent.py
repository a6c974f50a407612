"""Bidirectional recurrent refinement of continuous-function imputations.

The curve fit in :mod:`rbfimpute.fitting` is local: inside a long missing run
there is nothing for a bump to latch onto. The recurrent refiner consumes the
continuous-function data together with the mask, the time-gap matrix, and
the incomplete values, and combines three per-step estimates:

* a historical estimate from the previous hidden state,
* a regression that mixes the continuous-function data with the
  historically completed vector,
* a feature estimate of each variable from the *other* variables (the
  responsible weight matrix has a hard zero diagonal),

blended by a gate driven by the temporal decay of each variable's time gap.
Observed cells always pass through untouched. The model runs in both time
directions and is trained, on observed cells only, with mean-absolute-error
terms for every estimate plus a consistency penalty between the two
directions. Gradients are exact backpropagation through time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace

import numpy as np

from .bank import GrbfBank, cf_eval_series
from .series import (
    MultivariateSeries,
    NormalizationStats,
    apply_normalization,
    denormalize_matrix,
    reverse_series,
    split_windows,
    time_gap,
    with_values,
)

MODEL_FORMAT = "cf-recurrent-imputer"
MODEL_VERSION = 1


class ModelFormatError(ValueError):
    """Raised when a model file is malformed or has an unsupported version."""


@dataclass
class DirectionParams:
    """All weights of one direction. Shapes use M = variables, H = hidden.

    ``w_feat`` keeps a zero diagonal so each variable's feature estimate
    depends only on the other variables; the constraint is restored after
    every optimizer update.
    """

    w_hist: np.ndarray  # (M, H) historical estimate from hidden state
    b_hist: np.ndarray  # (M,)
    w_cf: np.ndarray  # (M, M) continuous-function regression
    u_cf: np.ndarray  # (M, M) completed-vector part of that regression
    b_cf: np.ndarray  # (M,)
    w_feat: np.ndarray  # (M, M) feature estimate, zero diagonal
    b_feat: np.ndarray  # (M,)
    w_decay_in: np.ndarray  # (M, M) per-variable temporal decay
    b_decay_in: np.ndarray  # (M,)
    w_decay_hid: np.ndarray  # (H, M) hidden-state temporal decay
    b_decay_hid: np.ndarray  # (H,)
    w_gate: np.ndarray  # (M, 2M) combination gate over [decay, mask]
    b_gate: np.ndarray  # (M,)
    w_ir: np.ndarray  # (H, 2M) recurrent cell, reset gate, input part
    w_iz: np.ndarray  # (H, 2M) update gate, input part
    w_in: np.ndarray  # (H, 2M) candidate, input part
    w_hr: np.ndarray  # (H, H)
    w_hz: np.ndarray  # (H, H)
    w_hn: np.ndarray  # (H, H)
    b_ir: np.ndarray  # (H,)
    b_iz: np.ndarray  # (H,)
    b_in: np.ndarray  # (H,)
    b_hr: np.ndarray  # (H,)
    b_hz: np.ndarray  # (H,)
    b_hn: np.ndarray  # (H,)


PARAM_FIELDS = tuple(f.name for f in fields(DirectionParams))


@dataclass
class MirnnParams:
    """Both directions of the recurrent refiner plus bookkeeping."""

    forward: DirectionParams
    backward: DirectionParams
    n_vars: int
    hidden_size: int
    variable_names: tuple = ()
    window_len: int | None = None
    norm_stats: NormalizationStats | None = None


@dataclass(frozen=True)
class CellTrace:
    """Every intermediate of one recurrent step."""

    x_hat: np.ndarray  # historical estimate
    x_complete: np.ndarray  # observed values completed by x_hat
    r_hat: np.ndarray  # continuous-function regression estimate
    r_complete: np.ndarray  # observed values completed by r_hat
    z_hat: np.ndarray  # feature estimate (zero-diagonal map)
    gamma: np.ndarray  # per-variable temporal decay, in (0, 1]
    gamma_hidden: np.ndarray  # hidden-state temporal decay, in (0, 1]
    beta: np.ndarray  # combination gate, in (0, 1)
    x_tilde: np.ndarray  # gated blend of feature and historical estimates
    x_bar: np.ndarray  # final estimate; equals input at observed cells
    h: np.ndarray  # next hidden state


@dataclass(frozen=True)
class MirnnLoss:
    """Five-term training loss; ``total`` is the sum of the terms."""

    final: float
    historical: float
    feature: float
    cf_concat: float
    consistency: float

    @property
    def total(self) -> float:
        return self.final + self.historical + self.feature + self.cf_concat + self.consistency


def _direction_shapes(m: int, h: int) -> dict:
    return {
        "w_hist": (m, h),
        "b_hist": (m,),
        "w_cf": (m, m),
        "u_cf": (m, m),
        "b_cf": (m,),
        "w_feat": (m, m),
        "b_feat": (m,),
        "w_decay_in": (m, m),
        "b_decay_in": (m,),
        "w_decay_hid": (h, m),
        "b_decay_hid": (h,),
        "w_gate": (m, 2 * m),
        "b_gate": (m,),
        "w_ir": (h, 2 * m),
        "w_iz": (h, 2 * m),
        "w_in": (h, 2 * m),
        "w_hr": (h, h),
        "w_hz": (h, h),
        "w_hn": (h, h),
        "b_ir": (h,),
        "b_iz": (h,),
        "b_in": (h,),
        "b_hr": (h,),
        "b_hz": (h,),
        "b_hn": (h,),
    }


def _init_direction(m: int, h: int, rng) -> DirectionParams:
    arrays = {}
    for name, shape in _direction_shapes(m, h).items():
        if name.startswith("b_"):
            arrays[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[-1])
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    p = DirectionParams(**arrays)
    np.fill_diagonal(p.w_feat, 0.0)
    return p


def init_params(n_vars: int, hidden_size: int = 64, seed: int = 0, variable_names=(), window_len=None) -> MirnnParams:
    """Fresh parameters, uniform in +-1/sqrt(fan_in), biases zero, seeded."""
    rng = np.random.default_rng(seed)
    return MirnnParams(
        forward=_init_direction(n_vars, hidden_size, rng),
        backward=_init_direction(n_vars, hidden_size, rng),
        n_vars=n_vars,
        hidden_size=hidden_size,
        variable_names=tuple(variable_names) or tuple(f"x{i}" for i in range(n_vars)),
        window_len=window_len,
    )


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -50.0, 50.0)))


def _decay(pre):
    """exp(-max(0, pre)); lands in (0, 1] for any input."""
    return np.exp(-np.maximum(pre, 0.0))


def _step(p: DirectionParams, h_prev, x_fill, m, delta, cf):
    """One recurrent step on a batch. All of x_fill/m/delta/cf are (B, M),
    h_prev is (B, H); x_fill must hold 0 (not the sentinel) at masked cells.

    Returns the cache dict consumed by :func:`_backward_direction`.
    """
    x_hat = h_prev @ p.w_hist.T + p.b_hist
    x_complete = m * x_fill + (1.0 - m) * x_hat
    r_hat = cf @ p.w_cf.T + x_complete @ p.u_cf.T + p.b_cf
    r_complete = m * x_fill + (1.0 - m) * r_hat
    z_hat = r_complete @ p.w_feat.T + p.b_feat

    pre_in = delta @ p.w_decay_in.T + p.b_decay_in  # (B, M)
    gamma = _decay(pre_in)
    pre_hid = delta @ p.w_decay_hid.T + p.b_decay_hid  # (B, H)
    gamma_hidden = _decay(pre_hid)

    gate_in = np.concatenate([gamma, m], axis=1)  # (B, 2M)
    beta = _sigmoid(gate_in @ p.w_gate.T + p.b_gate)
    x_tilde = beta * z_hat + (1.0 - beta) * x_hat
    x_bar = m * x_fill + (1.0 - m) * x_tilde

    u = np.concatenate([x_bar, m], axis=1)  # (B, 2M)
    g = h_prev * gamma_hidden
    r = _sigmoid(u @ p.w_ir.T + p.b_ir + g @ p.w_hr.T + p.b_hr)
    zg = _sigmoid(u @ p.w_iz.T + p.b_iz + g @ p.w_hz.T + p.b_hz)
    q = g @ p.w_hn.T + p.b_hn
    n = np.tanh(u @ p.w_in.T + p.b_in + r * q)
    h = (1.0 - zg) * n + zg * g

    return {
        "h_prev": h_prev,
        "cf": cf,
        "x_hat": x_hat,
        "x_complete": x_complete,
        "r_hat": r_hat,
        "r_complete": r_complete,
        "z_hat": z_hat,
        "gamma": gamma,
        "gamma_hidden": gamma_hidden,
        "pos_in": pre_in > 0.0,
        "pos_hid": pre_hid > 0.0,
        "beta": beta,
        "gate_in": gate_in,
        "x_tilde": x_tilde,
        "x_bar": x_bar,
        "u": u,
        "g": g,
        "r": r,
        "zg": zg,
        "q": q,
        "n": n,
        "h": h,
    }


def cell_forward(p: DirectionParams, h_prev, x_t, m_t, delta_t, cf_t) -> CellTrace:
    """Single unbatched recurrent step; inputs are (M,) / (H,) vectors.

    Raises
    ------
    FloatingPointError
        If an intermediate is non-finite, naming the quantity.
    """
    m_t = np.asarray(m_t, dtype=float)
    x_fill = np.where(m_t > 0.5, np.asarray(x_t, dtype=float), 0.0)
    if np.any(np.asarray(delta_t) < 0):
        raise ValueError("time gaps must be nonnegative")
    cache = _step(
        p,
        np.asarray(h_prev, dtype=float)[None, :],
        x_fill[None, :],
        m_t[None, :],
        np.asarray(delta_t, dtype=float)[None, :],
        np.asarray(cf_t, dtype=float)[None, :],
    )
    for name in ("x_hat", "r_hat", "z_hat", "x_tilde", "h"):
        if not np.all(np.isfinite(cache[name])):
            raise FloatingPointError(f"non-finite {name} in recurrent step")
    return CellTrace(
        x_hat=cache["x_hat"][0],
        x_complete=cache["x_complete"][0],
        r_hat=cache["r_hat"][0],
        r_complete=cache["r_complete"][0],
        z_hat=cache["z_hat"][0],
        gamma=cache["gamma"][0],
        gamma_hidden=cache["gamma_hidden"][0],
        beta=cache["beta"][0],
        x_tilde=cache["x_tilde"][0],
        x_bar=cache["x_bar"][0],
        h=cache["h"][0],
    )


def _forward_direction(p: DirectionParams, x_fill, m, delta, cf):
    """Run a direction over a batch of aligned windows.

    Arrays are (B, T, M). Returns the list of per-step caches.
    """
    b, t, _ = x_fill.shape
    h = np.zeros((b, p.w_hist.shape[1]))
    caches = []
    for i in range(t):
        cache = _step(p, h, x_fill[:, i], m[:, i], delta[:, i], cf[:, i])
        caches.append(cache)
        h = cache["h"]
    return caches


def _stack(caches, key):
    return np.stack([c[key] for c in caches], axis=1)  # (B, T, M or H)


def _masked_mae(est, x_fill, m, count):
    return float((m * np.abs(est - x_fill)).sum() / count)


def _direction_loss_terms(caches, x_fill, m, count):
    return {
        "final": _masked_mae(_stack(caches, "x_tilde"), x_fill, m, count),
        "historical": _masked_mae(_stack(caches, "x_hat"), x_fill, m, count),
        "feature": _masked_mae(_stack(caches, "z_hat"), x_fill, m, count),
        "cf_concat": _masked_mae(_stack(caches, "r_hat"), x_fill, m, count),
    }


def _window_arrays(window: MultivariateSeries, cf: np.ndarray):
    """Forward and reversed input stacks for one window.

    The reversed stack recomputes time gaps on the reversed series, so the
    backward direction sees gaps measured toward the *next* observation.
    """
    x_fill = window.observed_values()
    m = window.mask
    delta = time_gap(window).deltas
    rev = reverse_series(window)
    delta_rev = time_gap(rev).deltas
    return (
        (x_fill, m, delta, cf),
        (rev.observed_values(), rev.mask, delta_rev, cf[::-1]),
    )


def sequence_forward(params: MirnnParams, window: MultivariateSeries, cf: np.ndarray, direction: str = "forward"):
    """Run one direction over one window.

    ``direction="backward"`` reverses the window (and recomputes its time
    gaps) before running that direction's parameters; the returned traces
    are in processing order, i.e. reversed time.

    Returns (list of CellTrace, dict of masked-MAE loss terms).
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"unknown direction {direction!r}")
    fwd_arrays, bwd_arrays = _window_arrays(window, np.asarray(cf, dtype=float))
    x_fill, m, delta, cf_dir = fwd_arrays if direction == "forward" else bwd_arrays
    p = params.forward if direction == "forward" else params.backward
    caches = _forward_direction(
        p, x_fill[None], m[None], delta[None], cf_dir[None]
    )
    count = max(m.sum(), 1.0)
    terms = _direction_loss_terms(caches, x_fill[None], m[None], count)
    traces = [
        CellTrace(
            x_hat=c["x_hat"][0],
            x_complete=c["x_complete"][0],
            r_hat=c["r_hat"][0],
            r_complete=c["r_complete"][0],
            z_hat=c["z_hat"][0],
            gamma=c["gamma"][0],
            gamma_hidden=c["gamma_hidden"][0],
            beta=c["beta"][0],
            x_tilde=c["x_tilde"][0],
            x_bar=c["x_bar"][0],
            h=c["h"][0],
        )
        for c in caches
    ]
    return traces, terms


def _batched_bidirectional(params: MirnnParams, x_fill, m, delta_f, delta_b, cf):
    """Forward pass of both directions over a batch; returns caches and loss.

    Array shapes: (B, T, M); delta_b belongs to the reversed windows.
    """
    b, t, n_vars = x_fill.shape
    count = max(m.sum(), 1.0)
    flip = lambda a: a[:, ::-1]

    caches_f = _forward_direction(params.forward, x_fill, m, delta_f, cf)
    caches_b = _forward_direction(params.backward, flip(x_fill), flip(m), delta_b, flip(cf))

    terms_f = _direction_loss_terms(caches_f, x_fill, m, count)
    terms_b = _direction_loss_terms(caches_b, flip(x_fill), flip(m), count)

    xbar_f = _stack(caches_f, "x_bar")  # (B, T, M)
    xbar_b_aligned = _stack(caches_b, "x_bar")[:, ::-1]
    cons = float(np.abs(xbar_f - xbar_b_aligned).mean())

    loss = MirnnLoss(
        final=terms_f["final"] + terms_b["final"],
        historical=terms_f["historical"] + terms_b["historical"],
        feature=terms_f["feature"] + terms_b["feature"],
        cf_concat=terms_f["cf_concat"] + terms_b["cf_concat"],
        consistency=cons,
    )
    x_avg = 0.5 * (xbar_f + xbar_b_aligned)
    return caches_f, caches_b, loss, x_avg


def bidirectional_forward(params: MirnnParams, window: MultivariateSeries, cf: np.ndarray):
    """Average the two directions' final estimates over one window.

    Returns (x_avg (T, M) in forward time order, MirnnLoss). The estimate
    equals the window's values exactly at observed cells.
    """
    cf = np.asarray(cf, dtype=float)
    fwd_arrays, bwd_arrays = _window_arrays(window, cf)
    x_fill, m, delta_f, _ = fwd_arrays
    _, _, delta_b, _ = bwd_arrays
    _, _, loss, x_avg = _batched_bidirectional(
        params, x_fill[None], m[None], delta_f[None], delta_b[None], cf[None]
    )
    return x_avg[0], loss


# ----------------------------------------------------------------------
# backpropagation through time
# ----------------------------------------------------------------------


def _zero_grads(p: DirectionParams) -> dict:
    return {name: np.zeros_like(getattr(p, name)) for name in PARAM_FIELDS}


def _backward_direction(p: DirectionParams, caches, x_fill, m, delta, count, d_xbar_extra):
    """Exact gradients of the masked loss terms for one direction.

    ``d_xbar_extra`` is the (B, T, M) gradient flowing into each step's
    final estimate from outside the direction (the consistency term).
    Returns the gradient dict.
    """
    grads = _zero_grads(p)
    b, t, n_vars = x_fill.shape
    dh_next = np.zeros((b, p.w_hist.shape[1]))

    for i in range(t - 1, -1, -1):
        c = caches[i]
        xi, mi, di = x_fill[:, i], m[:, i], delta[:, i]

        # recurrent cell
        dh = dh_next
        dn = dh * (1.0 - c["zg"])
        dzg = dh * (c["g"] - c["n"])
        dg = dh * c["zg"]
        a_n = dn * (1.0 - c["n"] ** 2)
        dq = a_n * c["r"]
        dr = a_n * c["q"]
        a_r = dr * c["r"] * (1.0 - c["r"])
        a_z = dzg * c["zg"] * (1.0 - c["zg"])

        grads["w_in"] += a_n.T @ c["u"]
        grads["b_in"] += a_n.sum(axis=0)
        grads["w_hn"] += dq.T @ c["g"]
        grads["b_hn"] += dq.sum(axis=0)
        grads["w_ir"] += a_r.T @ c["u"]
        grads["b_ir"] += a_r.sum(axis=0)
        grads["w_hr"] += a_r.T @ c["g"]
        grads["b_hr"] += a_r.sum(axis=0)
        grads["w_iz"] += a_z.T @ c["u"]
        grads["b_iz"] += a_z.sum(axis=0)
        grads["w_hz"] += a_z.T @ c["g"]
        grads["b_hz"] += a_z.sum(axis=0)

        du = a_r @ p.w_ir + a_z @ p.w_iz + a_n @ p.w_in  # (B, 2M)
        dg = dg + a_r @ p.w_hr + a_z @ p.w_hz + dq @ p.w_hn

        dgamma_hidden = dg * c["h_prev"]
        dh_prev = dg * c["gamma_hidden"]
        ds_hid = dgamma_hidden * (-c["gamma_hidden"]) * c["pos_hid"]
        grads["w_decay_hid"] += ds_hid.T @ di
        grads["b_decay_hid"] += ds_hid.sum(axis=0)

        # final estimate and its blend
        d_xbar = du[:, :n_vars] + d_xbar_extra[:, i]
        d_xtilde = (1.0 - mi) * d_xbar + mi * np.sign(c["x_tilde"] - xi) / count
        d_beta = d_xtilde * (c["z_hat"] - c["x_hat"])
        d_zhat = d_xtilde * c["beta"]
        d_xhat = d_xtilde * (1.0 - c["beta"])

        # feature estimate
        d_zhat = d_zhat + mi * np.sign(c["z_hat"] - xi) / count
        grads["w_feat"] += d_zhat.T @ c["r_complete"]
        grads["b_feat"] += d_zhat.sum(axis=0)
        d_rcomplete = d_zhat @ p.w_feat

        # combination gate and per-variable decay
        a_beta = d_beta * c["beta"] * (1.0 - c["beta"])
        grads["w_gate"] += a_beta.T @ c["gate_in"]
        grads["b_gate"] += a_beta.sum(axis=0)
        d_gamma = (a_beta @ p.w_gate)[:, :n_vars]
        ds_in = d_gamma * (-c["gamma"]) * c["pos_in"]
        grads["w_decay_in"] += ds_in.T @ di
        grads["b_decay_in"] += ds_in.sum(axis=0)

        # continuous-function regression
        d_rhat = (1.0 - mi) * d_rcomplete + mi * np.sign(c["r_hat"] - xi) / count
        grads["w_cf"] += d_rhat.T @ c["cf"]
        grads["u_cf"] += d_rhat.T @ c["x_complete"]
        grads["b_cf"] += d_rhat.sum(axis=0)
        d_xcomplete = d_rhat @ p.u_cf

        # historical estimate
        d_xhat = d_xhat + (1.0 - mi) * d_xcomplete + mi * np.sign(c["x_hat"] - xi) / count
        grads["w_hist"] += d_xhat.T @ c["h_prev"]
        grads["b_hist"] += d_xhat.sum(axis=0)
        dh_prev = dh_prev + d_xhat @ p.w_hist

        dh_next = dh_prev
    return grads


def loss_and_gradients(params: MirnnParams, windows, cfs):
    """Total loss and exact parameter gradients over aligned windows.

    ``windows`` is a list of equal-length MultivariateSeries and ``cfs``
    the matching list of (T, M) continuous-function arrays.

    Returns (MirnnLoss, forward grads dict, backward grads dict).
    """
    x_fill, m, delta_f, delta_b, cf = _collect_batch(windows, cfs)
    caches_f, caches_b, loss, _ = _batched_bidirectional(params, x_fill, m, delta_f, delta_b, cf)

    count = max(m.sum(), 1.0)
    xbar_f = _stack(caches_f, "x_bar")
    xbar_b_aligned = _stack(caches_b, "x_bar")[:, ::-1]
    d_cons = np.sign(xbar_f - xbar_b_aligned) / xbar_f.size

    grads_f = _backward_direction(params.forward, caches_f, x_fill, m, delta_f, count, d_cons)
    grads_b = _backward_direction(
        params.backward,
        caches_b,
        x_fill[:, ::-1],
        m[:, ::-1],
        delta_b,
        count,
        -d_cons[:, ::-1],
    )
    return loss, grads_f, grads_b


def _collect_batch(windows, cfs):
    lengths = {w.n_steps for w in windows}
    if len(lengths) != 1:
        raise ValueError("all windows in a batch must share one length")
    x_fill = np.stack([w.observed_values() for w in windows])
    m = np.stack([w.mask for w in windows])
    delta_f = np.stack([time_gap(w).deltas for w in windows])
    delta_b = np.stack([time_gap(reverse_series(w)).deltas for w in windows])
    cf = np.stack([np.asarray(c, dtype=float) for c in cfs])
    return x_fill, m, delta_f, delta_b, cf


# ----------------------------------------------------------------------
# training
# ----------------------------------------------------------------------


def params_to_vector(params: MirnnParams) -> np.ndarray:
    parts = []
    for direction in (params.forward, params.backward):
        parts.extend(getattr(direction, name).ravel() for name in PARAM_FIELDS)
    return np.concatenate(parts)


def vector_to_params(vec: np.ndarray, template: MirnnParams) -> MirnnParams:
    offset = 0
    directions = []
    for direction in (template.forward, template.backward):
        arrays = {}
        for name in PARAM_FIELDS:
            shape = getattr(direction, name).shape
            size = int(np.prod(shape))
            arrays[name] = vec[offset : offset + size].reshape(shape).copy()
            offset += size
        directions.append(DirectionParams(**arrays))
    return replace(template, forward=directions[0], backward=directions[1])


def _grads_to_vector(grads_f: dict, grads_b: dict) -> np.ndarray:
    parts = []
    for grads in (grads_f, grads_b):
        parts.extend(grads[name].ravel() for name in PARAM_FIELDS)
    return np.concatenate(parts)


def _zero_feature_diagonal(params: MirnnParams) -> None:
    np.fill_diagonal(params.forward.w_feat, 0.0)
    np.fill_diagonal(params.backward.w_feat, 0.0)


@dataclass(frozen=True)
class RecurrentTrainConfig:
    """Hyperparameters for the refiner; window_len defaults to 40 rows."""

    hidden_size: int = 64
    epochs: int = 300
    lr: float = 2e-3
    batch_size: int = 64
    window_len: int = 40
    seed: int = 0


def train(params: MirnnParams, windows, cfs, epochs: int, lr: float, seed: int = 0, batch_size: int = 64):
    """Minimize the five-term loss with Adam over window batches.

    The feature-estimate diagonal is re-zeroed after every update, and the
    window order is reshuffled deterministically per epoch from the seed.

    Returns (trained params, per-epoch mean total loss).

    Raises
    ------
    FloatingPointError
        On a non-finite loss, reporting the epoch index.
    """
    if not windows:
        raise ValueError("need at least one window")
    if len(windows) != len(cfs):
        raise ValueError("one continuous-function array per window required")
    rng = np.random.default_rng(seed)
    theta = params_to_vector(params)
    m1 = np.zeros_like(theta)
    m2 = np.zeros_like(theta)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    curve = []
    for epoch in range(epochs):
        order = rng.permutation(len(windows))
        epoch_losses = []
        for start in range(0, len(windows), batch_size):
            batch_idx = order[start : start + batch_size]
            batch_windows = [windows[i] for i in batch_idx]
            batch_cfs = [cfs[i] for i in batch_idx]
            current = vector_to_params(theta, params)
            loss, grads_f, grads_b = loss_and_gradients(current, batch_windows, batch_cfs)
            if not np.isfinite(loss.total):
                raise FloatingPointError(f"training diverged at epoch {epoch}")
            grad = _grads_to_vector(grads_f, grads_b)
            step += 1
            m1 = beta1 * m1 + (1 - beta1) * grad
            m2 = beta2 * m2 + (1 - beta2) * grad**2
            m1_hat = m1 / (1 - beta1**step)
            m2_hat = m2 / (1 - beta2**step)
            theta = theta - lr * m1_hat / (np.sqrt(m2_hat) + eps)
            # constraint projection: feature estimates never see themselves
            projected = vector_to_params(theta, params)
            _zero_feature_diagonal(projected)
            theta = params_to_vector(projected)
            epoch_losses.append(loss.total)
        curve.append(float(np.mean(epoch_losses)))
    trained = vector_to_params(theta, params)
    _zero_feature_diagonal(trained)
    return trained, curve


# ----------------------------------------------------------------------
# imputation
# ----------------------------------------------------------------------


def impute_mirnn(params: MirnnParams, series: MultivariateSeries, bank: GrbfBank, window_len: int | None = None) -> MultivariateSeries:
    """Refine a series against a bank's continuous functions.

    The series is cut into non-overlapping windows (a shorter tail is
    covered by one extra window ending at the last row), each window is run
    bidirectionally, and the averaged estimates are stitched back. Observed
    cells are returned untouched; the output mask is all ones. Series and
    bank must be on the same scale.
    """
    if bank.n_vars != series.n_vars:
        raise ValueError(
            f"bank has {bank.n_vars} variables, series has {series.n_vars}"
        )
    n = series.n_steps
    length = window_len or params.window_len or n
    length = min(length, n)
    cf_all = cf_eval_series(bank, series.timestamps)

    estimates = np.zeros_like(series.values)
    covered = np.zeros(n, dtype=bool)
    starts = list(range(0, n - length + 1, length))
    if n % length and n > length:
        starts.append(n - length)  # tail window; only its uncovered rows land
    for start in starts:
        sl = slice(start, start + length)
        window = MultivariateSeries(
            series.timestamps[sl], series.values[sl], series.mask[sl], series.variable_names
        )
        x_avg, _ = bidirectional_forward(params, window, cf_all[sl])
        rows = ~covered[sl]
        estimates[sl][rows] = x_avg[rows]
        covered[sl] = True

    filled = np.where(series.mask > 0.5, series.values, estimates)
    return with_values(series, filled, mask=np.ones_like(series.mask))


def refine_series(series: MultivariateSeries, bank: GrbfBank, config: RecurrentTrainConfig):
    """Train a refiner against a fitted bank and impute on the original scale.

    The series is moved onto the bank's normalization scale (when the bank
    carries stats), windowed, trained, imputed, and mapped back; observed
    cells pass through bit-for-bit.

    Returns (imputed series, trained params, loss curve).
    """
    work = series
    if bank.norm_stats is not None:
        work = apply_normalization(series, bank.norm_stats)
    length = min(config.window_len, work.n_steps)
    windows = split_windows(work, length)
    if not windows:
        windows = [work]
    cfs = [cf_eval_series(bank, w.timestamps) for w in windows]
    params = init_params(
        series.n_vars,
        config.hidden_size,
        seed=config.seed,
        variable_names=series.variable_names,
        window_len=length,
    )
    params.norm_stats = bank.norm_stats
    params, curve = train(
        params, windows, cfs, epochs=config.epochs, lr=config.lr,
        seed=config.seed, batch_size=config.batch_size,
    )
    refined = impute_mirnn(params, work, bank, window_len=length)
    if bank.norm_stats is None:
        return refined, params, curve
    raw = denormalize_matrix(refined.values, bank.norm_stats)
    filled = np.where(series.mask > 0.5, series.values, raw)
    return with_values(series, filled, mask=np.ones_like(series.mask)), params, curve


# ----------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------


def save_model(params: MirnnParams, path) -> None:
    """Write the refiner (both directions) as versioned JSON."""
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "n_vars": params.n_vars,
        "hidden_size": params.hidden_size,
        "variable_names": list(params.variable_names),
        "window_len": params.window_len,
        "normalization": None
        if params.norm_stats is None
        else {
            "mean": params.norm_stats.mean.tolist(),
            "std": params.norm_stats.std.tolist(),
        },
        "forward": {name: getattr(params.forward, name).tolist() for name in PARAM_FIELDS},
        "backward": {name: getattr(params.backward, name).tolist() for name in PARAM_FIELDS},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_model(path) -> MirnnParams:
    """Read a refiner written by :func:`save_model`.

    Raises
    ------
    ModelFormatError
        On malformed JSON, missing fields, or an unsupported version tag.
    """
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"malformed model file {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"{path} is not a {MODEL_FORMAT} file")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(
            f"unsupported model version {doc.get('version')!r}, expected {MODEL_VERSION}"
        )
    try:
        m, h = int(doc["n_vars"]), int(doc["hidden_size"])
        shapes = _direction_shapes(m, h)
        directions = []
        for key in ("forward", "backward"):
            arrays = {}
            for name in PARAM_FIELDS:
                arr = np.array(doc[key][name], dtype=float).reshape(shapes[name])
                arrays[name] = arr
            directions.append(DirectionParams(**arrays))
        norm = doc["normalization"]
        stats = (
            None
            if norm is None
            else NormalizationStats(np.array(norm["mean"]), np.array(norm["std"]))
        )
        return MirnnParams(
            forward=directions[0],
            backward=directions[1],
            n_vars=m,
            hidden_size=h,
            variable_names=tuple(doc["variable_names"]),
            window_len=doc["window_len"],
            norm_stats=stats,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"model file {path} is missing or has bad fields: {exc}") from exc
