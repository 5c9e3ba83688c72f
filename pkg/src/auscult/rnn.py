"""Recurrent sequence classifier trained from scratch.

Stacked LSTM/GRU layers (optionally bidirectional), batch normalization of
the input features, variational dropout (one mask per sequence per layer,
reused at every time step, on both the input and the recurrent path), a
softmax head read from the final hidden state(s), cross-entropy loss,
full backpropagation through time, and Adam updates.

Conventions fixed here:
  LSTM: i = s(Wi x + Ui h' + bi), f, o likewise, g = tanh(.);
        c = f*c_prev + i*g; h = o*tanh(c); gate order [i, f, g, o].
  GRU:  z = s(Wz x + Uz h' + bz), r likewise, n = tanh(Wn x + Un (r*h') + bn);
        h = (1 - z)*n + z*h_prev; gate order [z, r, n].
  h' is h_prev under the recurrent dropout mask, x is under the input mask;
  the interpolation/cell-state paths use the raw previous state.

Variable-length sequences are padded; padding positions carry zero features,
never update state, contribute nothing to loss, gradients, or batch-norm
statistics. The sequence summary is the hidden state at the last unmasked
step (forward direction), concatenated with the state at the first step for
the backward direction.

Training is deterministic for a fixed seed and thread count.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import normalize
from .frames import FrameSequence

__all__ = [
    "ShapeMismatchError",
    "LabelOutOfRangeError",
    "EmptyDatasetError",
    "InconsistentFeatureDimError",
    "DegenerateBatchError",
    "TrainingDivergedError",
    "ModelConfig",
    "TrainConfig",
    "Batch",
    "RnnModel",
    "AdamState",
    "EpochStats",
    "TrainResult",
    "make_batch",
    "lstm_cell",
    "gru_cell",
    "batch_norm_inputs",
    "sample_dropout_masks",
    "init_model",
    "forward",
    "loss_and_grads",
    "init_adam_state",
    "adam_step",
    "train",
    "predict",
    "predict_batch",
    "save_model",
    "load_model",
    "LoadedModel",
    "MODEL_KINDS",
]

_BN_EPS = 1e-8
_BN_MOMENTUM = 0.99


class ShapeMismatchError(ValueError):
    pass


class LabelOutOfRangeError(ValueError):
    pass


class EmptyDatasetError(ValueError):
    pass


class InconsistentFeatureDimError(ValueError):
    pass


class DegenerateBatchError(ValueError):
    pass


class TrainingDivergedError(ArithmeticError):
    """Non-finite loss or gradient encountered during training."""


# model kind name -> (cell, bidirectional)
MODEL_KINDS = {
    "LSTM": ("lstm", False),
    "GRU": ("gru", False),
    "BiLSTM": ("lstm", True),
    "BiGRU": ("gru", True),
}


@dataclass(frozen=True)
class ModelConfig:
    n_features: int
    n_classes: int
    cell: str = "lstm"
    bidirectional: bool = False
    layers: int = 2
    hidden: int = 256
    dropout: float = 0.4
    recurrent_dropout: float = 0.4

    def __post_init__(self) -> None:
        if self.cell not in ("lstm", "gru"):
            raise ValueError("cell must be 'lstm' or 'gru'")
        if self.layers < 1 or self.hidden < 1 or self.n_features < 1 or self.n_classes < 2:
            raise ValueError("layers, hidden, n_features >= 1 and n_classes >= 2 required")
        for p in (self.dropout, self.recurrent_dropout):
            if not 0.0 <= p < 1.0:
                raise ValueError("dropout probabilities must lie in [0, 1)")

    @property
    def directions(self) -> tuple[str, ...]:
        return ("fwd", "bwd") if self.bidirectional else ("fwd",)

    @property
    def n_gates(self) -> int:
        return 4 if self.cell == "lstm" else 3

    @property
    def summary_size(self) -> int:
        return self.hidden * len(self.directions)

    def layer_input_size(self, layer: int) -> int:
        return self.n_features if layer == 0 else self.summary_size

    @property
    def kind_name(self) -> str:
        base = self.cell.upper()
        return f"Bi{base}" if self.bidirectional else base


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 100
    learning_rate: float = 0.002
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    clip_norm: float | None = 5.0  # global-norm NaN guard; None disables

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.epochs < 1 or self.learning_rate <= 0.0:
            raise ValueError("batch_size, epochs >= 1 and learning_rate > 0 required")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class Batch:
    """Padded (batch, time, features) tensor plus true lengths and labels."""

    x: np.ndarray
    lengths: np.ndarray
    labels: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        t = np.arange(self.x.shape[1])
        return (t[None, :] < self.lengths[:, None]).astype(np.float64)


def make_batch(sequences: list[FrameSequence]) -> Batch:
    if not sequences:
        raise EmptyDatasetError("cannot batch zero sequences")
    dims = {s.n_features for s in sequences}
    if len(dims) != 1:
        raise InconsistentFeatureDimError(f"mixed feature dims {sorted(dims)}")
    max_len = max(s.n_frames for s in sequences)
    x = np.zeros((len(sequences), max_len, dims.pop()))
    for i, s in enumerate(sequences):
        x[i, : s.n_frames] = s.frames
    return Batch(
        x=x,
        lengths=np.array([s.n_frames for s in sequences], dtype=np.int64),
        labels=np.array([s.label for s in sequences], dtype=np.int64),
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _as_2d(a) -> tuple[np.ndarray, bool]:
    a = np.asarray(a, dtype=np.float64)
    return (a[None, :], True) if a.ndim == 1 else (a, False)


# --- single-step cells ----------------------------------------------------


def lstm_cell(x, h_prev, c_prev, W, U, b, input_mask=None, recurrent_mask=None):
    """One LSTM step. W: (f_in, 4H), U: (H, 4H), b: (4H,), gates [i, f, g, o].

    Masks (when given) implement variational dropout: x is multiplied by
    input_mask inside the gates, h_prev by recurrent_mask; the cell-state
    path uses the raw c_prev.
    """
    x, squeeze = _as_2d(x)
    h_prev, _ = _as_2d(h_prev)
    c_prev, _ = _as_2d(c_prev)
    H = U.shape[0]
    if W.shape != (x.shape[1], 4 * H) or U.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise ShapeMismatchError(
            f"inconsistent LSTM shapes: x {x.shape}, W {W.shape}, U {U.shape}, b {b.shape}"
        )
    if h_prev.shape[1] != H or c_prev.shape[1] != H:
        raise ShapeMismatchError("state width does not match U")
    xd = x * input_mask if input_mask is not None else x
    hd = h_prev * recurrent_mask if recurrent_mask is not None else h_prev
    a = xd @ W + hd @ U + b
    i = _sigmoid(a[:, :H])
    f = _sigmoid(a[:, H : 2 * H])
    g = np.tanh(a[:, 2 * H : 3 * H])
    o = _sigmoid(a[:, 3 * H :])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    if squeeze:
        return h[0], c[0]
    return h, c


def gru_cell(x, h_prev, W, U, b, input_mask=None, recurrent_mask=None):
    """One GRU step. W: (f_in, 3H), U: (H, 3H), b: (3H,), gates [z, r, n];
    h = (1 - z) * n + z * h_prev (raw h_prev in the interpolation)."""
    x, squeeze = _as_2d(x)
    h_prev, _ = _as_2d(h_prev)
    H = U.shape[0]
    if W.shape != (x.shape[1], 3 * H) or U.shape != (H, 3 * H) or b.shape != (3 * H,):
        raise ShapeMismatchError(
            f"inconsistent GRU shapes: x {x.shape}, W {W.shape}, U {U.shape}, b {b.shape}"
        )
    if h_prev.shape[1] != H:
        raise ShapeMismatchError("state width does not match U")
    xd = x * input_mask if input_mask is not None else x
    hd = h_prev * recurrent_mask if recurrent_mask is not None else h_prev
    ax = xd @ W + b
    z = _sigmoid(ax[:, :H] + hd @ U[:, :H])
    r = _sigmoid(ax[:, H : 2 * H] + hd @ U[:, H : 2 * H])
    n = np.tanh(ax[:, 2 * H :] + (r * hd) @ U[:, 2 * H :])
    h = (1.0 - z) * n + z * h_prev
    if squeeze:
        return h[0]
    return h


# --- model ------------------------------------------------------------------


@dataclass
class RnnModel:
    cfg: ModelConfig
    params: dict[str, np.ndarray]
    bn_mean: np.ndarray  # running mean of input features
    bn_var: np.ndarray  # running variance of input features


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


def init_model(cfg: ModelConfig, seed: int = 0) -> RnnModel:
    """Seeded initialization: Glorot-uniform input/dense blocks, orthogonal
    recurrent blocks (per gate), zero biases except LSTM forget gate = 1."""
    rng = np.random.default_rng(seed)
    H, G = cfg.hidden, cfg.n_gates
    params: dict[str, np.ndarray] = {
        "bn.gamma": np.ones(cfg.n_features),
        "bn.beta": np.zeros(cfg.n_features),
    }
    for layer in range(cfg.layers):
        f_in = cfg.layer_input_size(layer)
        for d in cfg.directions:
            W = np.concatenate(
                [_glorot(rng, f_in, H, (f_in, H)) for _ in range(G)], axis=1
            )
            U = np.concatenate([_orthogonal(rng, H) for _ in range(G)], axis=1)
            b = np.zeros(G * H)
            if cfg.cell == "lstm":
                b[H : 2 * H] = 1.0  # forget-gate bias stabilizes early training
            params[f"l{layer}.{d}.W"] = W
            params[f"l{layer}.{d}.U"] = U
            params[f"l{layer}.{d}.b"] = b
    params["out.W"] = _glorot(rng, cfg.summary_size, cfg.n_classes, (cfg.summary_size, cfg.n_classes))
    params["out.b"] = np.zeros(cfg.n_classes)
    return RnnModel(
        cfg=cfg,
        params=params,
        bn_mean=np.zeros(cfg.n_features),
        bn_var=np.ones(cfg.n_features),
    )


def sample_dropout_masks(
    cfg: ModelConfig, batch_size: int, rng: np.random.Generator
) -> dict[tuple, np.ndarray | None]:
    """One inverted-dropout mask per sequence per layer per direction, for the
    input and the recurrent path; the same mask is reused at every time step."""
    masks: dict[tuple, np.ndarray | None] = {}
    for layer in range(cfg.layers):
        f_in = cfg.layer_input_size(layer)
        for d in cfg.directions:
            for kind, p, width in (
                ("in", cfg.dropout, f_in),
                ("rec", cfg.recurrent_dropout, cfg.hidden),
            ):
                if p > 0.0:
                    keep = 1.0 - p
                    masks[(layer, d, kind)] = (
                        rng.random((batch_size, width)) < keep
                    ).astype(np.float64) / keep
                else:
                    masks[(layer, d, kind)] = None
    return masks


# --- batch normalization ------------------------------------------------------


def _bn_forward(x, mask, gamma, beta, run_mean, run_var, use_batch_stats):
    w = mask[:, :, None]
    if use_batch_stats:
        n = mask.sum()
        if n < 2:
            raise DegenerateBatchError("batch normalization needs >= 2 unmasked positions")
        mean = (x * w).sum(axis=(0, 1)) / n
        var = (((x - mean) ** 2) * w).sum(axis=(0, 1)) / n
    else:
        mean, var = run_mean, run_var
    xhat = (x - mean) / np.sqrt(var + _BN_EPS)
    y = (gamma * xhat + beta) * w
    return y, xhat, mean, var


def batch_norm_inputs(
    batch: Batch, model: RnnModel, mode: str = "train", update_running: bool = False
) -> np.ndarray:
    """Normalize input features over all unmasked (sequence, time) positions.

    Train mode uses batch statistics (and, when update_running, folds them
    into the running averages with momentum 0.99); eval mode uses the running
    statistics. Padding positions come out exactly zero and never contribute
    to the statistics.
    """
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    y, _, mean, var = _bn_forward(
        batch.x,
        batch.mask,
        model.params["bn.gamma"],
        model.params["bn.beta"],
        model.bn_mean,
        model.bn_var,
        use_batch_stats=(mode == "train"),
    )
    if mode == "train" and update_running:
        model.bn_mean = _BN_MOMENTUM * model.bn_mean + (1.0 - _BN_MOMENTUM) * mean
        model.bn_var = _BN_MOMENTUM * model.bn_var + (1.0 - _BN_MOMENTUM) * var
    return y


# --- full forward / backward ---------------------------------------------------


def _run_direction(cell, X, mask, W, U, b, in_mask, rec_mask, reverse):
    B, T, _ = X.shape
    H = U.shape[0]
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    cache = {
        "Hprev": np.empty((B, T, H)),
        "Hnew": np.empty((B, T, H)),
        "in_mask": in_mask,
        "rec_mask": rec_mask,
        "reverse": reverse,
    }
    if cell == "lstm":
        for k in ("I", "F", "G", "O", "Cnew", "Cprev"):
            cache[k] = np.empty((B, T, H))
    else:
        for k in ("Z", "R", "N"):
            cache[k] = np.empty((B, T, H))
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        m = mask[:, t][:, None]
        xd = X[:, t] * in_mask if in_mask is not None else X[:, t]
        hd = h * rec_mask if rec_mask is not None else h
        cache["Hprev"][:, t] = h
        if cell == "lstm":
            cache["Cprev"][:, t] = c
            a = xd @ W + hd @ U + b
            i = _sigmoid(a[:, :H])
            f = _sigmoid(a[:, H : 2 * H])
            g = np.tanh(a[:, 2 * H : 3 * H])
            o = _sigmoid(a[:, 3 * H :])
            c_new = f * c + i * g
            h_new = o * np.tanh(c_new)
            cache["I"][:, t], cache["F"][:, t] = i, f
            cache["G"][:, t], cache["O"][:, t] = g, o
            cache["Cnew"][:, t] = c_new
            c = m * c_new + (1.0 - m) * c
        else:
            ax = xd @ W + b
            z = _sigmoid(ax[:, :H] + hd @ U[:, :H])
            r = _sigmoid(ax[:, H : 2 * H] + hd @ U[:, H : 2 * H])
            n = np.tanh(ax[:, 2 * H :] + (r * hd) @ U[:, 2 * H :])
            h_new = (1.0 - z) * n + z * h
            cache["Z"][:, t], cache["R"][:, t], cache["N"][:, t] = z, r, n
        cache["Hnew"][:, t] = h_new
        h = m * h_new + (1.0 - m) * h
    Y = mask[:, :, None] * cache["Hnew"]
    return Y, h, cache


def _run_direction_backward(cell, X, mask, W, U, b, cache, dY, dsummary):
    B, T, _ = X.shape
    H = U.shape[0]
    in_mask, rec_mask = cache["in_mask"], cache["rec_mask"]
    dh = dsummary.copy()
    dc = np.zeros((B, H))
    dX = np.zeros_like(X)
    dW = np.zeros_like(W)
    dU = np.zeros_like(U)
    db = np.zeros_like(b)
    # walk the time loop in the reverse of the forward order
    steps = range(T) if cache["reverse"] else range(T - 1, -1, -1)
    for t in steps:
        m = mask[:, t][:, None]
        dh_new = m * (dh + dY[:, t])
        dh_prev = (1.0 - m) * dh
        xd = X[:, t] * in_mask if in_mask is not None else X[:, t]
        hd = cache["Hprev"][:, t] * rec_mask if rec_mask is not None else cache["Hprev"][:, t]
        if cell == "lstm":
            dc_new = m * dc
            dc_prev = (1.0 - m) * dc
            i, f = cache["I"][:, t], cache["F"][:, t]
            g, o = cache["G"][:, t], cache["O"][:, t]
            tc = np.tanh(cache["Cnew"][:, t])
            do = dh_new * tc
            dct = dc_new + dh_new * o * (1.0 - tc * tc)
            di = dct * g
            dg = dct * i
            df = dct * cache["Cprev"][:, t]
            dc_prev = dc_prev + dct * f
            da = np.concatenate(
                (di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o)),
                axis=1,
            )
            dhd = da @ U.T
            dc = dc_prev
        else:
            z, r, n = cache["Z"][:, t], cache["R"][:, t], cache["N"][:, t]
            h_prev = cache["Hprev"][:, t]
            dz = dh_new * (h_prev - n)
            dn = dh_new * (1.0 - z)
            dh_prev = dh_prev + dh_new * z
            da_n = dn * (1.0 - n * n)
            drh = da_n @ U[:, 2 * H :].T
            dr = drh * hd
            da_z = dz * z * (1.0 - z)
            da_r = dr * r * (1.0 - r)
            da = np.concatenate((da_z, da_r, da_n), axis=1)
            dhd = da_z @ U[:, :H].T + da_r @ U[:, H : 2 * H].T + drh * r
            dU[:, :H] += hd.T @ da_z
            dU[:, H : 2 * H] += hd.T @ da_r
            dU[:, 2 * H :] += (r * hd).T @ da_n
        dW += xd.T @ da
        db += da.sum(axis=0)
        if cell == "lstm":
            dU += hd.T @ da
        dxd = da @ W.T
        dX[:, t] = dxd * in_mask if in_mask is not None else dxd
        dh = dh_prev + (dhd * rec_mask if rec_mask is not None else dhd)
    return dX, dW, dU, db


def _forward_full(model, batch, train, masks, freeze_stats):
    cfg = model.cfg
    if batch.x.ndim != 3 or batch.x.shape[2] != cfg.n_features:
        raise ShapeMismatchError(
            f"batch features {batch.x.shape} do not match n_features={cfg.n_features}"
        )
    mask = batch.mask
    y0, xhat, bmean, bvar = _bn_forward(
        batch.x,
        mask,
        model.params["bn.gamma"],
        model.params["bn.beta"],
        model.bn_mean,
        model.bn_var,
        use_batch_stats=(train and not freeze_stats),
    )
    cache = {"mask": mask, "xhat": xhat, "bn_stats": (bmean, bvar), "layers": []}
    X = y0
    summary_parts = {}
    for layer in range(cfg.layers):
        lcache = {"X": X, "dirs": {}}
        outs = []
        for d in cfg.directions:
            W = model.params[f"l{layer}.{d}.W"]
            U = model.params[f"l{layer}.{d}.U"]
            b = model.params[f"l{layer}.{d}.b"]
            in_m = masks.get((layer, d, "in")) if masks else None
            rec_m = masks.get((layer, d, "rec")) if masks else None
            Y, s, dcache = _run_direction(
                cfg.cell, X, mask, W, U, b, in_m, rec_m, reverse=(d == "bwd")
            )
            lcache["dirs"][d] = dcache
            outs.append(Y)
            summary_parts[d] = s
        X = outs[0] if len(outs) == 1 else np.concatenate(outs, axis=2)
        cache["layers"].append(lcache)
    summary = (
        summary_parts["fwd"]
        if not cfg.bidirectional
        else np.concatenate([summary_parts["fwd"], summary_parts["bwd"]], axis=1)
    )
    logits = summary @ model.params["out.W"] + model.params["out.b"]
    shifted = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(shifted)
    probs = expl / expl.sum(axis=1, keepdims=True)
    cache["summary"] = summary
    cache["probs"] = probs
    return probs, cache


def forward(
    model: RnnModel,
    batch: Batch,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    masks=None,
    freeze_batch_stats: bool = False,
) -> np.ndarray:
    """Class probability rows (each sums to 1). Train mode applies dropout
    (masks sampled from rng unless given) and batch statistics; eval mode is
    deterministic and uses running statistics."""
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    train = mode == "train"
    if train and masks is None:
        if model.cfg.dropout > 0.0 or model.cfg.recurrent_dropout > 0.0:
            if rng is None:
                raise ValueError("train-mode forward with dropout needs an rng or masks")
            masks = sample_dropout_masks(model.cfg, batch.x.shape[0], rng)
    probs, _ = _forward_full(model, batch, train, masks if train else None, freeze_batch_stats)
    return probs


def loss_and_grads(
    model: RnnModel,
    batch: Batch,
    rng: np.random.Generator | None = None,
    masks=None,
    update_running: bool = False,
):
    """Mean cross-entropy over the batch and its gradient for every parameter,
    via backpropagation through time. Returns (loss, grads dict)."""
    loss, grads, _, _ = _loss_and_grads_full(model, batch, rng, masks, update_running)
    return loss, grads


def _loss_and_grads_full(model, batch, rng, masks, update_running):
    cfg = model.cfg
    labels = batch.labels
    if labels.min() < 0 or labels.max() >= cfg.n_classes:
        raise LabelOutOfRangeError(
            f"labels must lie in [0, {cfg.n_classes}); got [{labels.min()}, {labels.max()}]"
        )
    if masks is None and (cfg.dropout > 0.0 or cfg.recurrent_dropout > 0.0):
        if rng is None:
            raise ValueError("training with dropout needs an rng or explicit masks")
        masks = sample_dropout_masks(cfg, batch.x.shape[0], rng)
    probs, cache = _forward_full(model, batch, train=True, masks=masks, freeze_stats=False)
    B = batch.x.shape[0]
    loss = float(-np.log(probs[np.arange(B), labels]).mean())

    grads = {name: np.zeros_like(p) for name, p in model.params.items()}
    dlogits = probs.copy()
    dlogits[np.arange(B), labels] -= 1.0
    dlogits /= B
    summary = cache["summary"]
    grads["out.W"] = summary.T @ dlogits
    grads["out.b"] = dlogits.sum(axis=0)
    dsummary = dlogits @ model.params["out.W"].T

    H = cfg.hidden
    mask = cache["mask"]
    dsum_by_dir = {"fwd": dsummary[:, :H]}
    if cfg.bidirectional:
        dsum_by_dir["bwd"] = dsummary[:, H:]

    dX_next = None  # grad wrt the current layer's per-step outputs
    for layer in range(cfg.layers - 1, -1, -1):
        lcache = cache["layers"][layer]
        X = lcache["X"]
        dX_accum = np.zeros_like(X)
        for di, d in enumerate(cfg.directions):
            if layer == cfg.layers - 1:
                dY = np.zeros((B, X.shape[1], H))
                dsum = dsum_by_dir[d]
            else:
                dY = dX_next[:, :, di * H : (di + 1) * H]
                dsum = np.zeros((B, H))
            dXd, dW, dU, db = _run_direction_backward(
                cfg.cell,
                X,
                mask,
                model.params[f"l{layer}.{d}.W"],
                model.params[f"l{layer}.{d}.U"],
                model.params[f"l{layer}.{d}.b"],
                lcache["dirs"][d],
                dY,
                dsum,
            )
            grads[f"l{layer}.{d}.W"] = dW
            grads[f"l{layer}.{d}.U"] = dU
            grads[f"l{layer}.{d}.b"] = db
            dX_accum += dXd
        dX_next = dX_accum

    # batch-norm head of the stack: y = (gamma * xhat + beta) * mask
    w = mask[:, :, None]
    dy = dX_next * w
    grads["bn.gamma"] = (dy * cache["xhat"]).sum(axis=(0, 1))
    grads["bn.beta"] = dy.sum(axis=(0, 1))

    if update_running:
        bmean, bvar = cache["bn_stats"]
        model.bn_mean = _BN_MOMENTUM * model.bn_mean + (1.0 - _BN_MOMENTUM) * bmean
        model.bn_var = _BN_MOMENTUM * model.bn_var + (1.0 - _BN_MOMENTUM) * bvar
    return loss, grads, probs, cache["bn_stats"]


# --- Adam ---------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def init_adam_state(model: RnnModel) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p) for k, p in model.params.items()},
        v={k: np.zeros_like(p) for k, p in model.params.items()},
        t=0,
    )


def adam_step(
    state: AdamState, model: RnnModel, grads: dict[str, np.ndarray], cfg: TrainConfig
):
    """In-place Adam update with bias correction:
    theta -= lr * m_hat / (sqrt(v_hat) + eps)."""
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for k in model.params:
        g = grads[k]
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        model.params[k] -= cfg.learning_rate * (state.m[k] / c1) / (
            np.sqrt(state.v[k] / c2) + cfg.adam_eps
        )
    return model, state


def _clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


# --- training loop --------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


@dataclass
class TrainResult:
    model: RnnModel
    history: list[EpochStats]
    adam_state: AdamState


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=[seed, epoch]))


def train(
    model: RnnModel,
    sequences: list[FrameSequence],
    cfg: TrainConfig,
    adam_state: AdamState | None = None,
    epoch_offset: int = 0,
) -> TrainResult:
    """Mini-batch training: per epoch, a seeded shuffle, padded batches of
    batch_size, forward/BPTT/Adam. History records each epoch's mean loss and
    training accuracy. Resumable: pass the returned adam_state and the next
    epoch_offset to continue the exact same trajectory as one long run."""
    if not sequences:
        raise EmptyDatasetError("training set is empty")
    dims = {s.n_features for s in sequences}
    if len(dims) != 1:
        raise InconsistentFeatureDimError(f"mixed feature dims {sorted(dims)}")
    if dims.pop() != model.cfg.n_features:
        raise InconsistentFeatureDimError("sequences do not match the model's n_features")
    state = adam_state if adam_state is not None else init_adam_state(model)
    history = []
    n = len(sequences)
    uses_dropout = model.cfg.dropout > 0.0 or model.cfg.recurrent_dropout > 0.0
    for e in range(cfg.epochs):
        epoch = epoch_offset + e
        rng = _epoch_rng(cfg.seed, epoch)
        order = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for lo in range(0, n, cfg.batch_size):
            chunk = [sequences[i] for i in order[lo : lo + cfg.batch_size]]
            batch = make_batch(chunk)
            masks = (
                sample_dropout_masks(model.cfg, len(chunk), rng) if uses_dropout else None
            )
            loss, grads, probs, _ = _loss_and_grads_full(
                model, batch, None, masks, update_running=True
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            if cfg.clip_norm is not None:
                _clip_by_global_norm(grads, cfg.clip_norm)
            adam_step(state, model, grads, cfg)
            total_loss += loss * len(chunk)
            correct += int((probs.argmax(axis=1) == batch.labels).sum())
        history.append(EpochStats(epoch=epoch, loss=total_loss / n, accuracy=correct / n))
    return TrainResult(model=model, history=history, adam_state=state)


# --- prediction -------------------------------------------------------------------


def predict(model: RnnModel, sequence) -> tuple[int, np.ndarray]:
    """Eval-mode label and probability vector for one sequence; argmax with
    ties broken toward the lowest class index."""
    if isinstance(sequence, FrameSequence):
        frames = sequence.frames
    else:
        frames = np.atleast_2d(np.asarray(sequence, dtype=np.float64))
    seq = FrameSequence(frames=frames, label=0)
    probs = forward(model, make_batch([seq]), mode="eval")[0]
    return int(np.argmax(probs)), probs


def predict_batch(
    model: RnnModel, sequences: list[FrameSequence], batch_size: int = 32
) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode predictions for many sequences, batched for speed."""
    labels = np.empty(len(sequences), dtype=np.int64)
    probs = np.empty((len(sequences), model.cfg.n_classes))
    for lo in range(0, len(sequences), batch_size):
        chunk = sequences[lo : lo + batch_size]
        p = forward(model, make_batch(chunk), mode="eval")
        probs[lo : lo + len(chunk)] = p
        labels[lo : lo + len(chunk)] = p.argmax(axis=1)
    return labels, probs


# --- serialization ------------------------------------------------------------------

_MAGIC = b"AUSCMDL1"


@dataclass
class LoadedModel:
    model: RnnModel
    norm_stats: normalize.NormStats | None
    setting_id: str | None
    task: str | None


def save_model(
    path: str | Path,
    model: RnnModel,
    norm_stats: normalize.NormStats | None = None,
    setting_id: str | None = None,
    task: str | None = None,
) -> None:
    """Self-describing container: JSON header (config, tensor manifest,
    normalization statistics, frame setting, task) + raw little-endian
    float64 row-major buffers. Byte-identical for identical contents."""
    names = sorted(model.params) + ["running.mean", "running.var"]
    tensors = dict(model.params)
    tensors["running.mean"] = model.bn_mean
    tensors["running.var"] = model.bn_var
    header = {
        "format": "auscult-rnn",
        "version": 1,
        "model": asdict(model.cfg),
        "tensors": [{"name": n, "shape": list(tensors[n].shape)} for n in names],
        "norm_stats": normalize.save_json(norm_stats) if norm_stats is not None else None,
        "setting_id": setting_id,
        "task": task,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(tensors[n], dtype="<f8").tobytes())


def load_model(path: str | Path) -> LoadedModel:
    raw = Path(path).read_bytes()
    if raw[: len(_MAGIC)] != _MAGIC:
        raise ValueError(f"{path}: not an auscult model file")
    (hlen,) = struct.unpack_from("<Q", raw, len(_MAGIC))
    start = len(_MAGIC) + 8
    header = json.loads(raw[start : start + hlen].decode())
    if header.get("version") != 1:
        raise ValueError(f"unsupported model format version {header.get('version')}")
    cfg = ModelConfig(**header["model"])
    pos = start + hlen
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape)
        tensors[entry["name"]] = arr.astype(np.float64)
        pos += count * 8
    bn_mean = tensors.pop("running.mean")
    bn_var = tensors.pop("running.var")
    model = RnnModel(cfg=cfg, params=tensors, bn_mean=bn_mean, bn_var=bn_var)
    stats = (
        normalize.load_json(header["norm_stats"]) if header.get("norm_stats") else None
    )
    return LoadedModel(
        model=model,
        norm_stats=stats,
        setting_id=header.get("setting_id"),
        task=header.get("task"),
    )
