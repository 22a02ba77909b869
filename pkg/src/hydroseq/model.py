"""Dense encoder -> LSTM -> dense decoder, trained with BPTT and Adam.

Shapes use a time-major layout: an input window is ``(l_seq, n_gauges,
n_inputs)`` and predictions are ``(n_gauges, n_targets)`` for the day right
after the window. Every gauge in a window is one row of the mini-batch.

LSTM gates are stored stacked in the order forget, input, candidate, output,
so ``W`` is ``(4*hidden, n_in)``; :class:`LstmParams` exposes per-gate views.
The candidate state and the cell output use SELU, the gates use sigmoid.
"""
import base64
import binascii
import json
import logging
import math
import weakref
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundsError, CheckpointFormatError, ContractError, DomainError, ShapeError, TrainingError
from .numerics import Rng

log = logging.getLogger(__name__)

SELU_ALPHA = 1.6732632423543772
SELU_LAMBDA = 1.0507009873554805

GATES = ("f", "i", "c", "o")
PARAM_ORDER = (
    "encoder.weight", "encoder.bias",
    "lstm.W", "lstm.U", "lstm.b",
    "decoder.weight", "decoder.bias",
)
CHECKPOINT_FORMAT = "hydroseq-checkpoint"


def selu(x):
    x = np.asarray(x, dtype=np.float64)
    neg = np.expm1(np.minimum(x, 0.0))
    neg *= SELU_ALPHA
    neg += np.maximum(x, 0.0)
    neg *= SELU_LAMBDA
    return neg


def selu_grad(x):
    x = np.asarray(x, dtype=np.float64)
    g = np.exp(np.minimum(x, 0.0))
    g *= SELU_ALPHA * SELU_LAMBDA
    g[x > 0] = SELU_LAMBDA
    return g


def sigmoid(x):
    # tanh form never overflows
    out = np.tanh(0.5 * np.asarray(x, dtype=np.float64))
    out *= 0.5
    out += 0.5
    return out


@dataclass
class DenseParams:
    weight: np.ndarray
    bias: np.ndarray

    @property
    def n_in(self):
        return self.weight.shape[1]

    @property
    def n_out(self):
        return self.weight.shape[0]


@dataclass
class LstmParams:
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        h = self.U.shape[1]
        if self.U.shape != (4 * h, h) or self.W.shape[0] != 4 * h or self.b.shape != (4 * h,):
            raise ShapeError("inconsistent LSTM parameter shapes")

    @property
    def hidden(self):
        return self.U.shape[1]

    @property
    def n_in(self):
        return self.W.shape[1]

    def gate(self, name):
        """``(W_g, U_g, b_g)`` views for gate ``name`` in ``'fico'``."""
        k = GATES.index(name)
        s = slice(k * self.hidden, (k + 1) * self.hidden)
        return self.W[s], self.U[s], self.b[s]

    @classmethod
    def from_gates(cls, gates):
        """Stack a ``{'f': (W, U, b), 'i': ..., 'c': ..., 'o': ...}`` mapping."""
        return cls(
            np.vstack([gates[g][0] for g in GATES]),
            np.vstack([gates[g][1] for g in GATES]),
            np.concatenate([gates[g][2] for g in GATES]),
        )


@dataclass
class ModelParams:
    encoder: DenseParams
    lstm: LstmParams
    decoder: DenseParams
    dropout_rate: float = 0.2

    def __post_init__(self):
        if self.encoder.n_out != self.lstm.n_in:
            raise ShapeError("encoder output size must equal LSTM input size")
        if self.decoder.n_in != self.lstm.hidden:
            raise ShapeError("decoder input size must equal LSTM hidden size")
        if not 0 <= self.dropout_rate < 1:
            raise DomainError("dropout rate must lie in [0, 1)")

    @property
    def n_inputs(self):
        return self.encoder.n_in

    @property
    def n_targets(self):
        return self.decoder.n_out

    def arrays(self):
        """Parameter arrays keyed by :data:`PARAM_ORDER` (live references)."""
        return {
            "encoder.weight": self.encoder.weight,
            "encoder.bias": self.encoder.bias,
            "lstm.W": self.lstm.W,
            "lstm.U": self.lstm.U,
            "lstm.b": self.lstm.b,
            "decoder.weight": self.decoder.weight,
            "decoder.bias": self.decoder.bias,
        }

    @classmethod
    def from_arrays(cls, arrays, dropout_rate=0.2):
        return cls(
            DenseParams(arrays["encoder.weight"], arrays["encoder.bias"]),
            LstmParams(arrays["lstm.W"], arrays["lstm.U"], arrays["lstm.b"]),
            DenseParams(arrays["decoder.weight"], arrays["decoder.bias"]),
            dropout_rate,
        )

    def copy(self):
        return ModelParams.from_arrays(
            {k: v.copy() for k, v in self.arrays().items()}, self.dropout_rate
        )


def init_params(n_inputs, n_targets, encoder_size=64, hidden_size=64,
                dropout_rate=0.2, rng=None):
    """Glorot-uniform weights per gate block, zero biases."""
    rng = rng or Rng(0)

    def glorot(out, inp):
        limit = math.sqrt(6.0 / (inp + out))
        return rng.uniform(-limit, limit, size=(out, inp))

    enc = DenseParams(glorot(encoder_size, n_inputs), np.zeros(encoder_size))
    gates = {
        g: (glorot(hidden_size, encoder_size), glorot(hidden_size, hidden_size),
            np.zeros(hidden_size))
        for g in GATES
    }
    dec = DenseParams(glorot(n_targets, hidden_size), np.zeros(n_targets))
    return ModelParams(enc, LstmParams.from_gates(gates), dec, dropout_rate)


def lstm_cell_forward(x_t, h_prev, c_prev, p):
    """One LSTM step for a batch of rows (or a single vector).

    Returns ``(h_t, c_t, cache)``; the cache holds what the backward step
    needs.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape[-1] != p.n_in or np.shape(h_prev)[-1] != p.hidden:
        raise ShapeError("lstm_cell_forward: input or state size mismatch")
    single = x_t.ndim == 1
    x2 = np.atleast_2d(x_t)
    h2 = np.atleast_2d(np.asarray(h_prev, dtype=np.float64))
    c2 = np.atleast_2d(np.asarray(c_prev, dtype=np.float64))
    z = x2 @ p.W.T + h2 @ p.U.T + p.b
    h, c, cache = _cell_from_preact(z, h2, c2, p.hidden)
    if single:
        return h[0], c[0], cache
    return h, c, cache


def _selu_and_grad(x):
    e = np.exp(np.minimum(x, 0.0))
    pos = x > 0
    y = np.where(pos, x, SELU_ALPHA * (e - 1.0))
    y *= SELU_LAMBDA
    e *= SELU_ALPHA * SELU_LAMBDA
    e[pos] = SELU_LAMBDA
    return y, e


def _cell_from_preact(z, h_prev, c_prev, hidden):
    H = hidden
    act = sigmoid(z)
    # local derivative of each activation w.r.t. its pre-activation
    deriv = act * (1.0 - act)
    act[:, 2 * H:3 * H], deriv[:, 2 * H:3 * H] = _selu_and_grad(z[:, 2 * H:3 * H])
    f = act[:, :H]
    i = act[:, H:2 * H]
    cand = act[:, 2 * H:3 * H]
    o = act[:, 3 * H:]
    c = c_prev * f
    c += i * cand
    s, ds = _selu_and_grad(c)
    h = o * s
    cache = (act, deriv, c_prev, s, ds, h_prev)
    return h, c, cache


def _cell_backward(dh, dc, cache, hidden):
    """Gradient w.r.t. the stacked pre-activation and the previous cell."""
    act, deriv, c_prev, s, ds, h_prev = cache
    H = hidden
    dc = dc + dh * act[:, 3 * H:] * ds
    dz = np.empty_like(act)
    dz[:, :H] = dc * c_prev
    dz[:, H:2 * H] = dc * act[:, 2 * H:3 * H]
    dz[:, 2 * H:3 * H] = dc * act[:, H:2 * H]
    dz[:, 3 * H:] = dh * s
    dz *= deriv
    return dz, dc * act[:, :H]


def _dropout_mask(rng, shape, rate):
    if rate == 0:
        return None
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def forward(x, p, mode="eval", rng=None):
    """Run a window through the network.

    Args:
        x: ``(l_seq, n_gauges, n_inputs)`` inputs.
        p: Model parameters.
        mode: ``"train"`` samples inverted-dropout masks on the encoder and
            decoder outputs; ``"eval"`` is deterministic.
        rng: Source of dropout masks; required in train mode when the
            dropout rate is nonzero.

    Returns:
        ``(predictions, cache)`` with predictions ``(n_gauges, n_targets)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[-1] != p.n_inputs:
        raise ShapeError(f"expected (l_seq, gauges, {p.n_inputs}) inputs, got {x.shape}")
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    train = mode == "train" and p.dropout_rate > 0
    if train and rng is None:
        raise ValueError("train mode with dropout needs an rng")
    L, G, _ = x.shape
    H = p.lstm.hidden

    enc_pre = x @ p.encoder.weight.T + p.encoder.bias
    enc = selu(enc_pre)
    mask_e = _dropout_mask(rng, enc.shape, p.dropout_rate) if train else None
    if mask_e is not None:
        enc = enc * mask_e

    xw = enc @ p.lstm.W.T + p.lstm.b
    h = np.zeros((G, H))
    c = np.zeros((G, H))
    steps = []
    for t in range(L):
        z = xw[t] + h @ p.lstm.U.T
        h, c, cache = _cell_from_preact(z, h, c, H)
        steps.append(cache)

    dec_pre = h @ p.decoder.weight.T + p.decoder.bias
    out = selu(dec_pre)
    mask_d = _dropout_mask(rng, out.shape, p.dropout_rate) if train else None
    if mask_d is not None:
        out = out * mask_d
    cache = {
        "params": p, "x": x, "enc_pre": enc_pre, "enc": enc, "mask_e": mask_e,
        "steps": steps, "h_last": h, "dec_pre": dec_pre, "mask_d": mask_d,
    }
    return out, cache


def backward(cache, d_pred):
    """Exact parameter gradients by backpropagation through time.

    Returns a dict keyed like :meth:`ModelParams.arrays`.
    """
    p = cache.get("params")
    if p is None or "steps" not in cache:
        raise ContractError("backward needs the cache of a forward pass")
    d_pred = np.asarray(d_pred, dtype=np.float64)
    if d_pred.shape != cache["dec_pre"].shape:
        raise ContractError(
            f"upstream gradient shape {d_pred.shape} != predictions {cache['dec_pre'].shape}"
        )
    H = p.lstm.hidden
    x, enc = cache["x"], cache["enc"]
    L, G, _ = x.shape

    d_out = d_pred if cache["mask_d"] is None else d_pred * cache["mask_d"]
    d_dec = d_out * selu_grad(cache["dec_pre"])
    grads = {
        "decoder.weight": d_dec.T @ cache["h_last"],
        "decoder.bias": d_dec.sum(axis=0),
    }
    dh = d_dec @ p.decoder.weight
    dc = np.zeros((G, H))
    dz_all = np.empty((L, G, 4 * H))
    dU = np.zeros_like(p.lstm.U)
    for t in range(L - 1, -1, -1):
        step = cache["steps"][t]
        dz, dc = _cell_backward(dh, dc, step, H)
        dz_all[t] = dz
        dU += dz.T @ step[5]
        dh = dz @ p.lstm.U

    flat_dz = dz_all.reshape(L * G, 4 * H)
    grads["lstm.W"] = flat_dz.T @ enc.reshape(L * G, -1)
    grads["lstm.U"] = dU
    grads["lstm.b"] = flat_dz.sum(axis=0)

    d_enc = dz_all @ p.lstm.W
    if cache["mask_e"] is not None:
        d_enc = d_enc * cache["mask_e"]
    d_enc_pre = (d_enc * selu_grad(cache["enc_pre"])).reshape(L * G, -1)
    grads["encoder.weight"] = d_enc_pre.T @ x.reshape(L * G, -1)
    grads["encoder.bias"] = d_enc_pre.sum(axis=0)
    return grads


def mse_loss(pred, target):
    """Mean squared error over all gauges and targets, with its gradient."""
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, lr=0.001):
        arrays = params.arrays()
        return cls(
            {k: np.zeros_like(a) for k, a in arrays.items()},
            {k: np.zeros_like(a) for k, a in arrays.items()},
            lr=lr,
        )


def adam_step(params, grads, state):
    """Bias-corrected Adam update.

    Parameter arrays and moments are updated in place; the same objects are
    returned for convenience.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    for name, arr in params.arrays().items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        arr -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return params, state


# --- batching ---------------------------------------------------------------

def batches_per_epoch(day_total, l_seq):
    if l_seq < 1 or l_seq > day_total:
        raise DomainError(f"need 1 <= l_seq <= day_total, got {l_seq}, {day_total}")
    return day_total - l_seq + 1


def batch_size(l_seq, n_gauges, n_props):
    if min(l_seq, n_gauges, n_props) < 1:
        raise DomainError("batch dimensions must be positive")
    return l_seq * n_gauges * n_props


@dataclass(frozen=True)
class BatchPlan:
    """Symbolic description of the training windows.

    ``day_total`` counts the days that can start or continue an input
    window, i.e. every day except the final ``horizon`` days that only serve
    as targets.
    """

    day_total: int
    l_seq: int
    n_gauges: int
    n_input_properties: int

    def __post_init__(self):
        if self.l_seq > self.day_total:
            raise DomainError("l_seq exceeds day_total")

    @property
    def n_batches(self):
        return batches_per_epoch(self.day_total, self.l_seq)

    @property
    def batch_size(self):
        return batch_size(self.l_seq, self.n_gauges, self.n_input_properties)


@dataclass(frozen=True)
class Batch:
    index: int
    inputs: np.ndarray
    targets: np.ndarray


@dataclass(frozen=True)
class WindowData:
    """Raw model-ready tensors: inputs ``(D, G, n_in)``, targets ``(D, G, n_t)``."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if self.inputs.shape[:2] != self.targets.shape[:2]:
            raise ShapeError("inputs and targets must share (days, gauges)")

    def plan(self, l_seq):
        D, G, n_in = self.inputs.shape
        return BatchPlan(D - 1, l_seq, G, n_in)


def batch_at(plan, data, i):
    """Window ``i``: input days ``[i, i + l_seq)`` and targets of day ``i + l_seq``.

    The returned arrays are views into ``data``; nothing is copied.
    """
    if not 0 <= i < plan.n_batches:
        raise BoundsError(f"batch index {i} outside [0, {plan.n_batches})")
    return Batch(i, data.inputs[i:i + plan.l_seq], data.targets[i + plan.l_seq])


class WindowBatcher:
    """Yields windows on demand from the raw tensors.

    ``live_batches`` counts Batch objects handed out and not yet released;
    ``peak_live`` is its high-water mark measured at each hand-out after the
    previous batch has been dropped by the caller.
    """

    def __init__(self, data, l_seq):
        self.data = data
        self.plan = data.plan(l_seq)
        self.live_batches = 0
        self.peak_live = 0

    def __len__(self):
        return self.plan.n_batches

    def _release(self):
        self.live_batches -= 1

    def batch_at(self, i):
        batch = batch_at(self.plan, self.data, i)
        self.live_batches += 1
        self.peak_live = max(self.peak_live, self.live_batches)
        weakref.finalize(batch, self._release)
        return batch

    def __iter__(self):
        for i in range(len(self)):
            batch = self.batch_at(i)
            yield batch
            del batch


def predict_windows(params, data, l_seq, chunk=256):
    """Eval-mode predictions for every window: ``(n_windows, G, n_targets)``.

    Windows are processed ``chunk`` at a time by stacking them along the
    gauge axis, so memory stays bounded.
    """
    plan = data.plan(l_seq)
    n = plan.n_batches
    G = plan.n_gauges
    out = np.empty((n, G, params.n_targets))
    windows = np.lib.stride_tricks.sliding_window_view(
        data.inputs[:plan.day_total], l_seq, axis=0
    )  # (n, G, n_in, l_seq) view
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        w = windows[start:stop]                     # (k, G, n_in, L)
        x = np.transpose(w, (3, 0, 1, 2)).reshape(l_seq, (stop - start) * G, -1)
        pred, _ = forward(x, params, "eval")
        out[start:stop] = pred.reshape(stop - start, G, -1)
    return out


def window_targets(data, l_seq):
    return data.targets[l_seq:]


def evaluate_loss(params, data, l_seq):
    pred = predict_windows(params, data, l_seq)
    return float(np.mean((pred - window_targets(data, l_seq)) ** 2))


# --- training ---------------------------------------------------------------

@dataclass
class TrainConfig:
    successful_epochs: int = 120
    lr: float = 0.001
    l_seq: int = 21
    encoder_size: int = 64
    hidden_size: int = 64
    dropout: float = 0.2
    max_epochs: int | None = None
    seed: int = 0


@dataclass
class EpochRecord:
    epoch: int
    train_rmse: float
    val_rmse: float
    successful: bool


@dataclass
class LossHistory:
    epochs: list = field(default_factory=list)

    @property
    def n_successful(self):
        return sum(e.successful for e in self.epochs)

    def __len__(self):
        return len(self.epochs)


def train(cfg, train_data, val_data, params=None, rng=None, on_epoch=None):
    """Train until ``cfg.successful_epochs`` epochs improved on their predecessor.

    An epoch is successful when its mean training loss or its validation
    loss is strictly lower than the previous epoch's (the first epoch
    compares against infinity). Batches are visited in index order.

    Returns:
        ``(params, history)``; params are those after the last epoch.

    Raises:
        TrainingError: A loss became non-finite.
    """
    rng = rng or Rng(cfg.seed)
    n_in = train_data.inputs.shape[-1]
    n_t = train_data.targets.shape[-1]
    if params is None:
        params = init_params(n_in, n_t, cfg.encoder_size, cfg.hidden_size,
                             cfg.dropout, rng.child(1))
    elif params.n_inputs != n_in or params.n_targets != n_t:
        raise ShapeError("parameters do not match the data's feature counts")
    drop_rng = rng.child(2)
    state = AdamState.zeros_like(params, lr=cfg.lr)
    batcher = WindowBatcher(train_data, cfg.l_seq)
    history = LossHistory()
    prev_train = prev_val = math.inf
    epoch = 0
    while history.n_successful < cfg.successful_epochs:
        if cfg.max_epochs is not None and epoch >= cfg.max_epochs:
            log.warning("stopping at max_epochs=%d with %d successful epochs",
                        cfg.max_epochs, history.n_successful)
            break
        epoch += 1
        total = 0.0
        for batch in batcher:
            pred, cache = forward(batch.inputs, params, "train", drop_rng)
            loss, d_pred = mse_loss(pred, batch.targets)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite training loss in epoch {epoch}")
            total += loss
            adam_step(params, backward(cache, d_pred), state)
            del batch, cache  # release before the batcher hands out the next window
        train_loss = total / len(batcher)
        val_loss = evaluate_loss(params, val_data, cfg.l_seq)
        if not math.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss in epoch {epoch}")
        ok = train_loss < prev_train or val_loss < prev_val
        rec = EpochRecord(epoch, math.sqrt(train_loss), math.sqrt(val_loss), ok)
        history.epochs.append(rec)
        log.info("epoch %d train_rmse=%.6f val_rmse=%.6f successful=%s",
                 epoch, rec.train_rmse, rec.val_rmse, ok)
        if on_epoch is not None:
            on_epoch(rec)
        prev_train, prev_val = train_loss, val_loss
    return params, history


# --- checkpoints ------------------------------------------------------------

def save_checkpoint(params, path, meta=None):
    """Write a JSON header line then one ``name base64`` line per array.

    Payloads are float64 little-endian, in :data:`PARAM_ORDER`.
    """
    arrays = params.arrays()
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "dtype": "<f8",
        "dropout_rate": params.dropout_rate,
        "params": [{"name": n, "shape": list(arrays[n].shape)} for n in PARAM_ORDER],
        "meta": meta or {},
    }
    lines = [json.dumps(header, sort_keys=True)]
    for name in PARAM_ORDER:
        raw = np.ascontiguousarray(arrays[name], dtype="<f8").tobytes()
        lines.append(f"{name} {base64.b64encode(raw).decode('ascii')}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_checkpoint(path):
    """Parse a checkpoint into ``(ModelParams, header)``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    pos = 0

    def next_line():
        nonlocal pos
        end = blob.find(b"\n", pos)
        if end < 0:
            raise CheckpointFormatError("truncated checkpoint", pos)
        start, pos = pos, end + 1
        return start, blob[start:end]

    start, line = next_line()
    try:
        header = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointFormatError(f"bad header: {exc}", start) from None
    if header.get("format") != CHECKPOINT_FORMAT or header.get("version") != 1:
        raise CheckpointFormatError("not a hydroseq checkpoint", start)
    entries = header.get("params", [])
    if [e.get("name") for e in entries] != list(PARAM_ORDER):
        raise CheckpointFormatError("unexpected parameter list in header", start)

    arrays = {}
    for entry in entries:
        start, line = next_line()
        name, _, payload = line.partition(b" ")
        if name.decode("ascii", "replace") != entry["name"]:
            raise CheckpointFormatError(f"expected parameter {entry['name']!r}", start)
        try:
            raw = base64.b64decode(payload, validate=True)
        except binascii.Error as exc:
            raise CheckpointFormatError(f"bad payload for {entry['name']}: {exc}", start) from None
        shape = tuple(entry["shape"])
        if len(raw) != 8 * int(np.prod(shape, dtype=int)):
            raise CheckpointFormatError(f"payload size mismatch for {entry['name']}", start)
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    if pos != len(blob):
        raise CheckpointFormatError("trailing data after parameters", pos)
    try:
        params = ModelParams.from_arrays(arrays, header["dropout_rate"])
    except (ShapeError, DomainError, KeyError) as exc:
        raise CheckpointFormatError(f"inconsistent parameters: {exc}", 0) from None
    return params, header


def load_checkpoint(path):
    return read_checkpoint(path)[0]
