"""Dense-tensor autodiff core.

A deliberately small reverse-mode engine: ops compute with numpy and, when a
Tape is supplied, append a backward closure to it. The tape is an append-only
list, so creation order is already a topological order and ``backward`` is a
single reverse sweep that visits each node once. Training runs in float32;
float64 is used by the gradient checker.

Only the ops the classifier needs are provided. Tensors are value objects
and safe to share across threads; a Tape must stay on one thread.
"""

from __future__ import annotations

import math
import zlib

import numpy as np


class Tensor:
    """A numpy array plus an accumulated gradient slot."""

    __slots__ = ("data", "grad", "name", "trainable")

    def __init__(self, data, name: str = "", trainable: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.name = name
        self.trainable = trainable

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, name={self.name!r})"


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _accumulate(t: Tensor, g: np.ndarray):
    if g is None:
        return
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tape:
    """Recorded forward pass; replayed in reverse for gradients."""

    def __init__(self):
        self._records = []  # (out, inputs, backward_fn)
        self._watched = []

    def record(self, out: Tensor, inputs: tuple, backward_fn):
        self._records.append((out, inputs, backward_fn))

    def watch(self, *tensors: Tensor):
        """Register parameters that must receive a gradient (zero if unused)."""
        self._watched.extend(tensors)

    def backward(self, loss: Tensor):
        if loss.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {loss.data.shape}"
            )
        loss.grad = np.ones_like(loss.data)
        for out, inputs, backward_fn in reversed(self._records):
            if out.grad is None:
                continue
            grads = backward_fn(out.grad)
            for t, g in zip(inputs, grads):
                _accumulate(t, g)
        for t in self._watched:
            if t.grad is None:
                t.grad = np.zeros_like(t.data)


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------


def add(tape, a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)
    if tape is not None:
        sa, sb = a.data.shape, b.data.shape

        def bwd(g):
            return _unbroadcast(g, sa), _unbroadcast(g, sb)

        tape.record(out, (a, b), bwd)
    return out


def mul(tape, a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)
    if tape is not None:
        da, db = a.data, b.data

        def bwd(g):
            return _unbroadcast(g * db, da.shape), _unbroadcast(g * da, db.shape)

        tape.record(out, (a, b), bwd)
    return out


def matmul(tape, a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    da, db = a.data, b.data
    try:
        out_data = np.matmul(da, db)
    except ValueError as exc:
        raise ValueError(f"matmul: incompatible shapes {da.shape} @ {db.shape}") from exc
    out = Tensor(out_data)
    if tape is not None:

        def bwd(g):
            if da.ndim == 1 and db.ndim == 1:
                return g * db, g * da
            # Re-expand any axis numpy's 1-D matmul convention squeezed away,
            # then sum broadcast batch dims back down with _unbroadcast.
            g2 = g
            if da.ndim == 1:
                g2 = np.expand_dims(g2, -2)
            if db.ndim == 1:
                g2 = np.expand_dims(g2, -1)
            a2 = da if da.ndim > 1 else da[None, :]
            b2 = db if db.ndim > 1 else db[:, None]
            ga = np.matmul(g2, b2.swapaxes(-1, -2))
            gb = np.matmul(a2.swapaxes(-1, -2), g2)
            if da.ndim == 1:
                ga = ga.reshape(ga.shape[:-2] + (ga.shape[-1],))
            if db.ndim == 1:
                gb = gb.reshape(gb.shape[:-2] + (gb.shape[-2],))
            return _unbroadcast(ga, da.shape), _unbroadcast(gb, db.shape)

        tape.record(out, (a, b), bwd)
    return out


def transpose(tape, a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError(f"transpose expects a 2-D tensor, got shape {a.data.shape}")
    out = Tensor(a.data.T.copy())
    if tape is not None:
        tape.record(out, (a,), lambda g: (g.T,))
    return out


def sigmoid(tape, a) -> Tensor:
    a = as_tensor(a)
    # Split by sign to avoid exp overflow on large negative inputs.
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    y = y.astype(x.dtype, copy=False)
    out = Tensor(y)
    if tape is not None:
        tape.record(out, (a,), lambda g: (g * y * (1.0 - y),))
    return out


def tanh(tape, a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    out = Tensor(y)
    if tape is not None:
        tape.record(out, (a,), lambda g: (g * (1.0 - y * y),))
    return out


def relu(tape, a) -> Tensor:
    a = as_tensor(a)
    # Subgradient at exactly 0 is taken as 0.
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0.0).astype(a.data.dtype, copy=False))
    if tape is not None:
        tape.record(out, (a,), lambda g: (g * mask,))
    return out


def softmax(tape, a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)
    if tape is not None:

        def bwd(g):
            dot = (g * y).sum(axis=axis, keepdims=True)
            return (y * (g - dot),)

        tape.record(out, (a,), bwd)
    return out


def concat(tape, tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    if tape is not None:
        sizes = [t.data.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]

        def bwd(g):
            return tuple(np.split(g, splits, axis=axis))

        tape.record(out, tuple(tensors), bwd)
    return out


def stack(tape, tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in tensors], axis=axis))
    if tape is not None:
        ax = axis if axis >= 0 else out.data.ndim + axis

        def bwd(g):
            return tuple(np.moveaxis(g, ax, 0))

        tape.record(out, tuple(tensors), bwd)
    return out


def reshape(tape, a, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.data.shape
    out = Tensor(a.data.reshape(shape))
    if tape is not None:
        tape.record(out, (a,), lambda g: (g.reshape(orig),))
    return out


def select(tape, a, axis: int, index: int) -> Tensor:
    """Take one index along an axis, dropping that axis."""
    a = as_tensor(a)
    out = Tensor(np.take(a.data, index, axis=axis))
    if tape is not None:
        shape = a.data.shape

        def bwd(g):
            full = np.zeros(shape, dtype=g.dtype)
            idx = [slice(None)] * len(shape)
            idx[axis] = index
            full[tuple(idx)] = g
            return (full,)

        tape.record(out, (a,), bwd)
    return out


def reduce_sum(tape, a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.asarray(a.data.sum()))
    if tape is not None:
        shape, dtype = a.data.shape, a.data.dtype
        tape.record(out, (a,), lambda g: (np.broadcast_to(g, shape).astype(dtype),))
    return out


def reduce_max(tape, a, axis: int) -> Tensor:
    """Max along one axis; gradient flows to the first argmax only."""
    a = as_tensor(a)
    x = a.data
    out_data = x.max(axis=axis)
    out = Tensor(out_data)
    if tape is not None:
        argmax = np.expand_dims(x.argmax(axis=axis), axis)

        def bwd(g):
            full = np.zeros_like(x)
            np.put_along_axis(full, argmax, np.expand_dims(g, axis), axis)
            return (full,)

        tape.record(out, (a,), bwd)
    return out


def dropout(tape, a, p: float, train: bool, seed: int) -> Tensor:
    """Inverted dropout: kept activations are scaled by 1/(1-p) at train time."""
    a = as_tensor(a)
    if not train or p <= 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    rng = np.random.default_rng(seed)
    keep = (rng.random(a.data.shape) >= p).astype(a.data.dtype)
    scale = keep / (1.0 - p)
    out = Tensor(a.data * scale)
    if tape is not None:
        tape.record(out, (a,), lambda g: (g * scale,))
    return out


def conv1d_valid(tape, seq, weight, bias=None) -> Tensor:
    """Valid 1-D convolution over a token-embedding sequence.

    seq is (L, d) or (B, L, d); weight is (k, d, n); bias is (n,).
    Output is (L-k+1, n) or (B, L-k+1, n). Each output row is the flattened
    window of k consecutive embedding rows times the filters, plus bias.
    """
    seq, weight = as_tensor(seq), as_tensor(weight)
    bias = as_tensor(bias) if bias is not None else None
    x = seq.data
    w = weight.data
    batched = x.ndim == 3
    if x.ndim not in (2, 3):
        raise ValueError(f"conv1d_valid: input must be 2-D or 3-D, got {x.shape}")
    k, d, n = w.shape
    L = x.shape[-2]
    if x.shape[-1] != d:
        raise ValueError(
            f"conv1d_valid: embedding dim mismatch, input {x.shape} vs filter {w.shape}"
        )
    if L < k:
        raise ValueError(f"conv1d_valid: sequence length {L} shorter than filter width {k}")
    lout = L - k + 1
    xb = x if batched else x[None]
    out_data = np.zeros(xb.shape[:1] + (lout, n), dtype=x.dtype)
    for t in range(k):
        out_data += np.matmul(xb[:, t : t + lout, :], w[t])
    if bias is not None:
        out_data = out_data + bias.data
    out = Tensor(out_data if batched else out_data[0])
    if tape is not None:

        def bwd(g):
            gb3 = g if batched else g[None]
            gx = np.zeros_like(xb)
            gw = np.zeros_like(w)
            for t in range(k):
                gx[:, t : t + lout, :] += np.matmul(gb3, w[t].T)
                gw[t] = np.tensordot(xb[:, t : t + lout, :], gb3, axes=([0, 1], [0, 1]))
            grads = [gx if batched else gx[0], gw]
            if bias is not None:
                grads.append(gb3.sum(axis=(0, 1)))
            return tuple(grads)

        inputs = (seq, weight) if bias is None else (seq, weight, bias)
        tape.record(out, inputs, bwd)
    return out


def embed(tape, table, indices) -> Tensor:
    """Row lookup into an embedding matrix. indices is any integer array."""
    table = as_tensor(table)
    idx = np.asarray(indices)
    out = Tensor(table.data[idx])
    if tape is not None:

        def bwd(g):
            gt = np.zeros_like(table.data)
            np.add.at(gt, idx, g)
            return (gt,)

        tape.record(out, (table,), bwd)
    return out


def cross_entropy(tape, probs, labels) -> Tensor:
    """Mean negative log probability of the true classes.

    probs is (C,) with an int label, or (B, C) with an int vector. Probabilities
    are clipped at 1e-12 before the log so a saturated softmax cannot produce
    non-finite loss.
    """
    probs = as_tensor(probs)
    p = probs.data
    y = np.asarray(labels)
    if p.ndim == 1:
        p2 = p[None]
        y2 = np.asarray([int(y)])
    elif p.ndim == 2:
        p2 = p
        y2 = y.astype(np.int64)
    else:
        raise ValueError(f"cross_entropy: probs must be 1-D or 2-D, got {p.shape}")
    if np.any(y2 < 0) or np.any(y2 >= p2.shape[1]):
        raise ValueError("cross_entropy: label outside class range")
    b = p2.shape[0]
    picked = p2[np.arange(b), y2]
    clipped = np.maximum(picked, 1e-12)
    out = Tensor(np.asarray(-np.log(clipped).mean(), dtype=p.dtype))
    if tape is not None:

        def bwd(g):
            gp = np.zeros_like(p2)
            gp[np.arange(b), y2] = -1.0 / clipped / b
            gp = gp * g
            return (gp if p.ndim == 2 else gp[0],)

        tape.record(out, (probs,), bwd)
    return out


# ---------------------------------------------------------------------------
# parameter initialization
# ---------------------------------------------------------------------------


def param_rng(seed: int, name: str) -> np.random.Generator:
    """A generator keyed by (seed, name) so adding or removing other
    parameters never shifts this parameter's init stream."""
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


def glorot(seed: int, name: str, shape, fan_in: int, fan_out: int, dtype=np.float32) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    data = param_rng(seed, name).uniform(-limit, limit, size=shape).astype(dtype)
    return Tensor(data, name=name, trainable=True)


def zeros_param(name: str, shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), name=name, trainable=True)


def uniform_scalar(seed: int, name: str, dtype=np.float32) -> Tensor:
    data = np.asarray(param_rng(seed, name).uniform(0.0, 1.0), dtype=dtype)
    return Tensor(data, name=name, trainable=True)


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from a mixed tuple of ints and strings."""
    payload = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return zlib.crc32(payload) | (zlib.adler32(payload) << 32)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


class AdamState:
    """First/second moment estimates per parameter, plus the step counter."""

    def __init__(self, learning_rate: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}


def adam_step(params: dict, grads: dict, state: AdamState):
    """One Adam update with bias correction, in place on the params."""
    state.t += 1
    t = state.t
    for name, tensor in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise ValueError(f"adam_step: non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        tensor.data = tensor.data - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

GRAD_CHECK_SAMPLE_THRESHOLD = 5000
GRAD_CHECK_MIN_SAMPLES = 200


def grad_check(loss_fn, params: dict, eps: float = 1e-5, seed: int = 0) -> float:
    """Compare reverse-mode gradients against central finite differences.

    loss_fn(tape) must rebuild the forward pass (deterministically, dropout
    off) and return the scalar loss tensor. Parameters should be float64.
    Checks every entry, or a seeded sample of at least 200 entries once the
    total exceeds 5000. Returns the max relative error
    |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
    """
    for t in params.values():
        t.zero_grad()
    tape = Tape()
    tape.watch(*params.values())
    loss = loss_fn(tape)
    tape.backward(loss)
    analytic = {name: t.grad.copy() for name, t in params.items()}
    if not all(np.all(np.isfinite(g)) for g in analytic.values()):
        raise ValueError("grad_check: non-finite analytic gradient")

    entries = []
    for name, t in params.items():
        for flat_idx in range(t.data.size):
            entries.append((name, flat_idx))
    if len(entries) > GRAD_CHECK_SAMPLE_THRESHOLD:
        rng = np.random.default_rng(seed)
        count = max(GRAD_CHECK_MIN_SAMPLES, len(entries) // 25)
        picks = rng.choice(len(entries), size=min(count, len(entries)), replace=False)
        entries = [entries[i] for i in picks]

    max_rel = 0.0
    for name, flat_idx in entries:
        t = params[name]
        flat = t.data.reshape(-1)
        orig = flat[flat_idx]
        flat[flat_idx] = orig + eps
        f_plus = float(loss_fn(None).data)
        flat[flat_idx] = orig - eps
        f_minus = float(loss_fn(None).data)
        flat[flat_idx] = orig
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise ValueError(f"grad_check: non-finite loss while perturbing {name!r}")
        g_fd = (f_plus - f_minus) / (2.0 * eps)
        g_ad = float(analytic[name].reshape(-1)[flat_idx])
        rel = abs(g_ad - g_fd) / max(1e-8, abs(g_ad) + abs(g_fd))
        max_rel = max(max_rel, rel)
    return max_rel
