"""Convolution-LSTM-attention sequence encoder.

One encoder runs, per filter width: a valid 1-D convolution over the embedded
token sequence (no pooling), an LSTM over the resulting feature-map sequence,
and an attention readout steered by the final hidden state. The per-width
readouts are concatenated, ascending by width, into the post representation.

All functions accept a single post (2-D input) or a batch (3-D, batch first)
and are pure given their parameters; there is no dropout inside the encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor


@dataclass(frozen=True)
class EncoderConfig:
    embed_dim: int = 300
    filter_widths: tuple = (3, 4, 5)
    filters_per_width: int = 50
    hidden_size: int = 200
    attention_dim: int = 100

    def __post_init__(self):
        if not self.filter_widths:
            raise ValueError("at least one filter width required")
        if list(self.filter_widths) != sorted(set(self.filter_widths)):
            raise ValueError(
                f"filter widths must be strictly increasing, got {self.filter_widths}")
        if min(self.filter_widths) < 1:
            raise ValueError("filter widths must be >= 1")
        for name in ("embed_dim", "filters_per_width", "hidden_size", "attention_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def output_dim(self) -> int:
        return len(self.filter_widths) * self.hidden_size


@dataclass
class ConvParams:
    weight: Tensor  # (k, d, n)
    bias: Tensor  # (n,)


@dataclass
class LstmParams:
    W_i: Tensor  # (z, n+z) acting on [x_t, h_{t-1}]
    W_f: Tensor
    W_o: Tensor
    W_c: Tensor
    b_i: Tensor  # (z,)
    b_f: Tensor
    b_o: Tensor
    b_c: Tensor

    @property
    def hidden_size(self) -> int:
        return self.W_i.data.shape[0]


@dataclass
class AttentionParams:
    W_H: Tensor  # (a, z)
    W_h: Tensor  # (a, z)
    b_h: Tensor  # (a,)
    w: Tensor  # (a,)


@dataclass
class EncoderParams:
    config: EncoderConfig
    conv: list = field(default_factory=list)  # per width
    lstm: list = field(default_factory=list)
    attn: list = field(default_factory=list)

    def tensors(self) -> dict:
        """Flat name -> Tensor view of every parameter array."""
        out = {}
        for cv, ls, at in zip(self.conv, self.lstm, self.attn):
            for t in (cv.weight, cv.bias, ls.W_i, ls.W_f, ls.W_o, ls.W_c,
                      ls.b_i, ls.b_f, ls.b_o, ls.b_c, at.W_H, at.W_h, at.b_h, at.w):
                out[t.name] = t
        return out


@dataclass
class EncoderOutput:
    x: Tensor  # (v*z,) or (B, v*z)
    alphas: list  # per width, (l,) or (B, l)


def init_encoder(seed: int, prefix: str, config: EncoderConfig,
                 dtype=None) -> EncoderParams:
    """Glorot-uniform weights, zero biases; every array's init stream is keyed
    by its own name so unrelated parameters never share randomness."""
    dtype = dtype or np.float32
    d, n, z, a = (config.embed_dim, config.filters_per_width,
                  config.hidden_size, config.attention_dim)
    params = EncoderParams(config=config)
    for k in config.filter_widths:
        p = f"{prefix}.w{k}"
        params.conv.append(ConvParams(
            weight=ag.glorot(seed, f"{p}.conv.weight", (k, d, n), k * d, n, dtype),
            bias=ag.zeros_param(f"{p}.conv.bias", (n,), dtype)))
        gates = {}
        for gate in ("i", "f", "o", "c"):
            gates[f"W_{gate}"] = ag.glorot(seed, f"{p}.lstm.W_{gate}", (z, n + z),
                                           n + z, z, dtype)
            gates[f"b_{gate}"] = ag.zeros_param(f"{p}.lstm.b_{gate}", (z,), dtype)
        params.lstm.append(LstmParams(**gates))
        params.attn.append(AttentionParams(
            W_H=ag.glorot(seed, f"{p}.attn.W_H", (a, z), z, a, dtype),
            W_h=ag.glorot(seed, f"{p}.attn.W_h", (a, z), z, a, dtype),
            b_h=ag.zeros_param(f"{p}.attn.b_h", (a,), dtype),
            w=ag.glorot(seed, f"{p}.attn.w", (a,), a, 1, dtype)))
    return params


def _promote(tape, t: Tensor, want_ndim: int):
    """Add a leading batch axis of 1 when given a single example."""
    if t.data.ndim == want_ndim:
        return t, False
    return ag.reshape(tape, t, (1,) + t.data.shape), True


def conv_features(tape, embedded, params: EncoderParams) -> list:
    """Per-width ReLU feature maps, shape (l, n) or (B, l, n), l = L-k+1."""
    maps = []
    for cv in params.conv:
        maps.append(ag.relu(tape, ag.conv1d_valid(tape, embedded, cv.weight, cv.bias)))
    return maps


def lstm_forward(tape, feature_map, params: LstmParams) -> Tensor:
    """Run the LSTM over a feature-map sequence; returns hidden states as
    columns: (z, l) for a single sequence, (B, z, l) for a batch."""
    C, squeezed = _promote(tape, ag.as_tensor(feature_map), 3)
    B, l, n = C.data.shape
    z = params.hidden_size
    if params.W_i.data.shape[1] != n + z:
        raise ValueError(
            f"lstm_forward: weight shape {params.W_i.data.shape} does not match "
            f"input width {n} + hidden {z}")
    # Transpose the (z, n+z) weights once so each step is a plain matmul.
    Wi = ag.transpose(tape, params.W_i)
    Wf = ag.transpose(tape, params.W_f)
    Wo = ag.transpose(tape, params.W_o)
    Wc = ag.transpose(tape, params.W_c)
    h = Tensor(np.zeros((B, z), dtype=C.data.dtype))
    c = Tensor(np.zeros((B, z), dtype=C.data.dtype))
    hs = []
    for t in range(l):
        x_t = ag.select(tape, C, axis=1, index=t)
        xh = ag.concat(tape, [x_t, h], axis=-1)
        i = ag.sigmoid(tape, ag.add(tape, ag.matmul(tape, xh, Wi), params.b_i))
        f = ag.sigmoid(tape, ag.add(tape, ag.matmul(tape, xh, Wf), params.b_f))
        o = ag.sigmoid(tape, ag.add(tape, ag.matmul(tape, xh, Wo), params.b_o))
        g = ag.tanh(tape, ag.add(tape, ag.matmul(tape, xh, Wc), params.b_c))
        c = ag.add(tape, ag.mul(tape, f, c), ag.mul(tape, i, g))
        h = ag.mul(tape, o, ag.tanh(tape, c))
        hs.append(h)
    H = ag.stack(tape, hs, axis=-1)  # (B, z, l)
    if squeezed:
        H = ag.reshape(tape, H, (z, l))
    return H


def attend(tape, hidden_states, params: AttentionParams):
    """Final-state attention readout.

    The last hidden state h_l queries every column of H through
    M = tanh(W_H H + W_h h_l + b_h); alpha = softmax(w'M); x = H alpha'.
    Returns (x, alpha): ((z,), (l,)) for one sequence, batched otherwise.
    """
    H, squeezed = _promote(tape, ag.as_tensor(hidden_states), 3)
    B, z, l = H.data.shape
    h_last = ag.select(tape, H, axis=-1, index=l - 1)  # (B, z)
    query = ag.add(tape, ag.matmul(tape, h_last, ag.transpose(tape, params.W_h)),
                   params.b_h)  # (B, a)
    scores = ag.matmul(tape, params.W_H, H)  # (a,z)@(B,z,l) -> (B, a, l)
    a_dim = params.b_h.data.shape[0]
    M = ag.tanh(tape, ag.add(tape, scores, ag.reshape(tape, query, (B, a_dim, 1))))
    logits = ag.matmul(tape, params.w, M)  # (a,)@(B,a,l) -> (B, l)
    alpha = ag.softmax(tape, logits, axis=-1)
    x = ag.matmul(tape, H, ag.reshape(tape, alpha, (B, l, 1)))  # (B, z, 1)
    x = ag.reshape(tape, x, (B, z))
    if squeezed:
        x = ag.reshape(tape, x, (z,))
        alpha = ag.reshape(tape, alpha, (l,))
    return x, alpha


def encode(tape, embedded, params: EncoderParams) -> EncoderOutput:
    """Full encoder: per width conv -> LSTM -> attention, concatenated in
    ascending-width order into a vector of length len(widths)*hidden_size."""
    maps = conv_features(tape, embedded, params)
    xs, alphas = [], []
    for fmap, lstm_p, attn_p in zip(maps, params.lstm, params.attn):
        H = lstm_forward(tape, fmap, lstm_p)
        x, alpha = attend(tape, H, attn_p)
        xs.append(x)
        alphas.append(alpha)
    return EncoderOutput(x=ag.concat(tape, xs, axis=-1), alphas=alphas)
