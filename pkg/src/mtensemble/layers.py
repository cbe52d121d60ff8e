"""Embedding lookup, convolution, recurrent and dense layers.

The convolution and recurrent kernels are fused primitives: one graph node
per layer call, with the backward pass (including back-propagation through
time) written out by hand.  Inputs are batched as ``[batch, time, features]``.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from . import tensor as tc
from .errors import DimensionError, ParameterError
from .tensor import Tensor

log = logging.getLogger(__name__)

EMBED_DIM = 300
MAX_LEN = 50
PAD = "<pad>"
REPR_WIDTH = 128


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------

@dataclass
class EmbeddingTable:
    """Frozen word vectors.

    Tokens absent from ``vocab`` are handled by ``oov_policy``: ``"zero"``
    maps them to the zero vector, ``"uniform"`` draws a vector from
    U(-0.05, 0.05) seeded by ``(seed, crc32(token))`` so that the same token
    always receives the same vector.
    """

    vocab: dict[str, int]
    matrix: np.ndarray
    oov_policy: str = "zero"
    seed: int = 0
    _oov_cache: dict[str, np.ndarray] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise DimensionError(f"embedding matrix must be 2-D, got shape {self.matrix.shape}")
        if self.oov_policy not in ("zero", "uniform"):
            raise ParameterError(f"unknown OOV policy {self.oov_policy!r}")
        if self.vocab and max(self.vocab.values()) >= len(self.matrix):
            raise DimensionError("vocabulary index beyond embedding matrix rows")

    @classmethod
    def empty(cls, dim: int = EMBED_DIM, oov_policy: str = "zero", seed: int = 0) -> "EmbeddingTable":
        return cls({}, np.zeros((0, dim)), oov_policy, seed)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.vocab)

    def __contains__(self, token: str) -> bool:
        return token in self.vocab

    def restricted(self, tokens) -> "EmbeddingTable":
        """Copy keeping only ``tokens`` (others fall back to the OOV policy)."""
        keep = sorted(t for t in set(tokens) if t in self.vocab)
        rows = [self.vocab[t] for t in keep]
        return EmbeddingTable(
            {t: i for i, t in enumerate(keep)},
            self.matrix[rows] if rows else np.zeros((0, self.dim)),
            self.oov_policy,
            self.seed,
        )

    def lookup(self, token: str) -> np.ndarray:
        if token == PAD:
            return np.zeros(self.dim)
        idx = self.vocab.get(token)
        if idx is not None:
            return self.matrix[idx]
        if self.oov_policy == "zero":
            return np.zeros(self.dim)
        vec = self._oov_cache.get(token)
        if vec is None:
            rng = np.random.default_rng([self.seed, zlib.crc32(token.encode("utf-8"))])
            vec = rng.uniform(-0.05, 0.05, size=self.dim)
            self._oov_cache[token] = vec
        return vec


def pad_tokens(tokens: Sequence[str], max_len: int = MAX_LEN) -> list[str]:
    """Right-truncate to ``max_len`` then left-pad with the pad token."""
    tokens = list(tokens)[:max_len]
    return [PAD] * (max_len - len(tokens)) + tokens


def embed(tokens: Sequence[str], table: EmbeddingTable, max_len: int = MAX_LEN) -> Tensor:
    """Embed one token sequence into a ``[max_len, dim]`` constant tensor."""
    return Tensor(np.stack([table.lookup(t) for t in pad_tokens(tokens, max_len)]))


def embed_batch(batch: Sequence[Sequence[str]], table: EmbeddingTable, max_len: int = MAX_LEN) -> np.ndarray:
    out = np.zeros((len(batch), max_len, table.dim))
    for b, tokens in enumerate(batch):
        for t, tok in enumerate(pad_tokens(tokens, max_len)):
            if tok != PAD:
                out[b, t] = table.lookup(tok)
    return out


# ---------------------------------------------------------------------------
# convolution and pooling kernels
# ---------------------------------------------------------------------------

def conv1d(x: Tensor, weight: Tensor, bias: Tensor, width: int) -> Tensor:
    """Valid 1-D convolution over time.

    ``x`` is ``[B, T, d]``, ``weight`` is ``[width*d, f]`` (window-major),
    ``bias`` is ``[f]``; the result is ``[B, T-width+1, f]``.
    """
    B, T, d = x.shape
    if weight.shape[0] != width * d:
        raise DimensionError(f"conv weight {weight.shape} does not fit width {width} x channels {d}")
    if T < width:
        raise DimensionError(f"sequence length {T} shorter than filter width {width}")
    cols = sliding_window_view(x.data, width, axis=1)  # [B, T', d, w]
    cols = np.ascontiguousarray(cols.transpose(0, 1, 3, 2)).reshape(B, T - width + 1, width * d)
    out = cols @ weight.data + bias.data

    def backward(g):
        f = g.shape[-1]
        gflat = g.reshape(-1, f)
        dW = cols.reshape(-1, width * d).T @ gflat
        db = gflat.sum(axis=0)
        dcols = (g @ weight.data.T).reshape(B, T - width + 1, width, d)
        dx = np.zeros_like(x.data)
        steps = T - width + 1
        for k in range(width):
            dx[:, k:k + steps] += dcols[:, :, k, :]
        return dx, dW, db

    return Tensor._op(out, (x, weight, bias), backward)


def max_over_time(x: Tensor) -> Tensor:
    """Global max over the time axis of ``[B, T, f]``."""
    idx = x.data.argmax(axis=1)
    tc.record_switch(idx)
    out = np.take_along_axis(x.data, idx[:, None, :], axis=1)[:, 0, :]

    def backward(g):
        dx = np.zeros_like(x.data)
        np.put_along_axis(dx, idx[:, None, :], g[:, None, :], axis=1)
        return (dx,)

    return Tensor._op(out, (x,), backward)


def maxpool1d(x: Tensor, window: int = 2) -> Tensor:
    """Non-overlapping temporal max pooling (stride == window); a ragged tail is dropped."""
    B, T, f = x.shape
    n = T // window
    if n == 0:
        raise DimensionError(f"sequence length {T} shorter than pool window {window}")
    blocks = x.data[:, : n * window].reshape(B, n, window, f)
    idx = blocks.argmax(axis=2)
    tc.record_switch(idx)
    out = np.take_along_axis(blocks, idx[:, :, None, :], axis=2)[:, :, 0, :]

    def backward(g):
        dblocks = np.zeros_like(blocks)
        np.put_along_axis(dblocks, idx[:, :, None, :], g[:, :, None, :], axis=2)
        dx = np.zeros_like(x.data)
        dx[:, : n * window] = dblocks.reshape(B, n * window, f)
        return (dx,)

    return Tensor._op(out, (x,), backward)


def pad_time(x: Tensor, length: int) -> Tensor:
    """Left-pad ``[B, T, d]`` with zero rows up to ``length`` steps."""
    B, T, d = x.shape
    if T >= length:
        return x
    return tc.concat([Tensor(np.zeros((B, length - T, d))), x], axis=1)


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 2:
        return tc.reshape(x, (1, *x.shape)), True
    return x, False


def conv1d_maxpool(x: Tensor, weight: Tensor, bias: Tensor, width: int) -> Tensor:
    """Convolution + relu + global max pool; ``[T, d]`` -> ``[f]`` or ``[B, T, d]`` -> ``[B, f]``."""
    xb, single = _batched(x)
    xb = pad_time(xb, width)
    out = max_over_time(tc.relu(conv1d(xb, weight, bias, width)))
    return tc.reshape(out, (out.shape[1],)) if single else out


# ---------------------------------------------------------------------------
# recurrent kernels
# ---------------------------------------------------------------------------

def lstm_layer(x: Tensor, W: Tensor, U: Tensor, b: Tensor) -> Tensor:
    """LSTM over ``[B, T, d]`` returning every hidden state ``[B, T, H]``.

    Gate blocks in ``W``/``U``/``b`` are ordered input, forget, candidate,
    output.  Initial hidden and cell states are zero.
    """
    B, T, _ = x.shape
    H = U.shape[0]
    if W.shape[1] != 4 * H or U.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise DimensionError(f"LSTM parameter shapes W{W.shape} U{U.shape} b{b.shape} inconsistent")
    xw = x.data @ W.data + b.data
    Ud = U.data
    hs = np.zeros((B, T, H))
    cs = np.zeros((B, T, H))
    gates = np.zeros((B, T, 4 * H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        a = xw[:, t] + h @ Ud
        i = expit(a[:, :H])
        f = expit(a[:, H:2 * H])
        g = np.tanh(a[:, 2 * H:3 * H])
        o = expit(a[:, 3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[:, t] = np.concatenate([i, f, g, o], axis=1)
        cs[:, t] = c
        hs[:, t] = h

    def backward(dH):
        dxw = np.zeros_like(xw)
        dU = np.zeros_like(Ud)
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            i, f, g, o = (gates[:, t, k * H:(k + 1) * H] for k in range(4))
            c = cs[:, t]
            c_prev = cs[:, t - 1] if t > 0 else np.zeros((B, H))
            h_prev = hs[:, t - 1] if t > 0 else np.zeros((B, H))
            tc_ = np.tanh(c)
            dh = dH[:, t] + dh_next
            do = dh * tc_
            dc = dh * o * (1.0 - tc_ * tc_) + dc_next
            da = np.concatenate(
                [dc * g * i * (1 - i), dc * c_prev * f * (1 - f), dc * i * (1 - g * g), do * o * (1 - o)],
                axis=1,
            )
            dxw[:, t] = da
            dU += h_prev.T @ da
            dh_next = da @ Ud.T
            dc_next = dc * f
        flat = dxw.reshape(-1, 4 * H)
        dW = x.data.reshape(-1, x.shape[2]).T @ flat
        return dxw @ W.data.T, dW, dU, flat.sum(axis=0)

    return Tensor._op(hs, (x, W, U, b), backward)


def gru_layer(x: Tensor, W: Tensor, U: Tensor, b: Tensor) -> Tensor:
    """GRU over ``[B, T, d]`` returning every hidden state ``[B, T, H]``.

    Blocks are ordered update, reset, candidate; the candidate applies the
    reset gate before the recurrent product:
    ``h~ = tanh(x Wh + (r * h_prev) Uh + bh)``, ``h = (1-z) h_prev + z h~``.
    """
    B, T, _ = x.shape
    H = U.shape[0]
    if W.shape[1] != 3 * H or U.shape != (H, 3 * H) or b.shape != (3 * H,):
        raise DimensionError(f"GRU parameter shapes W{W.shape} U{U.shape} b{b.shape} inconsistent")
    xw = x.data @ W.data + b.data
    Uz, Ur, Uh = U.data[:, :H], U.data[:, H:2 * H], U.data[:, 2 * H:]
    hs = np.zeros((B, T, H))
    zs = np.zeros((B, T, H))
    rs = np.zeros((B, T, H))
    cands = np.zeros((B, T, H))
    h = np.zeros((B, H))
    for t in range(T):
        z = expit(xw[:, t, :H] + h @ Uz)
        r = expit(xw[:, t, H:2 * H] + h @ Ur)
        cand = np.tanh(xw[:, t, 2 * H:] + (r * h) @ Uh)
        h = (1.0 - z) * h + z * cand
        zs[:, t], rs[:, t], cands[:, t], hs[:, t] = z, r, cand, h

    def backward(dH):
        dxw = np.zeros_like(xw)
        dU = np.zeros_like(U.data)
        dh_next = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            z, r, cand = zs[:, t], rs[:, t], cands[:, t]
            h_prev = hs[:, t - 1] if t > 0 else np.zeros((B, H))
            dh = dH[:, t] + dh_next
            da_h = dh * z * (1.0 - cand * cand)
            da_z = dh * (cand - h_prev) * z * (1.0 - z)
            drh = da_h @ Uh.T
            da_r = drh * h_prev * r * (1.0 - r)
            dU[:, :H] += h_prev.T @ da_z
            dU[:, H:2 * H] += h_prev.T @ da_r
            dU[:, 2 * H:] += (r * h_prev).T @ da_h
            dh_next = dh * (1.0 - z) + drh * r + da_z @ Uz.T + da_r @ Ur.T
            dxw[:, t, :H] = da_z
            dxw[:, t, H:2 * H] = da_r
            dxw[:, t, 2 * H:] = da_h
        flat = dxw.reshape(-1, 3 * H)
        dW = x.data.reshape(-1, x.shape[2]).T @ flat
        return dxw @ W.data.T, dW, dU, flat.sum(axis=0)

    return Tensor._op(hs, (x, W, U, b), backward)


def _last_step(hs: Tensor) -> Tensor:
    return hs[:, -1, :]


def lstm_forward(x: Tensor, layers: Sequence[tuple[Tensor, Tensor, Tensor]]) -> Tensor:
    """Stacked LSTM; returns the last hidden state of the top layer."""
    xb, single = _batched(x)
    for W, U, b in layers:
        xb = lstm_layer(xb, W, U, b)
    out = _last_step(xb)
    return tc.reshape(out, (out.shape[1],)) if single else out


def gru_forward(x: Tensor, layers: Sequence[tuple[Tensor, Tensor, Tensor]]) -> Tensor:
    """Stacked GRU; returns the last hidden state of the top layer."""
    xb, single = _batched(x)
    for W, U, b in layers:
        xb = gru_layer(xb, W, U, b)
    out = _last_step(xb)
    return tc.reshape(out, (out.shape[1],)) if single else out


# ---------------------------------------------------------------------------
# parameterised layers
# ---------------------------------------------------------------------------

class Layer:
    """Owner of named parameter tensors."""

    def named_parameters(self) -> dict[str, Tensor]:
        raise NotImplementedError

    def n_params(self) -> int:
        return sum(p.size for p in self.named_parameters().values())


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, activation: str, rng: np.random.Generator):
        if activation not in tc.ACTIVATIONS:
            raise ParameterError(f"unknown activation {activation!r}")
        self.W = tc.parameter(glorot(rng, n_in, n_out, (n_in, n_out)))
        self.b = tc.parameter(np.zeros(n_out))
        self.activation = activation

    @property
    def n_in(self) -> int:
        return self.W.shape[0]

    @property
    def n_out(self) -> int:
        return self.W.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise DimensionError(f"dense layer expects {self.n_in} inputs, got shape {x.shape}")
        return dense(x, self.W, self.b, self.activation)

    def named_parameters(self) -> dict[str, Tensor]:
        return {"W": self.W, "b": self.b}


def dense(x: Tensor, W: Tensor, b: Tensor, activation: str = "linear") -> Tensor:
    """``activation(x W + b)`` with ``W`` stored ``[n_in, n_out]``."""
    return tc.activation(tc.matmul(x, W) + b, activation)


class CNNEncoder(Layer):
    """conv-pool-conv-pool over embedded text.

    Each conv stage runs filter widths 2, 3 and 4 in parallel (100 filters
    each) with relu.  Stage one's branch outputs are cropped from the left to
    a common length (so the most recent tokens stay aligned), concatenated
    along channels and max pooled with window 2, stride 2.  Stage two's
    branches are each max pooled over the whole sequence and concatenated.
    """

    kind = "cnn"

    def __init__(self, dim_in: int, rng: np.random.Generator, widths=(2, 3, 4), filters: int = 100):
        self.widths = tuple(widths)
        self.filters = filters
        self.stage1 = []
        self.stage2 = []
        mid = filters * len(self.widths)
        for stage, d in ((self.stage1, dim_in), (self.stage2, mid)):
            for w in self.widths:
                W = tc.parameter(glorot(rng, w * d, w * filters, (w * d, filters)))
                stage.append((w, W, tc.parameter(np.zeros(filters))))
        self.out_dim = mid

    def __call__(self, x: Tensor) -> Tensor:
        wmax = max(self.widths)
        x = pad_time(x, wmax)
        maps = [tc.relu(conv1d(x, W, b, w)) for w, W, b in self.stage1]
        common = min(m.shape[1] for m in maps)
        maps = [m if m.shape[1] == common else m[:, m.shape[1] - common:, :] for m in maps]
        h = maxpool1d(tc.concat(maps, axis=2), 2) if common >= 2 else tc.concat(maps, axis=2)
        return tc.concat([conv1d_maxpool(h, W, b, w) for w, W, b in self.stage2], axis=1)

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for name, stage in (("conv1", self.stage1), ("conv2", self.stage2)):
            for w, W, b in stage:
                out[f"{name}.w{w}.W"] = W
                out[f"{name}.w{w}.b"] = b
        return out


class _RecurrentEncoder(Layer):
    gates = 0
    kind = ""

    def __init__(self, dim_in: int, rng: np.random.Generator, hidden: int = 128, n_layers: int = 2):
        self.hidden = hidden
        self.layers = []
        d = dim_in
        G = self.gates * hidden
        for _ in range(n_layers):
            W = tc.parameter(glorot(rng, d, G, (d, G)))
            U = tc.parameter(glorot(rng, hidden, G, (hidden, G)))
            self.layers.append((W, U, tc.parameter(np.zeros(G))))
            d = hidden
        self.out_dim = hidden

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for k, (W, U, b) in enumerate(self.layers):
            out[f"{self.kind}{k + 1}.W"] = W
            out[f"{self.kind}{k + 1}.U"] = U
            out[f"{self.kind}{k + 1}.b"] = b
        return out


class LSTMEncoder(_RecurrentEncoder):
    gates = 4
    kind = "lstm"

    def __call__(self, x: Tensor) -> Tensor:
        return lstm_forward(x, self.layers)


class GRUEncoder(_RecurrentEncoder):
    gates = 3
    kind = "gru"

    def __call__(self, x: Tensor) -> Tensor:
        return gru_forward(x, self.layers)


ENCODERS = {"cnn": CNNEncoder, "lstm": LSTMEncoder, "gru": GRUEncoder}
