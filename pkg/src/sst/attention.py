"""Local-window transformer: the short-range variations expert.

Two attention paths coexist.  The dense path materializes the full score
matrix and applies the band mask with -inf fills; it is the reference and
what training uses.  The banded path walks the band row by row and never
touches a masked logit, so its work and storage are O(tokens * window);
the scaling benchmark runs on it, and tests pin the two paths together to
1e-9 in both values and gradients.  ``logit_counter`` records how many
logits each path actually evaluated so the banded claim is auditable
rather than taken on faith.
"""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import DimensionError, ParameterError
from .tensor import _acc, _apply, _primitive


class OpCounter:
    """Running count of evaluated attention logits."""

    def __init__(self):
        self.logits = 0

    def reset(self):
        self.logits = 0


logit_counter = OpCounter()


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    """Sine/cosine position table of shape (n, d).

    Even columns carry sin(pos / 10000^(2i/d)), odd columns the matching
    cosine, so position 0 reads [0, 1, 0, 1, ...].
    """
    if d % 2 != 0:
        raise ParameterError(f"positional width must be even, got {d}")
    if n < 1:
        raise ParameterError(f"need at least one position, got {n}")
    pos = np.arange(n, dtype=np.float64)[:, None]
    freq = np.exp(-math.log(10000.0) * np.arange(0, d, 2) / d)
    table = np.empty((n, d), dtype=np.float64)
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return table


def window_mask(n: int, window: int) -> np.ndarray:
    """Boolean (n, n) band: True where |i-j| <= window // 2."""
    if window < 1:
        raise ParameterError(f"window must be >= 1, got {window}")
    idx = np.arange(n)
    return np.abs(idx[:, None] - idx[None, :]) <= window // 2


def masked_attention(q: T.Tensor, k: T.Tensor, v: T.Tensor, mask=None) -> T.Tensor:
    """Scaled dot-product attention over the trailing two axes.

    q, k, v have shape (..., N, d_k); mask, when given, is a boolean
    (N, N) matrix with True marking allowed pairs.  An all-True mask is
    skipped entirely so the full-attention limit is bit-identical to
    passing no mask.
    """
    d_k = q.shape[-1]
    n = q.shape[-2]
    # scale q up front: the (N, d_k) product is far cheaper to hold than
    # a second (N, N) score tensor
    scores = T.matmul(q * (1.0 / math.sqrt(d_k)),
                      T.transpose(k, _swap_last_two(k)))
    batch = int(np.prod(scores.shape[:-2], dtype=np.int64)) if scores.ndim > 2 else 1
    logit_counter.logits += batch * n * scores.shape[-1]
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.all():
            scores = T.masked_fill(scores, ~mask, float("-inf"))
    weights = T.softmax(scores)
    return T.matmul(weights, v)


def _swap_last_two(t: T.Tensor):
    axes = list(range(t.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


@_primitive("banded_attention")
def _p_banded_attention(inputs, attrs):
    q, k, v = inputs
    window = int(attrs["window"])
    if window < 1:
        raise ParameterError(f"window must be >= 1, got {window}")
    if q.data.shape != k.data.shape or q.data.shape != v.data.shape:
        raise DimensionError("q, k, v must share one (B, H, N, d_k) shape")
    if q.data.ndim != 4:
        raise DimensionError(f"expected rank-4 inputs, got rank {q.data.ndim}")
    b, h, n, d_k = q.data.shape
    half = window // 2
    scale = 1.0 / math.sqrt(d_k)
    flat_q = q.data.reshape(b * h, n, d_k)
    flat_k = k.data.reshape(b * h, n, d_k)
    flat_v = v.data.reshape(b * h, n, d_k)
    out = np.empty_like(q.data)
    flat_o = out.reshape(b * h, n, d_k)
    saved = []  # (lo, hi, row weights) per token, O(n * window) floats
    for i in range(n):
        lo, hi = max(0, i - half), min(n, i + half + 1)
        scores = np.einsum("gd,gjd->gj", flat_q[:, i], flat_k[:, lo:hi]) * scale
        logit_counter.logits += scores.size
        scores -= scores.max(axis=-1, keepdims=True)
        w = np.exp(scores)
        w /= w.sum(axis=-1, keepdims=True)
        flat_o[:, i] = np.einsum("gj,gjd->gd", w, flat_v[:, lo:hi])
        saved.append((lo, hi, w))

    def bwd(g):
        gf = g.reshape(b * h, n, d_k)
        gq = np.zeros_like(flat_q)
        gk = np.zeros_like(flat_k)
        gv = np.zeros_like(flat_v)
        for i, (lo, hi, w) in enumerate(saved):
            go = gf[:, i]                                        # (G, d_k)
            gw = np.einsum("gd,gjd->gj", go, flat_v[:, lo:hi])   # (G, width)
            gv[:, lo:hi] += w[:, :, None] * go[:, None, :]
            gs = w * (gw - (gw * w).sum(axis=-1, keepdims=True))
            gq[:, i] = np.einsum("gj,gjd->gd", gs, flat_k[:, lo:hi]) * scale
            gk[:, lo:hi] += gs[:, :, None] * flat_q[:, i][:, None, :] * scale
        _acc(q, gq.reshape(q.data.shape))
        _acc(k, gk.reshape(k.data.shape))
        _acc(v, gv.reshape(v.data.shape))
    return out, bwd


def banded_attention(q: T.Tensor, k: T.Tensor, v: T.Tensor,
                     window: int) -> T.Tensor:
    """Row-sliced band attention that skips masked logits.

    Differentiable like any other primitive; each output row is built
    from at most `window` (rounded to the band width) key rows, so work
    and score storage are O(N * window) instead of O(N^2) in both the
    forward and the backward pass.
    """
    return _apply("banded_attention", (q, k, v), {"window": window})


class LwtLayer:
    """Pre-norm transformer layer with band-limited self-attention."""

    def __init__(self, rng, d_model: int, heads: int = 4, window: int = 9):
        if d_model % heads != 0:
            raise ParameterError(
                f"model width {d_model} not divisible by {heads} heads")
        if window < 1:
            raise ParameterError(f"window must be >= 1, got {window}")
        self.d_model = d_model
        self.heads = heads
        self.window = window
        hidden = 4 * d_model
        s = 1.0 / math.sqrt(d_model)
        self.w_q = T.parameter(rng.standard_normal((d_model, d_model)) * s)
        self.w_k = T.parameter(rng.standard_normal((d_model, d_model)) * s)
        self.w_v = T.parameter(rng.standard_normal((d_model, d_model)) * s)
        self.w_o = T.parameter(rng.standard_normal((d_model, d_model)) * s)
        self.ffn_w1 = T.parameter(rng.standard_normal((d_model, hidden)) * s)
        self.ffn_b1 = T.parameter(np.zeros(hidden))
        self.ffn_w2 = T.parameter(rng.standard_normal((hidden, d_model))
                                  / math.sqrt(hidden))
        self.ffn_b2 = T.parameter(np.zeros(d_model))
        self.ln1_g = T.parameter(np.ones(d_model))
        self.ln1_b = T.parameter(np.zeros(d_model))
        self.ln2_g = T.parameter(np.ones(d_model))
        self.ln2_b = T.parameter(np.zeros(d_model))

    def parameters(self, prefix: str = ""):
        names = ("w_q", "w_k", "w_v", "w_o", "ffn_w1", "ffn_b1", "ffn_w2",
                 "ffn_b2", "ln1_g", "ln1_b", "ln2_g", "ln2_b")
        return {prefix + n: getattr(self, n) for n in names}

    def _split_heads(self, t: T.Tensor, b: int, n: int) -> T.Tensor:
        t = T.reshape(t, (b, n, self.heads, self.d_model // self.heads))
        return T.transpose(t, (0, 2, 1, 3))

    def attend(self, x: T.Tensor, mask, banded: bool = False) -> T.Tensor:
        b, n, d = x.shape
        q = self._split_heads(T.matmul(x, self.w_q), b, n)
        k = self._split_heads(T.matmul(x, self.w_k), b, n)
        v = self._split_heads(T.matmul(x, self.w_v), b, n)
        if banded:
            ctx = banded_attention(q, k, v, self.window)
        else:
            ctx = masked_attention(q, k, v, mask)
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, n, d))
        return T.matmul(ctx, self.w_o)

    def forward(self, x: T.Tensor, mask=None, banded: bool = False) -> T.Tensor:
        if x.ndim != 3 or x.shape[-1] != self.d_model:
            raise DimensionError(
                f"expected (batch, tokens, {self.d_model}), got {x.shape}")
        if mask is None and not banded:
            mask = window_mask(x.shape[1], self.window)
        x = x + self.attend(T.layer_norm(x, self.ln1_g, self.ln1_b), mask, banded)
        h = T.layer_norm(x, self.ln2_g, self.ln2_b)
        h = T.relu(T.matmul(h, self.ffn_w1) + self.ffn_b1)
        return x + T.matmul(h, self.ffn_w2) + self.ffn_b2


def lwt_layer_forward(x: T.Tensor, layer: LwtLayer, mask=None,
                      banded: bool = False) -> T.Tensor:
    return layer.forward(x, mask=mask, banded=banded)


class VariationsExpert:
    """Patch embedding + positions + stacked local-window layers."""

    def __init__(self, rng, patch_len: int, d_model: int, depth: int = 3,
                 heads: int = 4, window: int = 9):
        if patch_len < 1 or d_model < 1 or depth < 1:
            raise ParameterError("patch_len, d_model, and depth must be >= 1")
        self.patch_len = patch_len
        self.d_model = d_model
        self.window = window
        self.w_embed = T.parameter(
            rng.standard_normal((patch_len, d_model)) / math.sqrt(patch_len))
        self.b_embed = T.parameter(np.zeros(d_model))
        self.layers = [LwtLayer(rng, d_model, heads=heads, window=window)
                       for _ in range(depth)]
        self.ln_g = T.parameter(np.ones(d_model))
        self.ln_b = T.parameter(np.zeros(d_model))

    def parameters(self, prefix: str = ""):
        out = {prefix + "w_embed": self.w_embed, prefix + "b_embed": self.b_embed}
        for i, layer in enumerate(self.layers):
            out.update(layer.parameters(f"{prefix}layer{i}."))
        out[prefix + "ln_g"] = self.ln_g
        out[prefix + "ln_b"] = self.ln_b
        return out

    def forward(self, pts: T.Tensor, banded: bool = False) -> T.Tensor:
        if pts.ndim != 3 or pts.shape[-1] != self.patch_len:
            raise DimensionError(
                f"expected (batch, patches, {self.patch_len}), got {pts.shape}")
        n = pts.shape[1]
        x = T.matmul(pts, self.w_embed) + self.b_embed
        table = sinusoidal_positions(n, self.d_model).astype(x.data.dtype)
        x = x + T.constant(table)
        mask = None if banded else window_mask(n, self.window)
        for layer in self.layers:
            x = layer.forward(x, mask=mask, banded=banded)
        return T.layer_norm(x, self.ln_g, self.ln_b)


def variations_expert_forward(pts: T.Tensor, expert: VariationsExpert,
                              banded: bool = False) -> T.Tensor:
    """(batch, patches, patch_len) -> (batch, patches, d_model)."""
    return expert.forward(pts, banded=banded)
