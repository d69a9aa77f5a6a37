"""Stacked-hybrid ablation family and the linear decomposition baseline.

Five block recipes cover the ways attention and state-space layers can be
interleaved; a factory stamps them out at a common width and depth so the
comparison isolates wiring, not capacity.  Two embeddings are available:
a width-3 convolution over raw steps (channel mixing, one token per step)
and a patch-instance-norm embedding (channel independent, one token per
patch).  Positional encoding defaults on exactly when the first sub-layer
of the first block is attention.
"""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .attention import masked_attention, sinusoidal_positions
from .data import NormStats, moving_average_decompose, revin_stats
from .errors import ConfigError, DimensionError
from .patching import PatchSpec, num_patches, patch
from .ssm import MambaBlock

RECIPES = {
    "transformer": ("attention", "ffn"),
    "mamba": ("mamba", "mamba"),
    "attention_mamba": ("attention", "mamba"),
    "mamba_attention": ("mamba", "attention"),
    "mambaformer": ("mamba", "attention", "mamba"),
}

EMBEDDINGS = ("conv", "pi")


def default_positional(variant: str) -> bool:
    """True iff the first sub-layer of the first block is attention."""
    if variant not in RECIPES:
        raise ConfigError(f"unknown variant {variant!r}; "
                          f"expected one of {sorted(RECIPES)}")
    return RECIPES[variant][0] == "attention"


class ConvEmbed:
    """Width-3 same-padding convolution from variates to model width."""

    def __init__(self, rng, variates: int, d_model: int):
        self.variates = variates
        self.d_model = d_model
        s = 1.0 / math.sqrt(3 * variates)
        self.w_left = T.parameter(rng.standard_normal((variates, d_model)) * s)
        self.w_center = T.parameter(rng.standard_normal((variates, d_model)) * s)
        self.w_right = T.parameter(rng.standard_normal((variates, d_model)) * s)
        self.bias = T.parameter(np.zeros(d_model))

    def parameters(self, prefix: str = ""):
        return {prefix + "w_left": self.w_left,
                prefix + "w_center": self.w_center,
                prefix + "w_right": self.w_right,
                prefix + "bias": self.bias}

    def forward(self, x: T.Tensor) -> T.Tensor:
        """(batch, steps, variates) -> (batch, steps, d_model)."""
        if x.ndim != 3 or x.shape[-1] != self.variates:
            raise DimensionError(
                f"expected (batch, steps, {self.variates}), got {x.shape}")
        pad = np.zeros((x.shape[0], 1, self.variates), dtype=x.data.dtype)
        lag = np.concatenate([pad, x.data[:, :-1]], axis=1)
        lead = np.concatenate([x.data[:, 1:], pad], axis=1)
        return (T.matmul(T.constant(lag), self.w_left)
                + T.matmul(x, self.w_center)
                + T.matmul(T.constant(lead), self.w_right)
                + self.bias)


def conv_embed(window, embed: ConvEmbed) -> T.Tensor:
    """One unbatched (steps, variates) window -> (steps, d_model) tokens."""
    x = window if isinstance(window, T.Tensor) else T.constant(window)
    if x.ndim != 2:
        raise DimensionError(f"expected a 2-d window, got shape {x.shape}")
    out = embed.forward(T.reshape(x, (1,) + x.shape))
    return T.reshape(out, (x.shape[0], embed.d_model))


class PatchEmbed:
    """Per-variate patch tokens through a shared linear map."""

    def __init__(self, rng, spec: PatchSpec, d_model: int):
        self.spec = spec
        self.d_model = d_model
        self.w = T.parameter(rng.standard_normal((spec.length, d_model))
                             / math.sqrt(spec.length))
        self.b = T.parameter(np.zeros(d_model))

    def parameters(self, prefix: str = ""):
        return {prefix + "w": self.w, prefix + "b": self.b}

    def forward(self, x: T.Tensor) -> T.Tensor:
        """(batch, steps, variates) -> (batch*variates, patches, d_model)."""
        b, _, m = x.shape
        per_variate = np.swapaxes(x.data, -1, -2)      # (b, m, steps)
        pts = patch(per_variate, self.spec)            # (b, m, n, p)
        n = pts.shape[-2]
        folded = T.constant(pts.reshape(b * m, n, self.spec.length))
        return T.matmul(folded, self.w) + self.b


def pi_embed(window: np.ndarray, embed: PatchEmbed
             ) -> tuple[T.Tensor, NormStats]:
    """Instance-normalize one raw (steps, variates) window, patch, project.

    Returns (variates, patches, d_model) tokens plus the stats needed to
    denormalize whatever is forecast from them.
    """
    look = np.asarray(window)
    if look.ndim != 2:
        raise DimensionError(f"expected a 2-d window, got shape {look.shape}")
    stats = revin_stats(look)
    normalized = (look - stats.mean) / stats.std
    tokens = embed.forward(T.constant(normalized[None, :, :]))
    return tokens, stats


class AttentionSublayer:
    """Pre-norm residual multi-head attention, full (unmasked) field."""

    kind = "attention"

    def __init__(self, rng, d_model: int, heads: int):
        if d_model % heads != 0:
            raise ConfigError(f"width {d_model} not divisible by {heads} heads")
        self.d_model = d_model
        self.heads = heads
        s = 1.0 / math.sqrt(d_model)
        self.w_q = T.parameter(rng.standard_normal((d_model, d_model)) * s)
        self.w_k = T.parameter(rng.standard_normal((d_model, d_model)) * s)
        self.w_v = T.parameter(rng.standard_normal((d_model, d_model)) * s)
        self.w_o = T.parameter(rng.standard_normal((d_model, d_model)) * s)
        self.ln_g = T.parameter(np.ones(d_model))
        self.ln_b = T.parameter(np.zeros(d_model))

    def parameters(self, prefix: str = ""):
        names = ("w_q", "w_k", "w_v", "w_o", "ln_g", "ln_b")
        return {prefix + n: getattr(self, n) for n in names}

    def forward(self, x: T.Tensor) -> T.Tensor:
        b, n, d = x.shape
        h, dk = self.heads, d // self.heads
        normed = T.layer_norm(x, self.ln_g, self.ln_b)

        def split(t):
            return T.transpose(T.reshape(t, (b, n, h, dk)), (0, 2, 1, 3))

        ctx = masked_attention(split(T.matmul(normed, self.w_q)),
                               split(T.matmul(normed, self.w_k)),
                               split(T.matmul(normed, self.w_v)), None)
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, n, d))
        return x + T.matmul(ctx, self.w_o)


class FfnSublayer:
    """Pre-norm residual position-wise feed-forward, 4x expansion."""

    kind = "ffn"

    def __init__(self, rng, d_model: int):
        hidden = 4 * d_model
        self.w1 = T.parameter(rng.standard_normal((d_model, hidden))
                              / math.sqrt(d_model))
        self.b1 = T.parameter(np.zeros(hidden))
        self.w2 = T.parameter(rng.standard_normal((hidden, d_model))
                              / math.sqrt(hidden))
        self.b2 = T.parameter(np.zeros(d_model))
        self.ln_g = T.parameter(np.ones(d_model))
        self.ln_b = T.parameter(np.zeros(d_model))

    def parameters(self, prefix: str = ""):
        names = ("w1", "b1", "w2", "b2", "ln_g", "ln_b")
        return {prefix + n: getattr(self, n) for n in names}

    def forward(self, x: T.Tensor) -> T.Tensor:
        h = T.relu(T.matmul(T.layer_norm(x, self.ln_g, self.ln_b), self.w1)
                   + self.b1)
        return x + T.matmul(h, self.w2) + self.b2


class MambaSublayer:
    """MambaBlock already carries its own pre-norm and residual."""

    kind = "mamba"

    def __init__(self, rng, d_model: int, state_size: int, expand: int,
                 conv_width: int):
        self.block = MambaBlock(rng, d_model, state_size, expand, conv_width)

    def parameters(self, prefix: str = ""):
        return self.block.parameters(prefix)

    def forward(self, x: T.Tensor) -> T.Tensor:
        return self.block.forward(x)


class VariantModel:
    """One Mambaformer-family architecture behind the shared train contract."""

    def __init__(self, rng, *, variant: str, embedding: str, variates: int,
                 lookback: int, horizon: int, d_model: int, depth: int = 2,
                 heads: int = 4, patch_spec: PatchSpec | None = None,
                 state_size: int = 16, expand: int = 2, conv_width: int = 4,
                 use_positional: bool | None = None):
        if variant not in RECIPES:
            raise ConfigError(f"unknown variant {variant!r}; "
                              f"expected one of {sorted(RECIPES)}")
        if embedding not in EMBEDDINGS:
            raise ConfigError(f"unknown embedding {embedding!r}; "
                              f"expected one of {EMBEDDINGS}")
        self.variant = variant
        self.embedding = embedding
        self.variates = variates
        self.lookback = lookback
        self.horizon = horizon
        self.d_model = d_model
        self.depth = depth
        self.uses_revin = embedding == "pi"
        self.use_positional = (default_positional(variant)
                               if use_positional is None else use_positional)

        if embedding == "pi":
            self.patch_spec = patch_spec or PatchSpec(16, 8)
            self.embed = PatchEmbed(rng, self.patch_spec, d_model)
            self.tokens = num_patches(lookback, self.patch_spec.length,
                                      self.patch_spec.stride)
        else:
            self.patch_spec = None
            self.embed = ConvEmbed(rng, variates, d_model)
            self.tokens = lookback

        self.sublayers = []
        for _ in range(depth):
            for kind in RECIPES[variant]:
                if kind == "attention":
                    self.sublayers.append(AttentionSublayer(rng, d_model, heads))
                elif kind == "ffn":
                    self.sublayers.append(FfnSublayer(rng, d_model))
                else:
                    self.sublayers.append(MambaSublayer(
                        rng, d_model, state_size, expand, conv_width))
        self.ln_g = T.parameter(np.ones(d_model))
        self.ln_b = T.parameter(np.zeros(d_model))

        head_out = horizon if embedding == "pi" else horizon * variates
        self.head_w = T.parameter(
            rng.standard_normal((self.tokens * d_model, head_out))
            / math.sqrt(self.tokens * d_model))
        self.head_b = T.parameter(np.zeros(head_out))
        self.sublayer_trace: list[str] = []

    @property
    def sublayer_kinds(self) -> list[str]:
        return [s.kind for s in self.sublayers]

    def parameters(self, prefix: str = ""):
        out = self.embed.parameters(prefix + "embed.")
        for i, sub in enumerate(self.sublayers):
            out.update(sub.parameters(f"{prefix}sub{i}.{sub.kind}."))
        out[prefix + "ln_g"] = self.ln_g
        out[prefix + "ln_b"] = self.ln_b
        out[prefix + "head_w"] = self.head_w
        out[prefix + "head_b"] = self.head_b
        return out

    def forward_normalized(self, x: T.Tensor) -> T.Tensor:
        """(batch, lookback, variates) -> (batch, horizon, variates).

        The caller owns instance normalization (see uses_revin); conv
        embedding consumes whatever scale it is given.
        """
        if x.ndim != 3:
            raise DimensionError(f"expected (batch, lookback, variates), "
                                 f"got {x.shape}")
        b, length, m = x.shape
        if length != self.lookback or m != self.variates:
            raise DimensionError(
                f"window {length}x{m} does not match model "
                f"{self.lookback}x{self.variates}")
        tokens = self.embed.forward(x)
        n = tokens.shape[1]
        if self.use_positional:
            table = sinusoidal_positions(n, self.d_model)
            tokens = tokens + T.constant(table.astype(tokens.data.dtype))
        self.sublayer_trace = []
        for sub in self.sublayers:
            tokens = sub.forward(tokens)
            self.sublayer_trace.append(sub.kind)
        tokens = T.layer_norm(tokens, self.ln_g, self.ln_b)
        rows = tokens.shape[0]
        flat = T.reshape(tokens, (rows, n * self.d_model))
        out = T.matmul(flat, self.head_w) + self.head_b
        if self.embedding == "pi":
            return T.transpose(T.reshape(out, (b, m, self.horizon)), (0, 2, 1))
        return T.reshape(out, (b, self.horizon, m))

    def forecast(self, lookback: np.ndarray) -> np.ndarray:
        """Raw (lookback, variates) window -> denormalized forecast."""
        look = np.asarray(lookback)
        if not self.uses_revin:
            out = self.forward_normalized(T.constant(look[None, :, :]))
            return out.data.reshape(self.horizon, self.variates)
        stats = revin_stats(look)
        normalized = (look - stats.mean) / stats.std
        out = self.forward_normalized(T.constant(normalized[None, :, :]))
        return (out.data.reshape(self.horizon, self.variates) * stats.std
                + stats.mean)


def build_variant(rng, **kwargs) -> VariantModel:
    return VariantModel(rng, **kwargs)


class DLinearModel:
    """Trend/residual decomposition with one linear map per branch.

    Channel independent: both maps are shared across variates.
    """

    def __init__(self, rng, *, variates: int, lookback: int, horizon: int,
                 decomp_window: int = 25):
        if decomp_window % 2 == 0 or decomp_window < 1:
            raise ConfigError(
                f"decomposition window must be odd and >= 1, got {decomp_window}")
        self.variates = variates
        self.lookback = lookback
        self.horizon = horizon
        self.decomp_window = decomp_window
        self.uses_revin = True
        s = 1.0 / math.sqrt(lookback)
        self.w_trend = T.parameter(rng.standard_normal((lookback, horizon)) * s)
        self.b_trend = T.parameter(np.zeros(horizon))
        self.w_resid = T.parameter(rng.standard_normal((lookback, horizon)) * s)
        self.b_resid = T.parameter(np.zeros(horizon))

    def parameters(self, prefix: str = ""):
        names = ("w_trend", "b_trend", "w_resid", "b_resid")
        return {prefix + n: getattr(self, n) for n in names}

    def forward_normalized(self, x: T.Tensor) -> T.Tensor:
        if x.ndim != 3:
            raise DimensionError(f"expected (batch, lookback, variates), "
                                 f"got {x.shape}")
        b, length, m = x.shape
        if length != self.lookback or m != self.variates:
            raise DimensionError(
                f"window {length}x{m} does not match model "
                f"{self.lookback}x{self.variates}")
        trend = np.empty_like(x.data)
        for i in range(b):
            trend[i] = moving_average_decompose(x.data[i], self.decomp_window)[0]
        resid = x.data - trend
        fold = lambda arr: T.constant(
            np.swapaxes(arr, 1, 2).reshape(b * m, length))
        out = (T.matmul(fold(trend), self.w_trend) + self.b_trend
               + T.matmul(fold(resid), self.w_resid) + self.b_resid)
        return T.transpose(T.reshape(out, (b, m, self.horizon)), (0, 2, 1))

    def forecast(self, lookback: np.ndarray) -> np.ndarray:
        look = np.asarray(lookback)
        stats = revin_stats(look)
        normalized = (look - stats.mean) / stats.std
        out = self.forward_normalized(T.constant(normalized[None, :, :]))
        return (out.data.reshape(self.horizon, self.variates) * stats.std
                + stats.mean)


def dlinear_baseline(rng, **kwargs) -> DLinearModel:
    return DLinearModel(rng, **kwargs)
