"""Long-short router, weighted fusion, forecast head, and the full model.

The two experts are channel independent: every variate of a window runs
through the same expert weights, folded into the batch axis.  The router
is the one exception; it reads the whole multivariate lookback at once
and emits a weight pair shared by all variates of that window.

Ablation switches live here too.  `use_long` / `use_short` drop an
expert, `multi_scale=False` feeds both experts the same full-window
patching (the resolution split removed), `use_patcher=False` hands both
experts the raw steps as length-1 tokens, and `use_router=False` freezes
the fusion weights at one half each.
"""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .attention import VariationsExpert
from .data import SeriesWindow, revin_stats
from .errors import ConfigError, DimensionError
from .patching import PatchSpec, multi_scale_patch, num_patches
from .ssm import PatternsExpert


class Router:
    """Per-step projection, flatten, and a two-way softmax gate."""

    def __init__(self, rng, variates: int, lookback: int, d_model: int):
        self.variates = variates
        self.lookback = lookback
        self.d_model = d_model
        self.proj = T.parameter(
            rng.standard_normal((variates, d_model)) / math.sqrt(variates))
        self.gate_w = T.parameter(
            rng.standard_normal((lookback * d_model, 2))
            / math.sqrt(lookback * d_model))
        self.gate_b = T.parameter(np.zeros(2))

    def parameters(self, prefix: str = ""):
        return {prefix + "proj": self.proj, prefix + "gate_w": self.gate_w,
                prefix + "gate_b": self.gate_b}

    def forward(self, x: T.Tensor) -> T.Tensor:
        """(batch, lookback, variates) -> (batch, 2) weights."""
        if x.ndim != 3 or x.shape[1] != self.lookback or x.shape[2] != self.variates:
            raise DimensionError(
                f"expected (batch, {self.lookback}, {self.variates}), got {x.shape}")
        b = x.shape[0]
        z = T.reshape(T.matmul(x, self.proj), (b, self.lookback * self.d_model))
        return T.softmax(T.matmul(z, self.gate_w) + self.gate_b)


def route(lookback, router: Router) -> T.Tensor:
    """Weight pair for one unbatched (lookback, variates) window."""
    x = lookback if isinstance(lookback, T.Tensor) else T.constant(lookback)
    if x.ndim != 2:
        raise DimensionError(f"expected a 2-d window, got shape {x.shape}")
    p = router.forward(T.reshape(x, (1,) + x.shape))
    return T.reshape(p, (2,))


class Head:
    """Linear map from the fused embedding to the forecast horizon."""

    def __init__(self, rng, fused_dim: int, horizon: int):
        self.fused_dim = fused_dim
        self.horizon = horizon
        self.w = T.parameter(
            rng.standard_normal((fused_dim, horizon)) / math.sqrt(fused_dim))
        self.b = T.parameter(np.zeros(horizon))

    def parameters(self, prefix: str = ""):
        return {prefix + "w": self.w, prefix + "b": self.b}

    def forward(self, z: T.Tensor) -> T.Tensor:
        if z.shape[-1] != self.fused_dim:
            raise DimensionError(
                f"fused width {z.shape[-1]} does not match head {self.fused_dim}")
        return T.matmul(z, self.w) + self.b


def _as_scalar_tensor(p) -> T.Tensor:
    if isinstance(p, T.Tensor):
        return p
    return T.constant(np.asarray(float(p)))


def fuse_and_forecast(z_long: T.Tensor, z_short: T.Tensor, p_long, p_short,
                      head: Head) -> T.Tensor:
    """Weighted flatten-concat of both expert outputs through the head.

    Single-variate form: z_long is (N_L, D), z_short is (N_S, D), and the
    weights are scalars.  A weight of exactly zero nullifies its branch
    bit-exactly, since the head only ever sees the scaled embedding.
    """
    if z_long.ndim != 2 or z_short.ndim != 2:
        raise DimensionError("expert embeddings must be (patches, width)")
    flat_l = T.reshape(z_long, (z_long.shape[0] * z_long.shape[1],))
    flat_s = T.reshape(z_short, (z_short.shape[0] * z_short.shape[1],))
    fused = T.concat([_as_scalar_tensor(p_long) * flat_l,
                      _as_scalar_tensor(p_short) * flat_s], axis=0)
    return head.forward(fused)


class SstModel:
    """Multi-scale patching, two experts, router fusion, linear head."""

    def __init__(self, rng, *, variates: int, lookback: int, short_len: int,
                 horizon: int, d_model: int,
                 long_spec: PatchSpec, short_spec: PatchSpec,
                 mamba_depth: int = 2, lwt_depth: int = 3, heads: int = 4,
                 window: int = 9, state_size: int = 16, expand: int = 2,
                 conv_width: int = 4,
                 use_long: bool = True, use_short: bool = True,
                 use_router: bool = True, multi_scale: bool = True,
                 use_patcher: bool = True):
        if not use_long and not use_short:
            raise ConfigError("at least one expert must be enabled")
        if use_router and not (use_long and use_short):
            use_router = False  # nothing to arbitrate
        if not use_patcher:
            # every timestep its own token; both branches at raw resolution
            long_spec = short_spec = PatchSpec(1, 1)
        self.variates = variates
        self.lookback = lookback
        self.short_len = short_len if multi_scale else lookback
        self.horizon = horizon
        self.d_model = d_model
        self.use_patcher = use_patcher
        self.long_spec = long_spec
        self.short_spec = short_spec if multi_scale else long_spec
        self.use_long = use_long
        self.use_short = use_short
        self.use_router = use_router
        self.multi_scale = multi_scale
        self.uses_revin = True

        self.n_long = (num_patches(lookback, long_spec.length, long_spec.stride)
                       if use_long else 0)
        self.n_short = (num_patches(self.short_len, self.short_spec.length,
                                    self.short_spec.stride)
                        if use_short else 0)
        self.fused_dim = (self.n_long + self.n_short) * d_model

        self.long_expert = (PatternsExpert(
            rng, patch_len=long_spec.length, d_model=d_model,
            depth=mamba_depth, state_size=state_size, expand=expand,
            conv_width=conv_width) if use_long else None)
        self.short_expert = (VariationsExpert(
            rng, patch_len=self.short_spec.length, d_model=d_model,
            depth=lwt_depth, heads=heads, window=window)
            if use_short else None)
        self.router = (Router(rng, variates, lookback, d_model)
                       if use_router else None)
        self.head = Head(rng, self.fused_dim, horizon)

    def parameters(self, prefix: str = ""):
        out = {}
        if self.router is not None:
            out.update(self.router.parameters(prefix + "router."))
        if self.long_expert is not None:
            out.update(self.long_expert.parameters(prefix + "long."))
        if self.short_expert is not None:
            out.update(self.short_expert.parameters(prefix + "short."))
        out.update(self.head.parameters(prefix + "head."))
        return out

    def _patches(self, x: T.Tensor):
        # patching precedes every parameter, so it runs outside the tape
        long_p, short_p = multi_scale_patch(
            x.data, self.long_spec, self.short_spec, self.short_len,
            enforce_ordering=self.multi_scale and self.use_patcher)
        return T.constant(long_p), T.constant(short_p)

    def _fold(self, pts: T.Tensor) -> T.Tensor:
        b, m, n, p = pts.shape
        return T.reshape(pts, (b * m, n, p))

    def forward_normalized(self, x: T.Tensor, fixed_weights=None,
                           banded: bool = False) -> T.Tensor:
        """(batch, lookback, variates) normalized -> (batch, horizon, variates).

        fixed_weights, when given, replaces the router output with a
        constant (p_long, p_short) pair; the no-router ablation runs with
        (0.5, 0.5), and tests use (1, 0) / (0, 1) to isolate a branch.
        """
        if x.ndim != 3:
            raise DimensionError(f"expected (batch, lookback, variates), "
                                 f"got {x.shape}")
        b, length, m = x.shape
        if length != self.lookback or m != self.variates:
            raise DimensionError(
                f"window {length}x{m} does not match model "
                f"{self.lookback}x{self.variates}")
        pts_long, pts_short = self._patches(x)
        parts = []
        if self.use_long:
            z = self.long_expert.forward(self._fold(pts_long))
            parts.append(T.reshape(z, (b * m, self.n_long * self.d_model)))
        if self.use_short:
            z = self.short_expert.forward(self._fold(pts_short), banded=banded)
            parts.append(T.reshape(z, (b * m, self.n_short * self.d_model)))
        if len(parts) == 2:
            p_long, p_short = self._weights(x, b, m, fixed_weights)
            parts = [p_long * parts[0], p_short * parts[1]]
        fused = parts[0] if len(parts) == 1 else T.concat(parts, axis=1)
        out = self.head.forward(fused)
        return T.transpose(T.reshape(out, (b, m, self.horizon)), (0, 2, 1))

    def _weights(self, x: T.Tensor, b: int, m: int, fixed_weights):
        if fixed_weights is None and not self.use_router:
            fixed_weights = (0.5, 0.5)
        if fixed_weights is not None:
            p_l = T.constant(np.full((b * m, 1), float(fixed_weights[0]),
                                     dtype=x.data.dtype))
            p_s = T.constant(np.full((b * m, 1), float(fixed_weights[1]),
                                     dtype=x.data.dtype))
            return p_l, p_s
        p = self.router.forward(x)  # (b, 2)
        ones = T.constant(np.ones((1, m), dtype=x.data.dtype))
        p_l = T.reshape(T.slice_axis(p, 1, 0, 1) * ones, (b * m, 1))
        p_s = T.reshape(T.slice_axis(p, 1, 1, 2) * ones, (b * m, 1))
        return p_l, p_s

    def forecast(self, lookback: np.ndarray) -> np.ndarray:
        """Denormalized (horizon, variates) forecast for one raw window."""
        return sst_forward(lookback, self).data


def sst_forward(window, model: SstModel) -> T.Tensor:
    """Raw window in, denormalized (horizon, variates) forecast out.

    Accepts a SeriesWindow or a plain (lookback, variates) array.  The
    window is instance-normalized, pushed through the model, and mapped
    back to the original scale, so gradients through the result see the
    whole pipeline.
    """
    look = window.lookback if isinstance(window, SeriesWindow) else np.asarray(window)
    if look.ndim != 2:
        raise DimensionError(f"expected a 2-d lookback, got shape {look.shape}")
    stats = revin_stats(look)
    normalized = (look - stats.mean) / stats.std
    x = T.constant(normalized[None, :, :])
    y = model.forward_normalized(x)
    y = T.reshape(y, (model.horizon, model.variates))
    return y * T.constant(stats.std) + T.constant(stats.mean)
