"""Sliding-window patch extraction and the patch-to-sequence resolution score.

Patching is pure data rearrangement of model inputs, so it stays in
numpy; gradients only ever flow through the embeddings applied after it.
"""
from __future__ import annotations

import dataclasses
import math

import numpy as np

from .errors import ParameterError


@dataclasses.dataclass(frozen=True)
class PatchSpec:
    """Patch length and origin-to-origin stride."""

    length: int
    stride: int

    def validate(self, input_len: int) -> "PatchSpec":
        if self.length <= 0:
            raise ParameterError(f"patch length must be positive, got {self.length}")
        if self.stride <= 0:
            raise ParameterError(f"patch stride must be positive, got {self.stride}")
        if self.length > input_len:
            raise ParameterError(
                f"patch length {self.length} exceeds input length {input_len}"
            )
        return self


def num_patches(input_len: int, patch_len: int, stride: int) -> int:
    """floor((L - P) / Str) + 1; any leftover tail is dropped."""
    PatchSpec(patch_len, stride).validate(input_len)
    return (input_len - patch_len) // stride + 1


def r_pts(patch_len: int, stride: int) -> float:
    """Relative patch-to-sequence resolution sqrt(P)/Str.

    Length-independent, which is what makes the long/short ordering
    comparable across scales; see r_pts_absolute for the L-dependent form.
    """
    PatchSpec(patch_len, stride).validate(patch_len)
    return math.sqrt(patch_len) / stride


def r_pts_absolute(input_len: int, patch_len: int, stride: int) -> float:
    """N * sqrt(P): the un-normalized resolution of a concrete input length."""
    return num_patches(input_len, patch_len, stride) * math.sqrt(patch_len)


def patch(series: np.ndarray, spec: PatchSpec) -> np.ndarray:
    """Extract patches from the trailing time axis.

    (L,) -> (N, P); (B, L) -> (B, N, P). Patches are verbatim copies.
    """
    x = np.asarray(series)
    length = x.shape[-1]
    spec.validate(length)
    n = num_patches(length, spec.length, spec.stride)
    idx = np.arange(spec.length)[None, :] + spec.stride * np.arange(n)[:, None]
    return np.ascontiguousarray(x[..., idx])


def multi_scale_patch(lookback: np.ndarray, long_spec: PatchSpec,
                      short_spec: PatchSpec, short_len: int,
                      enforce_ordering: bool = True
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Long patches over the whole lookback, short patches over its tail.

    lookback: (L, M) or (B, L, M). Returns (long, short) shaped
    (..., M, N_long, P_long) and (..., M, N_short, P_short): variates move
    in front of time so each channel is patched independently.

    When enforce_ordering is set (the normal case), the long range must
    be coarser than the short range: r_pts(long) < r_pts(short).
    """
    x = np.asarray(lookback)
    if x.ndim not in (2, 3):
        raise ParameterError(f"lookback must be (L, M) or (B, L, M), got {x.shape}")
    length = x.shape[-2]
    if not (0 < short_len <= length):
        raise ParameterError(f"short length {short_len} must be in (0, {length}]")
    if enforce_ordering:
        r_long = r_pts(long_spec.length, long_spec.stride)
        r_short = r_pts(short_spec.length, short_spec.stride)
        if not r_long < r_short:
            raise ParameterError(
                f"resolution ordering violated: long r={r_long:.4f} must be "
                f"finer-grained than short r={r_short:.4f}"
            )
    per_variate = np.swapaxes(x, -1, -2)  # (..., M, L)
    long_p = patch(per_variate, long_spec)
    short_p = patch(per_variate[..., length - short_len:], short_spec)
    return long_p, short_p
