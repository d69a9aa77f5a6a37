"""Datasets, splits, windows, instance normalization, metrics, synthesis.

Everything here is plain numpy; nothing records on the autodiff tape.
Values are float64 (T, M) arrays ordered by ascending timestamp.
"""
from __future__ import annotations

import csv
import dataclasses
import datetime as _dt

import numpy as np

from .errors import ContractError, DataError, ParameterError

# ETT-style calendar splits assume 30-day months, matching the usual
# 12/4/4-month protocol for these files.
_ETT_STEPS_PER_MONTH = {"ett_h": 30 * 24, "ett_m": 30 * 24 * 4}


@dataclasses.dataclass
class Dataset:
    """A named multivariate series: values[t, m] at ascending timestamps."""

    name: str
    values: np.ndarray  # (T, M) float64
    variate_names: tuple[str, ...]
    frequency: str = ""
    components: dict[str, np.ndarray] | None = None  # ground truth for synthetics

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ContractError(f"values must be 2-D (T, M), got shape {v.shape}")
        self.values = v
        if len(self.variate_names) != v.shape[1]:
            raise ContractError("variate_names length must equal M")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def num_variates(self) -> int:
        return self.values.shape[1]


@dataclasses.dataclass
class SeriesWindow:
    """One training/eval example: lookback (L, M) and target (F, M)."""

    lookback: np.ndarray
    target: np.ndarray
    origin_index: int  # index of the first lookback row in the parent dataset


@dataclasses.dataclass
class NormStats:
    """Per-window per-variate mean and population std of the lookback."""

    mean: np.ndarray  # (M,)
    std: np.ndarray   # (M,), already floored by eps
    eps: float


# --------------------------------------------------------------------------
# loading
# --------------------------------------------------------------------------

_TS_FORMATS = ("%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%d", "%Y/%m/%d %H:%M")


def _parse_ts(text: str):
    for fmt in _TS_FORMATS:
        try:
            return _dt.datetime.strptime(text, fmt)
        except ValueError:
            continue
    try:
        return _dt.datetime.fromisoformat(text)
    except ValueError:
        return None


def load_csv(path, name: str | None = None, frequency: str = "") -> Dataset:
    """Parse a timestamp-first CSV into a Dataset.

    First column is the timestamp, remaining columns are float variates.
    Unparsable numeric cells and non-ascending timestamps are data errors
    reported with their position.
    """
    rows: list[list[float]] = []
    stamps: list = []
    try:
        fh = open(path, "r", newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 2:
            raise DataError(f"{path}: need a timestamp column plus at least one variate")
        variate_names = tuple(h.strip() for h in header[1:])
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DataError(f"{path}:{lineno}: expected {width} cells, got {len(row)}")
            stamps.append(row[0])
            vals = []
            for col, cell in enumerate(row[1:], start=2):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}:{lineno}: column {col}: unparsable value {cell!r}"
                    ) from None
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    parsed = [_parse_ts(s) for s in stamps]
    if all(p is not None for p in parsed):
        for i in range(1, len(parsed)):
            if parsed[i] <= parsed[i - 1]:
                raise DataError(
                    f"{path}: timestamps not strictly ascending at row {i + 2} "
                    f"({stamps[i]!r} after {stamps[i - 1]!r})"
                )
    values = np.asarray(rows, dtype=np.float64)
    return Dataset(name=name or str(path), values=values,
                   variate_names=variate_names, frequency=frequency)


# --------------------------------------------------------------------------
# splits and windows
# --------------------------------------------------------------------------

def split_dataset(ds: Dataset, scheme: str,
                  ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
                  lookback_context: int = 0) -> tuple[Dataset, Dataset, Dataset]:
    """Chronological train/val/test split.

    scheme: "ratio" uses `ratios`; "ett_h"/"ett_m" take 12/4/4 calendar
    months at the file's native step. val/test segments are extended
    `lookback_context` rows to the left so their first windows can reach
    back across the boundary; target rows still start at the boundary.
    """
    t = ds.length
    if scheme == "ratio":
        if abs(sum(ratios) - 1.0) > 1e-9 or any(r <= 0 for r in ratios):
            raise ContractError(f"ratios must be positive and sum to 1, got {ratios}")
        n_train = int(t * ratios[0])
        n_val = int(t * ratios[1])
    elif scheme in _ETT_STEPS_PER_MONTH:
        per_month = _ETT_STEPS_PER_MONTH[scheme]
        n_train = 12 * per_month
        n_val = 4 * per_month
        if t < n_train + n_val + 4 * per_month:
            raise DataError(
                f"{ds.name}: {t} rows is too short for the {scheme} calendar split"
            )
    else:
        raise ContractError(f"unknown split scheme {scheme!r}")
    n_test = t - n_train - n_val if scheme == "ratio" else 4 * _ETT_STEPS_PER_MONTH[scheme]
    if lookback_context < 0:
        raise ContractError("lookback_context must be >= 0")

    def cut(a, b, tag):
        lo = max(0, a - (lookback_context if tag != "train" else 0))
        return Dataset(name=f"{ds.name}/{tag}", values=ds.values[lo:b],
                       variate_names=ds.variate_names, frequency=ds.frequency)

    train = cut(0, n_train, "train")
    val = cut(n_train, n_train + n_val, "val")
    test = cut(n_train + n_val, n_train + n_val + n_test, "test")
    return train, val, test


def make_windows(ds: Dataset, lookback: int, horizon: int,
                 stride: int = 1) -> list[SeriesWindow]:
    """All (lookback, target) windows at the given origin stride."""
    if lookback <= 0 or horizon <= 0 or stride <= 0:
        raise ParameterError("lookback, horizon, and stride must be positive")
    t = ds.length
    n = t - lookback - horizon + 1
    if n <= 0:
        raise DataError(
            f"{ds.name}: {t} rows cannot fit lookback {lookback} + horizon {horizon}"
        )
    out = []
    for o in range(0, n, stride):
        out.append(SeriesWindow(
            lookback=ds.values[o:o + lookback],
            target=ds.values[o + lookback:o + lookback + horizon],
            origin_index=o,
        ))
    return out


# --------------------------------------------------------------------------
# RevIN
# --------------------------------------------------------------------------

def revin_stats(lookback: np.ndarray, eps: float = 1e-5) -> NormStats:
    mean = lookback.mean(axis=0)
    std = np.sqrt(lookback.var(axis=0) + eps)  # population variance
    return NormStats(mean=mean, std=std, eps=eps)


def revin_normalize(window: SeriesWindow, eps: float = 1e-5
                    ) -> tuple[SeriesWindow, NormStats]:
    """Standardize a window with stats from its own lookback.

    The target block is transformed with the same stats so losses can be
    computed on the normalized scale.
    """
    stats = revin_stats(window.lookback, eps=eps)
    return SeriesWindow(
        lookback=(window.lookback - stats.mean) / stats.std,
        target=(window.target - stats.mean) / stats.std,
        origin_index=window.origin_index,
    ), stats


def revin_denormalize(values: np.ndarray, stats: NormStats) -> np.ndarray:
    """Map model outputs back to the original scale."""
    return values * stats.std + stats.mean


# --------------------------------------------------------------------------
# decomposition and metrics
# --------------------------------------------------------------------------

def moving_average_decompose(values: np.ndarray, kernel: int = 25
                             ) -> tuple[np.ndarray, np.ndarray]:
    """(trend, residual) per variate; edge windows truncate to valid range."""
    if kernel <= 0 or kernel % 2 == 0:
        raise ParameterError(f"kernel must be odd and positive, got {kernel}")
    v = np.asarray(values, dtype=np.float64)
    squeeze = v.ndim == 1
    if squeeze:
        v = v[:, None]
    t = v.shape[0]
    r = kernel // 2
    csum = np.cumsum(v, axis=0)
    csum = np.vstack([np.zeros((1, v.shape[1])), csum])
    idx = np.arange(t)
    lo = np.maximum(0, idx - r)
    hi = np.minimum(t, idx + r + 1)
    trend = (csum[hi] - csum[lo]) / (hi - lo)[:, None]
    resid = v - trend
    if squeeze:
        return trend[:, 0], resid[:, 0]
    return trend, resid


def metric_mse(pred: np.ndarray, target: np.ndarray) -> float:
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ContractError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def metric_mae(pred: np.ndarray, target: np.ndarray) -> float:
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ContractError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(pred - target)))


# --------------------------------------------------------------------------
# synthetic generator
# --------------------------------------------------------------------------

@dataclasses.dataclass
class SynthSpec:
    """Trend + sinusoid(s) + spike process + white noise, componentwise stored.

    period2/amplitude2 add an optional second, faster seasonal component
    (0 disables it).  spike_decay > 0 runs the spike impulses through a
    one-pole filter so each spike is followed by a geometric recovery
    tail, which is locally predictable structure rather than pure noise.
    """

    length: int
    trend_slope: float = 0.0
    period: float = 24.0
    amplitude: float = 1.0
    period2: float = 0.0
    amplitude2: float = 0.0
    spike_rate: float = 0.0
    spike_mag: float = 0.0
    spike_decay: float = 0.0
    noise_sigma: float = 0.1
    seed: int = 0
    variates: int = 1

    def validate(self) -> "SynthSpec":
        if self.length <= 0:
            raise ParameterError("length must be positive")
        if self.period <= 0:
            raise ParameterError("period must be positive")
        if self.period2 < 0 or self.amplitude2 < 0:
            raise ParameterError("period2 and amplitude2 must be >= 0")
        if not (0.0 <= self.spike_rate <= 1.0):
            raise ParameterError("spike_rate must be a probability")
        if self.noise_sigma < 0 or self.spike_mag < 0:
            raise ParameterError("noise_sigma and spike_mag must be >= 0")
        if not (0.0 <= self.spike_decay < 1.0):
            raise ParameterError("spike_decay must be in [0, 1)")
        if self.variates <= 0:
            raise ParameterError("variates must be positive")
        return self


def synth_generate(spec: SynthSpec) -> Dataset:
    """Deterministic synthetic dataset; components kept for ground truth.

    Variate m is phase-shifted by m/variates of a period so multivariate
    runs see distinct but structurally identical channels. Spikes are
    one-sided (positive), Bernoulli-placed per step.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    t = np.arange(spec.length, dtype=np.float64)
    m = spec.variates
    phase = (np.arange(m) / m)[None, :] * spec.period
    trend = np.broadcast_to((spec.trend_slope * t)[:, None], (spec.length, m)).copy()
    seasonal = spec.amplitude * np.sin(2 * np.pi * (t[:, None] + phase) / spec.period)
    if spec.period2 > 0 and spec.amplitude2 > 0:
        seasonal = seasonal + spec.amplitude2 * np.sin(
            2 * np.pi * (t[:, None] + phase) / spec.period2)
    spikes = np.zeros((spec.length, m))
    if spec.spike_rate > 0 and spec.spike_mag > 0:
        hits = rng.random((spec.length, m)) < spec.spike_rate
        # exponential magnitudes: occasional much-larger-than-typical events
        spikes = np.where(hits, spec.spike_mag * rng.exponential(1.0, (spec.length, m)), 0.0)
        if spec.spike_decay > 0:
            for i in range(1, spec.length):
                spikes[i] += spec.spike_decay * spikes[i - 1]
    noise = rng.normal(0.0, spec.noise_sigma, (spec.length, m)) if spec.noise_sigma else \
        np.zeros((spec.length, m))
    values = trend + seasonal + spikes + noise
    names = tuple(f"v{i}" for i in range(m))
    return Dataset(
        name=f"synth-{spec.seed}",
        values=values,
        variate_names=names,
        frequency="synthetic",
        components={"trend": trend, "seasonal": seasonal,
                    "spikes": spikes, "noise": noise},
    )


def write_csv(ds: Dataset, path) -> None:
    """Inverse of load_csv with integer-hour timestamps."""
    start = _dt.datetime(2020, 1, 1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("date",) + ds.variate_names)
        for i in range(ds.length):
            ts = (start + _dt.timedelta(hours=i)).strftime("%Y-%m-%d %H:%M:%S")
            w.writerow([ts] + [repr(float(x)) for x in ds.values[i]])
