"""Scaling harness: forward+backward cost as the lookback grows.

Runs in float32 with per-op checking off; the tape is released after
every trial so nothing is retained across steps.  Memory is the live
Tensor allocation high-water mark from the tensor core's meter, which is
deterministic for a given configuration, and the same counter enforces
the synthetic cap that emulates OOM.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, MemoryCapExceededError
from .model import SstModel
from .patching import PatchSpec
from .variants import VariantModel

BENCH_MODELS = ("full_attention_transformer", "patched_transformer", "sst")


@dataclass
class ScalingRecord:
    model: str
    length: int
    forward_backward_ms: float  # median over trials; nan when oom
    peak_bytes: int
    status: str                 # "ok" | "oom"

    def as_dict(self):
        return {"model": self.model, "length": self.length,
                "forward_backward_ms": self.forward_backward_ms,
                "peak_bytes": self.peak_bytes, "status": self.status}


def build_bench_model(name: str, length: int, *, d_model: int = 16,
                      heads: int = 2, window: int = 9, state_size: int = 8,
                      horizon: int = 96, seed: int = 0):
    """One of the three scaling subjects at a given lookback."""
    rng = np.random.default_rng(seed)
    if name == "full_attention_transformer":
        # conv embedding keeps all L positions as tokens
        return VariantModel(rng, variant="transformer", embedding="conv",
                            variates=1, lookback=length, horizon=horizon,
                            d_model=d_model, depth=2, heads=heads)
    if name == "patched_transformer":
        return VariantModel(rng, variant="transformer", embedding="pi",
                            variates=1, lookback=length, horizon=horizon,
                            d_model=d_model, depth=2, heads=heads,
                            patch_spec=PatchSpec(16, 8))
    if name == "sst":
        return SstModel(rng, variates=1, lookback=length,
                        short_len=length // 2, horizon=horizon,
                        d_model=d_model, long_spec=PatchSpec(48, 16),
                        short_spec=PatchSpec(16, 8), mamba_depth=2,
                        lwt_depth=3, heads=heads, window=window,
                        state_size=state_size)
    raise ConfigError(f"unknown bench model {name!r}; "
                      f"choose from {BENCH_MODELS}")


def _cast_params(model, dtype):
    for p in model.parameters().values():
        p.data = p.data.astype(dtype)


def _one_step(model, x: np.ndarray, target: np.ndarray, banded: bool):
    params = list(model.parameters().values())
    T.zero_grads(params)
    with T.record() as tape:
        if banded:
            pred = model.forward_normalized(T.constant(x), banded=True)
        else:
            pred = model.forward_normalized(T.constant(x))
        diff = pred - T.constant(target)
        loss = (diff * diff).mean()
    T.backward(tape, loss)
    return float(loss.data)


def bench_scaling(models, lengths, *, trials: int = 5, d_model: int = 16,
                  heads: int = 2, window: int = 9, state_size: int = 8,
                  horizon: int = 96, dtype: str = "float32",
                  memory_cap_mb: float = 0.0, seed: int = 0):
    """Time forward+backward per (model, length); fit log-log slopes.

    Returns (records, slopes).  slopes[model] is the least-squares
    exponent of time vs length over that model's ok points, or the
    string "insufficient" with fewer than 4 of them.  Once a model hits
    the cap at some length, all larger lengths are recorded oom without
    running.
    """
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    np_dtype = np.dtype(dtype)
    if np_dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ConfigError(f"bench dtype must be float32/float64, got {dtype}")
    lengths = sorted(set(int(n) for n in lengths))
    cap = int(memory_cap_mb * 1024 * 1024) if memory_cap_mb > 0 else None

    records = []
    data_rng = np.random.default_rng(seed)
    with T.checked_mode(False):
        for name in models:
            dead = False
            for length in lengths:
                if dead:
                    records.append(ScalingRecord(name, length, math.nan, 0,
                                                 "oom"))
                    continue
                record = _measure(name, length, trials=trials,
                                  d_model=d_model, heads=heads, window=window,
                                  state_size=state_size, horizon=horizon,
                                  np_dtype=np_dtype, cap=cap, rng=data_rng,
                                  seed=seed)
                records.append(record)
                dead = record.status == "oom"
    records.sort(key=lambda r: (models.index(r.model) if r.model in models
                                else len(models), r.length))
    return records, fit_slopes(records)


def _measure(name, length, *, trials, d_model, heads, window, state_size,
             horizon, np_dtype, cap, rng, seed) -> ScalingRecord:
    x = rng.standard_normal((1, length, 1)).astype(np_dtype)
    target = rng.standard_normal((1, horizon, 1)).astype(np_dtype)
    banded = name == "sst"
    model = None
    T.meter.set_cap(cap)
    try:
        with T.default_dtype(np_dtype):
            model = build_bench_model(name, length, d_model=d_model,
                                      heads=heads, window=window,
                                      state_size=state_size, horizon=horizon,
                                      seed=seed)
            _cast_params(model, np_dtype)
            T.meter.reset_peak()
            _one_step(model, x, target, banded)  # warm-up, not timed
            times = []
            for _ in range(trials):
                start = time.perf_counter()
                _one_step(model, x, target, banded)
                times.append((time.perf_counter() - start) * 1e3)
        return ScalingRecord(name, length, float(np.median(times)),
                             T.meter.peak_bytes, "ok")
    except MemoryCapExceededError:
        return ScalingRecord(name, length, math.nan, T.meter.peak_bytes, "oom")
    finally:
        T.meter.set_cap(None)
        del model


def fit_slopes(records) -> dict:
    """Per-model log-log slope of median time vs length over ok points."""
    out = {}
    for name in sorted({r.model for r in records}):
        points = [(r.length, r.forward_backward_ms) for r in records
                  if r.model == name and r.status == "ok"]
        if len(points) < 4:
            out[name] = "insufficient"
            continue
        logs = np.log([p[0] for p in points])
        logt = np.log([p[1] for p in points])
        slope = np.polyfit(logs, logt, 1)[0]
        out[name] = float(slope)
    return out


def first_oom_length(records, model: str):
    """Smallest L at which the model recorded oom, or None."""
    ooms = [r.length for r in records if r.model == model and r.status == "oom"]
    return min(ooms) if ooms else None


def write_scaling(records, slopes, out_dir) -> None:
    """scaling.tsv (one line per (model, L)) + slopes.json."""
    import os
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "scaling.tsv"), "w",
              encoding="utf-8") as fh:
        fh.write("model\tlength\tforward_backward_ms\tpeak_bytes\tstatus\n")
        for r in records:
            ms = "nan" if math.isnan(r.forward_backward_ms) \
                else repr(r.forward_backward_ms)
            fh.write(f"{r.model}\t{r.length}\t{ms}\t{r.peak_bytes}\t"
                     f"{r.status}\n")
    with open(os.path.join(out_dir, "slopes.json"), "w",
              encoding="utf-8") as fh:
        json.dump(slopes, fh, sort_keys=True, indent=2)
        fh.write("\n")
