#!/usr/bin/env python3
"""Train the two-expert forecaster on a synthetic series and look inside.

The series mixes a weekly-scale cycle (too long for the trailing window
to pin down), a daily-scale cycle, decaying shocks, trend, and noise.
After training we compare test error against a linear baseline and then
ask the router what it decided for calm versus freshly-shocked windows.
"""
import numpy as np

from sst import tensor as T
from sst.data import (SynthSpec, make_windows, revin_normalize, split_dataset,
                      synth_generate)
from sst.model import SstModel
from sst.patching import PatchSpec
from sst.training import TrainConfig, evaluate, train
from sst.variants import DLinearModel

LOOKBACK, SHORT, HORIZON = 196, 48, 96

spec = SynthSpec(length=5000, trend_slope=0.002, period=168.0, amplitude=1.0,
                 period2=24.0, amplitude2=0.6, spike_rate=0.01, spike_mag=2.5,
                 spike_decay=0.88, noise_sigma=0.1, seed=1, variates=1)
ds = synth_generate(spec)
print(f"series: {ds.length} steps, {ds.num_variates} variate(s)")

train_ds, val_ds, test_ds = split_dataset(ds, "ratio", lookback_context=LOOKBACK)
w_train = make_windows(train_ds, LOOKBACK, HORIZON, stride=5)
w_val = make_windows(val_ds, LOOKBACK, HORIZON, stride=4)
w_test = make_windows(test_ds, LOOKBACK, HORIZON, stride=2)
print(f"windows: {len(w_train)} train / {len(w_val)} val / {len(w_test)} test")

# float32 halves memory traffic; fine for a demo, use the default 64-bit
# mode when you care about bit-reproducible comparisons across machines
with T.default_dtype(np.float32):
    rng = np.random.default_rng(42)
    model = SstModel(rng, variates=1, lookback=LOOKBACK, short_len=SHORT,
                     horizon=HORIZON, long_spec=PatchSpec(52, 16),
                     short_spec=PatchSpec(16, 8), d_model=16, mamba_depth=2,
                     lwt_depth=3, heads=4, window=9, state_size=16)
    result = train(model, w_train, w_val,
                   TrainConfig(lr=1e-3, batch_size=32, max_epochs=8,
                               patience=8, seed=0))
    for rec in result.history:
        print(f"  epoch {rec['epoch']:2d}  train {rec['train_loss']:.4f}  "
              f"val {rec['val_loss']:.4f}")
    report = evaluate(model, w_test, model_name="sst")

    baseline = DLinearModel(np.random.default_rng(42), variates=1,
                            lookback=LOOKBACK, horizon=HORIZON)
    train(baseline, w_train, w_val,
          TrainConfig(lr=1e-3, batch_size=32, max_epochs=8, patience=8, seed=0))
    base_report = evaluate(baseline, w_test, model_name="dlinear")

print(f"\ntest mse  sst {report.mse:.4f}   linear baseline {base_report.mse:.4f}")

# Which windows does the router send to the short-range expert?  Rank test
# windows by the largest absolute step in their trailing quarter: shocked
# windows sit at the top, calm ones at the bottom.
xs = np.stack([revin_normalize(w)[0].lookback for w in w_test])
jumpiness = np.abs(np.diff(xs[:, -LOOKBACK // 4:, 0], axis=1)).max(axis=1)
order = np.argsort(jumpiness)
p_long = model.router.forward(
    T.constant(xs.astype(np.float32))).data[:, 0]
calm, shocked = order[:40], order[-40:]
print(f"mean long-expert weight on the 40 calmest windows:   "
      f"{p_long[calm].mean():.3f}")
print(f"mean long-expert weight on the 40 spikiest windows:  "
      f"{p_long[shocked].mean():.3f}")
