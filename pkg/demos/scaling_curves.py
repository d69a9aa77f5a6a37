#!/usr/bin/env python3
# Cost of one training step as the lookback grows, three architectures.
# Full attention is quadratic in the token count; the patched transformer
# divides the count by its stride but keeps the quadratic; the two-expert
# model scans linearly and attends only inside a fixed band.

from sst.bench import bench_scaling, first_oom_length

lengths = (256, 512, 1024, 2048)
records, slopes = bench_scaling(
    ("full_attention_transformer", "patched_transformer", "sst"),
    lengths, trials=3, d_model=16, heads=2, window=9, state_size=8,
    horizon=96)

print(f"{'model':28s} {'L':>6s} {'ms/step':>10s} {'peak MB':>9s}")
for r in records:
    print(f"{r.model:28s} {r.length:6d} {r.forward_backward_ms:10.1f} "
          f"{r.peak_bytes / 1e6:9.2f}")

print("\nlog-log slope of time vs lookback (4 points each):")
for name, slope in sorted(slopes.items()):
    shown = slope if isinstance(slope, str) else f"{slope:.2f}"
    print(f"  {name:28s} {shown}")

# rerun under an artificial memory ceiling to see who dies first
capped, _ = bench_scaling(
    ("full_attention_transformer", "patched_transformer", "sst"),
    (256, 512, 1024, 2048, 4096, 8192), trials=1, d_model=16, heads=2,
    window=9, state_size=8, horizon=96, memory_cap_mb=75.0)
print("\nfirst lookback over a 75 MB live-tensor ceiling:")
for name in ("full_attention_transformer", "patched_transformer", "sst"):
    hit = first_oom_length(capped, name)
    print(f"  {name:28s} {hit if hit else 'never'}")
