"""Scaling harness behavior at toy sizes: records, caps, slope fits."""
import math

import numpy as np
import pytest

from sst.bench import (ScalingRecord, bench_scaling, build_bench_model,
                       first_oom_length, fit_slopes, write_scaling)
from sst.errors import ConfigError
from sst.model import SstModel
from sst.variants import VariantModel

SMALL = dict(trials=1, d_model=8, heads=2, window=5, state_size=4, horizon=8)


def small_grid(lengths, **kw):
    args = dict(SMALL)
    args.update(kw)
    return bench_scaling(("full_attention_transformer", "patched_transformer",
                          "sst"), lengths, **args)


class TestBuild:
    def test_three_kinds(self):
        full = build_bench_model("full_attention_transformer", 64, **{
            k: v for k, v in SMALL.items() if k != "trials"})
        patched = build_bench_model("patched_transformer", 64, d_model=8,
                                    horizon=8)
        sst = build_bench_model("sst", 64, d_model=8, state_size=4, horizon=8)
        assert isinstance(full, VariantModel)
        assert isinstance(patched, VariantModel)
        assert isinstance(sst, SstModel)
        # the full-attention subject must keep every position as a token
        assert full.tokens == 64
        assert patched.tokens < 64

    def test_unknown_name_rejected(self):
        with pytest.raises(ConfigError):
            build_bench_model("gru", 64)


class TestRecords:
    def test_grid_shape_and_order(self):
        records, slopes = small_grid((128, 64))
        assert [r.length for r in records] == [64, 128] * 3
        names = [r.model for r in records]
        assert names == sorted(names, key=names.index)  # model-major blocks
        for r in records:
            assert r.status == "ok"
            assert r.forward_backward_ms > 0
            assert r.peak_bytes > 0
        assert all(v == "insufficient" for v in slopes.values())

    def test_peaks_deterministic_across_runs(self):
        ra, _ = small_grid((64, 96))
        rb, _ = small_grid((64, 96))
        assert [r.peak_bytes for r in ra] == [r.peak_bytes for r in rb]

    def test_full_attention_peak_grows_fastest(self):
        records, _ = small_grid((64, 256))
        peak = {(r.model, r.length): r.peak_bytes for r in records}
        growth = {m: peak[(m, 256)] / peak[(m, 64)]
                  for m in ("full_attention_transformer", "sst")}
        assert growth["full_attention_transformer"] > growth["sst"]

    def test_rejects_bad_dtype_and_trials(self):
        with pytest.raises(ConfigError):
            small_grid((64,), dtype="float16")
        with pytest.raises(ConfigError):
            small_grid((64,), trials=0)


class TestMemoryCap:
    def test_cap_marks_oom_and_skips_larger(self):
        free, _ = small_grid((64, 128, 192))
        peaks = {r.length: r.peak_bytes for r in free
                 if r.model == "full_attention_transformer"}
        cap_mb = (peaks[64] + peaks[128]) / 2 / 1e6
        capped, _ = small_grid((64, 128, 192), memory_cap_mb=cap_mb)
        by_len = {r.length: r for r in capped
                  if r.model == "full_attention_transformer"}
        assert by_len[64].status == "ok"
        assert by_len[128].status == "oom"
        assert math.isnan(by_len[128].forward_backward_ms)
        # larger lengths are not attempted once the model has died
        assert by_len[192].status == "oom"
        assert by_len[192].peak_bytes == 0
        assert first_oom_length(capped, "full_attention_transformer") == 128

    def test_tiny_cap_kills_everything(self):
        records, slopes = small_grid((64,), memory_cap_mb=0.01)
        assert all(r.status == "oom" for r in records)
        assert all(v == "insufficient" for v in slopes.values())

    def test_first_oom_none_when_all_ok(self):
        records, _ = small_grid((64,))
        assert first_oom_length(records, "sst") is None


class TestSlopeFit:
    @staticmethod
    def _records(exponent, lengths=(256, 512, 1024, 2048)):
        return [ScalingRecord("m", n, float(n) ** exponent * 1e-3, 1, "ok")
                for n in lengths]

    def test_recovers_known_exponents(self):
        assert fit_slopes(self._records(2.0))["m"] == pytest.approx(2.0)
        assert fit_slopes(self._records(1.0))["m"] == pytest.approx(1.0)

    def test_insufficient_below_four_points(self):
        assert fit_slopes(self._records(2.0, (256, 512, 1024)))["m"] \
            == "insufficient"

    def test_oom_points_excluded(self):
        recs = self._records(1.0) + [ScalingRecord("m", 4096, math.nan, 0,
                                                   "oom")]
        assert fit_slopes(recs)["m"] == pytest.approx(1.0)


class TestWriteScaling:
    def test_tsv_round_trip(self, tmp_path):
        records, slopes = small_grid((64,), memory_cap_mb=0.01)
        write_scaling(records, slopes, str(tmp_path))
        lines = (tmp_path / "scaling.tsv").read_text().splitlines()
        assert lines[0].split("\t") == ["model", "length",
                                        "forward_backward_ms", "peak_bytes",
                                        "status"]
        assert len(lines) == 1 + len(records)
        for line, r in zip(lines[1:], records):
            model, length, ms, peak, status = line.split("\t")
            assert (model, int(length), status) == (r.model, r.length,
                                                    r.status)
            assert math.isnan(float(ms)) == math.isnan(r.forward_backward_ms)
