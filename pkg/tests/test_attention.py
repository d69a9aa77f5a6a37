"""Positions, band masks, the two attention paths, and the variations expert."""
import numpy as np
import pytest

from sst import attention as A
from sst import tensor as T
from sst.errors import DimensionError, ParameterError


class TestPositions:
    def test_position_zero_alternates(self):
        table = A.sinusoidal_positions(3, 6)
        np.testing.assert_array_equal(table[0], [0, 1, 0, 1, 0, 1])

    def test_stateless(self):
        one = A.sinusoidal_positions(41, 64)
        two = A.sinusoidal_positions(41, 64)
        assert np.array_equal(one, two)

    def test_shape_and_bounds(self):
        table = A.sinusoidal_positions(41, 64)
        assert table.shape == (41, 64)
        assert np.all(np.abs(table) <= 1.0)

    def test_rows_distinct(self):
        table = A.sinusoidal_positions(16, 8)
        for i in range(15):
            assert not np.allclose(table[i], table[i + 1])

    def test_odd_width_rejected(self):
        with pytest.raises(ParameterError):
            A.sinusoidal_positions(4, 7)


class TestWindowMask:
    def test_five_tokens_window_three(self):
        mask = A.window_mask(5, 3)
        assert sorted(np.flatnonzero(mask[2])) == [1, 2, 3]
        assert sorted(np.flatnonzero(mask[0])) == [0, 1]

    def test_full_attention_limit(self):
        assert A.window_mask(6, 11).all()

    def test_window_one_is_identity(self):
        np.testing.assert_array_equal(A.window_mask(4, 1), np.eye(4, dtype=bool))

    def test_symmetric_with_diagonal(self):
        mask = A.window_mask(9, 5)
        assert np.array_equal(mask, mask.T)
        assert mask.diagonal().all()

    def test_rejects_nonpositive(self):
        with pytest.raises(ParameterError):
            A.window_mask(4, 0)


def _qkv(rng, b=1, h=1, n=6, dk=4):
    return (T.constant(rng.standard_normal((b, h, n, dk))),
            T.constant(rng.standard_normal((b, h, n, dk))),
            T.constant(rng.standard_normal((b, h, n, dk))))


class TestMaskedAttention:
    def test_single_token_passes_value_through(self):
        rng = np.random.default_rng(0)
        q, k, v = _qkv(rng, n=1)
        out = A.masked_attention(q, k, v, np.ones((1, 1), dtype=bool))
        np.testing.assert_array_equal(out.data, v.data)

    def test_all_true_mask_matches_no_mask_bitwise(self):
        rng = np.random.default_rng(1)
        q, k, v = _qkv(rng)
        with_mask = A.masked_attention(q, k, v, np.ones((6, 6), dtype=bool))
        without = A.masked_attention(q, k, v, None)
        assert np.array_equal(with_mask.data, without.data)

    def test_zero_query_gives_masked_row_means(self):
        rng = np.random.default_rng(2)
        n, dk = 5, 3
        q = T.constant(np.zeros((1, 1, n, dk)))
        k = T.constant(rng.standard_normal((1, 1, n, dk)))
        v = T.constant(rng.standard_normal((1, 1, n, dk)))
        mask = A.window_mask(n, 3)
        out = A.masked_attention(q, k, v, mask)
        for i in range(n):
            expect = v.data[0, 0, mask[i]].mean(axis=0)
            np.testing.assert_allclose(out.data[0, 0, i], expect, atol=1e-12)

    def test_rows_ignore_values_outside_band(self):
        rng = np.random.default_rng(3)
        n = 8
        q, k, v = _qkv(rng, n=n)
        mask = A.window_mask(n, 3)
        base = A.masked_attention(q, k, v, mask).data.copy()
        v2 = v.data.copy()
        v2[0, 0, 6] += 100.0  # outside band(0..4)
        moved = A.masked_attention(q, k, T.constant(v2), mask).data
        for i in range(n):
            if not mask[i, 6]:
                assert np.array_equal(base[0, 0, i], moved[0, 0, i])
            else:
                assert not np.array_equal(base[0, 0, i], moved[0, 0, i])

    def test_weights_row_stochastic(self):
        rng = np.random.default_rng(4)
        n = 7
        q, k, v = _qkv(rng, n=n)
        mask = A.window_mask(n, 5)
        scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / 2.0)
        weights = T.softmax(T.masked_fill(scores, ~mask, float("-inf")))
        sums = weights.data.sum(axis=-1)
        np.testing.assert_allclose(sums, 1.0, atol=1e-9)
        assert np.all(weights.data[0, 0][~mask] == 0.0)


class TestBandedPath:
    @pytest.mark.parametrize("n,window,b,h", [
        (6, 3, 1, 1), (9, 4, 2, 2), (5, 1, 1, 2), (7, 13, 1, 1), (12, 9, 2, 4),
    ])
    def test_matches_dense(self, n, window, b, h):
        rng = np.random.default_rng(n * 31 + window)
        q, k, v = _qkv(rng, b=b, h=h, n=n)
        dense = A.masked_attention(q, k, v, A.window_mask(n, window)).data
        banded = A.banded_attention(q, k, v, window).data
        assert np.abs(dense - banded).max() < 1e-9

    def test_logit_counts(self):
        rng = np.random.default_rng(0)
        n, window = 10, 5
        q, k, v = _qkv(rng, n=n)
        mask = A.window_mask(n, window)
        expected_band = int(mask.sum())

        A.logit_counter.reset()
        A.banded_attention(q, k, v, window)
        assert A.logit_counter.logits == expected_band
        assert A.logit_counter.logits <= n * window

        A.logit_counter.reset()
        A.masked_attention(q, k, v, mask)
        assert A.logit_counter.logits == n * n
        A.logit_counter.reset()

    def test_gradients_match_dense_path(self):
        rng = np.random.default_rng(1)
        n, window = 8, 5
        mask = A.window_mask(n, window)

        def grads(path):
            q = T.parameter(rng_q.copy())
            k = T.parameter(rng_k.copy())
            v = T.parameter(rng_v.copy())
            with T.record() as tape:
                if path == "dense":
                    out = A.masked_attention(q, k, v, mask)
                else:
                    out = A.banded_attention(q, k, v, window)
                loss = (out * out).mean()
            T.backward(tape, loss)
            return q.grad, k.grad, v.grad

        rng_q = rng.standard_normal((2, 2, n, 3))
        rng_k = rng.standard_normal((2, 2, n, 3))
        rng_v = rng.standard_normal((2, 2, n, 3))
        for a, b in zip(grads("dense"), grads("banded")):
            assert np.abs(a - b).max() < 1e-9

    def test_registered_as_primitive(self):
        rng = np.random.default_rng(2)
        q, k, v = _qkv(rng, n=5)
        via_dispatch = T.primitive_forward("banded_attention", (q, k, v),
                                           {"window": 3})
        direct = A.banded_attention(q, k, v, 3)
        assert np.array_equal(via_dispatch.data, direct.data)


class TestLwtLayer:
    def test_zero_weights_give_identity(self):
        rng = np.random.default_rng(0)
        layer = A.LwtLayer(rng, d_model=4, heads=2, window=3)
        for name in ("w_q", "w_k", "w_v", "w_o", "ffn_w1", "ffn_w2"):
            getattr(layer, name).data[...] = 0.0
        x = T.constant(rng.standard_normal((2, 5, 4)))
        out = layer.forward(x)
        np.testing.assert_array_equal(out.data, x.data)

    @pytest.mark.parametrize("depth", [1, 2, 3])
    def test_receptive_field_bound(self, depth):
        rng = np.random.default_rng(depth)
        layers = [A.LwtLayer(rng, d_model=4, heads=2, window=3)
                  for _ in range(depth)]
        n, j, half = 12, 5, 1

        def run(arr):
            x = T.constant(arr)
            for layer in layers:
                x = layer.forward(x)
            return x.data

        base = rng.standard_normal((1, n, 4))
        bumped = base.copy()
        bumped[0, j] += 1.0
        y0, y1 = run(base), run(bumped)
        for i in range(n):
            if abs(i - j) > depth * half:
                assert np.array_equal(y0[0, i], y1[0, i]), f"leak at {i}"
        assert not np.array_equal(y0[0, j], y1[0, j])

    def test_gradients_vs_fd(self):
        rng = np.random.default_rng(2)
        layer = A.LwtLayer(rng, d_model=4, heads=2, window=3)
        x = T.constant(rng.standard_normal((1, 5, 4)))
        err = T.gradient_check(lambda: layer.forward(x).mean(),
                               list(layer.parameters().values()))
        assert err < 1e-4

    def test_rejects_indivisible_heads(self):
        with pytest.raises(ParameterError):
            A.LwtLayer(np.random.default_rng(0), d_model=6, heads=4)

    def test_rejects_wrong_width(self):
        layer = A.LwtLayer(np.random.default_rng(0), d_model=4, heads=2)
        with pytest.raises(DimensionError):
            layer.forward(T.constant(np.zeros((1, 5, 6))))


class TestVariationsExpert:
    def test_default_token_count_shape(self):
        rng = np.random.default_rng(0)
        expert = A.VariationsExpert(rng, patch_len=16, d_model=8, depth=2)
        pts = T.constant(rng.standard_normal((3, 41, 16)))
        assert expert.forward(pts).shape == (3, 41, 8)

    def test_positional_sensitivity(self):
        rng = np.random.default_rng(1)
        expert = A.VariationsExpert(rng, patch_len=4, d_model=8, depth=1,
                                    window=21)
        pts = rng.standard_normal((1, 6, 4))
        base = expert.forward(T.constant(pts)).data
        swapped = pts.copy()
        swapped[0, [0, 5]] = swapped[0, [5, 0]]
        moved = expert.forward(T.constant(swapped)).data
        assert not np.allclose(base[0, 1:5], moved[0, 1:5])

    def test_full_window_equals_unmasked_encoder(self):
        rng = np.random.default_rng(2)
        n = 7
        expert = A.VariationsExpert(rng, patch_len=4, d_model=8, depth=2,
                                    window=2 * n - 1)
        pts = T.constant(rng.standard_normal((2, n, 4)))
        auto = expert.forward(pts).data

        x = T.matmul(pts, expert.w_embed) + expert.b_embed
        x = x + T.constant(A.sinusoidal_positions(n, 8))
        for layer in expert.layers:
            x = layer.forward(x, mask=None)
        manual = T.layer_norm(x, expert.ln_g, expert.ln_b).data
        assert np.array_equal(auto, manual)

    def test_banded_matches_dense_end_to_end(self):
        rng = np.random.default_rng(3)
        expert = A.VariationsExpert(rng, patch_len=6, d_model=8, depth=3,
                                    window=5)
        pts = T.constant(rng.standard_normal((2, 11, 6)))
        dense = expert.forward(pts).data
        banded = expert.forward(pts, banded=True).data
        assert np.abs(dense - banded).max() < 1e-9

    def test_parameter_names_unique(self):
        expert = A.VariationsExpert(np.random.default_rng(4), 4, 8)
        names = list(expert.parameters("short."))
        assert len(names) == len(set(names))
        assert all(n.startswith("short.") for n in names)

    def test_rejects_wrong_patch_len(self):
        expert = A.VariationsExpert(np.random.default_rng(5), 4, 8)
        with pytest.raises(DimensionError):
            expert.forward(T.constant(np.zeros((1, 5, 3))))
