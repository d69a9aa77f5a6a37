"""Block recipes, embeddings, positional defaults, and the linear baseline."""
import numpy as np
import pytest

from sst import tensor as T
from sst.data import revin_stats
from sst.errors import ConfigError, DimensionError
from sst.patching import PatchSpec
from sst.variants import (RECIPES, ConvEmbed, DLinearModel, PatchEmbed,
                          VariantModel, build_variant, conv_embed,
                          default_positional, dlinear_baseline, pi_embed)


def small_variant(name, embedding="pi", depth=2, **overrides):
    kwargs = dict(variant=name, embedding=embedding, variates=2, lookback=48,
                  horizon=8, d_model=8, depth=depth, heads=2,
                  patch_spec=PatchSpec(8, 4), state_size=4, conv_width=3)
    kwargs.update(overrides)
    return build_variant(np.random.default_rng(0), **kwargs)


class TestRecipes:
    @pytest.mark.parametrize("name,expected", [
        ("transformer", ["attention", "ffn"]),
        ("mamba", ["mamba", "mamba"]),
        ("attention_mamba", ["attention", "mamba"]),
        ("mamba_attention", ["mamba", "attention"]),
        ("mambaformer", ["mamba", "attention", "mamba"]),
    ])
    def test_declared_order(self, name, expected):
        model = small_variant(name, depth=1)
        assert model.sublayer_kinds == expected
        model = small_variant(name, depth=2)
        assert model.sublayer_kinds == expected * 2

    @pytest.mark.parametrize("name", sorted(RECIPES))
    def test_forward_trace_matches_declaration(self, name):
        model = small_variant(name)
        x = T.constant(np.random.default_rng(1).standard_normal((2, 48, 2)))
        model.forward_normalized(x)
        assert model.sublayer_trace == model.sublayer_kinds

    def test_unknown_variant_rejected(self):
        with pytest.raises(ConfigError):
            small_variant("retnet")

    def test_unknown_embedding_rejected(self):
        with pytest.raises(ConfigError):
            small_variant("mamba", embedding="fourier")

    def test_ffn_only_in_transformer(self):
        for name, recipe in RECIPES.items():
            assert ("ffn" in recipe) == (name == "transformer")


class TestPositionalRule:
    @pytest.mark.parametrize("name,expected", [
        ("transformer", True), ("attention_mamba", True),
        ("mamba", False), ("mamba_attention", False), ("mambaformer", False),
    ])
    def test_default_follows_first_sublayer(self, name, expected):
        assert default_positional(name) is expected
        assert small_variant(name).use_positional is expected

    def test_override(self):
        model = small_variant("mamba", use_positional=True)
        assert model.use_positional is True

    def test_positional_changes_output(self):
        with_pos = small_variant("mamba", use_positional=True)
        without = small_variant("mamba", use_positional=False)
        named = with_pos.parameters()
        for name, q in without.parameters().items():
            q.data[...] = named[name].data
        x = T.constant(np.random.default_rng(2).standard_normal((1, 48, 2)))
        assert not np.array_equal(with_pos.forward_normalized(x).data,
                                  without.forward_normalized(x).data)


class TestConvEmbed:
    def test_zero_weights_give_bias_rows(self):
        rng = np.random.default_rng(0)
        emb = ConvEmbed(rng, variates=3, d_model=5)
        for w in (emb.w_left, emb.w_center, emb.w_right):
            w.data[...] = 0.0
        emb.bias.data[...] = np.arange(5.0)
        out = conv_embed(rng.standard_normal((10, 3)), emb)
        np.testing.assert_array_equal(out.data, np.tile(np.arange(5.0), (10, 1)))

    def test_identity_center_tap_reproduces_input(self):
        rng = np.random.default_rng(1)
        emb = ConvEmbed(rng, variates=4, d_model=4)
        emb.w_left.data[...] = 0.0
        emb.w_right.data[...] = 0.0
        emb.w_center.data[...] = np.eye(4)
        emb.bias.data[...] = 0.0
        x = rng.standard_normal((12, 4))
        np.testing.assert_array_equal(conv_embed(x, emb).data, x)

    def test_paper_scale_shape(self):
        rng = np.random.default_rng(2)
        emb = ConvEmbed(rng, variates=7, d_model=64)
        out = conv_embed(rng.standard_normal((196, 7)), emb)
        assert out.shape == (196, 64)

    def test_one_token_per_step_locality(self):
        rng = np.random.default_rng(3)
        emb = ConvEmbed(rng, variates=2, d_model=4)
        x = rng.standard_normal((9, 2))
        base = conv_embed(x, emb).data.copy()
        x2 = x.copy()
        x2[5] += 1.0
        moved = conv_embed(x2, emb).data
        for t in range(9):
            if abs(t - 5) > 1:
                assert np.array_equal(base[t], moved[t])
            else:
                assert not np.array_equal(base[t], moved[t])

    def test_rejects_wrong_variates(self):
        emb = ConvEmbed(np.random.default_rng(0), variates=3, d_model=4)
        with pytest.raises(DimensionError):
            conv_embed(np.zeros((10, 4)), emb)


class TestPiEmbed:
    def test_token_count_from_patch_formula(self):
        rng = np.random.default_rng(0)
        emb = PatchEmbed(rng, PatchSpec(16, 8), d_model=6)
        tokens, _ = pi_embed(rng.standard_normal((336, 3)), emb)
        assert tokens.shape == (3, 41, 6)

    def test_constant_input_gives_bias_tokens(self):
        rng = np.random.default_rng(1)
        emb = PatchEmbed(rng, PatchSpec(8, 4), d_model=5)
        emb.b.data[...] = np.arange(5.0)
        tokens, _ = pi_embed(np.full((48, 2), 3.7), emb)
        np.testing.assert_allclose(
            tokens.data, np.tile(np.arange(5.0), (2, 11, 1)), atol=1e-9)

    def test_stats_round_trip(self):
        rng = np.random.default_rng(2)
        emb = PatchEmbed(rng, PatchSpec(8, 4), d_model=5)
        window = rng.standard_normal((48, 2)) * 4.0 + 10.0
        _, stats = pi_embed(window, emb)
        expect = revin_stats(window)
        np.testing.assert_array_equal(stats.mean, expect.mean)
        np.testing.assert_array_equal(stats.std, expect.std)
        recovered = ((window - stats.mean) / stats.std) * stats.std + stats.mean
        np.testing.assert_allclose(recovered, window, atol=1e-9)

    def test_rejects_bad_rank(self):
        emb = PatchEmbed(np.random.default_rng(0), PatchSpec(8, 4), d_model=5)
        with pytest.raises(DimensionError):
            pi_embed(np.zeros(48), emb)


class TestVariantModel:
    @pytest.mark.parametrize("name", sorted(RECIPES))
    def test_pi_forward_shape(self, name):
        model = small_variant(name)
        x = T.constant(np.random.default_rng(0).standard_normal((3, 48, 2)))
        assert model.forward_normalized(x).shape == (3, 8, 2)

    @pytest.mark.parametrize("name", ["transformer", "mambaformer"])
    def test_conv_forward_shape(self, name):
        model = small_variant(name, embedding="conv")
        x = T.constant(np.random.default_rng(1).standard_normal((3, 48, 2)))
        assert model.forward_normalized(x).shape == (3, 8, 2)

    def test_revin_flag_tracks_embedding(self):
        assert small_variant("mamba").uses_revin is True
        assert small_variant("mamba", embedding="conv").uses_revin is False

    def test_forecast_denormalizes_pi(self):
        model = small_variant("mamba")
        rng = np.random.default_rng(3)
        look = rng.standard_normal((48, 2)) * 50.0 + 1000.0
        out = model.forecast(look)
        assert out.shape == (8, 2)
        # a normalized-scale output would sit near zero, not near the data
        assert np.abs(out).max() > 100.0

    def test_forecast_conv_raw_scale(self):
        model = small_variant("transformer", embedding="conv")
        out = model.forecast(np.random.default_rng(4).standard_normal((48, 2)))
        assert out.shape == (8, 2)
        assert np.all(np.isfinite(out))

    def test_determinism(self):
        model = small_variant("mambaformer")
        look = np.random.default_rng(5).standard_normal((48, 2))
        assert np.array_equal(model.forecast(look), model.forecast(look))

    def test_heads_must_divide_width(self):
        with pytest.raises(ConfigError):
            small_variant("transformer", heads=3)

    def test_gradients_sampled(self):
        from conftest import sampled_gradient_check
        model = small_variant("mambaformer", depth=1)
        rng = np.random.default_rng(6)
        x = np.random.default_rng(7).standard_normal((2, 48, 2))

        def loss():
            out = model.forward_normalized(T.constant(x))
            return (out * out).mean()

        err = sampled_gradient_check(loss, model.parameters().values(), rng,
                                     samples=30)
        assert err < 1e-4


class TestDLinear:
    def test_zero_weights_zero_forecast(self):
        model = DLinearModel(np.random.default_rng(0), variates=2, lookback=32,
                             horizon=8)
        for p in model.parameters().values():
            p.data[...] = 0.0
        x = T.constant(np.random.default_rng(1).standard_normal((2, 32, 2)))
        np.testing.assert_array_equal(model.forward_normalized(x).data, 0.0)

    def test_least_squares_fit_on_ramp(self):
        from sst.data import moving_average_decompose
        lookback, horizon, k = 32, 8, 7
        series = 0.5 * np.arange(300.0)
        starts = np.arange(0, 300 - lookback - horizon, 3)
        feats, targs = [], []
        for s in starts:
            window = series[s:s + lookback]
            trend, resid = moving_average_decompose(window, k)
            feats.append(np.concatenate([trend, resid, [1.0]]))
            targs.append(series[s + lookback:s + lookback + horizon])
        coef, *_ = np.linalg.lstsq(np.asarray(feats), np.asarray(targs),
                                   rcond=None)

        model = DLinearModel(np.random.default_rng(0), variates=1,
                             lookback=lookback, horizon=horizon,
                             decomp_window=k)
        model.w_trend.data[...] = coef[:lookback]
        model.w_resid.data[...] = coef[lookback:2 * lookback]
        model.b_trend.data[...] = coef[2 * lookback]
        model.b_resid.data[...] = 0.0

        errs = []
        for s in starts:
            x = T.constant(series[s:s + lookback][None, :, None])
            pred = model.forward_normalized(x).data[0, :, 0]
            errs.append(np.mean((pred - series[s + lookback:s + lookback + horizon]) ** 2))
        assert max(errs) < 1e-12

    def test_decomposition_feeds_both_branches(self):
        rng = np.random.default_rng(2)
        model = DLinearModel(rng, variates=1, lookback=32, horizon=4,
                             decomp_window=7)
        x = T.constant(rng.standard_normal((1, 32, 1)).cumsum(axis=1))
        base = model.forward_normalized(x).data.copy()
        model.w_trend.data[...] = 0.0
        no_trend = model.forward_normalized(x).data
        model.w_resid.data[...] = 0.0
        neither = model.forward_normalized(x).data
        assert not np.array_equal(base, no_trend)
        assert not np.array_equal(no_trend, neither)

    def test_even_decomp_window_rejected(self):
        with pytest.raises(ConfigError):
            DLinearModel(np.random.default_rng(0), variates=1, lookback=16,
                         horizon=4, decomp_window=8)

    def test_builder_and_revin_flag(self):
        model = dlinear_baseline(np.random.default_rng(0), variates=2,
                                 lookback=16, horizon=4)
        assert model.uses_revin is True
        look = np.random.default_rng(1).standard_normal((16, 2)) * 9.0 + 50.0
        assert model.forecast(look).shape == (4, 2)
