import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from anticopy import barcode as bc
from anticopy import ggd
from anticopy import channel as ch
from anticopy.channel import ChannelConfig, Equalizer


def lcac_render(rows=47, seed=0):
    lay = bc.Layout(rows, rows, 32, bc.LCAC_CONSTELLATION, training_border=1)
    bits = bc.generate_message(lay.capacity_bits, seed)
    return lay, bc.render(lay.place(bits), 32)


class TestConfig:
    def test_defaults(self):
        cfg = ChannelConfig()
        assert (cfg.tone_gamma, cfg.dot_gain, cfg.blur_sigma) == (0.95, 4.0, 0.6)
        assert cfg.noise == ggd.GgdParams(0, 8, 1.6)

    @pytest.mark.parametrize(
        "kw",
        [
            {"noise": ggd.GgdParams(1, 8, 1.6)},
            {"blur_sigma": -1},
            {"tone_gamma": 0},
            {"contrast": 0},
            {"mottle_sigma": -1},
            {"jitter": -0.1},
            {"mottle_scale": 0},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ChannelConfig(**kw)

    def test_presets(self):
        assert ch.preset("lcac") is ch.LCAC_CHANNEL
        assert ch.preset("2lqr") is ch.LQR2_CHANNEL
        assert ch.preset("lcac-phone").noise.sigma < ch.LCAC_CHANNEL.noise.sigma
        assert ch.preset("2lqr-phone").noise.sigma < ch.LQR2_CHANNEL.noise.sigma
        with pytest.raises(KeyError):
            ch.preset("fax")

    def test_with_noise_sigma(self):
        assert ChannelConfig().with_noise_sigma(3.0).noise == ggd.GgdParams(0, 3.0, 1.6)


class TestPass:
    def test_identity(self):
        img = np.random.default_rng(0).uniform(0, 255, (40, 50))
        out = ch.print_capture(img, ch.IDENTITY, 1)
        assert np.abs(out - img).max() < 1e-6

    def test_dot_gain_arithmetic(self):
        cfg = ChannelConfig(tone_gamma=1.0, dot_gain=10.0, blur_sigma=0.0, noise=ggd.GgdParams(0, 1e-12, 2))
        out = ch.print_capture(np.full((8, 8), 128.0), cfg, 0)
        assert np.allclose(out, 118.0, atol=1e-6)

    def test_contrast_arithmetic(self):
        cfg = ChannelConfig(tone_gamma=1.0, dot_gain=0.0, blur_sigma=0.0, contrast=0.5, noise=ggd.GgdParams(0, 1e-12, 2))
        out = ch.print_capture(np.array([[0.0, 128.0, 255.0]]), cfg, 0)
        assert np.allclose(out, [[64.0, 128.0, 191.5]], atol=1e-6)

    def test_noise_variance(self):
        sigma = 8.0
        img = np.full((1000, 1000), 128.0)
        out = ch.print_capture(img, ch.noise_only(sigma, 1.6), 42)
        assert abs(np.var(out - img) / sigma**2 - 1) <= 0.05

    def test_deterministic(self):
        _, img = lcac_render(10)
        a = ch.spc(img, ch.LCAC_CHANNEL, 7)
        assert np.array_equal(a, ch.spc(img, ch.LCAC_CHANNEL, 7))
        assert not np.array_equal(a, ch.spc(img, ch.LCAC_CHANNEL, 8))

    @given(st.integers(0, 2**32 - 1), st.floats(0.5, 60), st.floats(0.3, 3))
    def test_output_in_range(self, seed, sigma, gamma):
        img = np.random.default_rng(seed).choice([0.0, 255.0], (24, 24))
        cfg = ChannelConfig(noise=ggd.GgdParams(0, sigma, gamma), mottle_sigma=5.0, jitter=0.2)
        out = ch.print_capture(img, cfg, seed)
        assert out.min() >= 0 and out.max() <= 255

    def test_scaled_capture(self):
        img = np.full((10, 12), 200.0)
        out = ch.print_capture(img, ch.IDENTITY, 0, scale=3)
        assert out.shape == (30, 36) and np.allclose(out, 200.0)


class TestSpcDpc:
    def test_dpc_identity(self):
        _, img = lcac_render(8)
        assert np.abs(ch.dpc(img, ch.IDENTITY, ch.IDENTITY, 3) - img).max() < 1e-6

    def test_dpc_variance_exceeds_spc_on_lcac(self):
        _, img = lcac_render()
        for seed in range(20):
            s = ch.spc(img, ch.LCAC_CHANNEL, seed)
            d = ch.dpc(img, ch.LCAC_CHANNEL, ch.LCAC_CHANNEL, seed)
            assert np.var(d - img) > np.var(s - img)

    def test_dpc_variance_ordering_default_config(self):
        _, img = lcac_render(15)
        cfg = ChannelConfig()
        for seed in range(100):
            assert np.var(ch.dpc(img, cfg, cfg, seed) - img) > np.var(ch.spc(img, cfg, seed) - img)


class TestEqualizer:
    def test_identity_fit(self):
        x = np.linspace(0, 255, 50)
        eq = ch.train_equalizer(x, x)
        assert np.allclose(eq.coeffs, [0, 1, 0, 0], atol=1e-9)

    def test_gain_two(self):
        ideal = np.linspace(20, 230, 40)
        eq = ch.train_equalizer(ideal / 2, ideal)
        xs = np.linspace(10, 115, 30)
        assert np.allclose(eq(xs), 2 * xs, atol=1e-8)

    def test_too_few_points(self):
        with pytest.raises(ch.EqualizerError):
            ch.train_equalizer([1, 2, 3, 3], [1, 2, 3, 3])

    def test_unpaired(self):
        with pytest.raises(ch.EqualizerError):
            ch.train_equalizer([1, 2, 3, 4], [1, 2, 3])

    def test_identity_equalizer(self):
        img = np.random.default_rng(1).uniform(0, 255, (10, 10))
        eq = Equalizer(coeffs=np.array([0.0, 1.0]), domain=(0, 255))
        assert np.allclose(ch.equalize(img, eq), img)

    def test_clamp(self):
        eq = Equalizer(coeffs=np.array([300.0, 0.0]), domain=(0, 255))
        assert ch.equalize(np.array([10.0]), eq)[0] == 255.0

    def test_inverts_linear_channel(self):
        lay = bc.Layout(12, 12, 4, bc.LCAC_CONSTELLATION, training_border=1)
        img = bc.render(lay.place(bc.generate_message(lay.capacity_bits, 0)), 4)
        captured = 0.5 * img
        out = ch.equalize_capture(captured, lay)
        assert np.abs(out - img).max() < 1

    def test_linear_continuation_outside_span(self):
        x = np.array([10.0, 20, 30, 40, 50])
        eq = ch.train_equalizer(x, 3 * x + 1)
        assert eq(np.array([0.0, 100.0])) == pytest.approx([1.0, 301.0])

    def test_isotonic_fallback(self):
        x = np.array([0.0, 1, 2, 3, 4, 5, 6, 7])
        y = np.array([0.0, 10, 0, 10, 0, 10, 0, 10])
        eq = ch.train_equalizer(x, y)
        assert eq.coeffs is None
        out = eq(np.linspace(-2, 9, 200))
        assert np.all(np.diff(out) >= -1e-12)

    @pytest.mark.filterwarnings("ignore::numpy.exceptions.RankWarning")
    @given(st.lists(st.tuples(st.floats(0, 255), st.floats(0, 255)), min_size=6, max_size=60))
    def test_always_monotone(self, pairs):
        x, y = map(np.array, zip(*pairs))
        if np.unique(x).size < 4:
            return
        eq = ch.train_equalizer(x, y)
        out = eq(np.linspace(0, 255, 256))
        assert np.all(np.diff(out) >= -1e-9)

    def test_flat_capture_is_unreadable(self):
        lay = bc.Layout(8, 8, 2, bc.LCAC_CONSTELLATION, training_border=1)
        with pytest.raises(bc.DecodeError):
            ch.equalize_capture(np.full(lay.shape_px, 128.0), lay)

    def test_binary_layout_untouched(self):
        lay = bc.Layout(6, 6, 2, bc.BINARY_CONSTELLATION, training_border=1)
        img = np.random.default_rng(0).uniform(0, 255, lay.shape_px)
        assert np.array_equal(ch.equalize_capture(img, lay), img)


class TestTrainingSymbols:
    def test_all_levels_balanced(self):
        lay = bc.Layout(47, 47, 32, bc.LCAC_CONSTELLATION, training_border=1)
        pos, ideal = ch.training_symbols(lay)
        vals, counts = np.unique(ideal, return_counts=True)
        assert vals.tolist() == [40, 100, 160, 220]
        assert counts.max() - counts.min() <= 1
        assert not set(pos) & set(lay.payload_positions)
        assert pos.size >= 4 * (3 + 1)

    def test_equalized_bias_per_level(self):
        cfg = ChannelConfig()
        lay, img = lcac_render()
        ideal = bc.module_means(img, 47, 47, 32).ravel()[lay.payload_positions]
        acc = np.zeros_like(ideal)
        n = 8
        for seed in range(n):
            y = ch.equalize_capture(ch.print_capture(img, cfg, seed), lay)
            acc += bc.module_means(y, 47, 47, 32).ravel()[lay.payload_positions]
        acc /= n
        for level in bc.LCAC_CONSTELLATION.levels:
            assert abs(acc[ideal == level].mean() - level) < 2


class TestNormalizeLevels:
    def test_maps_two_levels(self):
        lay = bc.Layout(8, 8, 2, bc.BINARY_CONSTELLATION)
        grid = lay.place(bc.generate_message(lay.capacity_bits, 1))
        img = 50 + 0.4 * bc.render(grid, 2)
        out = ch.normalize_levels(img, lay)
        assert np.allclose(out, bc.render(grid, 2))
