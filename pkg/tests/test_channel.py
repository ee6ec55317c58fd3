"""Tests for channel generation, the downlink model, and dataset files."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ampd.channel import (ChannelRealization, apply_channel, generate_channels,
                          load_dataset, save_dataset, snr_to_noise_var,
                          steering_vector)
from ampd.config import SystemConfig


def small_cfg(**kw):
    defaults = dict(num_antennas=4, num_users=2, max_order=2, rate_req=3,
                    user_center_angles=(-20.0, 20.0))
    defaults.update(kw)
    return SystemConfig(**defaults)


class TestSteeringVector:
    def test_broadside_all_ones(self):
        np.testing.assert_allclose(steering_vector(0.0, 4), np.ones(4))

    def test_endfire_alternates(self):
        np.testing.assert_allclose(steering_vector(90.0, 2), [1, -1], atol=1e-12)

    def test_thirty_degrees(self):
        # exp(j*pi*n*sin 30) = exp(j*pi*n/2): [1, j, -1]
        np.testing.assert_allclose(steering_vector(30.0, 3), [1, 1j, -1],
                                   atol=1e-12)

    def test_unit_modulus(self):
        v = steering_vector(37.3, 16)
        np.testing.assert_allclose(np.abs(v), 1.0)

    def test_rejects_empty_array(self):
        with pytest.raises(ValueError):
            steering_vector(0.0, 0)


class TestGenerateChannels:
    def test_single_path_structure(self):
        cfg = small_cfg()
        for chan in generate_channels(cfg, 20, seed=1):
            for k in range(cfg.num_users):
                expected = chan.path_gains[k] * steering_vector(
                    chan.path_angles[k], cfg.num_antennas)
                np.testing.assert_allclose(chan.matrix[:, k], expected,
                                           rtol=1e-12)

    def test_angles_within_spread(self):
        cfg = small_cfg(angle_spread_deg=5.0)
        centers = np.asarray(cfg.user_center_angles)
        for chan in generate_channels(cfg, 200, seed=2):
            assert np.all(chan.path_angles >= centers - 5.0)
            assert np.all(chan.path_angles <= centers + 5.0)

    def test_deterministic_given_seed(self):
        cfg = small_cfg()
        a = generate_channels(cfg, 10, seed=3)
        b = generate_channels(cfg, 10, seed=3)
        for ca, cb in zip(a, b):
            np.testing.assert_array_equal(ca.matrix, cb.matrix)

    def test_gain_power_is_unit(self):
        cfg = small_cfg(num_users=1, user_center_angles=(0.0,))
        gains = np.concatenate([c.path_gains for c in
                                generate_channels(cfg, 100_000, seed=4)])
        assert abs(np.mean(np.abs(gains) ** 2) - 1.0) < 0.02

    def test_rejects_bad_count(self):
        with pytest.raises(ValueError):
            generate_channels(small_cfg(), 0, seed=0)

    def test_finite(self):
        for chan in generate_channels(small_cfg(), 20, seed=5):
            assert np.all(np.isfinite(chan.matrix.real))
            assert np.all(np.isfinite(chan.matrix.imag))


class TestApplyChannel:
    def test_identity_column(self):
        h = ChannelRealization(np.eye(3, 1, dtype=complex), np.zeros(1),
                               np.ones(1))
        r = apply_channel(h, 2.0 * np.eye(3, 1)[:, 0], 0.0, seed=0)
        np.testing.assert_allclose(r, [2.0])

    def test_zero_input(self):
        h = generate_channels(small_cfg(), 1, seed=6)[0]
        r = apply_channel(h, np.zeros(4, dtype=complex), 0.0, seed=0)
        np.testing.assert_allclose(r, 0.0)

    def test_noise_variance(self):
        h = generate_channels(small_cfg(), 1, seed=7)[0]
        x = np.ones(4, dtype=complex)
        rng = np.random.default_rng(8)
        clean = apply_channel(h, x, 0.0, seed=0)
        samples = np.array([apply_channel(h, x, 0.1, rng) - clean
                            for _ in range(50_000)])
        var = np.mean(np.abs(samples) ** 2)
        assert abs(var - 0.1) < 0.005

    def test_dimension_mismatch(self):
        h = generate_channels(small_cfg(), 1, seed=9)[0]
        with pytest.raises(ValueError):
            apply_channel(h, np.ones(3, dtype=complex), 0.0, seed=0)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_zero_noise_linearity(self, seed):
        rng = np.random.default_rng(seed)
        h = generate_channels(small_cfg(), 1, seed=seed % 1000)[0]
        x = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        y = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        a, b = rng.standard_normal(2)
        lhs = apply_channel(h, a * x + b * y, 0.0, seed=0)
        rhs = (a * apply_channel(h, x, 0.0, seed=0)
               + b * apply_channel(h, y, 0.0, seed=0))
        np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-12)


class TestSnrToNoiseVar:
    @pytest.mark.parametrize("snr,p,expect", [(10.0, 1.0, 0.1),
                                              (0.0, 1.0, 1.0),
                                              (20.0, 4.0, 0.04)])
    def test_values(self, snr, p, expect):
        assert snr_to_noise_var(snr, p) == pytest.approx(expect, rel=1e-12)

    def test_rejects_nonpositive_power(self):
        with pytest.raises(ValueError):
            snr_to_noise_var(10.0, 0.0)


class TestDatasetFiles:
    def test_roundtrip(self, tmp_path):
        cfg = small_cfg()
        channels = generate_channels(cfg, 8, seed=11)
        path = tmp_path / "data"
        save_dataset(path, channels, cfg, seed=11,
                     splits={"train": [0, 6], "test": [6, 7], "val": [7, 8]})
        loaded, manifest = load_dataset(path)
        assert manifest["seed"] == 11
        assert manifest["splits"]["train"] == [0, 6]
        for orig, back in zip(channels, loaded):
            np.testing.assert_array_equal(orig.matrix, back.matrix)
            np.testing.assert_array_equal(orig.path_gains, back.path_gains)

    def test_byte_identical_given_seed(self, tmp_path):
        cfg = small_cfg()
        for name in ("a", "b"):
            save_dataset(tmp_path / name, generate_channels(cfg, 5, seed=12),
                         cfg, seed=12)
        assert ((tmp_path / "a.npz").read_bytes()
                == (tmp_path / "b.npz").read_bytes())
        assert ((tmp_path / "a.manifest.json").read_bytes()
                == (tmp_path / "b.manifest.json").read_bytes())
