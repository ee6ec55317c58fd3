"""Tests for the learned precoder/decoder networks and their contracts."""

import numpy as np
import pytest
import torch

from ampd.channel import generate_channels
from ampd.config import SystemConfig
from ampd.transceiver import (DecoderNet, DegenerateOutputError, PrecoderNet,
                              build_decoder, build_transmitter, decode,
                              decode_batch_messages, pack_decoder_input,
                              precode, preprocess_fuse, receive_batch,
                              transmit_batch)


def cfg_small():
    return SystemConfig(num_antennas=4, num_users=2, max_order=2, rate_req=3,
                        user_center_angles=(-20.0, 20.0))


def cfg_full_shape():
    return SystemConfig(num_antennas=16, num_users=4, max_order=3, rate_req=8)


class TestPreprocessFuse:
    def test_pure_imaginary_symbol(self):
        h = np.ones((3, 1), dtype=complex)
        fused = preprocess_fuse(h, np.array([1j]))
        np.testing.assert_allclose(fused[:, 0], np.pi / 2)

    def test_unit_symbols_leave_phases(self):
        rng = np.random.default_rng(0)
        h = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))
        fused = preprocess_fuse(h, np.ones(3, dtype=complex))
        np.testing.assert_allclose(fused, np.angle(h))

    def test_no_wrapping(self):
        fused = preprocess_fuse(np.array([[1j]]), np.array([-1.0 + 0j]))
        np.testing.assert_allclose(fused, [[3 * np.pi / 2]])

    def test_constant_columns_offset(self):
        rng = np.random.default_rng(1)
        h = rng.standard_normal((5, 2)) + 1j * rng.standard_normal((5, 2))
        s = np.exp(1j * rng.uniform(-np.pi, np.pi, 2))
        delta = preprocess_fuse(h, s) - np.angle(h)
        np.testing.assert_allclose(delta, np.broadcast_to(np.angle(s), delta.shape),
                                   atol=1e-12)


class TestPrecoderNet:
    def test_output_width_is_twice_antennas(self):
        cfg = cfg_full_shape()
        net = build_transmitter(cfg, seed=0)
        h_re = torch.randn(3, 16, 4)
        h_im = torch.randn(3, 16, 4)
        s_ang = torch.randn(3, 4)
        assert net(h_re, h_im, s_ang).shape == (3, 32)

    def test_seeded_init_reproducible(self):
        cfg = cfg_small()
        a = build_transmitter(cfg, seed=5)
        b = build_transmitter(cfg, seed=5)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_branch_depths(self):
        net = build_transmitter(cfg_small(), seed=0)
        conv_counts = [sum(1 for m in branch.modules()
                           if isinstance(m, torch.nn.Conv2d))
                       for branch in net.branches]
        assert conv_counts == [4, 8, 12, 12]

    def test_same_padding_preserves_shape(self):
        net = build_transmitter(cfg_small(), seed=1)
        x = net.fuse_inputs(torch.randn(2, 4, 2), torch.randn(2, 4, 2),
                            torch.randn(2, 2))
        assert x.shape == (2, 2, 2, 4)
        for branch in net.branches:
            assert branch(x).shape[-2:] == (2, 4)

    def test_power_normalization(self):
        cfg = cfg_small()
        net = build_transmitter(cfg, seed=2)
        h = generate_channels(cfg, 1, seed=3)[0]
        s = np.array([1j, -1.0])
        for power in (0.5, 1.0, 4.0):
            x = precode(net, h, s, power)
            assert abs(np.linalg.norm(x) ** 2 - power) <= 1e-6 * power

    def test_doubling_power_scales_sqrt2(self):
        cfg = cfg_small()
        net = build_transmitter(cfg, seed=4)
        h = generate_channels(cfg, 1, seed=5)[0]
        s = np.array([1.0, 1j])
        x1 = precode(net, h, s, 1.0)
        x2 = precode(net, h, s, 2.0)
        np.testing.assert_allclose(x2, np.sqrt(2) * x1, rtol=1e-5)

    def test_all_zero_weights_degenerate(self):
        cfg = cfg_small()
        net = build_transmitter(cfg, seed=6)
        with torch.no_grad():
            for p in net.parameters():
                p.zero_()
        h = generate_channels(cfg, 1, seed=7)[0]
        with pytest.raises(DegenerateOutputError):
            precode(net, h, np.array([1.0, 1.0]), 1.0)

    def test_amplitude_plane_switch(self):
        cfg = cfg_small()
        cfg.precoder_uses_amplitude = False
        net = build_transmitter(cfg, seed=8)
        x = net.fuse_inputs(torch.randn(1, 4, 2), torch.randn(1, 4, 2),
                            torch.randn(1, 2))
        assert x.shape[1] == 1
        h = generate_channels(cfg, 1, seed=9)[0]
        x = precode(net, h, np.array([1.0, -1.0]), 1.0)
        assert abs(np.linalg.norm(x) ** 2 - 1.0) < 1e-6


class _FixedLogitsDecoder(DecoderNet):
    """Decoder stub with a controllable output distribution."""

    def __init__(self, logits):
        super().__init__(num_antennas=2, max_order=2)
        self._logits = torch.as_tensor(logits, dtype=torch.float32)

    def forward(self, inp):
        return self._logits.expand(inp.shape[0], -1)


class TestDecoder:
    def test_probs_on_simplex(self):
        cfg = cfg_small()
        net = build_decoder(cfg, seed=0)
        h = generate_channels(cfg, 1, seed=1)[0]
        out = decode(net, h.matrix[:, 0], 0.7 - 0.2j, 2)
        assert np.all(out.probs >= 0)
        assert abs(out.probs.sum() - 1.0) <= 1e-6

    def test_restricted_argmax(self):
        # probabilities rise toward later entries, but only the first 2^M count
        net = _FixedLogitsDecoder(np.log([0.1, 0.2, 0.3, 0.4]))
        out = decode(net, np.zeros(2, dtype=complex), 0j, 1)
        assert out.decoded == 2

    def test_inference_deterministic(self):
        cfg = cfg_small()
        net = build_decoder(cfg, seed=2)
        h = generate_channels(cfg, 1, seed=3)[0]
        a = decode(net, h.matrix[:, 0], 0.1 + 0.9j, 2)
        b = decode(net, h.matrix[:, 0], 0.1 + 0.9j, 2)
        np.testing.assert_array_equal(a.probs, b.probs)

    def test_decoded_within_alphabet(self):
        cfg = cfg_small()
        net = build_decoder(cfg, seed=4)
        h = generate_channels(cfg, 1, seed=5)[0]
        rng = np.random.default_rng(6)
        for _ in range(20):
            r = complex(rng.standard_normal(), rng.standard_normal())
            for bits in (1, 2):
                out = decode(net, h.matrix[:, 0], r, bits)
                assert 1 <= out.decoded <= 2 ** bits

    def test_rejects_order_above_max(self):
        cfg = cfg_small()
        net = build_decoder(cfg, seed=7)
        h = generate_channels(cfg, 1, seed=8)[0]
        with pytest.raises(ValueError):
            decode(net, h.matrix[:, 0], 1.0 + 0j, 3)

    def test_user_isolation(self):
        # decoding of user 0 must not change when user 1's inputs change
        cfg = cfg_small()
        net = build_decoder(cfg, seed=9)
        torch.manual_seed(10)
        h_re, h_im = torch.randn(2, 5, 4, 2), torch.randn(2, 5, 4, 2)
        r_re, r_im = torch.randn(2, 5, 2), torch.randn(2, 5, 2)
        orders = torch.full((5, 2), 2, dtype=torch.long)
        a = decode_batch_messages(net, h_re[0], h_im[0], r_re[0], r_im[0], orders)
        h_re[1, :, :, 0] = h_re[0, :, :, 0]
        h_im[1, :, :, 0] = h_im[0, :, :, 0]
        r_re[1, :, 0] = r_re[0, :, 0]
        r_im[1, :, 0] = r_im[0, :, 0]
        b = decode_batch_messages(net, h_re[1], h_im[1], r_re[1], r_im[1], orders)
        assert torch.equal(a[:, 0], b[:, 0])


class TestBatchHelpers:
    def test_transmit_batch_power(self):
        cfg = cfg_small()
        net = build_transmitter(cfg, seed=11)
        x_re, x_im = transmit_batch(net, torch.randn(7, 4, 2),
                                    torch.randn(7, 4, 2), torch.randn(7, 2),
                                    power_budget=3.0)
        power = (x_re ** 2 + x_im ** 2).sum(dim=1)
        assert torch.allclose(power, torch.full((7,), 3.0), rtol=1e-5)

    def test_receive_batch_matches_numpy(self):
        rng = np.random.default_rng(12)
        h = rng.standard_normal((3, 4, 2)) + 1j * rng.standard_normal((3, 4, 2))
        x = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
        r_re, r_im = receive_batch(
            torch.as_tensor(h.real), torch.as_tensor(h.imag),
            torch.as_tensor(x.real), torch.as_tensor(x.imag))
        expected = np.einsum("bnk,bn->bk", h.conj(), x)
        np.testing.assert_allclose(r_re.numpy(), expected.real, rtol=1e-10)
        np.testing.assert_allclose(r_im.numpy(), expected.imag, rtol=1e-10)

    def test_pack_order(self):
        h_re = torch.tensor([[1.0, 2.0]])
        h_im = torch.tensor([[3.0, 4.0]])
        inp = pack_decoder_input(h_re, h_im, torch.tensor([5.0]),
                                 torch.tensor([6.0]))
        np.testing.assert_array_equal(inp.numpy(), [[5, 6, 1, 2, 3, 4]])
