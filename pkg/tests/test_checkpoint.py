"""Tests for the checkpoint container and its manifest validation."""

import numpy as np
import pytest
import torch

from ampd.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from ampd.config import SystemConfig
from ampd.order_net import OrderClassifier, build_mop
from ampd.transceiver import build_decoder, build_transmitter


def cfg_small():
    return SystemConfig(num_antennas=4, num_users=2, max_order=2, rate_req=3,
                        user_center_angles=(-20.0, 20.0))


def test_precoder_roundtrip(tmp_path):
    cfg = cfg_small()
    net = build_transmitter(cfg, seed=0)
    save_checkpoint(tmp_path / "tx", net)
    back = load_checkpoint(tmp_path / "tx", cfg)
    h_re, h_im = torch.randn(2, 4, 2), torch.randn(2, 4, 2)
    s = torch.randn(2, 2)
    net.eval()
    assert torch.equal(net(h_re, h_im, s), back(h_re, h_im, s))


def test_decoder_roundtrip(tmp_path):
    cfg = cfg_small()
    net = build_decoder(cfg, seed=1)
    save_checkpoint(tmp_path / "dec", net)
    back = load_checkpoint(tmp_path / "dec", cfg)
    inp = torch.randn(3, 2 + 2 * 4)
    net.eval()
    assert torch.equal(net(inp), back(inp))


def test_mop_roundtrip_records_enumeration(tmp_path):
    cfg = cfg_small()
    net = build_mop(cfg, 3, seed=2)
    save_checkpoint(tmp_path / "mop", net)
    back = load_checkpoint(tmp_path / "mop", cfg, num_combos=3)
    x = OrderClassifier.make_input(torch.randn(2, 4, 2), torch.randn(2, 4, 2))
    net.eval()
    assert torch.equal(net(x), back(x))


def test_config_mismatch_rejected(tmp_path):
    cfg = cfg_small()
    save_checkpoint(tmp_path / "tx", build_transmitter(cfg, seed=3))
    other = SystemConfig(num_antennas=8, num_users=2, max_order=2, rate_req=3,
                         user_center_angles=(-20.0, 20.0))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "tx", other)


def test_combo_count_mismatch_rejected(tmp_path):
    cfg = cfg_small()
    save_checkpoint(tmp_path / "mop", build_mop(cfg, 3, seed=4))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "mop", cfg, num_combos=4)


def test_nonfinite_weights_rejected(tmp_path):
    cfg = cfg_small()
    net = build_decoder(cfg, seed=5)
    with torch.no_grad():
        net.net[0].weight[0, 0] = float("nan")
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "bad", net)


def test_checkpoint_bytes_deterministic(tmp_path):
    cfg = cfg_small()
    for name in ("a", "b"):
        save_checkpoint(tmp_path / name, build_transmitter(cfg, seed=6))
    assert ((tmp_path / "a.weights.npz").read_bytes()
            == (tmp_path / "b.weights.npz").read_bytes())
    assert ((tmp_path / "a.manifest.json").read_bytes()
            == (tmp_path / "b.manifest.json").read_bytes())
