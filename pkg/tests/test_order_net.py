"""Tests for the modulation-order combination classifier."""

import numpy as np
import pytest
import torch

from ampd.channel import generate_channels
from ampd.config import SystemConfig
from ampd.modulation import enumerate_combos
from ampd.order_net import OrderClassifier, build_mop, predict_orders, topk_indices


def cfg_full_shape():
    return SystemConfig(num_antennas=16, num_users=4, max_order=3, rate_req=8)


class TestBuildMop:
    def test_output_width_matches_combo_count(self):
        cfg = cfg_full_shape()
        combos = enumerate_combos(cfg.num_users, cfg.max_order, cfg.rate_req)
        net = build_mop(cfg, len(combos), seed=0)
        x = OrderClassifier.make_input(torch.randn(3, 16, 4),
                                       torch.randn(3, 16, 4))
        assert net(x).shape == (3, 50)

    def test_conv_stack_preserves_shape(self):
        cfg = cfg_full_shape()
        net = build_mop(cfg, 50, seed=1)
        x = OrderClassifier.make_input(torch.randn(2, 16, 4),
                                       torch.randn(2, 16, 4))
        assert net.convs(x).shape == (2, 4, 4, 16)

    def test_seeded_init_reproducible(self):
        cfg = cfg_full_shape()
        a = build_mop(cfg, 50, seed=5)
        b = build_mop(cfg, 50, seed=5)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_rejects_empty_label_space(self):
        with pytest.raises(ValueError):
            build_mop(cfg_full_shape(), 0, seed=0)


class TestPredictOrders:
    def test_probs_on_simplex(self):
        cfg = cfg_full_shape()
        net = build_mop(cfg, 50, seed=2)
        h = generate_channels(cfg, 1, seed=3)[0]
        out = predict_orders(net, h, 3)
        assert np.all(out.probs >= 0)
        assert abs(out.probs.sum() - 1.0) <= 1e-6
        assert len(out.topk) == 3

    def test_inference_deterministic_despite_dropout(self):
        cfg = cfg_full_shape()
        net = build_mop(cfg, 50, seed=4, dropout_rate=0.5)
        h = generate_channels(cfg, 1, seed=5)[0]
        a = predict_orders(net, h, 1)
        b = predict_orders(net, h, 1)
        np.testing.assert_array_equal(a.probs, b.probs)

    def test_k_out_of_range(self):
        cfg = cfg_full_shape()
        net = build_mop(cfg, 50, seed=6)
        h = generate_channels(cfg, 1, seed=7)[0]
        with pytest.raises(ValueError):
            predict_orders(net, h, 0)
        with pytest.raises(ValueError):
            predict_orders(net, h, 51)

    def test_predicted_combos_satisfy_constraints(self):
        cfg = cfg_full_shape()
        combos = enumerate_combos(cfg.num_users, cfg.max_order, cfg.rate_req)
        net = build_mop(cfg, len(combos), seed=8)
        for h in generate_channels(cfg, 5, seed=9):
            out = predict_orders(net, h, 3)
            for idx in out.topk:
                combo = combos[idx]
                assert sum(combo.orders) >= cfg.rate_req
                assert max(combo.orders) <= cfg.max_order


class TestTopkIndices:
    def test_simple(self):
        assert topk_indices(np.array([0.5, 0.3, 0.2]), 2) == [0, 1]

    def test_tie_smaller_index(self):
        assert topk_indices(np.array([0.25, 0.25, 0.5]), 2) == [2, 0]

    def test_nesting(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            probs = rng.dirichlet(np.ones(10))
            full = topk_indices(probs, 10)
            for k in range(1, 10):
                assert topk_indices(probs, k) == full[:k]
