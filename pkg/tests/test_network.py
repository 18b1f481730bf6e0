"""End-to-end segmentation and denoiser networks."""

import numpy as np
import pytest

from udhf2 import tensor as T
from udhf2.config import RunConfig
from udhf2.network import (DenoiserNetwork, SegmentationNetwork,
                           sinusoidal_time_embedding)


def tiny_cfg(**kw):
    cfg = RunConfig()
    cfg.channels = [4, 4, 4, 4]
    cfg.blocks_per_stage = 1
    cfg.heads = 2
    cfg.groups = 2
    cfg.points = 4
    cfg.window = 4
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg


class TestSegmentationNetwork:
    def test_logits_at_input_resolution(self):
        net = SegmentationNetwork(tiny_cfg(), 6, np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(2, 3, 32, 32)).astype(np.float32)
        assert net(x).shape == (2, 6, 32, 32)

    def test_probs_normalized(self):
        net = SegmentationNetwork(tiny_cfg(), 5, np.random.default_rng(2))
        x = np.random.default_rng(3).normal(size=(1, 3, 32, 32)).astype(np.float32)
        probs = net.predict_probs(x).data
        assert probs.min() >= 0
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    def test_zero_head_uniform_probs(self):
        net = SegmentationNetwork(tiny_cfg(), 4, np.random.default_rng(4),
                                  zero_head=True)
        x = np.random.default_rng(5).normal(size=(1, 3, 32, 32)).astype(np.float32)
        np.testing.assert_allclose(net.predict_probs(x).data, 0.25, atol=1e-7)

    def test_every_parameter_receives_gradient(self):
        net = SegmentationNetwork(tiny_cfg(), 3, np.random.default_rng(6))
        x = np.random.default_rng(7).normal(size=(1, 3, 32, 32)).astype(np.float32)
        with T.record():
            out = net(x)
            loss = (out * out).mean()
        loss.backward()
        dead = [n for n, p in net.named_parameters() if p.grad is None]
        assert dead == []

    def test_ablation_configs_run(self):
        x = np.random.default_rng(8).normal(size=(1, 3, 32, 32)).astype(np.float32)
        for kw in ({"non_stationary_only": True}, {"stationary_only": True},
                   {"decoder": "plain"}, {"hftm_vs_plain": True}):
            net = SegmentationNetwork(tiny_cfg(**kw), 6, np.random.default_rng(9))
            assert net(x).shape == (1, 6, 32, 32), kw


class TestTimeEmbedding:
    def test_shape_and_constancy(self):
        emb = sinusoidal_time_embedding(7.0, 8, 4, 6, 2)
        assert emb.shape == (2, 8, 4, 6)
        # each channel is a constant plane
        assert np.all(emb == emb[:, :, :1, :1])

    def test_sin_cos_split(self):
        t, ch = 3.0, 8
        emb = sinusoidal_time_embedding(t, ch, 1, 1, 1)[0, :, 0, 0]
        half = ch // 2
        freqs = np.exp(-np.log(10000.0) * np.arange(half) / (half - 1))
        np.testing.assert_allclose(emb[:half], np.sin(t * freqs), atol=1e-6)
        np.testing.assert_allclose(emb[half:], np.cos(t * freqs), atol=1e-6)

    def test_distinct_timesteps_distinct_codes(self):
        codes = [sinusoidal_time_embedding(float(t), 16, 1, 1, 1).ravel()
                 for t in range(0, 40, 5)]
        for i in range(len(codes)):
            for j in range(i + 1, len(codes)):
                assert np.abs(codes[i] - codes[j]).max() > 1e-4

    def test_t_zero_is_sin0_cos0(self):
        emb = sinusoidal_time_embedding(0.0, 4, 1, 1, 1)[0, :, 0, 0]
        np.testing.assert_allclose(emb, [0.0, 0.0, 1.0, 1.0], atol=1e-7)

    def test_dtype_follows_request(self):
        assert sinusoidal_time_embedding(1.0, 4, 2, 2, 1, np.float64).dtype == np.float64


class TestDenoiserNetwork:
    def test_output_matches_state_channels(self):
        net = DenoiserNetwork(tiny_cfg(), 3, 6, np.random.default_rng(0))
        cond = np.random.default_rng(1).normal(size=(2, 3, 32, 32)).astype(np.float32)
        h_t = np.random.default_rng(2).normal(size=(2, 6, 32, 32))
        out = net(cond, h_t, 5)
        assert out.shape == (2, 6, 32, 32)

    def test_stays_in_conditioning_dtype(self):
        net = DenoiserNetwork(tiny_cfg(), 3, 2, np.random.default_rng(3))
        cond = np.zeros((1, 3, 32, 32), dtype=np.float32)
        h_t = np.zeros((1, 2, 32, 32), dtype=np.float64)
        assert net(cond, h_t, 1).data.dtype == np.float32

    def test_timestep_changes_output(self):
        net = DenoiserNetwork(tiny_cfg(), 3, 2, np.random.default_rng(4))
        cond = np.random.default_rng(5).normal(size=(1, 3, 32, 32)).astype(np.float32)
        h_t = np.random.default_rng(6).normal(size=(1, 2, 32, 32)).astype(np.float32)
        a = net(cond, h_t, 1).data
        b = net(cond, h_t, 40).data
        assert np.abs(a - b).max() > 1e-6

    def test_pair_conditioning_width(self):
        net = DenoiserNetwork(tiny_cfg(), 6, 1, np.random.default_rng(7))
        cond = np.random.default_rng(8).normal(size=(1, 6, 32, 32)).astype(np.float32)
        h_t = np.zeros((1, 1, 32, 32), dtype=np.float32)
        assert net(cond, h_t, 3).shape == (1, 1, 32, 32)
