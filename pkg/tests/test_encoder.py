"""Encoder pieces against loop oracles, plus stream bookkeeping."""

import numpy as np
import pytest

import oracles
from udhf2 import tensor as T
from udhf2.config import RunConfig
from udhf2.encoder import (CrossFrequencyConnect, DeformableHighFreqConv,
                           FrequencyStreamEncoder, ResamplePath,
                           StreamLayer, StreamProjector, WindowAttention)
from udhf2.errors import DimensionError, ParameterError, StructureError
from udhf2.tensor import Tensor


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


class TestStreamProjector:
    def test_output_grids_and_channels(self):
        rng = np.random.default_rng(0)
        proj = StreamProjector((4, 8, 16, 32), 3, 0, rng)
        comps = [np.random.default_rng(i).normal(size=(2, 3, 16, 16)).astype(np.float32)
                 for i in range(4)]
        streams = proj(comps)
        assert [s.shape for s in streams] == [
            (2, 4, 8, 8), (2, 8, 4, 4), (2, 16, 2, 2), (2, 32, 1, 1)]

    def test_extra_step_halves_once_more(self):
        rng = np.random.default_rng(0)
        proj = StreamProjector((4, 8, 16, 32), 3, 1, rng)
        comps = [np.zeros((1, 3, 32, 32), dtype=np.float32) for _ in range(4)]
        streams = proj(comps)
        assert [s.shape for s in streams] == [
            (1, 4, 8, 8), (1, 8, 4, 4), (1, 16, 2, 2), (1, 32, 1, 1)]

    def test_zero_input_zero_streams(self):
        proj = StreamProjector((4, 8, 16, 32), 3, 0, np.random.default_rng(0))
        comps = [np.zeros((1, 3, 16, 16), dtype=np.float32) for _ in range(4)]
        for s in proj(comps):
            assert np.all(s.data == 0)

    def test_linearity(self):
        proj4 = StreamProjector((4, 8, 8, 8), 2, 0, np.random.default_rng(0))
        comps = [np.random.default_rng(i).normal(size=(1, 2, 16, 16)) for i in range(4)]
        a = proj4(comps)
        b = proj4([3.0 * c for c in comps])
        for s_a, s_b in zip(a, b):
            np.testing.assert_allclose(s_b.data, 3.0 * s_a.data, rtol=1e-5, atol=1e-7)

    def test_wrong_count_rejected(self):
        proj = StreamProjector((4, 8, 16, 32), 3, 0, np.random.default_rng(0))
        with pytest.raises(DimensionError, match="4"):
            proj([np.zeros((1, 3, 16, 16))] * 3)

    def test_indivisible_component_rejected(self):
        proj = StreamProjector((4, 8, 16, 32), 3, 0, np.random.default_rng(0))
        comps = [np.zeros((1, 3, 12, 12), dtype=np.float32) for _ in range(4)]
        with pytest.raises(DimensionError, match="divisible"):
            proj(comps)


class TestWindowAttention:
    @pytest.mark.parametrize("seed,n,c,heads,L,h,w", [
        (0, 1, 4, 1, 2, 4, 4),
        (1, 2, 4, 2, 2, 2, 6),
        (2, 1, 6, 3, 3, 3, 6),
        (3, 1, 8, 2, 4, 4, 8),
    ])
    def test_matches_loop_oracle(self, seed, n, c, heads, L, h, w):
        rng = np.random.default_rng(seed)
        attn = WindowAttention(c, heads, L, rng)
        x = rng.normal(size=(n, c, h, w)).astype(np.float64)
        got = attn(Tensor(x)).data
        want = oracles.window_attention_reference(x, attn)
        np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-10)

    def test_windows_are_independent(self):
        rng = np.random.default_rng(4)
        attn = WindowAttention(4, 2, 4, rng)
        x = rng.normal(size=(1, 4, 8, 4)).astype(np.float64)
        swapped = np.concatenate([x[:, :, 4:], x[:, :, :4]], axis=2)
        out = attn(Tensor(x)).data
        out_swapped = attn(Tensor(swapped)).data
        np.testing.assert_array_equal(out_swapped[:, :, :4], out[:, :, 4:])
        np.testing.assert_array_equal(out_swapped[:, :, 4:], out[:, :, :4])

    def test_position_free_within_window(self):
        # attention has no positional term, so permuting tokens inside one
        # window permutes the outputs identically
        rng = np.random.default_rng(5)
        attn = WindowAttention(4, 2, 2, rng)
        x = rng.normal(size=(1, 4, 2, 2)).astype(np.float64)
        perm = x[:, :, ::-1, :].copy()  # swap the two rows
        out = attn(Tensor(x)).data
        out_perm = attn(Tensor(perm)).data
        np.testing.assert_allclose(out_perm, out[:, :, ::-1, :], atol=1e-12)

    def test_indivisible_spatial_rejected(self):
        attn = WindowAttention(4, 2, 4, np.random.default_rng(0))
        with pytest.raises(DimensionError, match="window"):
            attn(Tensor(np.zeros((1, 4, 6, 8))))

    def test_heads_must_divide_channels(self):
        with pytest.raises(ParameterError, match="heads"):
            WindowAttention(6, 4, 2, np.random.default_rng(0))


class TestDeformableConv:
    @pytest.mark.parametrize("seed,n,c,groups,points,h,w", [
        (0, 1, 4, 1, 1, 5, 5),
        (1, 1, 4, 2, 4, 4, 6),
        (2, 2, 6, 3, 9, 5, 4),
        (3, 1, 8, 2, 9, 6, 6),
        (4, 1, 4, 4, 4, 3, 7),
    ])
    def test_init_state_matches_loop_oracle(self, seed, n, c, groups, points, h, w):
        rng = np.random.default_rng(seed)
        conv = DeformableHighFreqConv(c, groups, points, rng)
        x = rng.normal(size=(n, c, h, w)).astype(np.float64)
        got = conv(Tensor(x)).data
        want = oracles.deformable_at_init(x, conv)
        np.testing.assert_allclose(got, want, rtol=1e-8, atol=1e-10)

    def test_constant_offset_shifts_sampling(self):
        # one group, one point: bias dy=1 samples each location one row down,
        # with zeros entering at the bottom edge
        rng = np.random.default_rng(6)
        conv = DeformableHighFreqConv(4, 1, 1, rng)
        conv.offset_pred.bias.data = np.array([1.0, 0.0], dtype=np.float32)
        x = rng.normal(size=(1, 4, 5, 5)).astype(np.float64)
        shifted = np.zeros_like(x)
        shifted[:, :, :-1] = x[:, :, 1:]
        pw = conv.proj[0].weight.data.reshape(4, 4).astype(np.float64)
        want = np.einsum("oc,nchw->nohw", pw, shifted)
        np.testing.assert_allclose(conv(Tensor(x)).data, want, rtol=1e-6, atol=1e-8)

    def test_offset_layout_per_group(self):
        # two groups: shift only group 2 (dx=-1); group 1 stays on-grid
        rng = np.random.default_rng(7)
        conv = DeformableHighFreqConv(4, 2, 1, rng)
        bias = np.zeros(4, dtype=np.float32)
        bias[3] = -1.0  # group 1 (0-indexed), point 0, coord x
        conv.offset_pred.bias.data = bias
        x = rng.normal(size=(1, 4, 4, 4)).astype(np.float64)
        g2 = np.zeros((1, 2, 4, 4))
        g2[:, :, :, 1:] = x[:, 2:, :, :-1]  # content moves right... sample at x-1
        p1 = conv.proj[0].weight.data.reshape(4, 2).astype(np.float64)
        p2 = conv.proj[1].weight.data.reshape(4, 2).astype(np.float64)
        want = (np.einsum("oc,nchw->nohw", p1, x[:, :2]) +
                np.einsum("oc,nchw->nohw", p2, g2))
        np.testing.assert_allclose(conv(Tensor(x)).data, want, rtol=1e-6, atol=1e-8)

    def test_modulation_reweights_points(self):
        # drive one point's modulation logit high: softmax concentrates there
        rng = np.random.default_rng(8)
        conv = DeformableHighFreqConv(2, 1, 4, rng)
        bias = np.zeros(4, dtype=np.float32)
        bias[0] = 50.0  # point 0 takes all the weight
        conv.mod_pred.bias.data = bias
        x = rng.normal(size=(1, 2, 6, 6)).astype(np.float64)
        n, g, p = 1, 1, 4
        offsets = np.zeros((n, g, p, 2, 6, 6))
        mods = np.zeros((n, g, p, 6, 6))
        mods[:, :, 0] = 1.0
        pw = [conv.proj[0].weight.data.reshape(2, 2).astype(np.float64)]
        want = oracles.deformable_reference(
            x, conv.base_points.astype(np.float64), offsets, mods, pw)
        np.testing.assert_allclose(conv(Tensor(x)).data, want, rtol=1e-6, atol=1e-8)

    def test_group_divisibility_enforced(self):
        with pytest.raises(ParameterError, match="groups"):
            DeformableHighFreqConv(5, 2, 4, np.random.default_rng(0))

    def test_points_must_be_square(self):
        with pytest.raises(ParameterError, match="square"):
            DeformableHighFreqConv(4, 2, 5, np.random.default_rng(0))


class TestResamplePath:
    def test_identity_same_domain_same_index(self):
        path = ResamplePath(2, 2, (4, 8, 16, 32), True, np.random.default_rng(0))
        x = Tensor(np.random.default_rng(1).normal(size=(1, 8, 4, 4)))
        assert path(x) is x

    def test_cross_domain_same_index_is_conv(self):
        path = ResamplePath(2, 2, (4, 8, 16, 32), False, np.random.default_rng(0))
        x = Tensor(np.random.default_rng(1).normal(size=(1, 8, 4, 4)))
        out = path(x)
        assert out is not x and out.shape == (1, 8, 4, 4)

    def test_downsample_path_shapes(self):
        path = ResamplePath(1, 3, (4, 8, 16, 32), True, np.random.default_rng(0))
        x = Tensor(np.random.default_rng(1).normal(size=(1, 4, 8, 8)))
        assert path(x).shape == (1, 16, 2, 2)

    def test_upsample_path_shapes(self):
        path = ResamplePath(3, 1, (4, 8, 16, 32), True, np.random.default_rng(0))
        x = Tensor(np.random.default_rng(1).normal(size=(1, 16, 2, 2)))
        assert path(x).shape == (1, 4, 8, 8)

    def test_paths_are_linear(self):
        for j, k in ((1, 2), (2, 1), (1, 1)):
            path = ResamplePath(j, k, (4, 8, 16, 32), False, np.random.default_rng(0))
            x = np.random.default_rng(1).normal(size=(1, (4, 8)[j - 1], 8 // j, 8 // j))
            a = path(Tensor(x)).data
            b = path(Tensor(2.5 * x)).data
            np.testing.assert_allclose(b, 2.5 * a, rtol=1e-5, atol=1e-8)


class TestCrossFrequencyConnect:
    def make(self, in_count, out_count):
        return CrossFrequencyConnect(
            in_count, out_count, (4, 8, 16, 32),
            ("non_stationary", "stationary"), np.random.default_rng(0))

    def streams(self, count, n=1):
        rng = np.random.default_rng(1)
        return {d: [Tensor(rng.normal(size=(n, (4, 8, 16, 32)[k], 8 // 2 ** k, 8 // 2 ** k))
                           .astype(np.float32))
                    for k in range(count)]
                for d in ("non_stationary", "stationary")}

    def test_grows_stream_count(self):
        conn = self.make(1, 2)
        out = conn(self.streams(1))
        for d in ("non_stationary", "stationary"):
            assert [s.shape for s in out[d]] == [(1, 4, 8, 8), (1, 8, 4, 4)]

    def test_constant_count(self):
        conn = self.make(3, 3)
        out = conn(self.streams(3))
        assert all(len(out[d]) == 3 for d in out)

    def test_wrong_stream_count_rejected(self):
        conn = self.make(2, 3)
        with pytest.raises(StructureError, match="expected 2"):
            conn(self.streams(3))

    def test_mismatched_domain_counts_rejected(self):
        conn = self.make(2, 2)
        s = self.streams(2)
        s["stationary"] = s["stationary"][:1]
        with pytest.raises(StructureError, match="differ"):
            conn(s)

    def test_every_input_feeds_every_output(self):
        conn = self.make(2, 2)
        base = self.streams(2)
        out0 = conn(base)
        bumped = {d: list(v) for d, v in base.items()}
        bumped["stationary"] = [bumped["stationary"][0],
                                bumped["stationary"][1] + 1.0]
        out1 = conn(bumped)
        for d in ("non_stationary", "stationary"):
            for k in range(2):
                assert np.abs(out1[d][k].data - out0[d][k].data).max() > 0


class TestStreamLayer:
    def test_window_clamps_to_small_maps(self):
        layer = StreamLayer(4, np.random.default_rng(0), window=4, heads=2,
                            groups=2, points=4)
        out = layer(Tensor(np.random.default_rng(1).normal(size=(1, 4, 2, 2))
                           .astype(np.float32)))
        assert out.shape == (1, 4, 2, 2)

    def test_plain_variant_swaps_conv(self):
        from udhf2.encoder import ConvFfnBlock
        from udhf2.nn import Conv2d
        plain = ConvFfnBlock(4, np.random.default_rng(0), plain=True)
        fancy = ConvFfnBlock(4, np.random.default_rng(0), plain=False)
        assert isinstance(plain.conv, Conv2d)
        assert isinstance(fancy.conv, DeformableHighFreqConv)


class TestEncoder:
    def test_stream_shapes_both_domains(self):
        cfg = tiny_cfg(channels=[4, 8, 16, 32])
        enc = FrequencyStreamEncoder(cfg, 3, np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(2, 3, 32, 32)).astype(np.float32)
        out = enc(x)
        assert set(out) == {"non_stationary", "stationary"}
        for d in out:
            assert [s.shape for s in out[d]] == [
                (2, 4, 8, 8), (2, 8, 4, 4), (2, 16, 2, 2), (2, 32, 1, 1)]

    def test_single_domain_flags(self):
        for flag, key in (("non_stationary_only", "non_stationary"),
                          ("stationary_only", "stationary")):
            cfg = tiny_cfg(**{flag: True})
            enc = FrequencyStreamEncoder(cfg, 3, np.random.default_rng(0))
            out = enc(np.zeros((1, 3, 32, 32), dtype=np.float32))
            assert set(out) == {key}

    def test_split_run_equals_forward(self):
        cfg = tiny_cfg()
        enc = FrequencyStreamEncoder(cfg, 3, np.random.default_rng(2))
        x = np.random.default_rng(3).normal(size=(1, 3, 32, 32)).astype(np.float32)
        full = enc(x)
        streams, inj = enc.run_front(x)
        split = enc.run_back(streams, inj)
        for d in full:
            for a, b in zip(full[d], split[d]):
                np.testing.assert_array_equal(a.data, b.data)

    def test_input_must_divide_by_32(self):
        enc = FrequencyStreamEncoder(tiny_cfg(), 3, np.random.default_rng(0))
        with pytest.raises(DimensionError, match="32"):
            enc(np.zeros((1, 3, 48, 48), dtype=np.float32))

    def test_gradients_flow_to_projection(self):
        cfg = tiny_cfg()
        enc = FrequencyStreamEncoder(cfg, 3, np.random.default_rng(4))
        x = np.random.default_rng(5).normal(size=(1, 3, 32, 32)).astype(np.float32)
        with T.record():
            out = enc(x)
            loss = sum((s * s).sum() for d in out for s in out[d])
        loss.backward()
        grads = [p.grad for n, p in enc.named_parameters()
                 if n.startswith("project_")]
        assert grads and all(g is not None for g in grads)
        assert max(np.abs(g).max() for g in grads) > 0
