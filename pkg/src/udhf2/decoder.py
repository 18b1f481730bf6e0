"""Decoders: domain fusion, linear-attention aggregation, and class heads."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .nn import Conv2d, FeedForward, LayerNorm, Module, ModuleList
from .encoder import NON_STATIONARY, STATIONARY


def fuse_domains(streams):
    """Concat per-index streams channel-wise, non-stationary half first.

    With a single active domain its streams are duplicated, keeping the fused
    channel widths (and the decoder) identical across ablations.
    """
    ns = streams.get(NON_STATIONARY, streams.get(STATIONARY))
    st = streams.get(STATIONARY, streams.get(NON_STATIONARY))
    fused = []
    for i, (a, b) in enumerate(zip(ns, st), start=1):
        if a.shape[-2:] != b.shape[-2:]:
            raise DimensionError(
                f"stream {i} spatial sizes differ across domains: "
                f"{a.shape[-2:]} vs {b.shape[-2:]}")
        fused.append(T.concat([a, b], axis=1))
    return fused


class EfficientCrossAttention(Module):
    """Linear-complexity attention: E = softmax_rows(Q) (softmax_cols(K)^T V).

    The query source is projected to `dim` channels, keys/values come from the
    other input. Each output token is a convex combination of convex
    combinations of value rows, so every channel stays inside V's range.
    """

    def __init__(self, q_channels, kv_channels, dim, rng):
        super().__init__()
        self.dim = dim
        self.q_proj = Conv2d(q_channels, dim, 1, rng)
        self.k_proj = Conv2d(kv_channels, dim, 1, rng)
        self.v_proj = Conv2d(kv_channels, dim, 1, rng)

    def forward(self, q_src, kv_src):
        n, _, h, w = q_src.shape
        if kv_src.shape[-2:] != (h, w):
            raise DimensionError(
                f"query grid {h}x{w} vs key/value grid {kv_src.shape[-2:]}")
        d = self.dim
        q = self.q_proj(q_src).reshape(n, d, h * w).transpose(0, 2, 1)
        k = self.k_proj(kv_src).reshape(n, d, h * w).transpose(0, 2, 1)
        v = self.v_proj(kv_src).reshape(n, d, h * w).transpose(0, 2, 1)
        q = T.softmax(q, axis=2)           # per token over channels
        k = T.softmax(k, axis=1)           # per channel over tokens
        ctx = k.transpose(0, 2, 1) @ v     # (n, d, d)
        out = q @ ctx                      # (n, hw, d)
        return out.transpose(0, 2, 1).reshape(n, d, h, w)


class FusionDecoder(Module):
    """Aggregate fused streams coarse-to-fine with efficient cross-attention.

    Starting from the lowest-frequency fused stream, repeatedly upsample the
    running aggregate 2x and attend into the next higher-frequency stream
    (aggregate as query, stream as key/value) with a residual around the
    attention; finish with an FFN. The head upsamples 4x back to input
    resolution and maps to class logits.
    """

    def __init__(self, channels, num_classes, rng, zero_head=False):
        super().__init__()
        fused = [2 * c for c in channels]
        dim = fused[0]
        self.dim = dim
        self.entry = Conv2d(fused[3], dim, 1, rng)
        self.attend = ModuleList(
            EfficientCrossAttention(dim, fused[i], dim, rng) for i in (2, 1, 0))
        self.norms = ModuleList(LayerNorm(dim, axis=1) for _ in range(3))
        self.ffn = FeedForward(dim, rng)
        self.norm_out = LayerNorm(dim, axis=1)
        self.head = Conv2d(dim, num_classes, 1, rng, zero_init=zero_head)

    def aggregate(self, fused):
        agg = self.entry(fused[3])
        for step, i in enumerate((2, 1, 0)):
            up = T.bilinear_resize(agg, 2.0)
            agg = self.norms[step](up + self.attend[step](up, fused[i]))
        return self.norm_out(agg + self.ffn(agg))

    def forward(self, fused):
        agg = self.aggregate(fused)
        return self.head(T.bilinear_resize(agg, 4.0))


class PlainDecoder(Module):
    """Ablation decoder: 1x1-project every fused stream, upsample, sum, head."""

    def __init__(self, channels, num_classes, rng, zero_head=False):
        super().__init__()
        fused = [2 * c for c in channels]
        dim = fused[0]
        self.proj = ModuleList(Conv2d(fused[i], dim, 1, rng) for i in range(4))
        self.head = Conv2d(dim, num_classes, 1, rng, zero_init=zero_head)

    def aggregate(self, fused):
        agg = None
        for i in range(4):
            x = self.proj[i](fused[i])
            if i:
                x = T.bilinear_resize(x, float(2 ** i))
            agg = x if agg is None else agg + x
        return agg

    def forward(self, fused):
        return self.head(T.bilinear_resize(self.aggregate(fused), 4.0))


def build_decoder(cfg, num_classes, rng, zero_head=False):
    if cfg.decoder == "plain":
        return PlainDecoder(cfg.channels, num_classes, rng, zero_head=zero_head)
    return FusionDecoder(cfg.channels, num_classes, rng, zero_head=zero_head)
