"""End-to-end networks: segmentation and the diffusion denoiser variant."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .decoder import build_decoder, fuse_domains
from .encoder import FrequencyStreamEncoder
from .nn import Module


class SegmentationNetwork(Module):
    """Frequency-stream encoder + fusion decoder emitting class logits."""

    def __init__(self, cfg, num_classes, rng, in_channels=3, zero_head=False):
        super().__init__()
        self.cfg = cfg
        self.num_classes = num_classes
        self.encoder = FrequencyStreamEncoder(cfg, in_channels, rng)
        self.decoder = build_decoder(cfg, num_classes, rng, zero_head=zero_head)

    def forward(self, image):
        streams = self.encoder(image)
        return self.decoder(fuse_domains(streams))

    def predict_probs(self, image):
        return T.softmax(self.forward(image), axis=1)


def sinusoidal_time_embedding(t, channels, h, w, batch, dtype=np.float32):
    """Constant (B, channels, h, w) planes encoding integer timestep t."""
    half = channels // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    angles = t * freqs
    emb = np.concatenate([np.sin(angles), np.cos(angles)]).astype(dtype)
    planes = np.broadcast_to(emb[None, :, None, None], (batch, channels, h, w))
    return np.ascontiguousarray(planes)


class DenoiserNetwork(Module):
    """Noise predictor: the segmentation architecture on a widened input stack.

    Input channels: conditioning image(s) + the noisy label encoding +
    sinusoidal timestep planes. Output channels match the label encoding.
    """

    def __init__(self, cfg, cond_channels, state_channels, rng):
        super().__init__()
        self.cfg = cfg
        self.state_channels = state_channels
        self.time_channels = cfg.time_emb_channels
        in_ch = cond_channels + state_channels + self.time_channels
        self.net = SegmentationNetwork(cfg, state_channels, rng, in_channels=in_ch)

    def forward(self, cond, h_t, t):
        cond = cond if isinstance(cond, np.ndarray) else cond.data
        h_arr = h_t if isinstance(h_t, np.ndarray) else h_t.data
        b, _, h, w = cond.shape
        emb = sinusoidal_time_embedding(float(t), self.time_channels, h, w, b,
                                        dtype=cond.dtype)
        stack = np.concatenate([cond, h_arr, emb], axis=1).astype(cond.dtype,
                                                                  copy=False)
        return self.net(stack)
