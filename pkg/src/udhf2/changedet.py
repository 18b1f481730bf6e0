"""Partially-shared twin encoding and difference alignment for change maps.

Both frames run the same front (decomposition, projection, first two encoder
stages); the final two stages are branch-independent unless fully shared.
Per-stream difference features feed the fusion decoder as 2-class logits.
"""

import numpy as np

from . import tensor as T
from .decoder import build_decoder, fuse_domains
from .encoder import EncoderTail, FrequencyStreamEncoder
from .errors import DimensionError
from .nn import BatchNorm2d, Conv2d, Module, ModuleList


class DifferenceAlign(Module):
    """Concat -> channel-halving 1x1 conv -> ReLU -> batch norm, per stream.

    Deliberately not a subtraction: equal inputs do not force a zero output.
    """

    def __init__(self, channels, domains, rng):
        super().__init__()
        self.domains = domains
        self.convs = ModuleList()
        self.norms = ModuleList()
        for _d in domains:
            self.convs.append(ModuleList(
                Conv2d(2 * c, c, 1, rng) for c in channels))
            self.norms.append(ModuleList(BatchNorm2d(c) for c in channels))

    def forward(self, p_streams, q_streams):
        out = {}
        for d_i, d in enumerate(self.domains):
            aligned = []
            for k, (p, q) in enumerate(zip(p_streams[d], q_streams[d])):
                x = T.concat([p, q], axis=1)
                x = self.norms[d_i][k](T.relu(self.convs[d_i][k](x)))
                aligned.append(x)
            out[d] = aligned
        return out


def _absolute_difference(domains, p_streams, q_streams):
    return {d: [T.absolute(p - q)
                for p, q in zip(p_streams[d], q_streams[d])]
            for d in domains}


class ChangeDetectionNetwork(Module):
    """Twin frequency-stream encoding to a 2-class change map.

    ``fully_shared_siamese`` drops the independent branch tail;
    ``difference_architecture`` swaps the learned alignment for a plain
    absolute feature difference.
    """

    def __init__(self, cfg, rng, zero_head=False):
        super().__init__()
        self.cfg = cfg
        self.encoder = FrequencyStreamEncoder(cfg, 3, rng)
        if not cfg.fully_shared_siamese:
            self.tail = EncoderTail(cfg, rng)
        if not cfg.difference_architecture:
            self.align = DifferenceAlign(tuple(cfg.channels), cfg.domains(), rng)
        self.decoder = build_decoder(cfg, 2, rng, zero_head=zero_head)

    def encode_pair(self, image1, image2):
        p = self.encoder(image1)
        streams, inj = self.encoder.run_front(image2)
        if self.cfg.fully_shared_siamese:
            q = self.encoder.run_back(streams, inj)
        else:
            q = self.encoder.run_back(streams, inj, self.tail.stages,
                                      self.tail.connects)
        return p, q

    def forward(self, image1, image2):
        a1 = np.asarray(image1.data if isinstance(image1, T.Tensor) else image1)
        a2 = np.asarray(image2.data if isinstance(image2, T.Tensor) else image2)
        if a1.shape != a2.shape:
            raise DimensionError(
                f"change pair shapes differ: {a1.shape} vs {a2.shape}")
        p, q = self.encode_pair(a1, a2)
        if self.cfg.difference_architecture:
            aligned = _absolute_difference(self.cfg.domains(), p, q)
        else:
            aligned = self.align(p, q)
        return self.decoder(fuse_domains(aligned))

    def predict_probs(self, image1, image2):
        return T.softmax(self.forward(image1, image2), axis=1)
