"""Multi-frequency parallel-stream transformer encoder.

Two frequency domains (wavelet subbands, Fourier octave bands) are processed
as parallel pyramids of streams. Stream k lives at 1/2^{k+1} of the input
resolution with its own channel width; new, lower-frequency streams are added
stage by stage while stream 1 — the highest-frequency path — is preserved at
full stream resolution throughout. Streams exchange information between
stages through learned resampling paths across both domains.
"""
from __future__ import annotations

import math

import numpy as np

from . import freq
from . import tensor as T
from .errors import DimensionError, ParameterError, StructureError
from .nn import Conv2d, FeedForward, LayerNorm, Linear, Module, ModuleList
from .tensor import Tensor

NON_STATIONARY = "non_stationary"
STATIONARY = "stationary"


# ---- stream projection -------------------------------------------------


class StreamProjector(Module):
    """Project the four frequency components onto their stream grids.

    Component i leaves at 1/2^{i+1} of the source resolution with channels[i-1]
    channels, reached by a chain of stride-2 3x3 convolutions without bias
    (zero input therefore yields zero streams). Components at half resolution
    need i convs; full-resolution components need i+1.
    """

    def __init__(self, channels, in_channels, extra_steps, rng):
        super().__init__()
        self.extra_steps = extra_steps
        self.chains = ModuleList()
        for i in range(1, 5):
            steps = i + extra_steps
            outs = [channels[max(0, i - 1 - (steps - 1 - c))] for c in range(steps)]
            convs = ModuleList()
            cur = in_channels
            for out_ch in outs:
                convs.append(Conv2d(cur, out_ch, 3, rng, stride=2, padding=1, bias=False))
                cur = out_ch
            self.chains.append(convs)

    def forward(self, components):
        if len(components) != 4:
            raise DimensionError(f"expected 4 frequency components, got {len(components)}")
        streams = []
        for i, (comp, chain) in enumerate(zip(components, self.chains), start=1):
            x = comp if isinstance(comp, Tensor) else Tensor(comp)
            need = 2 ** len(chain)
            h, w = x.shape[-2:]
            if h % need or w % need:
                raise DimensionError(
                    f"component {i} size {h}x{w} not divisible by {need}")
            for conv in chain:
                x = conv(x)
            streams.append(x)
        return streams


# ---- window attention --------------------------------------------------


class WindowAttention(Module):
    """Multi-head self-attention inside non-overlapping square windows."""

    def __init__(self, channels, heads, window, rng):
        super().__init__()
        if channels % heads:
            raise ParameterError(f"channels {channels} not divisible by heads {heads}")
        self.heads = heads
        self.window = window
        self.channels = channels
        self.q = Linear(channels, channels, rng)
        self.k = Linear(channels, channels, rng)
        self.v = Linear(channels, channels, rng)
        self.out = Linear(channels, channels, rng)

    def forward(self, x, window=None):
        L = self.window if window is None else window
        n, c, h, w = x.shape
        if h % L or w % L:
            raise DimensionError(f"spatial size {h}x{w} not divisible by window {L}")
        nh, nw = h // L, w // L
        hd = c // self.heads
        tokens = (x.reshape(n, c, nh, L, nw, L)
                  .transpose(0, 2, 4, 3, 5, 1)
                  .reshape(n * nh * nw, L * L, c))
        q = self.q(tokens).reshape(-1, L * L, self.heads, hd).transpose(0, 2, 1, 3)
        k = self.k(tokens).reshape(-1, L * L, self.heads, hd).transpose(0, 2, 1, 3)
        v = self.v(tokens).reshape(-1, L * L, self.heads, hd).transpose(0, 2, 1, 3)
        att = T.softmax((q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(hd)), axis=-1)
        y = (att @ v).transpose(0, 2, 1, 3).reshape(-1, L * L, c)
        y = self.out(y)
        return (y.reshape(n, nh, nw, L, L, c)
                .transpose(0, 5, 1, 3, 2, 4)
                .reshape(n, c, h, w))


# ---- deformable high-frequency convolution -----------------------------


class DeformableHighFreqConv(Module):
    """Grouped convolution that samples each group at learned fractional offsets.

    Per group t and location r0 the output is W_t . sum_n U_tn * M_t(r0 + r_n
    + dr_tn): a softmax-normalized modulation over the sampling points, bilinear
    sampling with zero padding, and a per-group channel projection back to full
    width. Offset and modulation predictors start at zero, so initially the
    points sit on the regular grid with uniform weights.
    """

    def __init__(self, channels, groups, points, rng):
        super().__init__()
        if channels % groups:
            raise ParameterError(f"channels {channels} not divisible by groups {groups}")
        side = int(round(math.sqrt(points)))
        if side * side != points:
            raise ParameterError(f"points must be a perfect square, got {points}")
        self.groups = groups
        self.points = points
        self.group_ch = channels // groups
        self.offset_pred = Conv2d(channels, 2 * groups * points, 3, rng, zero_init=True)
        self.mod_pred = Conv2d(channels, groups * points, 3, rng, zero_init=True)
        self.proj = ModuleList(
            Conv2d(self.group_ch, channels, 1, rng, bias=False) for _ in range(groups))
        half = (side - 1) / 2.0
        ys, xs = np.mgrid[0:side, 0:side]
        self.base_points = np.stack([ys - half, xs - half], axis=-1).reshape(points, 2)

    def _base_coords(self, h, w, dtype):
        ys, xs = np.mgrid[0:h, 0:w]
        grid = np.stack([ys, xs], axis=-1).astype(dtype)          # (h, w, 2)
        pts = self.base_points.astype(dtype)                       # (N, 2)
        return (grid[None, :, :, :] + pts[:, None, None, :])[None]  # (1, N, h, w, 2)

    def forward(self, m):
        n, c, h, w = m.shape
        tg, npts, ec = self.groups, self.points, self.group_ch
        # Stack the groups along the batch axis so one sampling call covers all.
        grouped = m.reshape(n, tg, ec, h, w).transpose(1, 0, 2, 3, 4).reshape(tg * n, ec, h, w)
        off = (self.offset_pred(m)
               .reshape(n, tg, npts, 2, h, w)
               .transpose(1, 0, 2, 4, 5, 3))
        mods = T.softmax(self.mod_pred(m).reshape(n, tg, npts, h, w), axis=2)
        base = Tensor(self._base_coords(h, w, m.dtype))
        coords = (base + off).reshape(tg * n, npts * h * w, 2)
        sampled = T.grid_sample(grouped, coords).reshape(tg, n, ec, npts, h, w)
        weighted = (sampled * mods.transpose(1, 0, 2, 3, 4).reshape(tg, n, 1, npts, h, w)).sum(axis=3)
        out = None
        for t in range(tg):
            proj = self.proj[t](weighted[t])
            out = proj if out is None else out + proj
        return out


# ---- residual blocks ---------------------------------------------------


class ConvFfnBlock(Module):
    """Residual block: x + LN(conv(x)), then + LN(FFN(.)), conv computed once."""

    def __init__(self, channels, rng, groups=2, points=9, expansion=2, plain=False):
        super().__init__()
        if plain:
            self.conv = Conv2d(channels, channels, 3, rng)
        else:
            self.conv = DeformableHighFreqConv(channels, groups, points, rng)
        self.norm_conv = LayerNorm(channels, axis=1)
        self.ffn = FeedForward(channels, rng, expansion)
        self.norm_ffn = LayerNorm(channels, axis=1)

    def forward(self, m):
        a = m + self.norm_conv(self.conv(m))
        return a + self.norm_ffn(self.ffn(a))


class StreamLayer(Module):
    """One transformer unit of a stream: window attention then ConvFfnBlock."""

    def __init__(self, channels, rng, window=4, heads=2, groups=2, points=9,
                 expansion=2, plain=False):
        super().__init__()
        self.window = window
        self.attn = WindowAttention(channels, heads, window, rng)
        self.norm_attn = LayerNorm(channels, axis=1)
        self.block = ConvFfnBlock(channels, rng, groups=groups, points=points,
                                  expansion=expansion, plain=plain)

    def forward(self, z):
        h, w = z.shape[-2:]
        eff = min(self.window, h, w)
        m = z + self.norm_attn(self.attn(z, window=eff))
        return self.block(m)


# ---- cross-frequency connection ----------------------------------------


class ResamplePath(Module):
    """One input-stream -> output-stream transform of the connection module.

    Same stream index within a domain passes through unchanged; across domains
    it is a 1x1 conv. Moving down (j < k) applies (k - j) stride-2 3x3 convs
    climbing the channel ladder; moving up (j > k) applies 2^{j-k} bilinear
    upsampling then a 1x1 conv. All convs are bias-free, so zeroing a path's
    weights removes its contribution entirely.
    """

    def __init__(self, j, k, channels, same_domain, rng):
        super().__init__()
        self.j, self.k = j, k
        self.identity = same_domain and j == k
        self.up_factor = 2 ** (j - k) if j > k else 1
        self.convs = ModuleList()
        if self.identity:
            return
        if j == k:
            self.convs.append(Conv2d(channels[j - 1], channels[k - 1], 1, rng, bias=False))
        elif j < k:
            cur = channels[j - 1]
            for step in range(j + 1, k + 1):
                self.convs.append(Conv2d(cur, channels[step - 1], 3, rng, stride=2,
                                         padding=1, bias=False))
                cur = channels[step - 1]
        else:
            self.convs.append(Conv2d(channels[j - 1], channels[k - 1], 1, rng, bias=False))

    def forward(self, x):
        if self.identity:
            return x
        if self.up_factor > 1:
            x = T.bilinear_resize(x, float(self.up_factor))
        for conv in self.convs:
            x = conv(x)
        return x


class CrossFrequencyConnect(Module):
    """Rebuild every output stream as a sum over all input streams of all domains."""

    def __init__(self, in_count, out_count, channels, domains, rng):
        super().__init__()
        self.in_count = in_count
        self.out_count = out_count
        self.domains = tuple(domains)
        self.paths = ModuleList()
        for _out_d in self.domains:
            per_k = ModuleList()
            for k in range(1, out_count + 1):
                per_in = ModuleList()
                for in_d in self.domains:
                    per_j = ModuleList()
                    for j in range(1, in_count + 1):
                        per_j.append(ResamplePath(j, k, channels,
                                                  same_domain=(in_d == _out_d), rng=rng))
                    per_in.append(per_j)
                per_k.append(per_in)
            self.paths.append(per_k)

    def forward(self, streams):
        counts = {d: len(streams[d]) for d in self.domains}
        if len(set(counts.values())) != 1:
            raise StructureError(f"stream counts differ across domains: {counts}")
        if counts[self.domains[0]] != self.in_count:
            raise StructureError(
                f"expected {self.in_count} streams per domain, got {counts}")
        out = {}
        for od_i, out_d in enumerate(self.domains):
            new_streams = []
            for k in range(self.out_count):
                acc = None
                for id_i, in_d in enumerate(self.domains):
                    for j in range(self.in_count):
                        path = self.paths[od_i][k][id_i][j]
                        term = path(streams[in_d][j])
                        acc = term if acc is None else acc + term
                new_streams.append(acc)
            out[out_d] = new_streams
        return out


# ---- the staged encoder ------------------------------------------------

_STAGE_STREAMS = (1, 2, 3, 4)


def _stage_modules(cfg, channels, domains, s, rng):
    """Per-domain, per-stream layer stacks for stage ``s``."""
    per_domain = ModuleList()
    for _d in domains:
        per_stream = ModuleList()
        for k in range(_STAGE_STREAMS[s]):
            per_stream.append(ModuleList(
                StreamLayer(channels[k], rng, window=cfg.window,
                            heads=cfg.heads, groups=cfg.groups,
                            points=cfg.points, expansion=cfg.ffn_expansion,
                            plain=cfg.hftm_vs_plain)
                for _ in range(cfg.blocks_per_stage)))
        per_domain.append(per_stream)
    return per_domain


def _stage_connect(cfg, channels, domains, s, rng):
    """The cross-frequency connection following stage ``s``."""
    out_count = _STAGE_STREAMS[min(s + 1, 3)]
    return CrossFrequencyConnect(_STAGE_STREAMS[s], out_count, channels,
                                 domains, rng)


class EncoderTail(Module):
    """The final two encoder stages plus their connections, as a standalone
    container for a branch that shares only the earlier stages."""

    def __init__(self, cfg, rng):
        super().__init__()
        channels = tuple(cfg.channels)
        domains = cfg.domains()
        self.stages = ModuleList(
            _stage_modules(cfg, channels, domains, s, rng) for s in (2, 3))
        self.connects = ModuleList(
            _stage_connect(cfg, channels, domains, s, rng) for s in (2, 3))


class FrequencyStreamEncoder(Module):
    """Four-stage parallel-stream encoder over one or two frequency domains.

    Stage s runs every existing stream of every domain through
    `blocks_per_stage` StreamLayers, then the connection module rebuilds the
    streams for stage s+1 (adding one new, lower-frequency stream until all
    four exist; the final connection fuses at constant count). Newly created
    streams also receive the projection of their own frequency component.
    """

    def __init__(self, cfg, in_channels, rng):
        super().__init__()
        self.channels = tuple(cfg.channels)
        self.domains = cfg.domains()
        self.in_channels = in_channels
        if NON_STATIONARY in self.domains:
            self.project_non_stationary = StreamProjector(self.channels, in_channels, 0, rng)
            self.norm_non_stationary = ModuleList(
                LayerNorm(c, axis=1) for c in self.channels)
        if STATIONARY in self.domains:
            self.project_stationary = StreamProjector(self.channels, in_channels, 1, rng)
            self.norm_stationary = ModuleList(
                LayerNorm(c, axis=1) for c in self.channels)
        self.stages = ModuleList(
            _stage_modules(cfg, self.channels, self.domains, s, rng)
            for s in range(4))
        self.connects = ModuleList(
            _stage_connect(cfg, self.channels, self.domains, s, rng)
            for s in range(4))

    # -- pieces, separable for partially-shared twin encoders --

    def decompose(self, image):
        """Frequency components per domain for a (B, C, H, W) array."""
        arr = image.data if isinstance(image, Tensor) else np.asarray(image)
        h, w = arr.shape[-2:]
        if h % 32 or w % 32:
            raise DimensionError(f"input size {h}x{w} must be divisible by 32")
        comps = {}
        if NON_STATIONARY in self.domains:
            comps[NON_STATIONARY] = freq.dwt_haar_decompose(arr)
        if STATIONARY in self.domains:
            comps[STATIONARY] = freq.band_split(arr)
        return comps

    def project(self, comps):
        """Project components to stream tensors, normalized to unit scale.

        Frequency components carry only a slice of the input's variance, so
        raw projections are far smaller than the residual streams they join;
        the per-stream norm keeps every stage input at a common scale.
        """
        inj = {}
        if NON_STATIONARY in comps:
            inj[NON_STATIONARY] = [
                norm(z) for norm, z in zip(
                    self.norm_non_stationary,
                    self.project_non_stationary(
                        [Tensor(c) for c in comps[NON_STATIONARY]]))]
        if STATIONARY in comps:
            inj[STATIONARY] = [
                norm(z) for norm, z in zip(
                    self.norm_stationary,
                    self.project_stationary(
                        [Tensor(c) for c in comps[STATIONARY]]))]
        return inj

    def _run_stage(self, stage_modules, streams):
        out = {}
        for d_i, d in enumerate(self.domains):
            processed = []
            for k, s in enumerate(streams[d]):
                z = s
                for layer in stage_modules[d_i][k]:
                    z = layer(z)
                processed.append(z)
            out[d] = processed
        return out

    def run_front(self, image):
        """Decomposition, projection, and the first two stages."""
        comps = self.decompose(image)
        inj = self.project(comps)
        streams = {d: [inj[d][0]] for d in self.domains}
        for s in range(2):
            streams = self._run_stage(self.stages[s], streams)
            streams = self.connects[s](streams)
            for d in self.domains:
                streams[d][s + 1] = streams[d][s + 1] + inj[d][s + 1]
        return streams, inj

    def run_back(self, streams, inj, stages34=None, connects34=None):
        """Stages 3 and 4; substitutes host an independent branch's modules."""
        for idx, s in enumerate(range(2, 4)):
            stage_modules = self.stages[s] if stages34 is None else stages34[idx]
            connect = self.connects[s] if connects34 is None else connects34[idx]
            streams = self._run_stage(stage_modules, streams)
            streams = connect(streams)
            if s < 3:
                for d in self.domains:
                    streams[d][s + 1] = streams[d][s + 1] + inj[d][s + 1]
        return streams

    def forward(self, image):
        streams, inj = self.run_front(image)
        return self.run_back(streams, inj)
