"""Central finite-difference verification of recorded gradients.

Runs in float64 with step h = 1e-4. For large inputs a seeded random subset of
coordinates is probed; small inputs are checked exhaustively.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T

H = 1e-4
ATOL = 1e-7
RTOL = 1e-4


def _projected_sum(out, rng):
    """Scalar objective mixing every output coordinate with random signs.

    A plain .sum() lets sign errors cancel; a fixed random projection does not.
    """
    proj = T.Tensor(rng.normal(size=out.shape).astype(np.float64))
    return (out * proj).sum()


def check_gradients(fn, inputs, max_coords=None, rng=None):
    """Compare recorded gradients of `fn(*inputs).sum()`-style scalar against central differences.

    fn must return a scalar Tensor. `inputs` are float64 Tensors with
    requires_grad=True. Returns the maximum relative error seen.
    """
    rng = rng or np.random.default_rng(0)
    for x in inputs:
        if x.data.dtype != np.float64:
            raise ValueError("gradient checks must run in float64")
        x.grad = None
    with T.record():
        out = fn(*inputs)
    T.backward(out)
    worst = 0.0
    for x in inputs:
        grad = x.grad if x.grad is not None else np.zeros_like(x.data)
        flat = x.data.reshape(-1)
        n = flat.size
        if max_coords is not None and n > max_coords:
            coords = rng.choice(n, size=max_coords, replace=False)
        else:
            coords = np.arange(n)
        gflat = grad.reshape(-1)
        for i in coords:
            keep = flat[i]
            flat[i] = keep + H
            fp = fn(*inputs).item()
            flat[i] = keep - H
            fm = fn(*inputs).item()
            flat[i] = keep
            num = (fp - fm) / (2 * H)
            ana = float(gflat[i])
            err = abs(ana - num)
            scale = max(abs(ana), abs(num))
            rel = err / scale if scale > ATOL else 0.0
            if err > ATOL + RTOL * scale:
                raise AssertionError(
                    f"gradient mismatch at flat index {i}: recorded {ana:.10g}, "
                    f"numeric {num:.10g} (rel {rel:.3g})")
            worst = max(worst, rel)
    return worst


def _f64(arr):
    return T.Parameter(np.asarray(arr, dtype=np.float64))


def _module_inputs(module, x):
    return [x] + list(module.parameters())


def _conv_instance(rng):
    from .nn import Conv2d
    cin = int(rng.integers(1, 4))
    cout = int(rng.integers(1, 4))
    k = int(rng.choice([1, 3]))
    stride = int(rng.choice([1, 2]))
    conv = Conv2d(cin, cout, k, rng, stride=stride)
    x = _f64(rng.normal(size=(2, cin, 5, 5)))
    return conv, x


def _linear_instance(rng):
    from .nn import Linear
    fin = int(rng.integers(1, 5))
    fout = int(rng.integers(1, 5))
    lin = Linear(fin, fout, rng)
    x = _f64(rng.normal(size=(3, fin)))
    return lin, x


def _window_attention_instance(rng):
    from .encoder import WindowAttention
    heads = int(rng.choice([1, 2]))
    c = heads * int(rng.integers(1, 3)) * 2
    L = int(rng.choice([1, 2]))
    attn = WindowAttention(c, heads, L, rng)
    x = _f64(rng.normal(size=(1, c, 2 * L, 2 * L)))
    return attn, x


def _efficient_attention_instance(rng):
    from .decoder import EfficientCrossAttention
    qc = int(rng.integers(1, 4))
    kc = int(rng.integers(1, 4))
    d = int(rng.integers(2, 5))
    attn = EfficientCrossAttention(qc, kc, d, rng)
    q = _f64(rng.normal(size=(1, qc, 3, 3)))
    kv = _f64(rng.normal(size=(1, kc, 3, 3)))
    return attn, q, kv


def _deformable_instance(rng):
    from .encoder import DeformableHighFreqConv
    groups = int(rng.choice([1, 2]))
    c = groups * int(rng.integers(1, 3))
    points = int(rng.choice([1, 4, 9]))
    conv = DeformableHighFreqConv(c, groups, points, rng)
    # Wake the zero-initialized predictors, but keep every sampling point well
    # clear of integer grid lines: bilinear interpolation has kinks there and
    # finite differences would disagree with the recorded gradient. The bias
    # dominates the fractional position (0.2..0.45 from the lattice) and the
    # weights add at most a few-sigma 1e-3-scale jitter.
    conv.offset_pred.weight.data = rng.normal(
        scale=1e-3, size=conv.offset_pred.weight.data.shape)
    conv.offset_pred.bias.data = (
        rng.choice([-1.0, 1.0], size=conv.offset_pred.bias.data.shape)
        * rng.uniform(0.2, 0.45, size=conv.offset_pred.bias.data.shape))
    conv.mod_pred.weight.data = rng.normal(
        scale=0.05, size=conv.mod_pred.weight.data.shape)
    conv.mod_pred.bias.data = rng.normal(
        scale=0.5, size=conv.mod_pred.bias.data.shape)
    x = _f64(rng.normal(size=(1, c, 4, 4)))
    return conv, x


def _layer_norm_instance(rng):
    from .nn import LayerNorm
    c = int(rng.integers(2, 6))
    ln = LayerNorm(c, axis=1)
    x = _f64(rng.normal(size=(2, c, 3, 3)))
    return ln, x


def _batch_norm_instance(rng):
    from .nn import BatchNorm2d
    c = int(rng.integers(1, 4))
    bn = BatchNorm2d(c)
    x = _f64(rng.normal(size=(3, c, 3, 3)))
    return bn, x


def _one_hot_target(rng, n, classes, h, w):
    labels = rng.integers(0, classes, size=(n, h, w))
    planes = np.eye(classes, dtype=np.float64)[labels]
    return np.moveaxis(planes, -1, 1)


def run_sweep(instances=20, max_coords=4, seed=0):
    """Finite-difference pass over every learnable operation family.

    Builds `instances` randomized float64 configurations per family and
    verifies each against central differences (step H), probing up to
    `max_coords` coordinates per tensor. Raises AssertionError on the first
    mismatch; returns {family: worst relative error} otherwise.
    """
    from .losses import cd_hybrid_loss, seg_hybrid_loss, uncertain_loss

    master = np.random.default_rng(seed)
    results = {}

    def family(name, build):
        worst = 0.0
        for _ in range(instances):
            rng = np.random.default_rng(master.integers(2 ** 63))
            with T.default_dtype_scope(np.float64):
                fn, inputs = build(rng)
            worst = max(worst, check_gradients(fn, inputs,
                                               max_coords=max_coords, rng=rng))
        results[name] = worst

    def module_family(build):
        def make(rng):
            module, *xs = build(rng)
            proj_seed = int(rng.integers(2 ** 63))  # one projection per instance

            def fn(*_):
                return _projected_sum(module(*xs),
                                      np.random.default_rng(proj_seed))

            inputs = list(xs)
            for p in module.parameters():
                inputs.append(p)
            return fn, inputs
        return make

    family("convolution", module_family(_conv_instance))
    family("linear", module_family(_linear_instance))
    family("window_attention", module_family(_window_attention_instance))
    family("efficient_attention", module_family(_efficient_attention_instance))
    family("deformable_convolution", module_family(_deformable_instance))
    family("layer_norm", module_family(_layer_norm_instance))
    family("batch_norm", module_family(_batch_norm_instance))

    def seg_loss_build(rng):
        classes = int(rng.integers(2, 5))
        logits = _f64(rng.normal(size=(1, classes, 3, 3)))
        target = _one_hot_target(rng, 1, classes, 3, 3)
        gamma = float(rng.uniform())

        def fn(*_):
            return seg_hybrid_loss(T.softmax(logits, axis=1), target, gamma)
        return fn, [logits]

    def cd_loss_build(rng):
        logits = _f64(rng.normal(size=(1, 1, 3, 3)))
        target = rng.integers(0, 2, size=(1, 1, 3, 3)).astype(np.float64)
        g = float(rng.uniform())
        lam = float(rng.uniform())

        def fn(*_):
            return cd_hybrid_loss(T.sigmoid(logits), target, g, lam)
        return fn, [logits]

    def uncertain_build(task):
        def build(rng):
            if task == "seg":
                classes = int(rng.integers(2, 4))
            else:
                classes = 1
            pred_noise = _f64(rng.normal(size=(1, classes, 3, 3)))
            true_noise = rng.normal(size=(1, classes, 3, 3))
            logits = _f64(rng.normal(size=(1, classes, 3, 3)))
            if task == "seg":
                target = _one_hot_target(rng, 1, classes, 3, 3)
            else:
                target = rng.integers(0, 2, size=(1, 1, 3, 3)).astype(np.float64)
            mask = rng.random((3, 3)) < 0.6
            mask.flat[int(rng.integers(9))] = True  # never empty
            omega = float(rng.uniform())

            def fn(*_):
                probs = (T.softmax(logits, axis=1) if task == "seg"
                         else T.sigmoid(logits))
                return uncertain_loss(pred_noise, true_noise, probs, target,
                                      mask, omega, task=task)
            return fn, [pred_noise, logits]
        return build

    family("segmentation_loss", seg_loss_build)
    family("change_loss", cd_loss_build)
    family("uncertainty_loss_seg", uncertain_build("seg"))
    family("uncertainty_loss_cd", uncertain_build("cd"))
    return results
