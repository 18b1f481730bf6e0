"""Module/parameter registry and the standard trainable layers."""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import DimensionError, ParameterError
from .tensor import Parameter, Tensor


class Module:
    """Base class; assigning Parameter/Module/ModuleList attributes registers them."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, (Module, ModuleList)):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix=""):
        """Yield (dotted_name, Parameter) in registration order; names are unique."""
        for name, p in self._params.items():
            yield (prefix + name, p)
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList:
    """Ordered container of sub-modules, registered by index."""

    def __init__(self, modules=()):
        self.items = list(modules)

    def append(self, m):
        self.items.append(m)

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)

    def __getitem__(self, i):
        return self.items[i]

    def named_parameters(self, prefix=""):
        for i, m in enumerate(self.items):
            yield from m.named_parameters(f"{prefix}{i}.")


def kaiming_uniform(rng, shape, fan_in):
    """Fan-in scaled uniform init, bound 1/sqrt(fan_in)."""
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(T.default_dtype())


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, rng, stride=1,
                 padding=None, bias=True, zero_init=False):
        super().__init__()
        k = int(kernel_size)
        self.stride = int(stride)
        self.padding = k // 2 if padding is None else int(padding)
        self.in_channels = in_channels
        self.out_channels = out_channels
        fan_in = in_channels * k * k
        if zero_init:
            w = np.zeros((out_channels, in_channels, k, k), dtype=T.default_dtype())
        else:
            w = kaiming_uniform(rng, (out_channels, in_channels, k, k), fan_in)
        self.weight = Parameter(w)
        if bias:
            self.bias = Parameter(np.zeros(out_channels, dtype=T.default_dtype()))
        else:
            self.bias = None

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Linear(Module):
    def __init__(self, in_features, out_features, rng, bias=True):
        super().__init__()
        self.weight = Parameter(kaiming_uniform(rng, (in_features, out_features), in_features))
        self.bias = Parameter(np.zeros(out_features, dtype=T.default_dtype())) if bias else None

    def forward(self, x):
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out


class LayerNorm(Module):
    def __init__(self, num_features, axis=-1, eps=1e-5):
        super().__init__()
        self.axis = axis
        self.eps = eps
        self.gain = Parameter(np.ones(num_features, dtype=T.default_dtype()))
        self.shift = Parameter(np.zeros(num_features, dtype=T.default_dtype()))

    def forward(self, x):
        return T.layer_norm(x, self.gain, self.shift, axis=self.axis, eps=self.eps)


class BatchNorm2d(Module):
    """Per-channel normalization with current-batch statistics (no running buffers)."""

    def __init__(self, num_features, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.gain = Parameter(np.ones(num_features, dtype=T.default_dtype()))
        self.shift = Parameter(np.zeros(num_features, dtype=T.default_dtype()))

    def forward(self, x):
        return T.batch_norm(x, self.gain, self.shift, eps=self.eps)


class FeedForward(Module):
    """Pointwise two-layer MLP with GELU, applied over the channel axis of NCHW input."""

    def __init__(self, channels, rng, expansion=2):
        super().__init__()
        hidden = channels * expansion
        self.proj_in = Conv2d(channels, hidden, 1, rng)
        self.proj_out = Conv2d(hidden, channels, 1, rng)

    def forward(self, x):
        return self.proj_out(T.gelu(self.proj_in(x)))


def parameter_count(module):
    return sum(p.data.size for p in module.parameters())


def check_unique_names(module):
    names = [n for n, _ in module.named_parameters()]
    if len(names) != len(set(names)):
        seen, dupes = set(), set()
        for n in names:
            (dupes if n in seen else seen).add(n)
        raise ParameterError(f"duplicate parameter names: {sorted(dupes)}")
    return names
