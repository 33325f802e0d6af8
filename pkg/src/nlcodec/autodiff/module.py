"""Parameter containers and the layer types used by the codec networks."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .conv import causal_mask, conv2d, gdn, left_neighbor_mask, masked_conv2d, previous_row_mask, transposed_conv2d
from .tensor import Parameter, Tensor

# positivity reparameterization for GDN: value = max(raw, sqrt(floor + ped))^2 - ped
_PEDESTAL = 2.0 ** -36


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{path}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def name_parameters(self) -> None:
        names = set()
        for name, p in self.named_parameters():
            if name in names:
                raise ValueError(f"duplicate parameter name {name}")
            names.add(name)
            p.name = name

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv(Module):
    """Convolution layer with bias; ``kind`` is "conv", "deconv" or "masked"."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1, kind: str = "conv",
                 mask: np.ndarray | None = None, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        self.kind = kind
        self.mask = mask
        if kind == "deconv":
            shape = (in_ch, out_ch, kernel, kernel)
            fan_in = in_ch * kernel * kernel // (stride * stride)
        else:
            shape = (out_ch, in_ch, kernel, kernel)
            fan_in = in_ch * (int(mask.sum()) if mask is not None else kernel * kernel)
        self.weight = Parameter(_fan_in_uniform(rng, shape, max(fan_in, 1)))
        self.bias = Parameter(np.zeros(out_ch))

    @property
    def out_channels(self) -> int:
        return self.bias.shape[0]

    def forward(self, x: Tensor) -> Tensor:
        if self.kind == "deconv":
            y = transposed_conv2d(x, self.weight, self.stride)
        elif self.kind == "masked":
            y = masked_conv2d(x, self.weight, self.mask)
        else:
            y = conv2d(x, self.weight, self.stride, "same")
        return y + ops.reshape(self.bias, (1, -1, 1, 1))


class GDN(Module):
    def __init__(self, channels: int, inverse: bool = False, beta_min: float = 1e-6, gamma_init: float = 0.1):
        self.inverse = inverse
        self.beta_min = beta_min
        self.beta = Parameter(np.sqrt(np.ones(channels) + _PEDESTAL))
        self.gamma = Parameter(np.sqrt(gamma_init * np.eye(channels) + _PEDESTAL))

    def effective_beta(self) -> Tensor:
        b = ops.lower_bound(self.beta, np.sqrt(self.beta_min + _PEDESTAL))
        return ops.square(b) - _PEDESTAL

    def effective_gamma(self) -> Tensor:
        g = ops.lower_bound(self.gamma, np.sqrt(_PEDESTAL))
        return ops.square(g) - _PEDESTAL

    def forward(self, x: Tensor) -> Tensor:
        return gdn(x, self.effective_beta(), self.effective_gamma(), self.inverse)


class LeakyReLU(Module):
    def __init__(self, slope: float = 0.2):
        self.slope = slope

    def forward(self, x: Tensor) -> Tensor:
        return ops.leaky_relu(x, self.slope)


class Sequential(Module):
    def __init__(self, *layers: Module):
        self.layers = list(layers)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


CONTEXT_MASKS = {
    "3": lambda: causal_mask(3),
    "5": lambda: causal_mask(5),
    "7": lambda: causal_mask(7),
    "single-neighbor": lambda: left_neighbor_mask(3),
    "prev-row-3": lambda: previous_row_mask(3),
}
