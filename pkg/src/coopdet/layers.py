"""Parameterised layers built on :mod:`coopdet.ndtensor`."""
from __future__ import annotations

import numpy as np

from .ndtensor import Module, Tensor, conv2d, conv_transpose2d, dense, init_uniform, relu


class Conv2d(Module):
    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, k: int = 3,
                 stride: int = 1, padding: int | None = None, act: bool = False):
        if k % 2 == 0:
            raise ValueError(f"Conv2d uses odd kernels, got {k}")
        fan_in = c_in * k * k
        self.weight = init_uniform(rng, (c_out, c_in, k, k), fan_in)
        self.bias = init_uniform(rng, (c_out,), fan_in)
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        self.act = act

    def __call__(self, x: Tensor) -> Tensor:
        y = conv2d(x, self.weight, self.bias, self.stride, self.padding)
        return relu(y) if self.act else y


class ConvTranspose2d(Module):
    """Upsampling layer; with the default k=2, stride=2 it doubles H and W."""

    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, k: int = 2,
                 stride: int = 2, act: bool = False):
        # kernel stored in the [C_in_of_y, C_out, k, k] layout conv_transpose2d expects
        self.weight = init_uniform(rng, (c_in, c_out, k, k), c_in * k * k)
        self.bias = init_uniform(rng, (c_out,), c_in * k * k)
        self.stride = stride
        self.act = act

    def __call__(self, x: Tensor) -> Tensor:
        y = conv_transpose2d(x, self.weight, self.bias, self.stride)
        return relu(y) if self.act else y


class Dense(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int):
        self.weight = init_uniform(rng, (d_out, d_in), d_in)
        self.bias = init_uniform(rng, (d_out,), d_in)

    def __call__(self, x: Tensor) -> Tensor:
        return dense(x, self.weight, self.bias)


def zero_(module: Module) -> None:
    """Set every parameter of ``module`` to zero in place."""
    for p in module.parameters():
        p.data[...] = 0.0
