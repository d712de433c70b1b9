"""Multi-scale cross attention between the two views and camera-aware channel masking."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .geometry import CameraRig
from .layers import Conv2d, ConvTranspose2d, Dense, zero_
from .ndtensor import (Module, Tensor, add, bilinear_sample, dense, mean_pool2d, mul, relu,
                       reshape, sigmoid, softmax, stack, tmean, transpose)

MultiScaleFeatures = Sequence[Tensor]  # scales 0..3, each [C, h_m, w_m]


def check_ladder(feats: MultiScaleFeatures) -> None:
    """Raise unless ``feats`` is four maps whose extents halve at each step."""
    if len(feats) != 4:
        raise ValueError(f"expected 4 scales, got {len(feats)}")
    c, h, w = feats[0].shape
    for m, f in enumerate(feats[1:], start=1):
        exp = (c, h >> m, w >> m)
        if f.shape != exp or (h >> m) << m != h or (w >> m) << m != w:
            raise ValueError(f"scale {m} has shape {f.shape}, expected {exp}")


class DeformableSampler(Module):
    """Single-group deformable 3x3 conv.

    A 3x3 conv predicts a 2D offset per pixel, the map is bilinearly resampled
    at the shifted positions, and a second 3x3 conv mixes the result.  With the
    offset branch zeroed this reduces to the plain conv.
    """

    def __init__(self, rng: np.random.Generator, channels: int, zero_offsets: bool = True):
        self.offset = Conv2d(rng, channels, 2, 3)
        if zero_offsets:
            zero_(self.offset)
        self.conv = Conv2d(rng, channels, channels, 3, act=True)

    def __call__(self, x: Tensor) -> Tensor:
        c, h, w = x.shape
        off = self.offset(x)  # [2, h, w] as (du, dv)
        vv, uu = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                             indexing="ij")
        base = np.stack([uu.reshape(-1), vv.reshape(-1)], axis=1)
        coords = add(transpose(reshape(off, (2, h * w)), (1, 0)), base)
        shifted = reshape(bilinear_sample(x, coords), (c, h, w))
        return self.conv(shifted)


class MSBlock(Module):
    """Aligns a four-scale ladder: deformable sampling per scale, then upsampling to scale 0."""

    def __init__(self, rng: np.random.Generator, channels: int, zero_offsets: bool = True):
        self.samplers = [DeformableSampler(rng, channels, zero_offsets) for _ in range(4)]
        self.upconvs = [[ConvTranspose2d(rng, channels, channels, 2, 2, act=True) for _ in range(m)]
                        for m in range(4)]

    def __call__(self, feats: MultiScaleFeatures) -> list[Tensor]:
        check_ladder(feats)
        out = []
        for m, f in enumerate(feats):
            x = self.samplers[m](f)
            for up in self.upconvs[m]:
                x = up(x)
            out.append(x)
        return out


def scale_attention(query_map: Tensor, aligned: Sequence[Tensor]) -> tuple[Tensor, Tensor]:
    """Attend from one pooled query over the pooled aligned scales.

    Returns the weights ``w[M]`` (softmax of q.k_m / sqrt(C)) and the blended map
    ``sum_m w_m * aligned[m]``.
    """
    c = query_map.shape[0]
    q = mean_pool2d(query_map)  # [C]
    keys = stack([mean_pool2d(a) for a in aligned])  # [M, C]
    logits = dense(q, keys) * (1.0 / math.sqrt(c))
    weights = softmax(logits, axis=0)
    blend = stack(aligned)  # [M, C, h, w]
    fused = mul(blend, reshape(weights, (len(aligned), 1, 1, 1))).sum(axis=0)
    return weights, fused


class MultiScaleCrossAttention(Module):
    def __init__(self, rng: np.random.Generator, channels: int, zero_offsets: bool = True):
        self.veh_block = MSBlock(rng, channels, zero_offsets)
        self.inf_block = MSBlock(rng, channels, zero_offsets)

    def vehicle_branch(self, f_veh: MultiScaleFeatures) -> Tensor:
        return tmean(stack(self.veh_block(f_veh)), axis=0)

    def __call__(self, f_veh: MultiScaleFeatures, f_inf: MultiScaleFeatures
                 ) -> tuple[Tensor, Tensor, Tensor]:
        """Returns ``(vehicle feature, infrastructure feature, scale weights)``, maps at scale 0."""
        veh = self.vehicle_branch(f_veh)
        if veh.shape != f_inf[0].shape:
            raise ValueError(f"vehicle scale-0 {veh.shape} vs infrastructure {f_inf[0].shape}")
        aligned = self.inf_block(f_inf)
        weights, inf = scale_attention(veh, aligned)
        return veh, inf, weights


class ChannelMask(Module):
    """Per-channel gate from the flattened camera parameters: sigmoid(MLP([R, t, K]))."""

    def __init__(self, rng: np.random.Generator, channels: int, hidden: int | None = None,
                 input_scale: Sequence[float] | float = 1.0):
        hidden = hidden or channels
        self.fc1 = Dense(rng, 21, hidden)
        self.fc2 = Dense(rng, hidden, channels)
        self.input_scale = np.broadcast_to(np.asarray(input_scale, dtype=np.float64), (21,)).copy()

    def mask(self, rig: CameraRig) -> Tensor:
        x = Tensor(rig.flat_params() * self.input_scale)
        return sigmoid(self.fc2(relu(self.fc1(x))))

    def __call__(self, f: Tensor, rig: CameraRig) -> Tensor:
        m = self.mask(rig)
        return mul(f, reshape(m, (f.shape[0], 1, 1)))
