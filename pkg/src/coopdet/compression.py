"""Feature compression for the infrastructure-to-vehicle link, and byte accounting.

Wire format of a :class:`WirePacket` (all little-endian)::

    offset  size  field
    0       4     u32 channels
    4       4     u32 height
    8       4     u32 width
    12      1     u8  dtype code (0 = float16, 1 = float32, 2 = float64)
    13      n     payload, C*H*W values in row-major order

``byte_count`` counts the payload only, so it equals ``C*H*W*dtype_bytes``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .layers import Conv2d, ConvTranspose2d
from .ndtensor import Module, Tensor

HEADER = struct.Struct("<IIIB")
DTYPES = {0: np.dtype("<f2"), 1: np.dtype("<f4"), 2: np.dtype("<f8")}
DTYPE_CODES = {v.itemsize: k for k, v in DTYPES.items()}


@dataclass(frozen=True)
class CompressionConfig:
    ccr: int = 1
    scr: int = 1
    wire_dtype_bytes: int = 4

    def __post_init__(self):
        if self.ccr < 1 or self.scr < 1:
            raise ValueError(f"compression rates must be positive, got CCR={self.ccr} SCR={self.scr}")
        if self.wire_dtype_bytes not in DTYPE_CODES:
            raise ValueError(f"wire dtype must be 2, 4 or 8 bytes, got {self.wire_dtype_bytes}")
        a = round(math.log(self.scr, 4))
        if 4 ** a != self.scr:
            raise ValueError(f"SCR must be a power of 4, got {self.scr}")

    @property
    def alpha(self) -> int:
        """Number of stride-2 spatial compressor blocks, log4(SCR)."""
        return round(math.log(self.scr, 4))

    @property
    def rate(self) -> int:
        return self.ccr * self.scr

    def payload_shape(self, c: int, h: int, w: int) -> tuple[int, int, int]:
        self.check(c, h, w)
        f = 2 ** self.alpha
        return max(1, c // self.ccr), h // f, w // f

    def check(self, c: int, h: int, w: int) -> None:
        if c % self.ccr:
            pad = -c % self.ccr
            raise ValueError(f"{c} channels not divisible by CCR={self.ccr}; pad by {pad} channels")
        f = 2 ** self.alpha
        if h % f or w % f:
            raise ValueError(f"feature {h}x{w} not divisible by 2^alpha={f}; "
                             f"pad to {h + (-h % f)}x{w + (-w % f)}")


@dataclass
class WirePacket:
    payload: Tensor  # [C/CCR, h0/2^alpha, w0/2^alpha]
    wire_dtype_bytes: int = 4
    config: CompressionConfig | None = None

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.payload.shape

    @property
    def byte_count(self) -> int:
        return int(np.prod(self.shape)) * self.wire_dtype_bytes

    def to_bytes(self) -> bytes:
        dt = DTYPES[DTYPE_CODES[self.wire_dtype_bytes]]
        c, h, w = self.shape
        return HEADER.pack(c, h, w, DTYPE_CODES[self.wire_dtype_bytes]) + \
            np.ascontiguousarray(self.payload.data, dtype=dt).tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "WirePacket":
        c, h, w, code = HEADER.unpack_from(blob)
        if code not in DTYPES:
            raise ValueError(f"unknown dtype code {code}")
        dt = DTYPES[code]
        body = blob[HEADER.size:]
        if len(body) != c * h * w * dt.itemsize:
            raise ValueError(f"payload holds {len(body)} bytes, header implies {c * h * w * dt.itemsize}")
        arr = np.frombuffer(body, dtype=dt).astype(np.float64).reshape(c, h, w)
        return cls(Tensor(arr), dt.itemsize)


class FeatureCompressor(Module):
    """Channel/spatial encoder on the infrastructure side and the matching decoder.

    The decoder also regenerates the coarser scales 1..3 from the restored
    finest map with stride-2 conv blocks.
    """

    def __init__(self, rng: np.random.Generator, channels: int, cfg: CompressionConfig,
                 channel_layers: int = 2):
        if channels % cfg.ccr:
            raise ValueError(f"{channels} channels not divisible by CCR={cfg.ccr}")
        self.cfg = cfg
        self.channels = channels
        cc = max(1, channels // cfg.ccr)
        widths = [channels] * (channel_layers - 1) + [cc]
        self.channel_compressor = _pointwise_stack(rng, channels, widths)
        self.spatial_compressor = [Conv2d(rng, cc, cc, 3, stride=2, act=True) for _ in range(cfg.alpha)]
        self.spatial_decompressor = [ConvTranspose2d(rng, cc, cc, 2, 2, act=True) for _ in range(cfg.alpha)]
        back = [channels] * channel_layers
        self.channel_decompressor = _pointwise_stack(rng, cc, back)
        self.rescale = [Conv2d(rng, channels, channels, 3, stride=2, act=True) for _ in range(3)]

    def compress(self, feat: Tensor) -> WirePacket:
        self.cfg.check(*feat.shape)
        if feat.shape[0] != self.channels:
            raise ValueError(f"compressor built for {self.channels} channels, got {feat.shape[0]}")
        x = feat
        for layer in self.channel_compressor:
            x = layer(x)
        for layer in self.spatial_compressor:
            x = layer(x)
        return WirePacket(x, self.cfg.wire_dtype_bytes, self.cfg)

    def decompress(self, pkt: WirePacket) -> list[Tensor]:
        if pkt.config is not None and pkt.config != self.cfg:
            raise ValueError(f"packet built with {pkt.config}, decoder expects {self.cfg}")
        cc = self.channel_compressor[-1].weight.shape[0]
        if pkt.shape[0] != cc:
            raise ValueError(f"packet has {pkt.shape[0]} channels, decoder expects {cc}")
        x = pkt.payload
        for layer in self.spatial_decompressor:
            x = layer(x)
        for layer in self.channel_decompressor:
            x = layer(x)
        scales = [x]
        for layer in self.rescale:
            scales.append(layer(scales[-1]))
        return scales


def _pointwise_stack(rng, c_in: int, widths: Sequence[int]) -> list[Conv2d]:
    layers = []
    for i, w in enumerate(widths):
        layers.append(Conv2d(rng, c_in, w, 1, act=i < len(widths) - 1))
        c_in = w
    return layers


def average_byte(packets: Sequence[WirePacket]) -> float:
    if not packets:
        raise ValueError("average_byte needs at least one packet")
    return sum(p.byte_count for p in packets) / len(packets)
