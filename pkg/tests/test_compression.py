import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coopdet.compression import (HEADER, CompressionConfig, FeatureCompressor, WirePacket,
                                 average_byte)
from coopdet.layers import Conv2d, ConvTranspose2d
from coopdet.ndtensor import Tensor, tsum, mul
from gradcheck import check_grads


def build(c, cfg, seed=0):
    return FeatureCompressor(np.random.default_rng(seed), c, cfg)


def test_payload_shape_worked_example():
    cfg = CompressionConfig(ccr=4, scr=16)
    assert cfg.alpha == 2
    fc = build(16, cfg)
    feat = Tensor(np.random.default_rng(0).normal(size=(16, 64, 64)))
    pkt = fc.compress(feat)
    assert pkt.shape == (4, 16, 16)
    assert (16 * 64 * 64) // np.prod(pkt.shape) == 64 == cfg.rate


def test_identity_rates_keep_shape():
    fc = build(8, CompressionConfig(1, 1))
    feat = Tensor(np.random.default_rng(1).normal(size=(8, 12, 20)))
    assert fc.compress(feat).shape == (8, 12, 20)
    assert fc.spatial_compressor == [] and fc.spatial_decompressor == []


def test_sweep_endpoint_rate():
    cfg = CompressionConfig(ccr=64, scr=256)
    assert cfg.rate == 16384 and cfg.alpha == 4
    assert cfg.payload_shape(64, 272, 480) == (1, 17, 30)


@pytest.mark.parametrize("ccr", [1, 4, 16, 64])
@pytest.mark.parametrize("scr", [1, 16, 256])
def test_structure_matches_rates(ccr, scr):
    cfg = CompressionConfig(ccr, scr)
    fc = build(64, cfg)
    assert len(fc.spatial_compressor) == cfg.alpha == len(fc.spatial_decompressor)
    assert all(isinstance(b, Conv2d) and b.stride == 2 for b in fc.spatial_compressor)
    assert all(isinstance(b, ConvTranspose2d) for b in fc.spatial_decompressor)
    assert all(layer.weight.shape[2:] == (1, 1) for layer in fc.channel_compressor + fc.channel_decompressor)
    assert fc.channel_compressor[-1].weight.shape[0] == 64 // ccr
    assert fc.channel_decompressor[-1].weight.shape[0] == 64


def test_byte_law_against_identity():
    base = WirePacket(Tensor(np.zeros((64, 32, 32))), 4).byte_count
    for ccr in (1, 4, 16, 64):
        for scr in (1, 16, 256):
            shape = CompressionConfig(ccr, scr).payload_shape(64, 32, 32)
            assert WirePacket(Tensor(np.zeros(shape)), 4).byte_count * ccr * scr == base


def test_decompress_restores_ladder():
    cfg = CompressionConfig(2, 4)
    fc = build(8, cfg)
    feat = Tensor(np.random.default_rng(2).normal(size=(8, 16, 24)))
    scales = fc.decompress(fc.compress(feat))
    assert [s.shape for s in scales] == [(8, 16, 24), (8, 8, 12), (8, 4, 6), (8, 2, 3)]
    assert all(np.isfinite(s.data).all() for s in scales)


@given(st.sampled_from([1, 2, 4]), st.sampled_from([1, 4, 16]), st.integers(1, 3), st.integers(1, 3),
       st.integers(0, 1000))
@settings(max_examples=25, deadline=None)
def test_ladder_property_over_valid_shapes(ccr, scr, hm, wm, seed):
    cfg = CompressionConfig(ccr, scr)
    # extents divisible by 8 (three rescale steps) and by 2^alpha
    f = max(8, 2 ** cfg.alpha)
    h, w = hm * f, wm * f
    fc = build(4, cfg, seed)
    feat = Tensor(np.random.default_rng(seed).normal(size=(4, h, w)) * 10)
    pkt = fc.compress(feat)
    assert pkt.shape == cfg.payload_shape(4, h, w)
    scales = fc.decompress(pkt)
    for m, s in enumerate(scales):
        assert s.shape == (4, h >> m, w >> m)
        assert np.isfinite(s.data).all()


def test_divisibility_errors_give_padding_hint():
    with pytest.raises(ValueError, match="pad by 2 channels"):
        CompressionConfig(4, 1).check(6, 8, 8)
    with pytest.raises(ValueError, match="pad to 12x8"):
        CompressionConfig(1, 16).check(4, 10, 8)
    with pytest.raises(ValueError, match="power of 4"):
        CompressionConfig(1, 8)
    with pytest.raises(ValueError):
        CompressionConfig(0, 1)
    with pytest.raises(ValueError):
        build(6, CompressionConfig(4, 1))


def test_config_mismatch_rejected():
    a = build(8, CompressionConfig(2, 4))
    b = build(8, CompressionConfig(4, 4))
    pkt = a.compress(Tensor(np.ones((8, 8, 8))))
    with pytest.raises(ValueError, match="decoder expects"):
        b.decompress(pkt)
    with pytest.raises(ValueError):
        a.compress(Tensor(np.ones((4, 8, 8))))


def test_gradient_flows_through_link():
    fc = build(4, CompressionConfig(2, 4), seed=3)
    rng = np.random.default_rng(3)
    feat = Tensor(rng.normal(size=(4, 8, 8)), requires_grad=True)
    probes = [rng.normal(size=(4, 8 >> m, 8 >> m)) for m in range(4)]

    def loss():
        scales = fc.decompress(fc.compress(feat))
        return sum((tsum(mul(s, p)) for s, p in zip(scales, probes)), Tensor(0.0))

    params = [feat, fc.channel_compressor[0].weight, fc.spatial_decompressor[0].weight,
              fc.rescale[2].weight]
    assert check_grads(loss, params, max_entries=12) < 1e-6


def test_average_byte():
    pkt = WirePacket(Tensor(np.zeros((4, 16, 16))), 4)
    assert pkt.byte_count == 4096
    assert average_byte([pkt]) == 4096
    small = WirePacket(Tensor(np.zeros((1, 16, 16))), 4)
    assert average_byte([pkt, small]) == (4096 + 1024) / 2
    with pytest.raises(ValueError):
        average_byte([])


@pytest.mark.parametrize("nbytes", [2, 4, 8])
def test_wire_roundtrip(nbytes):
    data = np.random.default_rng(4).normal(size=(3, 5, 7))
    pkt = WirePacket(Tensor(data), nbytes)
    blob = pkt.to_bytes()
    assert len(blob) == HEADER.size + pkt.byte_count == 13 + pkt.byte_count
    assert blob[:13] == (3).to_bytes(4, "little") + (5).to_bytes(4, "little") + (7).to_bytes(4, "little") \
        + bytes([{2: 0, 4: 1, 8: 2}[nbytes]])
    back = WirePacket.from_bytes(blob)
    assert back.shape == (3, 5, 7) and back.wire_dtype_bytes == nbytes
    dt = {2: np.float16, 4: np.float32, 8: np.float64}[nbytes]
    np.testing.assert_array_equal(back.payload.data, data.astype(dt).astype(np.float64))
    with pytest.raises(ValueError):
        WirePacket.from_bytes(blob[:-1])
