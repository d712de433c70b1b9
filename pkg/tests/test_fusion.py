import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coopdet.fusion import (ChannelMask, DeformableSampler, MSBlock, MultiScaleCrossAttention,
                            check_ladder, scale_attention)
from coopdet.geometry import CameraRig, intrinsics
from coopdet.layers import zero_
from coopdet.ndtensor import Tensor, mul, tsum
from gradcheck import check_grads
from oracles import random_rig


def ladder(rng, c=3, h=8, w=8, scale=1.0):
    return [Tensor(rng.normal(size=(c, h >> m, w >> m)) * scale) for m in range(4)]


def test_check_ladder():
    rng = np.random.default_rng(0)
    check_ladder(ladder(rng))
    with pytest.raises(ValueError):
        check_ladder(ladder(rng)[:3])
    bad = ladder(rng)
    bad[2] = Tensor(np.zeros((3, 3, 2)))
    with pytest.raises(ValueError, match="scale 2"):
        check_ladder(bad)


def test_zero_offsets_reduce_to_plain_conv():
    rng = np.random.default_rng(1)
    ds = DeformableSampler(rng, 3)
    x = Tensor(rng.normal(size=(3, 6, 5)))
    np.testing.assert_allclose(ds(x).data, ds.conv(x).data, atol=1e-12)


def test_ms_block_shapes():
    rng = np.random.default_rng(2)
    blk = MSBlock(rng, 3)
    out = blk(ladder(rng, h=16, w=8))
    assert [o.shape for o in out] == [(3, 16, 8)] * 4
    assert [len(u) for u in blk.upconvs] == [0, 1, 2, 3]


def test_ms_block_gradients_through_offset_branch():
    rng = np.random.default_rng(3)
    blk = MSBlock(rng, 2, zero_offsets=False)
    for s in blk.samplers:  # small non-zero offsets
        s.offset.weight.data *= 0.3
    feats = [Tensor(f.data, requires_grad=True) for f in ladder(rng, c=2, h=8, w=8)]
    probes = [rng.normal(size=(2, 8, 8)) for _ in range(4)]

    def loss():
        return sum((tsum(mul(o, p)) for o, p in zip(blk(feats), probes)), Tensor(0.0))

    params = [feats[0], feats[3], blk.samplers[0].offset.weight, blk.samplers[1].offset.bias,
              blk.samplers[2].conv.weight, blk.upconvs[3][0].weight]
    assert check_grads(loss, params, h=1e-6, max_entries=10) < 1e-4


def test_identical_scales_give_uniform_weights():
    rng = np.random.default_rng(4)
    f = Tensor(rng.normal(size=(5, 4, 4)))
    q = Tensor(rng.normal(size=(5, 4, 4)))
    w, fused = scale_attention(q, [f, f, f, f])
    np.testing.assert_allclose(w.data, 0.25, atol=1e-12)
    np.testing.assert_allclose(fused.data, f.data, atol=1e-12)


def test_weights_match_direct_softmax_formula():
    rng = np.random.default_rng(5)
    q = Tensor(rng.normal(size=(4, 3, 3)))
    aligned = [Tensor(rng.normal(size=(4, 3, 3))) for _ in range(4)]
    w, fused = scale_attention(q, aligned)
    qv = q.data.mean(axis=(1, 2))
    logits = np.array([qv @ a.data.mean(axis=(1, 2)) for a in aligned]) / 2.0
    ref = np.exp(logits - logits.max())
    ref /= ref.sum()
    np.testing.assert_allclose(w.data, ref, atol=1e-12)
    np.testing.assert_allclose(fused.data, sum(r * a.data for r, a in zip(ref, aligned)), atol=1e-12)


def test_dominant_key_takes_the_weight():
    rng = np.random.default_rng(6)
    q = Tensor(np.ones((4, 2, 2)))
    aligned = [Tensor(rng.normal(size=(4, 2, 2)) * 0.1) for _ in range(4)]
    prev = 0.0
    for boost in (0.5, 1, 2, 4, 8):
        aligned[2] = Tensor(np.full((4, 2, 2), float(boost)))
        w, _ = scale_attention(q, aligned)
        assert w.data[2] > prev
        prev = w.data[2]
    assert prev > 1 - 1e-6


@given(st.integers(0, 10_000), st.permutations(range(4)))
@settings(max_examples=30, deadline=None)
def test_weights_permutation_equivariant_and_convex(seed, perm):
    rng = np.random.default_rng(seed)
    q = Tensor(rng.normal(size=(3, 4, 4)) * 2)
    aligned = [Tensor(rng.normal(size=(3, 4, 4)) * 2) for _ in range(4)]
    w, fused = scale_attention(q, aligned)
    assert abs(w.data.sum() - 1) < 1e-9 and (w.data >= 0).all()
    wp, fp = scale_attention(q, [aligned[i] for i in perm])
    np.testing.assert_allclose(wp.data, w.data[list(perm)], atol=1e-12)
    np.testing.assert_allclose(fp.data, fused.data, atol=1e-12)
    stack = np.stack([a.data for a in aligned])
    assert (fused.data >= stack.min(axis=0) - 1e-12).all()
    assert (fused.data <= stack.max(axis=0) + 1e-12).all()


def test_mca_outputs_and_vehicle_branch():
    rng = np.random.default_rng(7)
    mca = MultiScaleCrossAttention(rng, 3)
    fv, fi = ladder(rng, h=16, w=16), ladder(rng, h=16, w=16)
    veh, inf, w = mca(fv, fi)
    assert veh.shape == inf.shape == (3, 16, 16)
    assert w.shape == (4,) and abs(w.data.sum() - 1) < 1e-9
    aligned = mca.veh_block(fv)
    np.testing.assert_allclose(veh.data, np.mean([a.data for a in aligned], axis=0), atol=1e-12)
    with pytest.raises(ValueError):
        mca(fv, ladder(rng, h=8, w=8))


def test_mca_gradients():
    rng = np.random.default_rng(8)
    mca = MultiScaleCrossAttention(rng, 2, zero_offsets=False)
    fv = [Tensor(f.data, requires_grad=True) for f in ladder(rng, c=2)]
    fi = [Tensor(f.data, requires_grad=True) for f in ladder(rng, c=2)]
    pv, pi, pw = rng.normal(size=(2, 8, 8)), rng.normal(size=(2, 8, 8)), rng.normal(size=4)

    def loss():
        v, i, w = mca(fv, fi)
        return tsum(mul(v, pv)) + tsum(mul(i, pi)) + tsum(mul(w, pw))

    params = [fv[0], fi[1], mca.inf_block.samplers[0].offset.weight, mca.veh_block.samplers[3].conv.weight]
    assert check_grads(loss, params, h=1e-6, max_entries=10) < 1e-4


# channel mask -------------------------------------------------------------

def test_zero_mlp_gives_half_mask():
    rng = np.random.default_rng(9)
    cm = ChannelMask(rng, 4)
    zero_(cm)
    f = Tensor(rng.normal(size=(4, 3, 3)))
    rig = random_rig(rng)
    np.testing.assert_array_equal(cm.mask(rig).data, 0.5)
    np.testing.assert_array_equal(cm(f, rig).data, 0.5 * f.data)


def test_mask_is_independent_of_features_and_broadcasts():
    rng = np.random.default_rng(10)
    cm = ChannelMask(rng, 5, input_scale=0.05)
    rig = random_rig(rng)
    f1, f2 = Tensor(rng.normal(size=(5, 4, 6))), Tensor(rng.normal(size=(5, 4, 6)) * 100)
    out1, out2 = cm(f1, rig), cm(f2, rig)
    m1 = out1.data / f1.data
    m2 = out2.data / f2.data
    m = cm.mask(rig).data
    assert ((m > 0) & (m < 1)).all()
    assert np.array_equal(cm.mask(rig).data, m)
    for c in range(5):
        np.testing.assert_array_equal(out1.data[c], m[c] * f1.data[c])
        np.testing.assert_array_equal(out2.data[c], m[c] * f2.data[c])
    np.testing.assert_allclose(m1, m2, rtol=1e-12)


def test_mask_reads_r_t_k_in_order():
    rng = np.random.default_rng(11)
    cm = ChannelMask(rng, 3)
    rig = CameraRig.look_at(intrinsics(50, 64, 48), (1, 2, 3), (10, 0, 0))
    x = np.concatenate([rig.R.ravel(), rig.t, rig.K.ravel()])
    h = np.maximum(cm.fc1.weight.data @ x + cm.fc1.bias.data, 0)
    ref = 1 / (1 + np.exp(-(cm.fc2.weight.data @ h + cm.fc2.bias.data)))
    np.testing.assert_allclose(cm.mask(rig).data, ref, atol=1e-12)
    assert cm.fc1.weight.shape == (3, 21) and cm.fc2.weight.shape == (3, 3)


def test_mask_gradients():
    rng = np.random.default_rng(12)
    cm = ChannelMask(rng, 4, input_scale=0.05)
    rig = random_rig(rng)
    f = Tensor(rng.normal(size=(4, 3, 3)), requires_grad=True)
    p = rng.normal(size=(4, 3, 3))
    params = [f, cm.fc1.weight, cm.fc1.bias, cm.fc2.weight, cm.fc2.bias]
    assert check_grads(lambda: tsum(mul(cm(f, rig), p)), params) < 1e-5
