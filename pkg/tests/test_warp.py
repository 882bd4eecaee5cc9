"""Backward warping and voxel-flow fusion."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import dmvfn.tensor as T
from dmvfn.tensor import Tensor, ShapeError
from dmvfn.warp import VoxelFlow, backward_warp, apply_voxel_flow, clamp01

from oracles import gradcheck, tensors


def flow_of(fx, fy, n, h, w, dtype=np.float64):
    f = np.zeros((n, 2, h, w), dtype=dtype)
    f[:, 0] = fx
    f[:, 1] = fy
    return f


class TestBackwardWarp:
    def test_zero_flow_identity_exact(self):
        rng = np.random.default_rng(0)
        img = rng.random((2, 3, 6, 9)).astype(np.float32)
        out = backward_warp(Tensor(img), Tensor(flow_of(0, 0, 2, 6, 9, np.float32)))
        np.testing.assert_array_equal(out.data, img)

    def test_constant_image_any_flow(self):
        rng = np.random.default_rng(1)
        img = np.full((1, 3, 8, 8), 0.42, dtype=np.float32)
        flow = (rng.random((1, 2, 8, 8)).astype(np.float32) - 0.5) * 6
        out = backward_warp(Tensor(img), Tensor(flow))
        np.testing.assert_allclose(out.data, 0.42, rtol=1e-6)

    @pytest.mark.parametrize("shift", [1, 2])
    @pytest.mark.parametrize("axis", ["x", "y"])
    def test_integer_shift_recovery(self, shift, axis):
        rng = np.random.default_rng(2)
        img = rng.random((1, 3, 10, 10)).astype(np.float64)
        if axis == "x":
            shifted = np.roll(img, shift, axis=3)
            flow = flow_of(shift, 0, 1, 10, 10)
            out = backward_warp(Tensor(shifted), Tensor(flow))
            interior = np.s_[:, :, :, : 10 - shift]
        else:
            shifted = np.roll(img, shift, axis=2)
            flow = flow_of(0, shift, 1, 10, 10)
            out = backward_warp(Tensor(shifted), Tensor(flow))
            interior = np.s_[:, :, : 10 - shift, :]
        assert np.abs(out.data[interior] - img[interior]).max() <= 1e-6

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            backward_warp(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((1, 2, 5, 4))))
        with pytest.raises(ShapeError):
            backward_warp(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((1, 3, 4, 4))))

    def test_gradcheck_image_and_flow(self):
        # fractional flows keep sample points off the bilinear kinks
        rng = np.random.default_rng(3)
        img, = tensors(rng.random((1, 2, 6, 6)))
        base = (rng.random((1, 2, 6, 6)) - 0.5) * 2.0 + 0.3
        base = np.where(np.abs(base - np.round(base)) < 0.1, base + 0.17, base)
        flow, = tensors(base)
        gradcheck(lambda: T.mean_all(backward_warp(img, flow)), [img, flow])

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_output_range_never_exceeds_input_range(self, seed):
        rng = np.random.default_rng(seed)
        img = rng.random((1, 3, 6, 6)).astype(np.float32)
        flow = ((rng.random((1, 2, 6, 6)) - 0.5) * 20).astype(np.float32)
        out = backward_warp(Tensor(img), Tensor(flow))
        assert out.data.min() >= img.min() - 1e-6
        assert out.data.max() <= img.max() + 1e-6


class TestVoxelFlow:
    def make(self, rng, n=1, h=6, w=6, m_value=None):
        fp = ((rng.random((n, 2, h, w)) - 0.5) * 2).astype(np.float32)
        fc = ((rng.random((n, 2, h, w)) - 0.5) * 2).astype(np.float32)
        m = rng.random((n, 1, h, w)).astype(np.float32) if m_value is None else \
            np.full((n, 1, h, w), m_value, dtype=np.float32)
        return VoxelFlow(Tensor(fp), Tensor(fc), Tensor(m))

    def test_m_one_selects_prev(self):
        rng = np.random.default_rng(0)
        prev = Tensor(rng.random((1, 3, 6, 6)).astype(np.float32))
        cur = Tensor(rng.random((1, 3, 6, 6)).astype(np.float32))
        f = self.make(rng, m_value=1.0)
        out = apply_voxel_flow(prev, cur, f, clamp=False)
        ref = backward_warp(prev, f.f_prev)
        np.testing.assert_allclose(out.data, ref.data, atol=1e-7)

    def test_m_zero_selects_cur(self):
        rng = np.random.default_rng(1)
        prev = Tensor(rng.random((1, 3, 6, 6)).astype(np.float32))
        cur = Tensor(rng.random((1, 3, 6, 6)).astype(np.float32))
        f = self.make(rng, m_value=0.0)
        out = apply_voxel_flow(prev, cur, f, clamp=False)
        ref = backward_warp(cur, f.f_cur)
        np.testing.assert_allclose(out.data, ref.data, atol=1e-7)

    def test_zero_flow_half_m_is_mean(self):
        rng = np.random.default_rng(2)
        prev = Tensor(rng.random((1, 3, 6, 6)).astype(np.float32))
        cur = Tensor(rng.random((1, 3, 6, 6)).astype(np.float32))
        zero = Tensor(np.zeros((1, 2, 6, 6), dtype=np.float32))
        m = Tensor(np.full((1, 1, 6, 6), 0.5, dtype=np.float32))
        out = apply_voxel_flow(prev, cur, VoxelFlow(zero, zero, m), clamp=False)
        np.testing.assert_allclose(out.data, 0.5 * (prev.data + cur.data), atol=1e-7)

    def test_m_out_of_range_rejected(self):
        rng = np.random.default_rng(3)
        prev = Tensor(rng.random((1, 3, 6, 6)).astype(np.float32))
        cur = Tensor(rng.random((1, 3, 6, 6)).astype(np.float32))
        zero = Tensor(np.zeros((1, 2, 6, 6), dtype=np.float32))
        bad = Tensor(np.full((1, 1, 6, 6), 1.25, dtype=np.float32))
        with pytest.raises(ValueError, match=r"\[0,1\]"):
            apply_voxel_flow(prev, cur, VoxelFlow(zero, zero, bad))

    def test_component_shape_validation(self):
        with pytest.raises(ShapeError):
            VoxelFlow(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 2, 4, 4))),
                      Tensor(np.zeros((1, 2, 4, 4))))

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_swap_symmetry(self, seed):
        # swapping (prev, cur), (f_prev, f_cur) and m -> 1-m leaves the frame unchanged
        rng = np.random.default_rng(seed)
        prev = Tensor(rng.random((1, 3, 6, 6)).astype(np.float32))
        cur = Tensor(rng.random((1, 3, 6, 6)).astype(np.float32))
        f = self.make(rng)
        out = apply_voxel_flow(prev, cur, f, clamp=False)
        swapped = VoxelFlow(f.f_cur, f.f_prev, Tensor(1.0 - f.m.data))
        out2 = apply_voxel_flow(cur, prev, swapped, clamp=False)
        np.testing.assert_allclose(out.data, out2.data, atol=1e-6)

    def test_fusion_gradcheck(self):
        rng = np.random.default_rng(7)
        prev, cur = tensors(rng.random((1, 2, 5, 5)), rng.random((1, 2, 5, 5)))
        fp, fc = tensors((rng.random((1, 2, 5, 5)) - 0.5) + 0.23, (rng.random((1, 2, 5, 5)) - 0.5) + 0.31)
        mlogit, = tensors(rng.standard_normal((1, 1, 5, 5)))

        def forward():
            f = VoxelFlow(fp, fc, T.sigmoid(mlogit))
            return T.mean_all(apply_voxel_flow(prev, cur, f, clamp=False))

        gradcheck(forward, [prev, cur, fp, fc, mlogit])


class TestClamp01:
    def test_values_and_subgradient(self):
        x = Tensor(np.array([-0.5, 0.25, 1.5]), requires_grad=True)
        y = clamp01(x)
        np.testing.assert_allclose(y.data, [0.0, 0.25, 1.0])
        T.sum_all(y).backward()
        np.testing.assert_allclose(x.grad, [0.0, 1.0, 0.0])
