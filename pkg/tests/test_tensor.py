"""Tests for the tensor substrate: primitive semantics, oracles, and gradients."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from satbev import tensor as T
from satbev.tensor import DimensionError, GradTape, Tensor


def conv2d_loop_oracle(x, k, stride=1, pad=0):
    """Direct six-loop convolution, independent of the vectorized path."""
    cin, h, w = x.shape
    cout, _, kh, kw = k.shape
    xp = np.zeros((cin, h + 2 * pad, w + 2 * pad))
    xp[:, pad : pad + h, pad : pad + w] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((cout, ho, wo))
    for o in range(cout):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for c in range(cin):
                    for u in range(kh):
                        for v in range(kw):
                            acc += xp[c, i * stride + u, j * stride + v] * k[o, c, u, v]
                out[o, i, j] = acc
    return out


class TestConv2d:
    def test_all_ones_sums(self):
        x = Tensor(np.ones((1, 3, 3)))
        k = Tensor(np.ones((1, 1, 3, 3)))
        out = T.conv2d(x, k)
        assert out.shape == (1, 1, 1)
        assert out.item() == 9.0

    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(2, 5, 7)))
        k = np.zeros((2, 2, 3, 3))
        k[0, 0, 1, 1] = 1.0
        k[1, 1, 1, 1] = 1.0
        out = T.conv2d(x, Tensor(k), stride=1, pad=1)
        np.testing.assert_array_equal(out.data, x.data)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 5, 5))
        k = rng.normal(size=(3, 2, 3, 3))
        out = T.conv2d(Tensor(x), Tensor(k))
        np.testing.assert_allclose(out.data, conv2d_loop_oracle(x, k), atol=1e-12)

    def test_strided_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(3, 8, 8))
        k = rng.normal(size=(4, 3, 3, 3))
        out = T.conv2d(Tensor(x), Tensor(k), stride=2, pad=1)
        np.testing.assert_allclose(out.data, conv2d_loop_oracle(x, k, 2, 1), atol=1e-12)

    def test_linearity_in_input(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 6, 6))
        y = rng.normal(size=(2, 6, 6))
        k = Tensor(rng.normal(size=(3, 2, 3, 3)))
        lhs = T.conv2d(Tensor(2.5 * x - 1.5 * y), k).data
        rhs = 2.5 * T.conv2d(Tensor(x), k).data - 1.5 * T.conv2d(Tensor(y), k).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_channel_mismatch_names_axes(self):
        with pytest.raises(DimensionError, match="channels"):
            T.conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))

    def test_even_kernel_rejected(self):
        with pytest.raises(DimensionError):
            T.conv2d(Tensor(np.ones((1, 4, 4))), Tensor(np.ones((1, 1, 2, 2))))

    def test_gradients_vs_finite_differences(self):
        rng = np.random.default_rng(4)
        k = rng.normal(size=(2, 2, 3, 3))
        x0 = rng.normal(size=(2, 6, 6))
        err = T.finite_diff_check(
            lambda x: T.sum_all(T.conv2d(x, Tensor(k), stride=2, pad=1)), Tensor(x0)
        )
        assert err < 1e-6
        err_k = T.finite_diff_check(
            lambda k_: T.sum_all(T.conv2d(Tensor(x0), k_, stride=2, pad=1)), Tensor(k)
        )
        assert err_k < 1e-6


class TestBilinearSample:
    def test_lattice_point(self):
        rng = np.random.default_rng(5)
        img = rng.normal(size=(3, 6, 6))
        out, valid = T.bilinear_sample(Tensor(img), [[2.0, 3.0]])
        assert valid.all()
        np.testing.assert_allclose(out.data[:, 0], img[:, 3, 2], atol=1e-15)

    def test_midpoint_average(self):
        img = np.zeros((1, 2, 2))
        img[0, 0, 1] = 1.0  # pixels (x=0,y=0)=0 and (x=1,y=0)=1
        out, valid = T.bilinear_sample(Tensor(img), [[0.5, 0.0]])
        assert valid.all()
        assert out.data[0, 0] == pytest.approx(0.5)

    def test_out_of_bounds(self):
        img = Tensor(np.ones((1, 8, 8)))
        out, valid = T.bilinear_sample(img, [[-0.5, 10.2]])
        assert not valid.any()
        assert out.data[0, 0] == 0.0

    def test_linearity_in_image(self):
        rng = np.random.default_rng(6)
        a = rng.normal(size=(2, 5, 5))
        b = rng.normal(size=(2, 5, 5))
        xy = rng.uniform(-1, 5.5, size=(30, 2))
        sa, _ = T.bilinear_sample(Tensor(a), xy)
        sb, _ = T.bilinear_sample(Tensor(b), xy)
        sab, _ = T.bilinear_sample(Tensor(3.0 * a + 0.5 * b), xy)
        np.testing.assert_allclose(sab.data, 3.0 * sa.data + 0.5 * sb.data, atol=1e-12)

    def test_gradient_distributes_to_neighbors(self):
        rng = np.random.default_rng(7)
        img0 = rng.normal(size=(1, 4, 4))
        xy = np.array([[1.25, 2.75], [0.0, 0.0], [-3.0, 1.0]])
        err = T.finite_diff_check(
            lambda im: T.sum_all(T.bilinear_sample(im, xy)[0]), Tensor(img0)
        )
        assert err < 1e-8


class TestElementwise:
    def test_sigmoid_zero(self):
        assert T.sigmoid(Tensor(np.zeros(1))).data[0] == 0.5

    def test_sigmoid_saturates_exactly_at_one(self):
        # float64 rounds 1/(1+e^-40) to exactly 1.0; the suppression contract
        # in the fusion module relies on this.
        s = T.sigmoid(Tensor(np.array([40.0, -40.0])))
        assert s.data[0] == 1.0
        assert 0.0 < s.data[1] < 1e-17

    def test_softmax_uniform(self):
        p = T.softmax_over_axis(Tensor(np.zeros(3)), axis=0)
        np.testing.assert_allclose(p.data, np.ones(3) / 3, atol=1e-15)

    def test_softmax_axis_out_of_range(self):
        with pytest.raises(DimensionError):
            T.softmax_over_axis(Tensor(np.zeros((2, 3))), axis=2)

    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_softmax_sums_to_one(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(scale=50, size=(4, 5))
        p = T.softmax_over_axis(Tensor(x), axis=1)
        np.testing.assert_allclose(p.data.sum(axis=1), 1.0, atol=1e-12)
        assert (p.data >= 0).all()

    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_sigmoid_bounded(self, seed):
        rng = np.random.default_rng(seed)
        s = T.sigmoid(Tensor(rng.normal(scale=100, size=32)))
        assert ((s.data >= 0) & (s.data <= 1)).all()
        assert np.isfinite(s.data).all()


class TestConcatSlice:
    def test_roundtrip_bit_exact(self):
        rng = np.random.default_rng(8)
        a = rng.normal(size=(2, 4, 4))
        b = rng.normal(size=(3, 4, 4))
        cat = T.concat_channels([Tensor(a), Tensor(b)])
        np.testing.assert_array_equal(T.slice_channels(cat, 0, 2).data, a)
        np.testing.assert_array_equal(T.slice_channels(cat, 2, 5).data, b)

    @given(st.integers(0, 2 ** 31 - 1), st.integers(1, 4), st.integers(1, 4))
    @settings(max_examples=25, deadline=None)
    def test_roundtrip_property(self, seed, c1, c2):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(c1, 3, 2))
        b = rng.normal(size=(c2, 3, 2))
        cat = T.concat_channels([Tensor(a), Tensor(b)])
        np.testing.assert_array_equal(T.slice_channels(cat, 0, c1).data, a)
        np.testing.assert_array_equal(T.slice_channels(cat, c1, c1 + c2).data, b)

    def test_trailing_dim_mismatch(self):
        with pytest.raises(DimensionError):
            T.concat_channels([Tensor(np.ones((1, 4, 4))), Tensor(np.ones((1, 3, 4)))])


def upsample2x_oracle(img):
    """Analytic half-pixel-center bilinear formula, written independently."""
    c, h, w = img.shape
    out = np.zeros((c, 2 * h, 2 * w))
    for oy in range(2 * h):
        for ox in range(2 * w):
            sy = min(max((oy + 0.5) / 2.0 - 0.5, 0.0), h - 1)
            sx = min(max((ox + 0.5) / 2.0 - 0.5, 0.0), w - 1)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = sy - y0, sx - x0
            out[:, oy, ox] = (
                (1 - fy) * ((1 - fx) * img[:, y0, x0] + fx * img[:, y0, x1])
                + fy * ((1 - fx) * img[:, y1, x0] + fx * img[:, y1, x1])
            )
    return out


class TestUpsample:
    def test_checkerboard_matches_closed_form(self):
        img = np.array([[[0.0, 1.0], [1.0, 0.0]]])
        out = T.upsample2x_bilinear(Tensor(img))
        np.testing.assert_allclose(out.data, upsample2x_oracle(img), atol=1e-14)

    def test_random_matches_closed_form(self):
        rng = np.random.default_rng(9)
        img = rng.normal(size=(2, 3, 5))
        out = T.upsample2x_bilinear(Tensor(img))
        np.testing.assert_allclose(out.data, upsample2x_oracle(img), atol=1e-13)

    def test_doubles_spatial_dims(self):
        out = T.upsample2x_bilinear(Tensor(np.zeros((4, 3, 7))))
        assert out.shape == (4, 6, 14)

    def test_gradient(self):
        rng = np.random.default_rng(10)
        err = T.finite_diff_check(
            lambda x: T.sum_all(T.upsample2x_bilinear(x)),
            Tensor(rng.normal(size=(1, 3, 4))),
        )
        assert err < 1e-8


class TestScatterOuter:
    def test_scatter_sums_and_drops(self):
        vals = Tensor(np.array([[1.0, 2.0, 3.0, 4.0]]))
        out = T.scatter_columns(vals, np.array([0, 1, 0, -1]), 2)
        np.testing.assert_array_equal(out.data, [[4.0, 2.0]])

    def test_scatter_gradient(self):
        rng = np.random.default_rng(11)
        idx = np.array([2, 0, 2, -1, 1])
        err = T.finite_diff_check(
            lambda v: T.sum_all(
                T.elementwise_mul(
                    T.scatter_columns(v, idx, 3), Tensor(np.array([[1.0, 2.0, 3.0]]))
                )
            ),
            Tensor(rng.normal(size=(2, 5))),
        )
        assert err < 1e-8

    def test_outer_matches_direct(self):
        rng = np.random.default_rng(12)
        a = rng.normal(size=(3, 2, 2))
        b = rng.normal(size=(4, 2, 2))
        out = T.pixelwise_outer(Tensor(a), Tensor(b))
        expect = np.einsum("ahw,bhw->bahw", a, b)
        np.testing.assert_allclose(out.data, expect, atol=1e-14)

    def test_outer_gradients(self):
        rng = np.random.default_rng(13)
        a0 = rng.normal(size=(2, 3, 3))
        b0 = rng.normal(size=(3, 3, 3))
        err_a = T.finite_diff_check(
            lambda a: T.sum_all(T.pixelwise_outer(a, Tensor(b0))), Tensor(a0)
        )
        err_b = T.finite_diff_check(
            lambda b: T.sum_all(T.pixelwise_outer(Tensor(a0), b)), Tensor(b0)
        )
        assert max(err_a, err_b) < 1e-7


class TestChannelReductions:
    def test_mean_max_values(self):
        x = np.stack([np.full((2, 2), 1.0), np.full((2, 2), 3.0)])
        assert (T.channel_mean(Tensor(x)).data == 2.0).all()
        assert (T.channel_max(Tensor(x)).data == 3.0).all()

    def test_gradients(self):
        rng = np.random.default_rng(14)
        x = rng.normal(size=(3, 4, 4))
        for op in (T.channel_mean, T.channel_max):
            err = T.finite_diff_check(lambda t: T.sum_all(op(t)), Tensor(x))
            assert err < 1e-7


class TestTapeMechanics:
    def test_quadratic_gradient(self):
        rng = np.random.default_rng(15)
        x0 = rng.normal(size=(4, 4))
        x = Tensor(x0, requires_grad=True)
        with GradTape() as tape:
            y = T.sum_all(T.elementwise_mul(x, x))
            tape.backward(y)
        np.testing.assert_allclose(x.grad, 2 * x0, atol=1e-12)
        err = T.finite_diff_check(
            lambda t: T.sum_all(T.elementwise_mul(t, t)), Tensor(x0)
        )
        assert err < 1e-8

    def test_sigmoid_sum_finite_diff(self):
        rng = np.random.default_rng(16)
        err = T.finite_diff_check(
            lambda t: T.sum_all(T.sigmoid(t)), Tensor(rng.normal(size=(4, 4)))
        )
        assert err < 1e-6

    def test_no_tape_no_grads(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = T.sigmoid(x)
        assert x.grad is None and y.grad is None

    def test_broadcast_channel_grad(self):
        rng = np.random.default_rng(17)
        gate0 = rng.normal(size=(1, 3, 3))
        feat = Tensor(rng.normal(size=(4, 3, 3)))
        err = T.finite_diff_check(
            lambda g: T.sum_all(T.elementwise_mul(feat, g)), Tensor(gate0)
        )
        assert err < 1e-8

    def test_affine_and_add(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        with GradTape() as tape:
            y = T.sum_all(T.add(T.affine(x, -1.0, 1.0), x))
            tape.backward(y)
        np.testing.assert_array_equal(x.grad, np.zeros(2))

    def test_eps_out_of_range(self):
        with pytest.raises(ValueError):
            T.finite_diff_check(lambda t: T.sum_all(t), Tensor(np.ones(2)), eps=1e-2)

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with GradTape() as tape:
            y = T.sigmoid(x)
        with pytest.raises(DimensionError):
            tape.backward(y)

    def test_all_primitive_outputs_finite(self):
        rng = np.random.default_rng(18)
        x = Tensor(rng.normal(scale=200, size=(2, 4, 4)))
        for out in (
            T.sigmoid(x),
            T.softmax_over_axis(x, 0),
            T.upsample2x_bilinear(x),
            T.channel_mean(x),
            T.channel_max(x),
            T.conv2d(x, Tensor(rng.normal(size=(1, 2, 3, 3))), 1, 1),
        ):
            assert np.isfinite(out.data).all()
