"""Reverse-mode engine: gradients, convolution adjoints, masks, GDN and error paths."""
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import OP_CASES, gradcheck
from nlcodec.autodiff import (
    CONTEXT_MASKS,
    GDN,
    Conv,
    NonFiniteError,
    Parameter,
    Tensor,
    backward,
    causal_mask,
    conv2d,
    gdn,
    left_neighbor_mask,
    masked_conv2d,
    ops,
    previous_row_mask,
    same_padding,
    transposed_conv2d,
)


class TestGradients:
    @pytest.mark.parametrize("name", sorted(OP_CASES))
    def test_matches_central_differences(self, name):
        rng = np.random.default_rng(zlib.crc32(name.encode()))
        for _ in range(3):
            fn, inputs = OP_CASES[name](rng)
            assert gradcheck(fn, inputs, rng) < 1e-4

    def test_shared_subexpression_accumulates(self):
        x = Parameter([1.5, -2.0])
        y = x * x + x
        backward(ops.sum(y))
        np.testing.assert_allclose(x.grad, 2 * x.data + 1)

    def test_lower_bound_passes_gradient_that_raises_value(self):
        x = Parameter([-3.0, -3.0, 2.0])
        y = ops.lower_bound(x, 0.0)
        # minimizing -y pushes the clamped entry upward, so its gradient passes
        backward(ops.sum(y * np.array([-1.0, 1.0, 1.0])))
        assert x.grad.tolist() == [-1.0, 0.0, 1.0]

    def test_leaky_relu_gradient_at_zero_is_one(self):
        x = Parameter([0.0])
        backward(ops.sum(ops.leaky_relu(x)))
        assert x.grad[0] == 1.0

    def test_deep_chain_does_not_recurse(self):
        x = Parameter([1.0])
        y = x
        for _ in range(5000):
            y = y * 1.0
        backward(ops.sum(y))
        assert x.grad[0] == 1.0


class TestTensorContract:
    def test_data_is_immutable(self):
        t = Tensor([1.0, 2.0])
        with pytest.raises(ValueError):
            t.data[0] = 3.0

    def test_caller_array_stays_writable(self):
        a = np.zeros(3)
        Tensor(a)
        a[0] = 1.0

    def test_non_finite_input_raises(self):
        with pytest.raises(NonFiniteError):
            Tensor([np.nan])

    def test_non_finite_result_raises(self):
        with pytest.raises(NonFiniteError), np.errstate(divide="ignore"):
            ops.log(Tensor([0.0]))

    def test_backward_needs_scalar(self):
        with pytest.raises(ValueError, match="scalar"):
            backward(Parameter([1.0, 2.0]) * 2.0)

    def test_backward_needs_trainable_leaf(self):
        with pytest.raises(ValueError, match="detached"):
            backward(ops.sum(Tensor([1.0])))

    def test_constants_record_no_graph(self):
        out = Tensor([1.0]) * 2.0
        assert not out.requires_grad and out._parents == ()

    def test_parameter_assign_checks_shape(self):
        p = Parameter(np.zeros(3))
        with pytest.raises(ValueError):
            p.assign(np.zeros(4))


class TestConvolution:
    def test_same_padding_output_size(self):
        x = np.zeros((1, 1, 13, 10))
        k = np.zeros((1, 1, 5, 5))
        assert conv2d(x, k, 2).shape == (1, 1, 7, 5)
        assert same_padding(13, 5, 2) == (2, 2)

    def test_identity_kernel(self, rng):
        x = rng.normal(size=(2, 3, 6, 5))
        k = np.zeros((3, 3, 3, 3))
        for c in range(3):
            k[c, c, 1, 1] = 1.0
        np.testing.assert_array_equal(conv2d(x, k).data, x)

    def test_against_direct_loop(self, rng):
        x = rng.normal(size=(1, 2, 5, 6))
        k = rng.normal(size=(3, 2, 3, 3))
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        ref = np.zeros((1, 3, 5, 6))
        for o in range(3):
            for i in range(5):
                for j in range(6):
                    ref[0, o, i, j] = np.sum(xp[0, :, i:i + 3, j:j + 3] * k[o])
        np.testing.assert_allclose(conv2d(x, k).data, ref, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(h=st.integers(1, 12), w=st.integers(1, 12), stride=st.sampled_from([1, 2]),
           ksize=st.sampled_from([1, 3, 5]), seed=st.integers(0, 2**16))
    def test_transposed_is_adjoint(self, h, w, stride, ksize, seed):
        r = np.random.default_rng(seed)
        k = r.normal(size=(3, 2, ksize, ksize))  # conv maps 2 -> 3 channels
        x = r.normal(size=(2, 2, h * stride, w * stride))
        y = r.normal(size=(2, 3, h, w))
        lhs = np.sum(conv2d(x, k, stride).data * y)
        rhs = np.sum(x * transposed_conv2d(y, k, stride).data)
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))

    def test_transposed_upsamples(self, rng):
        y = rng.normal(size=(1, 4, 3, 5))
        assert transposed_conv2d(y, rng.normal(size=(4, 2, 5, 5)), 2).shape == (1, 2, 6, 10)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ValueError, match="channel"):
            conv2d(rng.normal(size=(1, 2, 4, 4)), rng.normal(size=(1, 3, 3, 3)))

    def test_bad_stride(self, rng):
        with pytest.raises(ValueError, match="stride"):
            conv2d(rng.normal(size=(1, 1, 4, 4)), rng.normal(size=(1, 1, 3, 3)), stride=0)


class TestMasks:
    def test_causal_mask_5(self):
        m = causal_mask(5)
        assert m.sum() == 12
        assert m[2, 2] == 0 and m[2, :2].all() and m[:2].all() and not m[3:].any()

    def test_restricted_masks(self):
        assert np.argwhere(left_neighbor_mask(3)).tolist() == [[1, 0]]
        assert np.argwhere(previous_row_mask(3)).tolist() == [[0, 0], [0, 1], [0, 2]]

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            causal_mask(4)

    def test_mask_exposing_centre_rejected(self, rng):
        bad = causal_mask(3)
        bad[1, 1] = 1
        with pytest.raises(ValueError, match="centre"):
            masked_conv2d(rng.normal(size=(1, 1, 4, 4)), rng.normal(size=(1, 1, 3, 3)), bad)

    @pytest.mark.parametrize("name", sorted(CONTEXT_MASKS))
    def test_output_ignores_current_and_future_positions(self, name, rng):
        mask = CONTEXT_MASKS[name]()
        k = rng.normal(size=(2, 2, *mask.shape))
        x = rng.normal(size=(1, 2, 7, 7))
        base = masked_conv2d(x, k, mask).data
        for _ in range(10):
            i, j = rng.integers(7, size=2)
            x2 = x.copy()
            x2[0, :, i, j] += 5.0
            changed = np.abs(masked_conv2d(x2, k, mask).data - base).max(axis=(0, 1)) > 0
            raster = np.arange(49).reshape(7, 7)
            assert not changed[raster <= raster[i, j]].any()


class TestGDN:
    def test_closed_form(self, rng):
        x = rng.normal(size=(1, 2, 2, 2))
        beta = np.array([1.0, 2.0])
        gamma = np.array([[0.5, 0.1], [0.2, 0.3]])
        norm = np.sqrt(beta[None, :, None, None] + np.einsum("ck,nkhw->nchw", gamma, x ** 2))
        np.testing.assert_allclose(gdn(x, beta, gamma).data, x / norm, rtol=1e-12)
        np.testing.assert_allclose(gdn(x, beta, gamma, inverse=True).data, x * norm, rtol=1e-12)

    def test_initial_layer_is_near_identity_scaled(self, rng):
        layer = GDN(3)
        np.testing.assert_allclose(layer.effective_beta().data, 1.0, atol=1e-12)
        np.testing.assert_allclose(layer.effective_gamma().data, 0.1 * np.eye(3), atol=1e-12)

    def test_reparameterization_keeps_beta_positive(self):
        layer = GDN(2)
        layer.beta.assign([-5.0, 0.0])
        assert (layer.effective_beta().data > 0).all()


class TestModules:
    def test_named_parameters_are_unique(self, rng):
        from nlcodec.autodiff import Sequential
        net = Sequential(Conv(3, 4, 3, rng=rng), GDN(4), Conv(4, 2, 3, 2, "deconv", rng=rng))
        net.name_parameters()
        names = [n for n, _ in net.named_parameters()]
        assert len(names) == len(set(names)) == 6
        assert names[0] == "layers.0.weight"

    def test_deconv_layer_output_shape(self, rng):
        layer = Conv(4, 2, 5, 2, "deconv", rng=rng)
        assert layer(Tensor(rng.normal(size=(1, 4, 3, 3)))).shape == (1, 2, 6, 6)
