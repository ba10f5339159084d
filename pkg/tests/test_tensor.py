import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from frsnano import ops
from frsnano.tensor import ShapeError, Tensor, backward, grad

finite = st.floats(-2.0, 2.0, allow_nan=False, allow_infinity=False)


def arrays(shape):
    return hnp.arrays(np.float64, shape, elements=finite)


class TestTensor:
    def test_scalar_promoted_to_rank1(self):
        assert Tensor(3.0).shape == (1,)

    def test_rank_limits(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((1, 1, 1, 1, 1)))

    def test_data_is_immutable(self):
        t = Tensor([1.0, 2.0])
        with pytest.raises(ValueError):
            t.data[0] = 5.0

    def test_constructor_copies(self):
        src = np.array([1.0, 2.0])
        t = Tensor(src)
        src[0] = 9.0
        assert t.data[0] == 1.0

    def test_item_requires_single_element(self):
        with pytest.raises(ShapeError):
            Tensor([1.0, 2.0]).item()

    def test_operator_sugar(self):
        a, b = Tensor([1.0, 2.0]), Tensor([3.0, 4.0])
        npt.assert_array_equal((a + b).data, [4.0, 6.0])
        npt.assert_array_equal((a - b).data, [-2.0, -2.0])
        npt.assert_array_equal((a * b).data, [3.0, 8.0])
        npt.assert_array_equal((-a).data, [-1.0, -2.0])


class TestElementwise:
    def test_sigmoid_zero(self):
        assert ops.sigmoid(Tensor(0.0)).item() == 0.5

    def test_add(self):
        npt.assert_array_equal(ops.add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).data, [4.0, 6.0])

    def test_mul_by_scalar(self):
        npt.assert_array_equal(ops.mul(Tensor([1.0, 3.0]), 2).data, [2.0, 6.0])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2,\).*\(3,\)"):
            ops.add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))

    def test_sqrt_negative_raises(self):
        with pytest.raises(ValueError):
            ops.sqrt(Tensor([1.0, -1e-9]))

    def test_sqrt_grad_at_zero_is_finite(self):
        x = Tensor([0.0, 4.0], requires_grad=True)
        backward(ops.total(ops.sqrt(x)))
        npt.assert_allclose(x.grad, [0.0, 0.25])

    @given(arrays((7,)).map(lambda a: a * 400.0))
    def test_sigmoid_strictly_inside_unit_interval(self, x):
        s = ops.sigmoid(Tensor(x)).data
        assert np.all(s > 0.0) and np.all(s < 1.0)

    def test_sigmoid_extremes_stay_open(self):
        s = ops.sigmoid(Tensor([-1e4, 1e4])).data
        assert 0.0 < s[0] and s[1] < 1.0

    def test_scalar_operand_gradient_sums(self):
        a = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(2.0, requires_grad=True)
        backward(ops.total(ops.mul(a, b)))
        npt.assert_allclose(a.grad, np.full((2, 3), 2.0))
        npt.assert_allclose(b.grad, [6.0])


class TestPermute:
    def test_shapes(self):
        t = Tensor(np.zeros((2, 3, 4)))
        assert ops.permute3(t, (2, 1, 0)).shape == (4, 3, 2)
        assert ops.permute3(t, (1, 0, 2)).shape == (3, 2, 4)

    def test_identity_is_bitwise_equal(self):
        x = np.random.default_rng(0).normal(size=(2, 3, 4))
        npt.assert_array_equal(ops.permute3(Tensor(x), (0, 1, 2)).data, x)

    @pytest.mark.parametrize("axes", [(0, 0, 1), (0, 1), (0, 1, 3)])
    def test_invalid_permutation(self, axes):
        with pytest.raises(ValueError):
            ops.permute3(Tensor(np.zeros((2, 3, 4))), axes)

    def test_permute3_requires_rank3(self):
        with pytest.raises(ShapeError):
            ops.permute3(Tensor(np.zeros((2, 3))), (1, 0))

    @given(arrays((2, 3, 4)), st.permutations([0, 1, 2]))
    def test_round_trip_bit_exact(self, x, p):
        inv = tuple(int(i) for i in np.argsort(p))
        back = ops.permute3(ops.permute3(Tensor(x), p), inv)
        npt.assert_array_equal(back.data, x)

    def test_vjp_is_inverse_permutation(self):
        x = Tensor(np.zeros((2, 3, 4)), requires_grad=True)
        w = np.arange(24.0).reshape(4, 3, 2)
        backward(ops.total(ops.mul(ops.permute3(x, (2, 1, 0)), w)))
        npt.assert_array_equal(x.grad, w.transpose(2, 1, 0))


def _slab(values):
    return Tensor(np.array(values, dtype=np.float64).reshape(1, 1, -1))


class TestReductions:
    @pytest.mark.parametrize("values, expected", [([1, 3], 2.0), ([1, 1, 1], 1.0), ([0, 0, 6, 2], 2.0)])
    def test_mean(self, values, expected):
        assert ops.reduce_mean_tail2(_slab(values)).item() == expected

    @pytest.mark.parametrize("values, expected", [([1, 3], 1.0), ([5, 5, 5], 0.0), ([0, 0, 0, 4], np.sqrt(3.0))])
    def test_std(self, values, expected):
        npt.assert_allclose(ops.reduce_std_tail2(_slab(values)).item(), expected, rtol=1e-15)

    @pytest.mark.parametrize("values, expected", [([1, 3], 3.0), ([5, 5], 5.0), ([-2, -7], -2.0)])
    def test_max(self, values, expected):
        assert ops.reduce_max_tail2(_slab(values)).item() == expected

    def test_max_tie_goes_to_first(self):
        x = Tensor(np.array([5.0, 5.0]).reshape(1, 1, 2), requires_grad=True)
        backward(ops.total(ops.reduce_max_tail2(x)))
        npt.assert_array_equal(x.grad.reshape(-1), [1.0, 0.0])

    def test_mean_vjp_uniform(self):
        x = Tensor(np.zeros((2, 2, 3)), requires_grad=True)
        backward(ops.total(ops.reduce_mean_tail2(x)))
        npt.assert_allclose(x.grad, np.full((2, 2, 3), 1.0 / 6.0))

    @given(st.floats(-1e6, 1e6, allow_nan=False), st.integers(1, 4), st.integers(1, 4))
    def test_std_constant_slice_exact_zero_with_zero_grad(self, c, a, b):
        x = Tensor(np.full((2, a, b), c), requires_grad=True)
        out = ops.reduce_std_tail2(x)
        assert np.all(out.data == 0.0)
        backward(ops.total(out))
        assert np.all(x.grad == 0.0)

    def test_rank4_batches(self):
        x = np.random.default_rng(1).normal(size=(3, 2, 4, 5))
        out = ops.reduce_max_tail2(Tensor(x)).data
        npt.assert_array_equal(out[..., 0, 0], x.max(axis=(2, 3)))

    def test_reject_rank2(self):
        with pytest.raises(ShapeError):
            ops.reduce_mean_tail2(Tensor(np.zeros((2, 3))))


class TestConv1d:
    def test_delta_kernel_is_identity(self):
        v = np.array([1.0, -2.0, 3.0, 0.5])
        npt.assert_array_equal(ops.conv1d_samepad(Tensor(v), Tensor([0.0, 1.0, 0.0])).data, v)

    def test_box_kernel(self):
        out = ops.conv1d_samepad(Tensor([1.0, 2.0, 3.0]), Tensor([1.0, 1.0, 1.0]))
        npt.assert_array_equal(out.data, [3.0, 6.0, 5.0])

    def test_zero_input(self):
        out = ops.conv1d_samepad(Tensor(np.zeros(5)), Tensor([0.3, -1.0, 2.0]))
        npt.assert_array_equal(out.data, np.zeros(5))

    def test_even_kernel_raises(self):
        with pytest.raises(ValueError):
            ops.conv1d_samepad(Tensor(np.zeros(5)), Tensor([1.0, 1.0]))

    def test_kernel_longer_than_2l_plus_1_raises(self):
        with pytest.raises(ValueError):
            ops.conv1d_samepad(Tensor(np.zeros(2)), Tensor(np.zeros(7)))

    def test_rows_are_independent(self):
        rows = np.random.default_rng(2).normal(size=(3, 6))
        k = Tensor([0.2, 0.5, -0.1])
        batched = ops.conv1d_samepad(Tensor(rows), k).data
        for r in range(3):
            npt.assert_array_equal(batched[r], ops.conv1d_samepad(Tensor(rows[r]), k).data)


class TestBroadcastMul:
    def test_ones_gate(self):
        t = np.random.default_rng(3).normal(size=(2, 3, 4))
        npt.assert_array_equal(ops.broadcast_mul(Tensor(np.ones((2, 1, 1))), Tensor(t)).data, t)

    def test_zero_gate(self):
        t = np.random.default_rng(3).normal(size=(2, 3, 4))
        npt.assert_array_equal(ops.broadcast_mul(Tensor(np.zeros((2, 1, 1))), Tensor(t)).data, np.zeros_like(t))

    def test_small_example(self):
        out = ops.broadcast_mul(Tensor(np.full((1, 1, 1), 2.0)), _slab([1, 3]))
        npt.assert_array_equal(out.data.reshape(-1), [2.0, 6.0])

    def test_leading_mismatch(self):
        with pytest.raises(ShapeError):
            ops.broadcast_mul(Tensor(np.ones((3, 1, 1))), Tensor(np.ones((2, 3, 4))))


class TestConv2d:
    def test_matches_direct_loop(self):
        rng = np.random.default_rng(4)
        x, w, b = rng.normal(size=(2, 3, 5, 6)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
        out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        ref = np.zeros(out.shape)
        for i in range(out.shape[2]):
            for j in range(out.shape[3]):
                patch = xp[:, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3]
                ref[:, :, i, j] = np.einsum("nchw,ochw->no", patch, w) + b
        npt.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            ops.conv2d(Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.zeros((1, 3, 1, 1))))


class TestPixelShuffle:
    def test_index_rule(self):
        x = np.arange(4.0).reshape(4, 1, 1)
        out = ops.pixel_shuffle(Tensor(x), 2).data
        assert out.shape == (1, 2, 2)
        for i in range(2):
            for j in range(2):
                assert out[0, i, j] == x[2 * i + j, 0, 0]

    def test_s1_identity(self):
        x = np.random.default_rng(5).normal(size=(3, 2, 2))
        npt.assert_array_equal(ops.pixel_shuffle(Tensor(x), 1).data, x)

    def test_divisibility(self):
        with pytest.raises(ShapeError):
            ops.pixel_shuffle(Tensor(np.zeros((3, 2, 2))), 2)

    @given(arrays((8, 2, 3)))
    def test_round_trip(self, x):
        npt.assert_array_equal(ops.pixel_unshuffle(ops.pixel_shuffle(Tensor(x), 2), 2).data, x)


class TestBackward:
    def test_sum_grad_is_ones(self):
        x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        backward(ops.total(x))
        npt.assert_array_equal(x.grad, np.ones(3))

    def test_square(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        backward(ops.total(ops.mul(x, x)))
        npt.assert_array_equal(x.grad, [2.0, 4.0])

    def test_non_scalar_root(self):
        with pytest.raises(ShapeError):
            backward(Tensor([1.0, 2.0], requires_grad=True))

    def test_unreachable_leaf_gets_zero(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = Tensor(np.ones((2, 2)), requires_grad=True)
        gx, gy = grad(ops.total(x), [x, y])
        npt.assert_array_equal(gx, [1.0, 1.0])
        npt.assert_array_equal(gy, np.zeros((2, 2)))

    def test_repeated_calls_do_not_accumulate(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        root = ops.total(ops.mul(x, x))
        backward(root)
        first = x.grad.copy()
        backward(root)
        npt.assert_array_equal(x.grad, first)

    def test_diamond_accumulates(self):
        x = Tensor([3.0], requires_grad=True)
        y = ops.add(ops.mul(x, 2.0), ops.mul(x, x))
        backward(ops.total(y))
        npt.assert_array_equal(x.grad, [8.0])

    def test_deterministic(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(2, 3, 4))

        def run():
            t = Tensor(x, requires_grad=True)
            out = ops.reduce_std_tail2(ops.silu(ops.permute3(t, (2, 0, 1))))
            backward(ops.total(out))
            return out.data.copy(), t.grad.copy()

        a, b = run(), run()
        npt.assert_array_equal(a[0], b[0])
        npt.assert_array_equal(a[1], b[1])
