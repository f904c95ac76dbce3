import io
import struct

import numpy as np
import numpy.testing as npt
import pytest

from kanfpn import tensor as T
from kanfpn.errors import NoTape, NotScalar, ShapeMismatch
from kanfpn.tensor import Tape, Tensor, backward, finite_diff_grad

from oracles import matmul_oracle


class TestElementwise:
    def test_add_basic(self):
        npt.assert_array_equal(T.add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).data, [4.0, 6.0])

    def test_tanh_origin(self):
        assert T.tanh(Tensor([0.0])).data[0] == 0.0

    def test_silu_at_one(self):
        # x * sigmoid(x) at x=1, hand value
        npt.assert_allclose(T.silu(Tensor([1.0], dtype=np.float64)).data,
                            [0.7310585786300049], rtol=1e-12)

    def test_relu(self):
        npt.assert_array_equal(T.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_scale(self):
        npt.assert_allclose(T.scale(Tensor([2.0, -4.0]), 0.5).data, [1.0, -2.0])

    def test_sigmoid_extremes_finite(self):
        y = T.sigmoid(Tensor([-500.0, 0.0, 500.0], dtype=np.float64)).data
        assert np.all(np.isfinite(y))
        npt.assert_allclose(y[1], 0.5)

    def test_broadcast_add(self):
        a = Tensor(np.ones((2, 3, 4)))
        b = Tensor(np.arange(3.0).reshape(1, 3, 1))
        y = T.add(a, b)
        assert y.shape == (2, 3, 4)
        npt.assert_allclose(y.data[0, :, 0], [1.0, 2.0, 3.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))

    def test_dispatcher(self):
        a, b = Tensor([2.0]), Tensor([3.0])
        npt.assert_allclose(T.elementwise("mul", a, b).data, [6.0])
        npt.assert_allclose(T.elementwise("scale", a, alpha=2.0).data, [4.0])
        with pytest.raises(ValueError):
            T.elementwise("nope", a)

    def test_dtype_promotion(self):
        y = T.add(Tensor([1.0], dtype=np.float32), Tensor([1.0], dtype=np.float64))
        assert y.dtype == np.float64

    def test_scalar_wrapped_to_rank1(self):
        assert Tensor(3.0).shape == (1,)


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        npt.assert_array_equal(T.matmul(Tensor(np.eye(2)), Tensor(a)).data, a)

    def test_dot(self):
        y = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        npt.assert_array_equal(y.data, [[11.0]])

    def test_against_triple_loop(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((4, 2))
        got = T.matmul(Tensor(a), Tensor(b)).data
        npt.assert_allclose(got, matmul_oracle(a, b), atol=1e-12)

    def test_batched(self):
        rng = np.random.default_rng(4)
        a = rng.standard_normal((2, 3, 4))
        b = rng.standard_normal((2, 4, 5))
        npt.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, a @ b, atol=1e-12)

    def test_inner_mismatch(self):
        with pytest.raises(ShapeMismatch):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestBackward:
    def test_linear_grad_is_input(self):
        x = np.array([2.0, -1.0, 3.0])
        tape = Tape()
        w = tape.watch(Tensor(np.zeros(3)))
        loss = T.reduce_sum(T.mul(w, Tensor(x)))
        grads = tape.backward(loss)
        npt.assert_allclose(grads[w].data, x)

    def test_tanh_grad_at_zero(self):
        tape = Tape()
        w = tape.watch(Tensor(np.zeros(4)))
        grads = tape.backward(T.reduce_sum(T.tanh(w)))
        npt.assert_allclose(grads[w].data, np.ones(4))

    def test_grad_accumulates_on_reuse(self):
        tape = Tape()
        a = tape.watch(Tensor([3.0]))
        grads = tape.backward(T.reduce_sum(T.mul(a, a)))   # d(a^2)/da = 2a
        npt.assert_allclose(grads[a].data, [6.0])

    def test_not_scalar(self):
        tape = Tape()
        a = tape.watch(Tensor(np.ones(3)))
        with pytest.raises(NotScalar):
            tape.backward(T.scale(a, 2.0))

    def test_no_tape(self):
        with pytest.raises(NoTape):
            backward(Tensor([1.0]))

    def test_tape_freed_after_backward(self):
        tape = Tape()
        a = tape.watch(Tensor([1.0]))
        tape.backward(T.reduce_sum(a))
        with pytest.raises(NoTape):
            tape.backward(T.reduce_sum(a))

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_composite_matches_finite_diff(self, seed):
        rng = np.random.default_rng(seed)
        w1 = rng.standard_normal((4, 5))
        w2 = rng.standard_normal((5, 2))
        x0 = rng.standard_normal((3, 4))

        def net(x):
            h = T.tanh(T.matmul(x, Tensor(w1)))
            return T.reduce_sum(T.silu(T.matmul(h, Tensor(w2))))

        tape = Tape()
        x = tape.watch(Tensor(x0))
        grads = tape.backward(net(x))
        numeric = finite_diff_grad(lambda t: net(t).item(), Tensor(x0))
        denom = np.maximum(1.0, np.abs(grads[x].data))
        assert np.max(np.abs(grads[x].data - numeric.data) / denom) < 1e-6

    def test_mixed_tapes_rejected(self):
        t1, t2 = Tape(), Tape()
        a = t1.watch(Tensor([1.0]))
        b = t2.watch(Tensor([1.0]))
        with pytest.raises(NoTape):
            T.add(a, b)


class TestMovementAndReduce:
    def test_reshape_transpose_roundtrip_grads(self):
        tape = Tape()
        a = tape.watch(Tensor(np.arange(6.0).reshape(2, 3)))
        y = T.transpose(T.reshape(a, (3, 2)), (1, 0))
        grads = tape.backward(T.reduce_sum(T.mul(y, y)))
        npt.assert_allclose(grads[a].data, 2 * np.arange(6.0).reshape(2, 3))

    def test_concat_splits_gradient(self):
        tape = Tape()
        a = tape.watch(Tensor(np.ones((1, 2))))
        b = tape.watch(Tensor(np.ones((1, 3))))
        y = T.concat([a, b], axis=1)
        r = np.arange(5.0).reshape(1, 5)
        grads = tape.backward(T.reduce_sum(T.mul(y, Tensor(r))))
        npt.assert_array_equal(grads[a].data, r[:, :2])
        npt.assert_array_equal(grads[b].data, r[:, 2:])

    def test_reduce_max_routes_to_first(self):
        tape = Tape()
        a = tape.watch(Tensor(np.array([[1.0, 5.0, 5.0]])))
        grads = tape.backward(T.reduce_sum(T.reduce_max(a, axis=1)))
        npt.assert_array_equal(grads[a].data, [[0.0, 1.0, 0.0]])

    def test_reduce_mean_value(self):
        npt.assert_allclose(T.reduce_mean(Tensor([[1.0, 2.0], [3.0, 4.0]])).data, [2.5])

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        y = T.softmax(Tensor(rng.standard_normal((4, 7))), axis=-1)
        npt.assert_allclose(y.data.sum(axis=-1), np.ones(4), atol=1e-7)

    def test_full_reduce_is_rank1(self):
        assert T.reduce_sum(Tensor(np.ones((2, 3)))).shape == (1,)


class TestFiniteDiff:
    def test_gradient_of_sum_is_ones(self):
        g = finite_diff_grad(lambda t: T.reduce_sum(t).item(), Tensor(np.ones((2, 2))))
        npt.assert_allclose(g.data, np.ones((2, 2)), atol=1e-9)

    def test_gradient_of_square(self):
        g = finite_diff_grad(lambda t: T.reduce_sum(T.mul(t, t)).item(), Tensor([3.0]))
        npt.assert_allclose(g.data, [6.0], atol=1e-8)

    def test_h_validation(self):
        with pytest.raises(ValueError):
            finite_diff_grad(lambda t: 0.0, Tensor([1.0]), h=0.0)


class TestDeterminism:
    def test_replay_bitwise_identical(self):
        def run():
            rng = np.random.default_rng(11)
            x = Tensor(rng.standard_normal((4, 4)))
            w = Tensor(rng.standard_normal((4, 4)))
            return T.silu(T.matmul(T.tanh(x), w)).data.copy()

        a, b = run(), run()
        assert np.array_equal(a, b)


class TestTensorIO:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_roundtrip(self, dtype):
        rng = np.random.default_rng(5)
        t = Tensor(rng.standard_normal((2, 3, 4)).astype(dtype))
        buf = io.BytesIO()
        T.dump_tensor(t, buf)
        buf.seek(0)
        back = T.load_tensor(buf)
        assert back.dtype == dtype
        npt.assert_array_equal(back.data, t.data)

    def test_golden_bytes(self):
        # layout: magic, u16 version, u8 dtype code, u8 ndim, u64 extents, LE payload
        t = Tensor(np.array([[1.0, 2.0]], dtype=np.float32))
        buf = io.BytesIO()
        T.dump_tensor(t, buf)
        expected = (b"TNSR" + struct.pack("<HBB", 1, 0, 2) + struct.pack("<QQ", 1, 2)
                    + np.array([1.0, 2.0], dtype="<f4").tobytes())
        assert buf.getvalue() == expected

    def test_bad_magic(self):
        with pytest.raises(ValueError):
            T.load_tensor(io.BytesIO(b"JUNKxxxx"))
