import numpy as np
import pytest

from causalign.errors import ContractViolation, NumericError
from causalign.numcore import SGD, Tape, Tensor, backward, no_tape, ops

from gradcheck import relative_errors


def t64(a, rg=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=rg)


class TestForwardOps:
    def test_matmul_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = ops.matmul(a, Tensor(np.eye(2)))
        np.testing.assert_array_equal(out.data, a.data)

    def test_softmax_symmetry(self):
        out = ops.softmax(Tensor([[0.0, 0.0, 0.0]]))
        np.testing.assert_allclose(out.data, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-7)

    def test_softmax_simplex(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(50, 7)) * 10)
        s = ops.softmax(x).data
        np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-6)
        assert (s > 0).all() and (s < 1).all()

    def test_cross_entropy_confident_correct(self):
        logits = Tensor([[30.0, -30.0]])
        ce = ops.cross_entropy_with_softmax(logits, np.array([0]))
        assert ce.data[0, 0] == pytest.approx(0.0, abs=1e-6)

    def test_cross_entropy_label_out_of_range(self):
        with pytest.raises(ContractViolation):
            ops.cross_entropy_with_softmax(Tensor([[0.0, 0.0]]), np.array([2]))

    def test_shape_mismatch_names_op_and_shapes(self):
        with pytest.raises(ContractViolation, match=r"add.*\(2,\).*\(3,\)"):
            ops.add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))

    def test_nonfinite_output_raises(self):
        with pytest.raises(NumericError):
            ops.log(Tensor([0.0]))

    def test_maxpool_forward(self):
        x = Tensor(np.arange(16, dtype=np.float32).reshape(1, 4, 4, 1))
        out = ops.maxpool2d(x, 2)
        np.testing.assert_array_equal(out.data.reshape(2, 2), [[5, 7], [13, 15]])

    def test_conv2d_identity_kernel(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.random((2, 5, 5, 1), dtype=np.float32))
        w = Tensor(np.ones((1, 1, 1, 1), dtype=np.float32))
        b = Tensor(np.zeros(1, dtype=np.float32))
        out = ops.conv2d(x, w, b)
        np.testing.assert_allclose(out.data, x.data)

    def test_concatenate_roundtrip(self):
        a, b = Tensor(np.ones((2, 3))), Tensor(np.zeros((4, 3)))
        out = ops.concatenate([a, b], axis=0)
        assert out.shape == (6, 3)

    def test_recording_requires_tape_and_grad(self):
        a = Tensor([1.0], requires_grad=True)
        b = Tensor([2.0])
        ops.add(a, b)  # no tape: nothing recorded
        with Tape() as tape:
            ops.add(a, b)
            assert len(tape) == 1
            ops.add(b, b)  # no grad-requiring input
            assert len(tape) == 1
            with no_tape():
                ops.add(a, b)
            assert len(tape) == 1


class TestBackward:
    def test_sum_grad_is_ones(self):
        x = Tensor(np.random.default_rng(0).random((3, 4)), requires_grad=True)
        with Tape() as tape:
            loss = ops.sum_all(x)
        grads = backward(tape, loss)
        np.testing.assert_array_equal(grads[x.uid].data, np.ones((3, 4), dtype=np.float32))

    def test_mean_grad_is_inverse_size(self):
        x = Tensor(np.random.default_rng(0).random((2, 5)), requires_grad=True)
        with Tape() as tape:
            loss = ops.mean(x)
        grads = backward(tape, loss)
        np.testing.assert_allclose(grads[x.uid].data, np.full((2, 5), 0.1), atol=1e-7)

    def test_loss_grad_is_one(self):
        x = Tensor([2.0], requires_grad=True)
        with Tape() as tape:
            loss = ops.sum_all(x)
        grads = backward(tape, loss)
        assert grads[loss.uid].data == 1.0

    def test_nonscalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = ops.add(x, x)
        with pytest.raises(ContractViolation):
            backward(tape, y)

    def test_reused_node_accumulates(self):
        x = t64([3.0], rg=True)
        with Tape() as tape:
            loss = ops.sum_all(ops.add(ops.mul(x, x), x))  # x^2 + x
        grads = backward(tape, loss)
        assert grads[x.uid].data[0] == pytest.approx(7.0)

    def test_two_layer_net_matches_finite_differences(self):
        rng = np.random.default_rng(42)
        x = rng.uniform(-1, 1, (4, 6))
        w1, b1 = rng.uniform(-1, 1, (6, 5)), rng.uniform(-1, 1, 5)
        w2, b2 = rng.uniform(-1, 1, (5, 3)), rng.uniform(-1, 1, 3)
        labels = np.array([0, 2, 1, 0])

        def loss_t(ts):
            xi, w1i, b1i, w2i, b2i = ts
            h = ops.relu(ops.linear(xi, w1i, b1i))
            return ops.mean(ops.cross_entropy_with_softmax(ops.linear(h, w2i, b2i), labels))

        errs = relative_errors(loss_t, lambda arrs: _eval(loss_t, arrs), [x, w1, b1, w2, b2])
        assert errs.max() < 1e-5


def _eval(loss_tensor_fn, arrays):
    return loss_tensor_fn([Tensor(a, dtype=np.float64) for a in arrays]).item()


def _random_graph_cases():
    """Small random graphs collectively covering the whole op set."""
    cases = []

    def mlp_case(seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-1, 1, (3, 4))
        w, b = rng.uniform(-1, 1, (4, 3)), rng.uniform(-1, 1, 3)
        labels = rng.integers(0, 3, 3)

        def f(ts):
            xi, wi, bi = ts
            h = ops.relu(ops.linear(xi, wi, bi))
            s = ops.softmax(h)
            return ops.mean(ops.log(ops.add(s, Tensor(np.full(s.shape, 1.0), dtype=np.float64)))) + ops.mean(
                ops.cross_entropy_with_softmax(h, labels)
            )

        return f, [x, w, b]

    def conv_case(seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-1, 1, (2, 6, 6, 2))
        w, b = rng.uniform(-1, 1, (3, 3, 2, 4)) * 0.5, rng.uniform(-1, 1, 4)
        w2, b2 = rng.uniform(-1, 1, (3 * 3 * 4, 2)) * 0.5, rng.uniform(-1, 1, 2)

        def f(ts):
            xi, wi, bi, w2i, b2i = ts
            h = ops.maxpool2d(ops.relu(ops.conv2d(xi, wi, bi, stride=1, padding=1)), 2)
            return ops.mean(ops.linear(ops.flatten(h), w2i, b2i))

        return f, [x, w, b, w2, b2]

    def elementwise_case(seed):
        rng = np.random.default_rng(seed)
        a = rng.uniform(-1, 1, (4, 4))
        b = rng.uniform(-1, 1, (4, 4))
        c = rng.uniform(-1, 1, (4, 4))

        def f(ts):
            ai, bi, ci = ts
            return ops.sum_all(ops.mul(ops.sub(ai, bi), ops.add(bi, ci)))

        return f, [a, b, c]

    def align_case(seed):
        rng = np.random.default_rng(seed)
        a = rng.uniform(-1, 1, (3, 5))
        b = rng.uniform(-1, 1, (3, 5))
        m = rng.uniform(-1, 1, (5, 5)) * 0.3

        def f(ts):
            ai, bi, mi = ts
            proj = ops.add(bi, ops.matmul(bi, mi))
            cat = ops.concatenate([ops.l2diff(ai, proj), ops.l2diff(ai, bi)], axis=1)
            return ops.mean(cat)

        return f, [a, b, m]

    for s in range(5):
        cases.append(mlp_case(100 + s))
        cases.append(conv_case(200 + s))
        cases.append(elementwise_case(300 + s))
        cases.append(align_case(400 + s))
    return cases


@pytest.mark.parametrize("case_idx", range(20))
def test_random_graph_gradcheck(case_idx):
    f, arrays = _random_graph_cases()[case_idx]
    errs = relative_errors(f, lambda arrs: _eval(f, arrs), arrays)
    assert np.quantile(errs, 0.99) <= 1e-4
    assert errs.max() <= 1e-3


class TestDeterminism:
    def test_forward_backward_bit_identical(self):
        def run():
            rng = np.random.default_rng(7)
            x = Tensor(rng.uniform(-1, 1, (4, 6)).astype(np.float32), requires_grad=True)
            w = Tensor(rng.uniform(-1, 1, (6, 3)).astype(np.float32), requires_grad=True)
            b = Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)
            with Tape() as tape:
                loss = ops.mean(ops.cross_entropy_with_softmax(ops.linear(x, w, b), np.array([0, 1, 2, 0])))
            grads = backward(tape, loss)
            return loss.item(), grads[w.uid].data.tobytes()

        assert run() == run()


class TestSGD:
    def test_plain_sgd_arithmetic(self):
        p = Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)
        opt = SGD([p], lr=0.1, momentum=0.0)
        opt.step([np.array([2.0], dtype=np.float32)])
        assert p.data[0] == pytest.approx(0.8)

    def test_zero_lr_no_change(self):
        p = Tensor(np.array([1.5, -2.0], dtype=np.float32), requires_grad=True)
        opt = SGD([p], lr=0.0, momentum=0.9)
        opt.step([np.array([5.0, 5.0], dtype=np.float32)])
        np.testing.assert_array_equal(p.data, [1.5, -2.0])

    def test_momentum_recurrence(self):
        p = Tensor(np.array([0.0], dtype=np.float32), requires_grad=True)
        lr = 0.1
        opt = SGD([p], lr=lr, momentum=0.9)
        g = np.array([1.0], dtype=np.float32)
        opt.step([g])
        opt.step([g])
        assert opt.velocity[p.uid][0] == pytest.approx(1.9)
        assert p.data[0] == pytest.approx(-lr * (1.0 + 1.9))

    def test_missing_gradient_rejected(self):
        p = Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)
        opt = SGD([p], lr=0.1)
        with pytest.raises(ContractViolation):
            opt.step({})

    def test_grad_buffers_cleared(self):
        p = Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)
        with Tape() as tape:
            loss = ops.sum_all(p)
        grads = backward(tape, loss)
        assert p.grad is not None
        SGD([p], lr=0.1).step(grads)
        assert p.grad is None
