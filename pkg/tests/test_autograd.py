"""Reverse-mode gradients: hand cases, finite differences, determinism."""

import numpy as np
import pytest

from hirivit.engine import Tensor, backward, grad_check, no_grad, ops


def t(a, rg=True):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=rg)


def test_sum_gradient_is_ones():
    x = t(np.arange(6.0).reshape(2, 3))
    backward(ops.tsum(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_square_gradient_is_2x():
    x = t(np.array([1.0, -2.0, 0.5]))
    backward(ops.tsum(ops.mul(x, x)))
    np.testing.assert_allclose(x.grad, 2 * x.data, atol=1e-15)


def test_non_scalar_loss_rejected():
    x = t(np.ones(3))
    with pytest.raises(ValueError):
        backward(ops.mul(x, x))


def test_reused_node_accumulates():
    x = t(np.array([3.0]))
    y = ops.add(ops.mul(x, x), x)          # x^2 + x -> dy/dx = 2x + 1
    backward(ops.tsum(y))
    np.testing.assert_allclose(x.grad, [7.0])


def test_no_grad_blocks_tape():
    x = t(np.ones(3))
    with no_grad():
        y = ops.mul(x, x)
    assert not y.requires_grad and y._backward is None


def test_backward_visits_each_node_once():
    # diamond graph: d = (a*b) + (a*b); the shared node must be applied once
    a = t(np.array([2.0]))
    m = ops.mul(a, a)
    out = ops.tsum(ops.add(m, m))
    backward(out)
    np.testing.assert_allclose(a.grad, [8.0])   # d(2a^2)/da = 4a


def test_determinism_bitwise():
    def run():
        rng = np.random.default_rng(123)
        x = t(rng.standard_normal((2, 3, 8, 8)))
        w = t(rng.standard_normal((5, 3, 3, 3)))
        y = ops.gelu(ops.conv2d(x, w, stride=2, padding=1))
        loss = ops.tsum(ops.mul(y, y))
        backward(loss)
        return y.data.copy(), x.grad.copy(), w.grad.copy()

    y1, gx1, gw1 = run()
    y2, gx2, gw2 = run()
    assert (y1 == y2).all() and (gx1 == gx2).all() and (gw1 == gw2).all()


# ---------------------------------------------------------------------------
# finite-difference suite: every differentiable op, 5 random instances each
# ---------------------------------------------------------------------------

def _weighted_sum(y: Tensor, rng) -> Tensor:
    w = Tensor(rng.standard_normal(y.shape))
    return ops.tsum(ops.mul(y, w))


OP_CASES = {
    "conv2d": lambda rng: (
        {"x": t(rng.standard_normal((1, 2, 5, 5))),
         "w": t(rng.standard_normal((4, 2, 3, 3))),
         "b": t(rng.standard_normal(4))},
        lambda v: ops.conv2d(v["x"], v["w"], v["b"], stride=2, padding=1)),
    "conv2d_grouped": lambda rng: (
        {"x": t(rng.standard_normal((1, 4, 4, 4))),
         "w": t(rng.standard_normal((4, 1, 3, 3)))},
        lambda v: ops.conv2d(v["x"], v["w"], None, padding=1, groups=4)),
    "linear": lambda rng: (
        {"x": t(rng.standard_normal((3, 4))),
         "w": t(rng.standard_normal((5, 4))),
         "b": t(rng.standard_normal(5))},
        lambda v: ops.linear(v["x"], v["w"], v["b"])),
    "matmul": lambda rng: (
        {"a": t(rng.standard_normal((2, 3, 4))),
         "b": t(rng.standard_normal((2, 4, 5)))},
        lambda v: ops.matmul(v["a"], v["b"])),
    "ordered_matmul": lambda rng: (
        {"a": t(rng.standard_normal((2, 3, 4))),
         "b": t(rng.standard_normal((2, 4, 5)))},
        lambda v: ops.ordered_matmul(v["a"], v["b"])),
    "softmax": lambda rng: (
        {"x": t(rng.standard_normal((4, 6)))},
        lambda v: ops.softmax(v["x"], axis=-1)),
    "log_softmax": lambda rng: (
        {"x": t(rng.standard_normal((4, 6)))},
        lambda v: ops.log_softmax(v["x"], axis=-1)),
    "gelu": lambda rng: (
        {"x": t(rng.standard_normal((3, 7)))},
        lambda v: ops.gelu(v["x"])),
    "batch_norm": lambda rng: (
        {"x": t(rng.standard_normal((3, 2, 4, 4))),
         "g": t(rng.standard_normal(2)),
         "b": t(rng.standard_normal(2))},
        lambda v: ops.batch_norm(v["x"], v["g"], v["b"],
                                 np.zeros(2), np.ones(2), True)),
    "layer_norm": lambda rng: (
        {"x": t(rng.standard_normal((3, 5, 6))),
         "g": t(rng.standard_normal(6)),
         "b": t(rng.standard_normal(6))},
        lambda v: ops.layer_norm(v["x"], v["g"], v["b"])),
    "upsample_repeat": lambda rng: (
        {"x": t(rng.standard_normal((1, 2, 3, 3)))},
        lambda v: ops.upsample_repeat(v["x"], 2)),
    "adaptive_avg_pool2d": lambda rng: (
        {"x": t(rng.standard_normal((1, 2, 7, 7)))},
        lambda v: ops.adaptive_avg_pool2d(v["x"], (4, 4))),
    "global_avg_pool": lambda rng: (
        {"x": t(rng.standard_normal((2, 3, 4, 4)))},
        lambda v: ops.global_avg_pool(v["x"])),
}


@pytest.mark.parametrize("op_name", sorted(OP_CASES))
@pytest.mark.parametrize("seed", range(5))
def test_op_gradients_match_finite_differences(op_name, seed):
    rng = np.random.default_rng(1000 * seed + hash(op_name) % 1000)
    tensors, apply = OP_CASES[op_name](rng)
    wrng = np.random.default_rng(seed + 77)
    weight = Tensor(wrng.standard_normal(apply(tensors).shape))

    def f():
        return ops.tsum(ops.mul(apply(tensors), weight))

    report = grad_check(f, tensors, h=1e-5, tol=1e-4)
    assert report.passed, f"{op_name}: rel err {report.max_rel_err:.2e} on {report.worst}"


def test_gelu_derivative_17_points():
    xs = np.linspace(-4, 4, 17)
    x = t(xs)
    backward(ops.tsum(ops.gelu(x)))
    h = 1e-6
    fd = np.array([(ops.gelu(t([v + h], rg=False)).data[0]
                    - ops.gelu(t([v - h], rg=False)).data[0]) / (2 * h) for v in xs])
    rel = np.abs(fd - x.grad) / np.maximum(np.abs(fd), 1e-3)
    assert rel.max() < 1e-6


def test_upsample_backward_sums_block():
    x = t(np.array([[[[2.0]]]]))
    y = ops.upsample_repeat(x, 3)
    backward(ops.tsum(y))
    np.testing.assert_array_equal(x.grad, [[[[9.0]]]])
