from decimal import Decimal, getcontext

import numpy as np
import pytest

from hybrid_cnn.core import RunningStats, Tensor, Tape, backward
from hybrid_cnn.core import functional as F
from hybrid_cnn.errors import DimensionError, NonFiniteError, StateError, UsageError

from conftest import random_tensor


def reference_conv2d(x: np.ndarray, k: np.ndarray, padding: int) -> np.ndarray:
    n, cin, h, w = x.shape
    cout, _, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    h_out, w_out = h + 2 * padding - kh + 1, w + 2 * padding - kw + 1
    out = np.zeros((n, cout, h_out, w_out))
    for b in range(n):
        for o in range(cout):
            for r in range(h_out):
                for c in range(w_out):
                    total = 0.0
                    for i in range(cin):
                        for dr in range(kh):
                            for dc in range(kw):
                                total += xp[b, i, r + dr, c + dc] * k[o, i, dr, dc]
                    out[b, o, r, c] = total
    return out


def test_conv2d_all_ones_overlap_counts():
    out = F.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), padding=1).data
    assert out[0, 0, 1, 1] == 9.0
    for corner in [(0, 0), (0, 2), (2, 0), (2, 2)]:
        assert out[(0, 0) + corner] == 4.0


def test_conv2d_zero_kernel_gives_zero_output(rng):
    out = F.conv2d(random_tensor(rng, 2, 3, 5, 5), Tensor(np.zeros((4, 3, 3, 3))), padding=1)
    assert out.shape == (2, 4, 5, 5)
    assert np.all(out.data == 0.0)


def test_conv2d_matches_loop_reference():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 3, 8, 8))
    k = rng.standard_normal((4, 3, 3, 3))
    for padding in (0, 1):
        out = F.conv2d(Tensor(x), Tensor(k), padding=padding).data
        np.testing.assert_allclose(out, reference_conv2d(x, k, padding), rtol=0, atol=1e-12)


def test_conv2d_is_linear_in_the_kernel(rng):
    x = random_tensor(rng, 2, 3, 6, 6)
    a = rng.standard_normal((2, 3, 3, 3))
    b = rng.standard_normal((2, 3, 3, 3))
    alpha, beta = 0.7, -1.3
    lhs = F.conv2d(x, Tensor(alpha * a + beta * b), padding=1).data
    rhs = alpha * F.conv2d(x, Tensor(a), padding=1).data + beta * F.conv2d(x, Tensor(b), padding=1).data
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-10)


def test_conv2d_shape_errors(rng):
    with pytest.raises(DimensionError):
        F.conv2d(random_tensor(rng, 1, 2, 4, 4), random_tensor(rng, 3, 3, 3, 3), padding=1)
    with pytest.raises(DimensionError):
        F.conv2d(random_tensor(rng, 2, 4, 4), random_tensor(rng, 3, 2, 3, 3))
    with pytest.raises(DimensionError):
        F.conv2d(random_tensor(rng, 1, 1, 2, 2), random_tensor(rng, 1, 1, 3, 3), padding=0)


def test_batchnorm_two_values_normalise_to_plus_minus_one():
    x = Tensor(np.array([1.0, 3.0]).reshape(2, 1, 1, 1))
    out = F.batchnorm2d(x, Tensor([1.0]), Tensor([0.0]), RunningStats(), train=True, eps=0.0)
    np.testing.assert_allclose(out.data.reshape(-1), [-1.0, 1.0])


def test_batchnorm_zero_gamma_returns_beta(rng):
    x = random_tensor(rng, 3, 2, 4, 4)
    beta = np.array([0.5, -2.0])
    out = F.batchnorm2d(x, Tensor(np.zeros(2)), Tensor(beta), RunningStats(), train=True)
    np.testing.assert_array_equal(out.data, np.broadcast_to(beta.reshape(1, 2, 1, 1), out.shape))


def test_batchnorm_train_output_statistics(rng):
    x = random_tensor(rng, 4, 2, 5, 5)
    out = F.batchnorm2d(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), RunningStats(), train=True, eps=0.0).data
    assert np.all(np.abs(out.mean(axis=(0, 2, 3))) <= 1e-10)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-8)


def test_batchnorm_running_statistics_update(rng):
    x = random_tensor(rng, 4, 2, 3, 3)
    stats = RunningStats()
    F.batchnorm2d(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), stats, train=True)
    m = 4 * 3 * 3
    mean = x.data.mean(axis=(0, 2, 3))
    var = x.data.var(axis=(0, 2, 3)) * m / (m - 1)
    np.testing.assert_allclose(stats.mean, F.BN_MOMENTUM * mean)
    np.testing.assert_allclose(stats.var, (1 - F.BN_MOMENTUM) + F.BN_MOMENTUM * var)
    assert stats.num_batches_tracked == 1


def test_batchnorm_eval_before_training_is_a_state_error(rng):
    with pytest.raises(StateError):
        F.batchnorm2d(random_tensor(rng, 2, 2, 3, 3), Tensor(np.ones(2)), Tensor(np.zeros(2)), RunningStats(), train=False)


def test_batchnorm_train_needs_two_values_per_channel():
    with pytest.raises(UsageError):
        F.batchnorm2d(Tensor(np.ones((1, 2, 1, 1))), Tensor(np.ones(2)), Tensor(np.zeros(2)), RunningStats(), train=True)


def test_elementwise_primitives():
    np.testing.assert_array_equal(F.relu(Tensor([-2.0, 0.0, 3.0])).data, [0.0, 0.0, 3.0])
    x = Tensor([[1.0, -2.0], [3.5, 4.0]])
    np.testing.assert_array_equal(F.add(x, Tensor(np.zeros((2, 2)))).data, x.data)
    assert F.sum_all(Tensor(np.ones((2, 2)))).item() == 4.0
    np.testing.assert_array_equal(F.scale(x, 2.0).data, 2.0 * x.data)
    np.testing.assert_array_equal(F.mul_elementwise(x, x).data, x.data**2)


def test_elementwise_shape_mismatch():
    with pytest.raises(DimensionError):
        F.add(Tensor(np.ones(3)), Tensor(np.ones(4)))
    with pytest.raises(DimensionError):
        F.mul_elementwise(Tensor(np.ones((2, 2))), Tensor(np.ones(4)))


def test_relu_gradient_is_zero_at_the_kink():
    x = Tensor([-1.0, 0.0, 2.0], requires_grad=True)
    backward(F.sum_all(F.relu(x)))
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_bce_with_logits_known_values():
    assert F.bce_with_logits(Tensor([0.0]), Tensor([1.0])).item() == pytest.approx(np.log(2.0), abs=1e-12)
    big = F.bce_with_logits(Tensor([50.0]), Tensor([1.0])).item()
    assert 0.0 <= big <= 1e-20
    assert np.isfinite(F.bce_with_logits(Tensor([-800.0]), Tensor([1.0])).item())


def test_bce_with_logits_matches_high_precision_reference(rng):
    z = rng.standard_normal(8) * 4
    t = (rng.random(8) > 0.5).astype(float)
    getcontext().prec = 50
    total = Decimal(0)
    for zi, ti in zip(z, t):
        zd = Decimal(float(zi))
        pos = (Decimal(1) + (-zd).exp()).ln()
        neg = (Decimal(1) + zd.exp()).ln()
        total += pos * Decimal(float(ti)) + neg * (Decimal(1) - Decimal(float(ti)))
    expected = float(total / 8)
    assert F.bce_with_logits(Tensor(z), Tensor(t)).item() == pytest.approx(expected, abs=1e-12)


def test_bce_with_logits_rejects_soft_targets():
    with pytest.raises(ValueError):
        F.bce_with_logits(Tensor([0.0, 1.0]), Tensor([0.5, 1.0]))


def test_abs_cosine_similarity_zero_row():
    with pytest.raises(UsageError):
        F.abs_cosine_similarity(Tensor([[1.0, 0.0], [0.0, 0.0]]))


def test_backward_of_sum_and_scale():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    backward(F.sum_all(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    y = Tensor(np.ones(4), requires_grad=True)
    backward(F.sum_all(F.scale(y, 3.0)))
    np.testing.assert_array_equal(y.grad, np.full(4, 3.0))


def test_scalar_results_are_zero_dimensional(rng):
    total = F.sum_all(random_tensor(rng, 2, 3))
    assert total.shape == ()
    assert F.add(total, Tensor(1.0)).shape == ()

    loss = F.bce_with_logits(Tensor([[0.5, -1.0]]), Tensor([[1.0, 0.0]]))
    assert loss.shape == ()


def test_backward_accumulates_until_reset():
    x = Tensor(np.ones(3), requires_grad=True)
    backward(F.sum_all(x))
    backward(F.sum_all(x))
    np.testing.assert_array_equal(x.grad, np.full(3, 2.0))
    x.zero_grad()
    assert x.grad is None


def test_backward_needs_a_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(UsageError):
        backward(F.scale(x, 2.0))


def test_shared_subexpression_gradient():
    # x feeds the output twice; both paths must be summed.
    x = Tensor([2.0], requires_grad=True)
    loss = F.sum_all(F.mul_elementwise(x, x))
    backward(loss)
    np.testing.assert_allclose(x.grad, [4.0])


def test_tape_orders_parents_first(rng):
    a = random_tensor(rng, 2, 2)
    b = F.relu(a)
    c = F.add(b, a)
    tape = Tape.from_output(F.sum_all(c))
    position = {id(node): i for i, node in enumerate(tape.nodes)}
    assert position[id(a)] < position[id(b)] < position[id(c)]


def test_non_finite_forward_raises():
    with pytest.raises(NonFiniteError):
        F.scale(Tensor([1e308]), 10.0)


def test_operator_sugar(rng):
    a = random_tensor(rng, 3)
    b = random_tensor(rng, 3)
    np.testing.assert_array_equal((a + b).data, a.data + b.data)
    np.testing.assert_array_equal((a - b).data, a.data - b.data)
    np.testing.assert_array_equal((2.0 * a).data, 2.0 * a.data)
    np.testing.assert_array_equal((a * b).data, a.data * b.data)
