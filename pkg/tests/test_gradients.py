import numpy as np
import pytest

from hybrid_cnn.core import Tensor, check_gradients, numerical_gradient, run_gradcheck_suite
from hybrid_cnn.core import functional as F
from hybrid_cnn.models import Network, build_shortest_path_model

from conftest import random_tensor


@pytest.mark.parametrize("seed", [0, 1])
def test_gradcheck_suite_passes(seed):
    report = run_gradcheck_suite(seed=seed, eps=1e-5, rtol=1e-4)
    assert report.passed, [f"{r.name}: {r.max_rel_error:.2e}" for r in report.failures()]
    names = {r.name for r in report.results}
    for expected in ("conv2d", "batchnorm2d[train]", "relu", "bce_with_logits", "conv->bn->relu->skip"):
        assert expected in names


def test_numerical_gradient_of_a_quadratic():
    x = Tensor([1.0, -2.0, 0.5], requires_grad=True)
    grad = numerical_gradient(lambda: F.sum_all(F.mul_elementwise(x, x)), x)
    np.testing.assert_allclose(grad, 2 * x.data, rtol=1e-8)


def test_check_gradients_flags_a_wrong_backward(rng):
    x = random_tensor(rng, 4)

    def broken():
        out = F.sum_all(F.mul_elementwise(x, x))
        out._backward = lambda grad: (3.0 * np.ones_like(x.data) * float(grad),)
        return out

    result = check_gradients(broken, [x], name="broken")
    assert not result.passed


def test_network_gradients_match_finite_differences(rng):
    # A whole shared network in train mode, against central differences on the coefficients.
    network = Network(build_shortest_path_model(True, depth=2, width=3), seed=5)
    x = Tensor(rng.standard_normal((2, 2, 4, 4)))
    y = Tensor((rng.random((2, 1, 4, 4)) > 0.7).astype(float))
    coefficients = network.groups["body"].coefficients.values

    def loss():
        return F.bce_with_logits(network.forward(x, train=True), y)

    result = check_gradients(loss, [coefficients, network.kernels[0]], rtol=1e-4)
    assert result.passed, result.max_rel_error
