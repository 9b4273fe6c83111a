import numpy as np
import pytest

from hybrid_cnn.core import Tensor, backward
from hybrid_cnn.core import functional as F
from hybrid_cnn.errors import DimensionError, StateError, UsageError
from hybrid_cnn.models import Network, build_shortest_path_model
from hybrid_cnn.sharing import ForwardStrategy, compute_lsm

from conftest import warm_up_batchnorm


def test_parameter_names_and_order(small_scnn):
    names = [p.name for p in small_scnn.named_parameters()]
    assert names[:5] == [
        "groups.body.templates.0",
        "groups.body.templates.1",
        "groups.body.templates.2",
        "groups.body.templates.3",
        "groups.body.coefficients",
    ]
    assert "layers.0.weight" in names
    assert names[-1] == f"layers.{len(small_scnn.spec.layers) - 1}.bias"
    coefficient_flags = [p.is_coefficient for p in small_scnn.named_parameters()]
    assert coefficient_flags.count(True) == 1


def test_orthogonal_init_gives_identity_lsm(small_scnn):
    lsm = compute_lsm(small_scnn.groups["body"].coefficients)
    np.testing.assert_allclose(lsm.values, np.eye(4), atol=1e-10)


def test_same_seed_same_network():
    spec = build_shortest_path_model(True, depth=3, width=4)
    a, b = Network(spec, seed=7), Network(spec, seed=7)
    for name, value in a.state_dict().items():
        np.testing.assert_array_equal(value, b.state_dict()[name])


def test_strategies_give_the_same_forward(rng):
    spec = build_shortest_path_model(True, depth=3, width=4)
    x = Tensor(rng.standard_normal((2, 2, 6, 6)))
    a = Network(spec, seed=1, strategy="weights").forward(x, train=True).data
    b = Network(spec, seed=1, strategy=ForwardStrategy.TEMPLATE_LAYERS).forward(x, train=True).data
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_eval_before_training_is_a_state_error(small_scnn, rng):
    with pytest.raises(StateError):
        small_scnn.forward(Tensor(rng.standard_normal((1, 2, 4, 4))), train=False)


def test_infer_before_training_uses_batch_statistics(small_scnn, rng):
    x = rng.standard_normal((4, 2, 5, 5))
    expected = small_scnn.copy().forward(Tensor(x[:2]), train=True).data
    logits = small_scnn.infer(x, batch_size=2)
    assert logits.shape == (4, 1, 5, 5)
    np.testing.assert_array_equal(logits[:2], expected)
    assert not small_scnn.has_running_stats


def test_infer_after_training_is_predict(small_scnn, rng):
    warm_up_batchnorm(small_scnn, rng, grid=5)
    x = rng.standard_normal((3, 2, 5, 5))
    np.testing.assert_array_equal(small_scnn.infer(x), small_scnn.predict(x))


def test_wrong_input_channels(small_scnn):
    with pytest.raises(DimensionError):
        small_scnn.forward(Tensor(np.ones((1, 3, 4, 4))), train=True)


def test_backward_reaches_every_parameter(small_scnn, rng):
    x = Tensor(rng.standard_normal((2, 2, 5, 5)))
    y = Tensor((rng.random((2, 1, 5, 5)) > 0.5).astype(float))
    backward(F.bce_with_logits(small_scnn.forward(x, train=True), y))
    missing = [p.name for p in small_scnn.named_parameters() if p.tensor.grad is None]
    assert missing == []
    small_scnn.zero_grad()
    assert all(p.grad is None for p in small_scnn.parameters())


def test_predict_is_thread_count_independent(small_scnn, rng):
    warm_up_batchnorm(small_scnn, rng)
    inputs = rng.standard_normal((7, 2, 5, 5))
    single = small_scnn.predict(inputs, batch_size=2, threads=1)
    threaded = small_scnn.predict(inputs, batch_size=2, threads=3)
    assert single.shape == (7, 1, 5, 5)
    np.testing.assert_array_equal(single, threaded)


def test_state_dict_round_trip(small_scnn, rng):
    warm_up_batchnorm(small_scnn, rng)
    state = small_scnn.state_dict()
    assert "layers.2.running_mean" in state
    other = Network(small_scnn.spec, seed=99)
    other.load_state_dict(state)
    inputs = rng.standard_normal((3, 2, 5, 5))
    np.testing.assert_array_equal(other.predict(inputs), small_scnn.predict(inputs))


def test_load_state_dict_names_the_offending_tensor(small_scnn):
    state = small_scnn.state_dict()
    state["groups.body.coefficients"] = np.zeros((4, 3))
    with pytest.raises(DimensionError, match="groups.body.coefficients"):
        small_scnn.load_state_dict(state)
    del state["groups.body.coefficients"]
    with pytest.raises(DimensionError, match="missing"):
        small_scnn.load_state_dict(state)


def test_copy_is_independent(small_scnn):
    clone = small_scnn.copy()
    clone.groups["body"].coefficients.values.data[0, 0] += 1.0
    assert clone.groups["body"].coefficients.values.data[0, 0] != small_scnn.groups["body"].coefficients.values.data[0, 0]


def test_kernel_for_shared_and_plain_layers(small_scnn):
    group = small_scnn.groups["body"]
    layer = group.members[2]
    expected = sum(group.coefficients.row(2)[j] * t.data for j, t in enumerate(group.bank.templates))
    np.testing.assert_allclose(small_scnn.kernel_for(layer).data, expected, atol=1e-14)
    assert small_scnn.kernel_for(0) is small_scnn.kernels[0]
    with pytest.raises(UsageError):
        small_scnn.kernel_for(2)


def test_bn_after(small_scnn):
    first_conv = small_scnn.groups["body"].members[0]
    assert small_scnn.bn_after(first_conv) == first_conv + 1
    assert small_scnn.bn_after(0) is None


def test_plain_network_has_no_groups(small_cnn):
    assert small_cnn.sharing_groups() == []
    assert len(small_cnn.kernels) == 6


def test_sparse_init_network():
    network = Network(build_shortest_path_model(True, depth=4, width=3), init_scheme="sparse", sparse_distribution="uniform")
    values = network.groups["body"].coefficients.values.data
    assert np.count_nonzero(values == 0.0) == 8
