import numpy as np
import pytest

from src.domain.errors import EmptyGraphError, NonFiniteError, NonScalarLossError, ShapeMismatchError, StepSizeError
from src.engine.core.gradcheck import finite_diff_grad
from src.engine.core.tensor import Tensor, backward, get_active_graph, no_grad, record
from src.engine.layers.functional import channel_mean, channel_var, conv2d, relu, softmax_channels, upsample2x
from src.engine.registry.library.elementwise import Add
from src.engine.registry.primitive_registry import PrimitiveRegistry
from src.services.pretraining import cross_entropy


def _signed(rng, shape, low=0.2, high=1.5):
    # Values bounded away from zero, for primitives with a kink or pole at 0.
    return rng.uniform(low, high, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _cases(rng):
    r = rng.normal(size=(2, 3, 3, 4))
    r_c = rng.normal(size=(4,))
    return {
        "add": ([rng.normal(size=(2, 3, 3, 4)), rng.normal(size=(2, 3, 3, 4))],
                lambda a, b: ((a + b) * Tensor(r)).sum()),
        "add_per_channel": ([rng.normal(size=(2, 3, 3, 4)), rng.normal(size=(4,))],
                            lambda a, b: ((a + b) * Tensor(r)).sum()),
        "subtract": ([rng.normal(size=(2, 3, 3, 4)), rng.normal(size=(4,))],
                     lambda a, b: ((a - b) * Tensor(r)).sum()),
        "multiply": ([rng.normal(size=(2, 3, 3, 4)), rng.normal(size=(4,))],
                     lambda a, b: (a * b * Tensor(r)).sum()),
        "divide": ([rng.normal(size=(2, 3, 3, 4)), _signed(rng, (4,))],
                   lambda a, b: (a / b * Tensor(r)).sum()),
        "scale": ([rng.normal(size=(2, 3, 3, 4))], lambda a: (a.scale(2.5) * Tensor(r)).sum()),
        "negate": ([rng.normal(size=(2, 3, 3, 4))], lambda a: (-a * Tensor(r)).sum()),
        "sqrt": ([rng.uniform(0.5, 2.0, size=(2, 3, 3, 4))], lambda a: (a.sqrt() * Tensor(r)).sum()),
        "log": ([rng.uniform(0.5, 2.0, size=(2, 3, 3, 4))], lambda a: (a.log() * Tensor(r)).sum()),
        "exp": ([rng.uniform(-1.0, 1.0, size=(2, 3, 3, 4))], lambda a: (a.exp() * Tensor(r)).sum()),
        "abs": ([_signed(rng, (2, 3, 3, 4))], lambda a: (a.abs() * Tensor(r)).sum()),
        "relu": ([_signed(rng, (2, 3, 3, 4))], lambda a: (relu(a) * Tensor(r)).sum()),
        "sum_all": ([rng.normal(size=(2, 3, 3, 4))], lambda a: (a * a).sum()),
        "mean_all": ([rng.normal(size=(2, 3, 3, 4))], lambda a: (a * Tensor(r)).mean()),
        "channel_mean": ([rng.normal(size=(2, 3, 3, 4))], lambda a: (channel_mean(a) * Tensor(r_c)).sum()),
        "channel_var": ([rng.normal(size=(2, 3, 3, 4))], lambda a: (channel_var(a) * Tensor(r_c)).sum()),
        "conv2d": ([rng.normal(size=(2, 5, 5, 2)), rng.normal(size=(3, 3, 2, 3)) * 0.3, rng.normal(size=(3,))],
                   lambda x, w, b: (conv2d(x, w, b) * conv2d(x, w, b)).sum()),
        "conv2d_stride2": ([rng.normal(size=(2, 5, 5, 2)), rng.normal(size=(3, 3, 2, 3)) * 0.3, rng.normal(size=(3,))],
                           lambda x, w, b: (conv2d(x, w, b, stride=2) * Tensor(r[:, :, :, :3])).sum()),
        "conv2d_1x1": ([rng.normal(size=(2, 3, 3, 2)), rng.normal(size=(1, 1, 2, 4)), rng.normal(size=(4,))],
                       lambda x, w, b: (conv2d(x, w, b) * Tensor(r)).sum()),
        "upsample2x": ([rng.normal(size=(1, 2, 2, 3))],
                       lambda a: (upsample2x(a) * Tensor(rng_fixed_like((1, 4, 4, 3)))).sum()),
        "softmax": ([rng.normal(size=(2, 3, 3, 4))], lambda a: (softmax_channels(a) * Tensor(r)).sum()),
        "cross_entropy": ([rng.normal(size=(2, 3, 3, 4))],
                          lambda a: cross_entropy(softmax_channels(a), labels_fixed((2, 3, 3), 4))),
    }


def rng_fixed_like(shape):
    return np.random.default_rng(123).normal(size=shape)


def labels_fixed(shape, num_classes):
    return np.random.default_rng(321).integers(0, num_classes, size=shape)


CASE_NAMES = list(_cases(np.random.default_rng(0)).keys())


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("case", CASE_NAMES)
def test_primitive_gradient_matches_finite_differences(case, seed, assert_grad_matches):
    arrays, fn = _cases(np.random.default_rng(seed))[case]
    assert_grad_matches(fn, arrays)


def test_reused_leaf_accumulates_gradient():
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    backward((x * x).sum())
    np.testing.assert_array_equal(x.grad, [2.0, -4.0, 6.0])


def test_leaf_not_reached_by_loss_gets_zeros():
    x = Tensor(np.ones(3), requires_grad=True)
    y = Tensor(np.ones(2), requires_grad=True)
    _ = y * 2.0
    backward(x.sum())
    np.testing.assert_array_equal(y.grad, np.zeros(2))


def test_gradients_accumulate_until_zeroed():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    backward(x.sum())
    backward(x.scale(3.0).sum())
    np.testing.assert_array_equal(x.grad, [4.0, 4.0])
    x.zero_grad()
    assert x.grad is None


def test_backward_is_linear_in_the_loss():
    rng = np.random.default_rng(7)
    data = rng.normal(size=(2, 3, 3, 4))

    def grad_of(build):
        x = Tensor(data, requires_grad=True)
        backward(build(x))
        return x.grad

    f = lambda x: (x * x).sum()
    g = lambda x: channel_var(x).sum()
    combined = grad_of(lambda x: f(x).scale(2.0) + g(x).scale(-3.0))
    np.testing.assert_allclose(combined, 2.0 * grad_of(f) - 3.0 * grad_of(g), rtol=1e-12, atol=1e-12)


def test_backward_is_deterministic():
    rng = np.random.default_rng(3)
    x_data, w_data, b_data = rng.normal(size=(2, 6, 6, 2)), rng.normal(size=(3, 3, 2, 4)), rng.normal(size=(4,))

    def run():
        x, w, b = (Tensor(a, requires_grad=True) for a in (x_data, w_data, b_data))
        backward(softmax_channels(conv2d(x, w, b)).log().sum())
        return x.grad, w.grad, b.grad

    for first, second in zip(run(), run()):
        np.testing.assert_array_equal(first, second)


def test_graph_is_released_after_backward():
    x = Tensor(np.ones(3), requires_grad=True)
    loss = (x * 2.0).sum()
    backward(loss)
    assert len(get_active_graph()) == 0
    with pytest.raises(EmptyGraphError):
        backward(loss)


def test_non_scalar_loss_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(NonScalarLossError):
        backward(x * 2.0)


def test_loss_without_recorded_operations_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        out = (x * 2.0).sum()
    assert out._node is None
    with pytest.raises(EmptyGraphError):
        backward(out)


def test_shape_mismatch_names_op_and_extents():
    with pytest.raises(ShapeMismatchError) as exc:
        _ = Tensor(np.ones((2, 3))) + Tensor(np.ones(4))
    assert exc.value.op == "add"
    assert exc.value.extents == [(2, 3), (4,)]


def test_conv_channel_mismatch_rejected():
    with pytest.raises(ShapeMismatchError):
        conv2d(Tensor(np.ones((1, 4, 4, 2))), Tensor(np.ones((3, 3, 3, 1))), Tensor(np.ones(1)))


def test_non_finite_output_rejected():
    with pytest.raises(NonFiniteError):
        Tensor(np.array([-1.0])).log()


def test_unknown_primitive_raises_key_error():
    with pytest.raises(KeyError, match="known: abs, add, channel_mean"):
        record("no_such_op", [Tensor(np.ones(2))])


def test_registry_rejects_duplicate_names():
    registry = PrimitiveRegistry()
    registry.register(Add())
    with pytest.raises(ValueError):
        registry.register(Add())
    assert "add" in registry


def test_mean_all_example():
    assert Tensor(np.array([1.0, 2.0, 3.0, 6.0])).mean().item() == 3.0


def test_finite_diff_leaves_input_untouched():
    x = np.array([0.5, -1.5, 2.0])
    before = x.copy()
    grad = finite_diff_grad(lambda t: (t * t).sum(), x)
    np.testing.assert_array_equal(x, before)
    np.testing.assert_allclose(grad.data, 2.0 * before, rtol=1e-8)


def test_finite_diff_rejects_non_positive_step():
    with pytest.raises(StepSizeError):
        finite_diff_grad(lambda t: t.sum(), np.ones(2), step=0.0)
