import numpy as np
import pytest

from src.engine.core.gradcheck import finite_diff_grad
from src.engine.core.tensor import Tensor, backward
from src.infrastructure.event_bus import EventBus
from src.models.segnet import NetworkSpec, ToyUNet


@pytest.fixture(autouse=True)
def clean_event_bus():
    EventBus().clear()
    yield
    EventBus().clear()


@pytest.fixture
def small_spec():
    # Same architecture on 8x8 inputs so model tests stay fast.
    return NetworkSpec(image_size=8)


@pytest.fixture
def make_model(small_spec):
    def _make(seed: int = 0, frozen: bool = True, spec: NetworkSpec = None) -> ToyUNet:
        model = ToyUNet(spec or small_spec, np.random.default_rng(seed))
        if frozen:
            model.freeze_source()
        return model
    return _make


@pytest.fixture
def assert_grad_matches():
    """Compare backward() against central differences for every input of `fn`."""
    def _check(fn, arrays, rtol=1e-5, atol=1e-8):
        tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
        backward(fn(*tensors))
        for i, array in enumerate(arrays):
            def f_i(x, i=i):
                args = [Tensor(np.array(a, dtype=np.float64)) for a in arrays]
                args[i] = x
                return fn(*args)
            numeric = finite_diff_grad(f_i, array)
            np.testing.assert_allclose(tensors[i].grad, numeric.data, rtol=rtol, atol=atol,
                                       err_msg=f"gradient of input {i}")
    return _check
