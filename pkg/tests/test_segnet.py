import numpy as np
import pytest

from src.domain.errors import EmptyDatasetError, SpatialSizeError
from src.engine.core.tensor import Tensor, no_grad
from src.engine.layers.batchnorm import BNMode
from src.models.segnet import NetworkSpec, ToyUNet
from src.services.data_synth import SegmentationDataset
from src.services.pretraining import pretrain_source


def _toy_dataset(n=8, size=8, seed=0):
    rng = np.random.default_rng(seed)
    images = rng.uniform(0.0, 1.0, size=(n, size, size, 1))
    labels = np.digitize(images[..., 0], [0.25, 0.5, 0.75]).astype(np.uint8)
    return SegmentationDataset(images=images.astype(np.float32), labels=labels)


def test_parameter_count_matches_architecture():
    spec = NetworkSpec()
    assert spec.parameter_count() == 11868
    assert spec.bn_channel_count() == 80
    model = ToyUNet(spec, np.random.default_rng(0))
    assert model.parameter_count() == 11868
    assert [bn.num_channels for bn in model.bn_layers()] == [8, 16, 32, 16, 8]


@pytest.mark.parametrize("mode", [BNMode.eval(), BNMode.train_source()])
def test_outputs_are_per_pixel_distributions(make_model, mode):
    model = make_model(frozen=False)
    x = Tensor(np.random.default_rng(1).normal(size=(3, 8, 8, 1)))
    with no_grad():
        probs = model.forward(x, mode)
    assert probs.shape == (3, 8, 8, 4)
    np.testing.assert_allclose(probs.data.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(probs.data >= 0)


def test_eval_predictions_do_not_depend_on_batch_composition(make_model):
    model = make_model()
    images = np.random.default_rng(2).normal(size=(4, 8, 8, 1))
    with no_grad():
        together = model.forward(Tensor(images), BNMode.eval()).data
        alone = np.concatenate([model.forward(Tensor(images[i:i + 1]), BNMode.eval()).data for i in range(4)])
    np.testing.assert_allclose(together, alone, rtol=0, atol=1e-13)


def test_single_image_batch_runs_in_train_source(make_model):
    model = make_model(frozen=False)
    with no_grad():
        probs = model.forward(Tensor(np.random.default_rng(3).normal(size=(1, 8, 8, 1))), BNMode.train_source())
    assert probs.shape == (1, 8, 8, 4)


def test_wrong_spatial_size_rejected(make_model):
    with pytest.raises(SpatialSizeError):
        make_model().forward(Tensor(np.zeros((2, 6, 6, 1))), BNMode.eval())


def test_single_precision_model_stays_single_precision():
    model = ToyUNet(NetworkSpec(image_size=8), np.random.default_rng(0), dtype=np.float32)
    with no_grad():
        probs = model.forward(Tensor(np.zeros((2, 8, 8, 1))), BNMode.eval())
    assert probs.dtype == np.float32


def test_predict_labels_shape_and_range(make_model):
    labels = make_model().predict_labels(np.random.default_rng(4).normal(size=(5, 8, 8, 1)), batch_size=2)
    assert labels.shape == (5, 8, 8)
    assert labels.dtype == np.uint8
    assert labels.max() < 4


# ---------- pre-training ----------

def test_pretrain_without_epochs_freezes_initial_statistics(make_model):
    model = make_model(frozen=False)
    report = pretrain_source(model, _toy_dataset(), epochs=0, lr=0.1)
    assert report.iterations == 0
    assert model.frozen
    assert model.iterations_source == 0
    for bn in model.bn_layers():
        np.testing.assert_array_equal(bn.stats.source_mean, np.zeros(bn.num_channels))
        np.testing.assert_array_equal(bn.stats.source_var, np.ones(bn.num_channels))
        np.testing.assert_array_equal(bn.stats.source_gamma, np.ones(bn.num_channels))


def test_pretrain_is_deterministic(make_model):
    states = []
    for _ in range(2):
        model = make_model(seed=3, frozen=False)
        pretrain_source(model, _toy_dataset(), epochs=2, lr=0.05, batch_size=4, seed=7)
        states.append(model.state_arrays())
    for key in states[0]:
        np.testing.assert_array_equal(states[0][key], states[1][key], err_msg=key)


def test_pretrain_counts_iterations_and_reduces_loss(make_model):
    model = make_model(frozen=False)
    report = pretrain_source(model, _toy_dataset(), epochs=10, lr=0.1, batch_size=4)
    assert report.iterations == 20
    assert model.iterations_source == 20
    assert report.epoch_losses[-1] < report.epoch_losses[0]


def test_pretrain_on_empty_dataset_rejected(make_model):
    empty = SegmentationDataset(images=np.zeros((0, 8, 8, 1), dtype=np.float32), labels=np.zeros((0, 8, 8), dtype=np.uint8))
    with pytest.raises(EmptyDatasetError):
        pretrain_source(make_model(frozen=False), empty, epochs=1, lr=0.1)
