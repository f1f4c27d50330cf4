import math

import numpy as np
import pytest

from src.domain.errors import (
    ChannelCountMismatchError,
    DistributionError,
    InsufficientBatchError,
    MissingSourceSnapshotError,
    ScheduleExhaustedError,
    ScheduleRangeError,
)
from src.domain.schedule import AdaptFlags, AdaptSchedule, StepReport
from src.engine.core.tensor import Tensor, backward, no_grad
from src.engine.layers.batchnorm import BNChannelStats, BNMode, freeze_source
from src.engine.layers.functional import softmax_channels
from src.infrastructure.observability.metrics_log_writer import MetricsLogWriter
from src.services.adaptation import (
    adapt_run,
    adapt_step,
    build_optimizer,
    channel_distance,
    collapse_warning,
    hbs_loss,
    iterate_batches,
    lambda_at,
    se_loss,
    transferability_weights,
    uniform_weights,
)

OFF = AdaptFlags(adaptive_channels=False, use_se=False)


def _frozen(mean, var, eps=1e-5):
    stats = BNChannelStats.initial(len(mean), eps=eps)
    stats.running_mean = np.asarray(mean, dtype=np.float64)
    stats.running_var = np.asarray(var, dtype=np.float64)
    return freeze_source(stats)


def _images(n=6, size=8, seed=0):
    return np.random.default_rng(seed).normal(size=(n, size, size, 1))


# ---------- channel distance ----------

def test_distance_zero_when_normalized_means_agree():
    stats = _frozen([1.0, -2.0], [4.0, 1.0])
    d = channel_distance(stats, np.array([1.0, -2.0]), np.array([4.0, 1.0]))
    np.testing.assert_array_equal(d, [0.0, 0.0])


def test_distance_example():
    stats = _frozen([2.0], [3.0], eps=1e-12)
    d = channel_distance(stats, np.array([0.0]), np.array([1.0]))
    assert d[0] == pytest.approx(2.0 / math.sqrt(3.0), abs=1e-6)
    assert d[0] == pytest.approx(1.1547, abs=1e-4)


def test_distance_is_symmetric_in_source_and_target():
    rng = np.random.default_rng(1)
    m1, v1, m2, v2 = rng.normal(size=3), rng.uniform(0.5, 2, 3), rng.normal(size=3), rng.uniform(0.5, 2, 3)
    forward = channel_distance(_frozen(m1, v1), m2, v2)
    reverse = channel_distance(_frozen(m2, v2), m1, v1)
    np.testing.assert_allclose(forward, reverse, rtol=1e-15)


def test_distance_requires_snapshot():
    with pytest.raises(MissingSourceSnapshotError):
        channel_distance(BNChannelStats.initial(2), np.zeros(2), np.ones(2))


# ---------- transferability weights ----------

def test_equal_distances_give_unit_weights():
    alpha = transferability_weights(np.array([0.3, 0.3, 0.3]))
    np.testing.assert_allclose(alpha.weights, [1.0, 1.0, 1.0], rtol=1e-15)


def test_weights_example():
    alpha = transferability_weights(np.array([0.0, 1.0]))
    np.testing.assert_allclose(alpha.weights, [4.0 / 3.0, 2.0 / 3.0], rtol=1e-12)


def test_single_channel_weight_is_one():
    assert transferability_weights(np.array([7.5])).weights[0] == pytest.approx(1.0, abs=1e-15)


def test_weights_sum_to_channel_count_across_layers():
    rng = np.random.default_rng(2)
    layers = [rng.uniform(0, 3, size=n) for n in (8, 16, 32, 16, 8)]
    alpha = transferability_weights(layers)
    assert alpha.num_channels == 80
    assert alpha.weights.sum() == pytest.approx(80.0, rel=1e-12)
    assert [w.size for w in alpha.per_layer()] == [8, 16, 32, 16, 8]


def test_weights_are_non_increasing_in_distance():
    d = np.random.default_rng(3).uniform(0, 5, size=50)
    alpha = transferability_weights(d).weights
    order = np.argsort(d)
    assert np.all(np.diff(alpha[order]) <= 1e-15)
    assert np.all(alpha > 0)


def test_empty_distances_rejected():
    with pytest.raises(ChannelCountMismatchError):
        transferability_weights(np.zeros(0))
    with pytest.raises(ChannelCountMismatchError):
        uniform_weights([])


def test_uniform_weights_are_exactly_one():
    alpha = uniform_weights([np.array([0.0, 9.0]), np.array([3.0])])
    np.testing.assert_array_equal(alpha.weights, [1.0, 1.0, 1.0])


# ---------- HBS loss ----------

def test_hbs_zero_at_source_values():
    stats = _frozen([0.5, 1.0], [1.0, 2.0])
    assert hbs_loss([stats], transferability_weights(np.array([0.0, 1.0]))).item() == 0.0


def test_hbs_example():
    stats = _frozen([0.0], [1.0])
    stats.gamma.data = np.array([1.5])
    stats.beta.data = np.array([-0.25])
    assert hbs_loss([stats], uniform_weights(np.array([0.0]))).item() == pytest.approx(1.5, abs=1e-15)


def test_hbs_gradient_matches_finite_differences(assert_grad_matches):
    rng = np.random.default_rng(4)
    stats = _frozen(rng.normal(size=4), rng.uniform(0.5, 2, 4))
    alpha = transferability_weights(rng.uniform(0, 2, 4))
    offsets = rng.uniform(0.2, 0.6, size=4) * rng.choice([-1.0, 1.0], size=4)

    def loss(gamma, beta):
        stats.gamma, stats.beta = gamma, beta
        return hbs_loss([stats], alpha)

    assert_grad_matches(loss, [1.0 + offsets, -offsets])


def test_hbs_gradient_points_back_to_source():
    stats = _frozen([0.0, 0.0], [1.0, 1.0])
    stats.gamma.data = np.array([1.4, 0.7])
    backward(hbs_loss([stats], uniform_weights(np.zeros(2))))
    np.testing.assert_array_equal(stats.gamma.grad, [2.0, -2.0])


def test_hbs_channel_mismatch_rejected():
    stats = _frozen([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ChannelCountMismatchError):
        hbs_loss([stats], uniform_weights(np.zeros(3)))


# ---------- SE loss ----------

def _probs(values):
    return Tensor(np.asarray(values, dtype=np.float64).reshape(1, 1, -1, len(values[0])))


def test_se_one_hot_is_zero():
    assert abs(se_loss(_probs([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])).item()) < 1e-9


def test_se_uniform_is_log_k():
    assert se_loss(_probs([[0.25] * 4])).item() == pytest.approx(math.log(4), abs=1e-9)


def test_se_half_half_is_log_two():
    assert se_loss(_probs([[0.5, 0.5, 0.0, 0.0]])).item() == pytest.approx(math.log(2), abs=1e-9)


def test_se_is_mean_over_pixels():
    value = se_loss(_probs([[0.25] * 4, [1.0, 0.0, 0.0, 0.0]])).item()
    assert value == pytest.approx(math.log(4) / 2, abs=1e-9)


@pytest.mark.parametrize("bad", [[[0.5, 0.6, 0.0, 0.0]], [[1.2, -0.2, 0.0, 0.0]]])
def test_se_rejects_non_distributions(bad):
    with pytest.raises(DistributionError):
        se_loss(_probs(bad))


def test_se_descent_sharpens_a_single_pixel():
    logits = np.array([0.4, 0.1, -0.2, 0.0]).reshape(1, 1, 1, 4)
    entropies = []
    for _ in range(20):
        z = Tensor(logits, requires_grad=True)
        loss = se_loss(softmax_channels(z))
        entropies.append(loss.item())
        backward(loss)
        logits = logits - 0.5 * z.grad
    assert all(later < earlier for earlier, later in zip(entropies, entropies[1:]))


# ---------- lambda schedule ----------

def test_lambda_endpoints_and_midpoint():
    schedule = AdaptSchedule(total_iters=100)
    assert lambda_at(schedule, 0) == 10.0
    assert lambda_at(schedule, 50) == pytest.approx(5.0)
    assert lambda_at(schedule, 100) == 0.0


@pytest.mark.parametrize("t", [-1, 101])
def test_lambda_outside_schedule_rejected(t):
    with pytest.raises(ScheduleRangeError):
        lambda_at(AdaptSchedule(total_iters=100), t)


def test_lambda_for_empty_schedule_is_start_value():
    assert lambda_at(AdaptSchedule(total_iters=0), 0) == 10.0


def test_collapse_warning_threshold():
    assert collapse_warning([0.995, 0.005, 0.0, 0.0], t=3)
    assert not collapse_warning([0.9, 0.1, 0.0, 0.0], t=3)


# ---------- adapt_step ----------

def test_step_at_source_with_objective_switched_off_is_a_fixed_point(make_model):
    model = make_model()
    before = {k: v.copy() for k, v in model.state_arrays().items() if not k.endswith(("running_mean", "running_var"))}
    schedule = AdaptSchedule(total_iters=3)
    report = adapt_step(model, _images(), schedule, OFF, build_optimizer(model, OFF, 0.1))

    assert report.loss_total == 0.0
    assert report.loss_hbs == 0.0
    assert schedule.t == 1
    after = model.state_arrays()
    for key, value in before.items():
        np.testing.assert_array_equal(after[key], value, err_msg=key)


def test_step_reports_index_used_and_advances(make_model):
    model = make_model()
    schedule = AdaptSchedule(total_iters=5, eta0=0.9, tau=2.0)
    flags = AdaptFlags()
    optimizer = build_optimizer(model, flags, 1e-3)
    first = adapt_step(model, _images(), schedule, flags, optimizer)
    second = adapt_step(model, _images(seed=1), schedule, flags, optimizer)
    assert (first.t, second.t) == (0, 1)
    assert first.eta_t == pytest.approx(0.9)
    assert second.eta_t == pytest.approx(0.9 * math.exp(-0.5))
    assert first.lambda_t == 10.0
    assert second.lambda_t == pytest.approx(8.0)
    assert model.iterations_target == 2
    assert len(first.layer_distances) == 5
    assert sum(first.class_fractions) == pytest.approx(1.0)


def test_step_on_exhausted_schedule_rejected(make_model):
    model = make_model()
    schedule = AdaptSchedule(total_iters=2, t=2)
    with pytest.raises(ScheduleExhaustedError):
        adapt_step(model, _images(), schedule, AdaptFlags(), build_optimizer(model, AdaptFlags(), 1e-3))


def test_step_without_snapshot_rejected(make_model):
    model = make_model(frozen=False)
    with pytest.raises(MissingSourceSnapshotError):
        adapt_step(model, _images(), AdaptSchedule(total_iters=2), AdaptFlags(),
                   build_optimizer(model, AdaptFlags(), 1e-3))


def test_step_needs_two_images(make_model):
    model = make_model()
    with pytest.raises(InsufficientBatchError):
        adapt_step(model, _images(n=1), AdaptSchedule(total_iters=2), AdaptFlags(),
                   build_optimizer(model, AdaptFlags(), 1e-3))


def test_adaptive_channels_off_gives_unit_alpha(make_model):
    model = make_model()
    flags = AdaptFlags(adaptive_channels=False)
    report = adapt_step(model, _images(), AdaptSchedule(total_iters=2), flags, build_optimizer(model, flags, 1e-3))
    assert report.mean_alpha == report.min_alpha == report.max_alpha == 1.0


def test_se_off_gives_zero_weighted_entropy(make_model):
    model = make_model()
    flags = AdaptFlags(use_se=False)
    report = adapt_step(model, _images(), AdaptSchedule(total_iters=2), flags, build_optimizer(model, flags, 1e-3))
    assert report.weighted_se == 0.0
    assert report.lambda_t == 0.0
    assert report.loss_total == report.loss_hbs


def test_freeze_non_bn_leaves_convolutions_untouched(make_model):
    model = make_model()
    flags = AdaptFlags(freeze_non_bn=True)
    weights = [p.data.copy() for p in model.conv_parameters()]
    adapt_step(model, _images(), AdaptSchedule(total_iters=2), flags, build_optimizer(model, flags, 1e-2))
    for before, param in zip(weights, model.conv_parameters()):
        np.testing.assert_array_equal(param.data, before)


def _alpha_for(model, images):
    with no_grad():
        model.forward(Tensor(images), BNMode.adapt_target(0.5))
    layers = model.bn_layers()
    return transferability_weights(
        [channel_distance(bn.stats, bn.last_batch_mean, bn.last_batch_var) for bn in layers]
    )


def test_alpha_does_not_depend_on_learned_scale(make_model):
    images = _images()
    reference, perturbed = make_model(seed=5), make_model(seed=5)
    perturbed.bns["bn5"].stats.gamma.data = perturbed.bns["bn5"].stats.gamma.data + 0.7
    perturbed.bns["bn5"].stats.beta.data = perturbed.bns["bn5"].stats.beta.data - 0.3
    np.testing.assert_array_equal(_alpha_for(reference, images).weights, _alpha_for(perturbed, images).weights)


def test_full_objective_gradient_matches_finite_differences(make_model, assert_grad_matches):
    model = make_model(seed=2)
    images = _images(n=3, seed=3)
    layers = model.bn_layers()
    alpha = _alpha_for(model, images)
    bn = model.bns["bn4"]
    rng = np.random.default_rng(6)
    offsets = rng.uniform(0.1, 0.3, size=bn.num_channels) * rng.choice([-1.0, 1.0], size=bn.num_channels)

    def objective(gamma):
        bn.stats.gamma = gamma
        probs = model.forward(Tensor(images), BNMode.adapt_target(0.3))
        return hbs_loss([layer.stats for layer in layers], alpha) + se_loss(probs).scale(4.0)

    assert_grad_matches(objective, [bn.stats.source_gamma + offsets], rtol=1e-4, atol=1e-7)


# ---------- adapt_run ----------

def test_run_with_zero_iterations_is_a_no_op(make_model):
    model = make_model()
    before = {k: v.copy() for k, v in model.state_arrays().items()}
    _, reports = adapt_run(model, _images(), AdaptSchedule(total_iters=0), AdaptFlags())
    assert reports == []
    for key, value in model.state_arrays().items():
        np.testing.assert_array_equal(value, before[key], err_msg=key)


def test_run_is_bit_reproducible(make_model):
    images = _images(n=10)
    results = []
    for _ in range(2):
        model, reports = adapt_run(make_model(seed=1), images, AdaptSchedule(total_iters=4), AdaptFlags(),
                                   lr=1e-2, batch_size=4, seed=9)
        results.append((model.state_arrays(), [r.loss_total for r in reports]))
    (state_a, losses_a), (state_b, losses_b) = results
    assert losses_a == losses_b
    for key in state_a:
        np.testing.assert_array_equal(state_a[key], state_b[key], err_msg=key)


def test_run_ends_on_closed_form_momentum(make_model):
    schedule = AdaptSchedule(total_iters=6, eta0=0.8, tau=3.0)
    _, reports = adapt_run(make_model(), _images(), schedule, AdaptFlags(), batch_size=4)
    assert len(reports) == 6
    assert schedule.t == 6
    assert schedule.momentum_now() == pytest.approx(0.8 * math.exp(-2.0), rel=1e-12)
    assert [r.t for r in reports] == list(range(6))


def test_run_steps_are_logged_as_csv_rows(make_model, tmp_path):
    path = tmp_path / "log.csv"
    with MetricsLogWriter(str(path), num_classes=4) as writer:
        adapt_run(make_model(), _images(), AdaptSchedule(total_iters=3), AdaptFlags(), batch_size=4)
    lines = path.read_text().splitlines()
    assert writer.rows_written == 3
    assert lines[0] == StepReport.csv_header(4)
    assert lines[0].startswith("t,eta_t,lambda_t,loss_total,loss_hbs,loss_se,mean_d,max_d")
    assert [line.split(",")[0] for line in lines[1:]] == ["0", "1", "2"]


def test_batches_cover_every_sample_per_pass():
    batches = iterate_batches(7, 3, np.random.default_rng(0))
    first_pass = [next(batches) for _ in range(2)]
    seen = np.concatenate(first_pass)
    assert len(set(seen.tolist())) == 6
    assert all(b.size == 3 for b in first_pass)
