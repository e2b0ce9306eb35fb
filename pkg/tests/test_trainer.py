import json
import math

import numpy as np
import pytest
from scipy.optimize import isotonic_regression

from mono_kan.certifier import certify
from mono_kan.constraints import project_model
from mono_kan.dataio import Dataset, Task
from mono_kan.errors import ArgumentError, ConfigError, TrainingDivergedError
from mono_kan.network import MonotonicitySpec, forward, model_to_dict
from mono_kan.spline import FRITSCH_RADIUS_SQ, Direction, secant_slopes
from mono_kan.trainer import (
    SGD,
    Adam,
    LossKind,
    Optimizer,
    ProjectionSchedule,
    TrainConfig,
    batch_size_for,
    init_model,
    loss,
    metrics,
    train,
)

INCREASING = MonotonicitySpec((Direction.INCREASING,))
DECREASING = MonotonicitySpec((Direction.DECREASING,))


def line_dataset(slope, n=100):
    x = np.linspace(-1.0, 1.0, n)
    return Dataset(x[:, None], slope * x, ['x'])


def test_mse_of_equal_vectors_is_zero():
    value, grad = loss(np.array([1.0, 2.0]), np.array([1.0, 2.0]), LossKind.MSE)
    assert value == 0.0
    assert grad.tolist() == [0.0, 0.0]


def test_bce_of_zero_logit():
    value, grad = loss(np.array([0.0]), np.array([1.0]), LossKind.BCE)
    assert value == pytest.approx(math.log(2), abs=1e-12)
    assert grad.tolist() == [-0.5]


def test_bce_is_finite_for_large_logits():
    value, _ = loss(np.array([800.0, -800.0]), np.array([0.0, 1.0]), 'bce')
    assert value == pytest.approx(800.0)


@pytest.mark.parametrize('kind', [LossKind.MSE, LossKind.BCE])
def test_loss_gradient_matches_finite_differences(kind):
    rng = np.random.default_rng(0)
    pred = rng.normal(size=7)
    target = rng.integers(0, 2, 7).astype(float)
    _, grad = loss(pred, target, kind)
    h = 1e-6
    for i in range(7):
        step = np.zeros(7)
        step[i] = h
        fd = (loss(pred + step, target, kind)[0] - loss(pred - step, target, kind)[0]) / (2 * h)
        assert grad[i] == pytest.approx(fd, rel=1e-8, abs=1e-10)


def test_loss_length_mismatch():
    with pytest.raises(ArgumentError):
        loss(np.zeros(3), np.zeros(2), LossKind.MSE)


def test_metrics():
    assert metrics(np.array([1.0, 3.0]), np.array([1.0, 1.0]), Task.REGRESSION) == {
        'mse': 2.0,
        'rmse': math.sqrt(2.0),
    }
    scores = metrics(np.array([2.0, -1.0, 0.5]), np.array([1.0, 0.0, 0.0]), Task.CLASSIFICATION)
    assert scores['accuracy'] == pytest.approx(2 / 3)


@pytest.mark.parametrize('tags', [
    ('increasing',),
    ('decreasing', 'free', 'increasing'),
    ('free', 'free'),
])
def test_init_is_certified_and_a_projection_fixed_point(tags):
    model = init_model([len(tags), 5, 3, 1], MonotonicitySpec(tags), 8, seed=4)
    assert certify(model).passed
    assert project_model(model).is_identity


def test_init_slopes_stay_inside_the_unit_box():
    model = init_model([1, 1], INCREASING, 8, seed=0)
    layer = model.layers[0]
    d = secant_slopes(layer.values[0, 0], layer.knots[0, 0])
    alpha = layer.slopes[0, 0, :-1] / d
    beta = layer.slopes[0, 0, 1:] / d
    assert np.all((alpha > 0) & (alpha <= 1) & (beta > 0) & (beta <= 1))
    assert np.all(alpha**2 + beta**2 <= 2.0)
    assert 2.0 < FRITSCH_RADIUS_SQ


def test_init_is_deterministic():
    spec = MonotonicitySpec(('inc', 'free', 'dec'))
    assert model_to_dict(init_model([3, 4, 1], spec, 6, seed=9)) == model_to_dict(
        init_model([3, 4, 1], spec, 6, seed=9)
    )
    assert model_to_dict(init_model([3, 4, 1], spec, 6, seed=9)) != model_to_dict(
        init_model([3, 4, 1], spec, 6, seed=10)
    )


def test_init_grids():
    model = init_model([2, 3, 1], MonotonicitySpec.free(2), 5, grid_range=3.0)
    assert model.layers[0].knots[0, 0].tolist() == [-1.0, -0.5, 0.0, 0.5, 1.0]
    assert model.layers[1].knots[0, 0, 0] == -3.0
    assert model.layers[1].knots[0, 0, -1] == 3.0


@pytest.mark.parametrize('widths', [[2], [2, 0, 1], [2, 3], []])
def test_init_rejects_invalid_widths(widths):
    with pytest.raises(ArgumentError):
        init_model(widths, MonotonicitySpec.free(2), 4)


def test_init_rejects_spec_length():
    with pytest.raises(ArgumentError):
        init_model([2, 1], INCREASING, 4)


@pytest.mark.parametrize('slope, spec', [(1.0, INCREASING), (-1.0, DECREASING)])
def test_representable_line_converges(slope, spec):
    model = init_model([1, 1], spec, 8, seed=0)
    model, log = train(model, line_dataset(slope), TrainConfig(max_epochs=200))
    assert len(log.epochs) == 200
    assert log.train_losses[-1] < 1e-3
    assert log.train_losses[-1] < log.train_losses[0]
    assert certify(model).passed


def test_non_monotone_target_is_bounded_by_isotonic_fit():
    x = np.linspace(-1.0, 1.0, 100)
    y = x**3 + np.sin(5 * x)
    model = init_model([1, 1], INCREASING, 8, seed=0)
    model, _ = train(model, Dataset(x[:, None], y, ['x']), TrainConfig(max_epochs=200))
    assert certify(model).passed

    prediction, _ = forward(model, x[:, None], keep_tape=False)
    assert np.all(np.diff(prediction) >= -1e-12)
    model_mse = float(np.mean((prediction - y) ** 2))
    oracle_mse = float(np.mean((isotonic_regression(y).x - y) ** 2))
    assert model_mse >= oracle_mse - 1e-9


def test_certified_after_every_step():
    x = np.linspace(-1.0, 1.0, 64)
    dataset = Dataset(np.stack([x, x[::-1]], axis=1), np.sin(3 * x), ['a', 'b'])
    model = init_model([2, 3, 1], MonotonicitySpec(('inc', 'dec')), 6, seed=1)
    checked = []

    def on_step(step, current):
        if step % 10 == 0:
            checked.append(certify(current).passed)

    train(model, dataset, TrainConfig(max_epochs=10, batch_size=8), on_step=on_step)
    assert len(checked) == 8
    assert all(checked)


def test_per_epoch_projection_ends_certified():
    model = init_model([1, 3, 1], INCREASING, 6, seed=2)
    config = TrainConfig(max_epochs=5, batch_size=16, projection=ProjectionSchedule.PER_EPOCH)
    model, log = train(model, line_dataset(1.0), config)
    assert certify(model).passed
    assert len(log.epochs) == 5


def test_training_is_deterministic():
    config = TrainConfig(max_epochs=20, batch_size=32, seed=5)

    def run():
        model = init_model([1, 2, 1], INCREASING, 6, seed=5)
        model, log = train(model, line_dataset(2.0), config, line_dataset(2.0, n=20))
        return log.train_losses, [r.val_loss for r in log.epochs], model_to_dict(model)

    assert run() == run()


@pytest.mark.parametrize('optimizer', ['adam', 'sgd'])
def test_both_optimizers_reduce_the_loss(optimizer):
    model = init_model([1, 1], INCREASING, 6, seed=0)
    config = TrainConfig(max_epochs=50, optimizer=optimizer, momentum=0.5)
    _, log = train(model, line_dataset(1.0), config)
    assert log.train_losses[-1] < log.train_losses[0]


def test_divergence_is_reported():
    model = init_model([1, 1], INCREASING, 6, seed=0)
    config = TrainConfig(max_epochs=5, learning_rate=1e300)
    with pytest.raises(TrainingDivergedError, match='learning rate'):
        train(model, line_dataset(1.0), config)


def test_empty_dataset_is_rejected():
    model = init_model([1, 1], INCREASING, 6)
    with pytest.raises(ArgumentError):
        train(model, Dataset(np.zeros((0, 1)), np.zeros(0), ['x']), TrainConfig(max_epochs=1))


def test_feature_count_must_match():
    model = init_model([2, 1], MonotonicitySpec.free(2), 6)
    with pytest.raises(ArgumentError):
        train(model, line_dataset(1.0), TrainConfig(max_epochs=1))


def test_early_stopping_restores_a_certified_model():
    model = init_model([1, 1], INCREASING, 6, seed=0)
    config = TrainConfig(max_epochs=100, patience=2)
    model, log = train(model, line_dataset(1.0), config, validation=line_dataset(-1.0, n=30))
    assert log.stopped_early
    assert len(log.epochs) < 100
    assert certify(model).passed


def test_classification_uses_bce_and_reports_accuracy():
    x = np.linspace(-1.0, 1.0, 80)
    dataset = Dataset(x[:, None], (x > 0.1).astype(float), ['x'], Task.CLASSIFICATION)
    model = init_model([1, 1], INCREASING, 6, seed=0, task='classification')
    _, log = train(model, dataset, TrainConfig(max_epochs=100), validation=dataset)
    assert set(log.epochs[-1].val_metrics) == {'accuracy', 'bce'}
    assert log.epochs[-1].val_metrics['accuracy'] > 0.9


def test_train_log_ndjson(tmp_path):
    model = init_model([1, 1], INCREASING, 6, seed=0)
    config = TrainConfig(max_epochs=3, batch_size=50, log_steps=True)
    _, log = train(model, line_dataset(1.0), config)
    path = tmp_path / 'log.ndjson'
    log.write(path)
    records = [json.loads(line) for line in path.read_text().splitlines()]
    assert [r['type'] for r in records] == ['step', 'step', 'epoch'] * 3
    assert records[2]['epoch'] == 1
    assert set(records[2]['projection']) == {
        'edges_touched', 'weights_clamped', 'values_clamped', 'slopes_zeroed', 'fritsch_rescaled'
    }


@pytest.mark.parametrize('configured, rows, expected', [
    (None, 4096, 4096),
    (None, 4097, 256),
    ('full', 10_000, 10_000),
    (32, 10, 10),
    (32, 100, 32),
])
def test_batch_size_rule(configured, rows, expected):
    assert batch_size_for(TrainConfig(batch_size=configured), rows) == expected


def test_optimizer_is_abstract():
    with pytest.raises(TypeError):
        Optimizer([np.zeros(2)], learning_rate=0.1)  # pylint: disable=abstract-class-instantiated


def test_sgd_step():
    param = np.array([1.0, 2.0])
    optimizer = SGD([param], learning_rate=0.1, momentum=0.5)
    optimizer.step([np.array([1.0, -1.0])])
    optimizer.step([np.array([1.0, -1.0])])
    np.testing.assert_allclose(param, [1.0 - 0.1 - 0.15, 2.0 + 0.1 + 0.15])


def test_adam_first_step_has_learning_rate_size():
    param = np.array([1.0, 2.0])
    Adam([param], learning_rate=0.01).step([np.array([3.0, -0.002])])
    np.testing.assert_allclose(param, [0.99, 2.01], rtol=1e-6)


def test_config_from_file(resources):
    config = TrainConfig.from_file(resources / 'train_config.yml')
    assert config.max_epochs == 30
    assert config.hidden == [3, 2]
    assert config.projection is ProjectionSchedule.PER_EPOCH
    assert config.loss is LossKind.MSE
    assert config.to_dict()['optimizer'] == 'sgd'


@pytest.mark.parametrize('file_name, message', [
    ('malformed_config.yml', r'malformed_config\.yml:3'),
    ('unknown_key_config.yml', r'unknown_key_config\.yml:4: shuffle'),
    ('invalid_value_config.yml', r'invalid_value_config\.yml:2: learning_rate'),
])
def test_config_errors_carry_line_numbers(resources, file_name, message):
    with pytest.raises(ConfigError, match=message):
        TrainConfig.from_file(resources / file_name)


@pytest.mark.parametrize('options', [
    {'max_epochs': 0},
    {'learning_rate': -1.0},
    {'optimizer': 'rmsprop'},
    {'basis': 'silu'},
    {'batch_size': 'half'},
    {'hidden': 4},
])
def test_config_validation(options):
    with pytest.raises(ConfigError):
        TrainConfig(**options)
