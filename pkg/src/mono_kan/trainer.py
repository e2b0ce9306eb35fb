"""Training loop with projection onto the monotone-feasible set.

Every optimiser update is followed by `project_model`, so with the per-step
schedule the model passes `certify` after every single step. Optimiser moments
are never projected, only the parameters are.
"""

import abc
import enum
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from mono_kan.constraints import ProjectionReport, project_model
from mono_kan.dataio import Dataset, Task, key_lines, read_config_file
from mono_kan.errors import ArgumentError, ConfigError, TrainingDivergedError
from mono_kan.network import (
    AffineScaler,
    BasisFunction,
    Layer,
    MonoKanModel,
    MonotonicitySpec,
    backward,
    forward,
)
from mono_kan.spline import Direction, KnotGrid, secant_slopes

logger = logging.getLogger(__name__)

FULL_BATCH_LIMIT = 4096
DEFAULT_BATCH = 256
INIT_SLOPE = 0.1
INIT_BASIS_WEIGHT = 0.05


class LossKind(str, enum.Enum):
    MSE = "mse"
    BCE = "bce"


class OptimizerKind(str, enum.Enum):
    ADAM = "adam"
    SGD = "sgd"


class ProjectionSchedule(str, enum.Enum):
    PER_STEP = "per_step"
    PER_EPOCH = "per_epoch"


@dataclass
class TrainConfig:  # pylint: disable=too-many-instance-attributes
    """Optimisation and architecture settings of one training run.

    `batch_size` None picks full batch up to 4096 rows and 256 above;
    "full" forces full batch. `loss` None follows the dataset task.
    """

    max_epochs: int = 200
    batch_size: Optional[Union[int, str]] = None
    learning_rate: float = 1e-2
    optimizer: OptimizerKind = OptimizerKind.ADAM
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    momentum: float = 0.0
    seed: int = 0
    projection: ProjectionSchedule = ProjectionSchedule.PER_STEP
    loss: Optional[LossKind] = None
    hidden: List[int] = field(default_factory=lambda: [4])
    knots: int = 8
    grid_range: float = 2.0
    basis: BasisFunction = BasisFunction.SIGMOID
    patience: Optional[int] = None
    log_steps: bool = False

    def __post_init__(self) -> None:
        self.optimizer = _coerce("optimizer", OptimizerKind, self.optimizer)
        self.projection = _coerce("projection", ProjectionSchedule, self.projection)
        self.basis = _coerce("basis", BasisFunction, self.basis)
        if self.loss is not None:
            self.loss = _coerce("loss", LossKind, self.loss)
        self.max_epochs = _integer("max_epochs", self.max_epochs, minimum=1)
        self.knots = _integer("knots", self.knots, minimum=2)
        self.seed = _integer("seed", self.seed)
        if self.patience is not None:
            self.patience = _integer("patience", self.patience, minimum=1)
        if self.batch_size is not None and self.batch_size != "full":
            self.batch_size = _integer("batch_size", self.batch_size, minimum=1)
        if not isinstance(self.hidden, (list, tuple)):
            raise ConfigError("hidden: expected a list of layer widths")
        self.hidden = [_integer("hidden", width, minimum=1) for width in self.hidden]
        for key in ("learning_rate", "grid_range", "epsilon"):
            value = _real(key, getattr(self, key))
            if value <= 0:
                raise ConfigError(f"{key}: must be positive, got {value}")
            setattr(self, key, value)
        for key in ("beta1", "beta2", "momentum"):
            value = _real(key, getattr(self, key))
            if not 0.0 <= value < 1.0:
                raise ConfigError(f"{key}: must be in [0, 1), got {value}")
            setattr(self, key, value)
        if not self.basis.monotone:
            raise ConfigError(f"basis: {self.basis.value} is not monotone")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown configuration key")
        return cls(**data)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "TrainConfig":
        """Read a YAML or JSON config; errors point at the offending key's line."""
        data = read_config_file(path)
        try:
            return cls.from_dict(data)
        except ConfigError as exc:
            key = str(exc).split(":", 1)[0]
            line = key_lines(path).get(key)
            location = f"{path}:{line}" if line else str(path)
            raise ConfigError(f"{location}: {exc}") from exc

    def to_dict(self) -> Dict[str, Any]:
        return {
            key: value.value if isinstance(value, enum.Enum) else value
            for key, value in asdict(self).items()
        }


def _coerce(key: str, kind: Any, value: Any) -> Any:
    try:
        return kind(value)
    except ValueError as exc:
        choices = ", ".join(member.value for member in kind)
        raise ConfigError(f"{key}: {value!r} is not one of {choices}") from exc


def _integer(key: str, value: Any, minimum: Optional[int] = None) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{key}: must be at least {minimum}, got {value}")
    return int(value)


def _real(key: str, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float, np.number)):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    return float(value)


class Optimizer(abc.ABC):
    """In-place first-order update of a fixed list of parameter arrays."""

    def __init__(self, params: Sequence[np.ndarray], learning_rate: float) -> None:
        self.params = list(params)
        self.learning_rate = learning_rate

    @abc.abstractmethod
    def step(self, grads: Sequence[np.ndarray]) -> None:
        """Update every parameter in place from its gradient."""


class SGD(Optimizer):
    def __init__(
        self, params: Sequence[np.ndarray], learning_rate: float, momentum: float = 0.0
    ) -> None:
        super().__init__(params, learning_rate)
        self.momentum = momentum
        self.velocity = [np.zeros_like(p) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        for param, grad, velocity in zip(self.params, grads, self.velocity):
            velocity *= self.momentum
            velocity += grad
            param -= self.learning_rate * velocity


class Adam(Optimizer):
    def __init__(  # pylint: disable=too-many-arguments
        self,
        params: Sequence[np.ndarray],
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> None:
        super().__init__(params, learning_rate)
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.steps = 0
        self.first = [np.zeros_like(p) for p in self.params]
        self.second = [np.zeros_like(p) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.steps += 1
        correction1 = 1.0 - self.beta1**self.steps
        correction2 = 1.0 - self.beta2**self.steps
        for param, grad, first, second in zip(self.params, grads, self.first, self.second):
            first *= self.beta1
            first += (1.0 - self.beta1) * grad
            second *= self.beta2
            second += (1.0 - self.beta2) * grad * grad
            param -= (
                self.learning_rate
                * (first / correction1)
                / (np.sqrt(second / correction2) + self.epsilon)
            )


def make_optimizer(model: MonoKanModel, config: TrainConfig) -> Optimizer:
    if config.optimizer is OptimizerKind.SGD:
        return SGD(model.parameters(), config.learning_rate, config.momentum)
    return Adam(
        model.parameters(), config.learning_rate, config.beta1, config.beta2, config.epsilon
    )


def loss(
    pred: np.ndarray, target: np.ndarray, kind: Union[LossKind, str]
) -> Tuple[float, np.ndarray]:
    """Mean loss and its gradient with respect to `pred`.

    MSE is the mean squared error. BCE treats `pred` as logits and uses
    log(1 + e^z) - t z, which stays finite for large |z|.

    >>> loss(np.array([1.0, 2.0]), np.array([1.0, 2.0]), "mse")[0]
    0.0
    """
    pred = np.atleast_1d(np.asarray(pred, dtype=float))
    target = np.atleast_1d(np.asarray(target, dtype=float))
    if pred.shape != target.shape:
        raise ArgumentError(f"Predictions {pred.shape} and targets {target.shape} differ")
    if pred.size == 0:
        raise ArgumentError("Loss of an empty batch")
    if LossKind(kind) is LossKind.MSE:
        residual = pred - target
        return float(np.mean(residual**2)), 2.0 * residual / pred.size
    return (
        float(np.mean(np.logaddexp(0.0, pred) - target * pred)),
        (expit(pred) - target) / pred.size,
    )


def metrics(output: np.ndarray, target: np.ndarray, task: Union[Task, str]) -> Dict[str, float]:
    """Regression: mse, rmse on raw targets. Classification: accuracy, bce on logits."""
    if Task(task) is Task.CLASSIFICATION:
        return {
            "accuracy": float(np.mean((output > 0.0) == (target > 0.5))),
            "bce": loss(output, target, LossKind.BCE)[0],
        }
    mse = float(np.mean((output - target) ** 2))
    return {"mse": mse, "rmse": float(np.sqrt(mse))}


def score(model: MonoKanModel, dataset: Dataset) -> Dict[str, float]:
    """Metrics on a dataset whose features are already scaled and targets are raw."""
    assert model.output_scaler is not None
    output, _ = forward(model, dataset.features, keep_tape=False)
    return metrics(model.output_scaler.inverse(output), dataset.target, dataset.task)


def evaluate(model: MonoKanModel, dataset: Dataset) -> Dict[str, float]:
    """Metrics on a raw dataset (the model's input scaler is applied here)."""
    assert model.input_scaler is not None
    return score(model, dataset.transform(model.input_scaler))


def _feasible_edge(
    knots: np.ndarray, sign: int, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    steps = INIT_SLOPE * np.diff(knots) * (1.0 + rng.uniform(-0.5, 0.5, knots.size - 1))
    values = np.concatenate(([0.0], np.cumsum(steps)))
    values -= values.mean()
    d = secant_slopes(values, knots)
    # min of the neighbouring secants keeps alpha, beta <= 1
    slopes = np.concatenate(([d[0]], np.minimum(d[:-1], d[1:]), [d[-1]]))
    return sign * values, sign * slopes


def _free_edge(knots: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    values = rng.normal(0.0, INIT_SLOPE * np.mean(np.diff(knots)), knots.size)
    values -= values.mean()
    d = secant_slopes(values, knots)
    slopes = np.concatenate(([d[0]], (d[:-1] + d[1:]) / 2.0, [d[-1]]))
    return values, slopes


def init_model(  # pylint: disable=too-many-arguments, too-many-locals
    widths: Sequence[int],
    spec: MonotonicitySpec,
    knots: int = 8,
    seed: int = 0,
    *,
    basis: BasisFunction = BasisFunction.SIGMOID,
    grid_range: float = 2.0,
    input_scaler: Optional[AffineScaler] = None,
    output_scaler: Optional[AffineScaler] = None,
    task: str = "regression",
) -> MonoKanModel:
    """Seeded model that already satisfies every monotonicity condition.

    Input edges live on [-1, 1], deeper edges on [-grid_range, grid_range].
    """
    widths = [int(w) for w in widths]
    if len(widths) < 2 or min(widths) < 1 or widths[-1] != 1:
        raise ArgumentError(f"Invalid widths {widths}: need >= 2 positive widths ending in 1")
    if len(spec) != widths[0]:
        raise ArgumentError(f"Monotonicity spec has {len(spec)} tags for {widths[0]} inputs")
    if knots < 2:
        raise ArgumentError("A spline needs at least 2 knots")
    basis = BasisFunction(basis)
    if not basis.monotone:
        raise ArgumentError(f"Basis function {basis.value} is not monotone")

    rng = np.random.default_rng(seed)
    layers = []
    for l, (n_in, n_out) in enumerate(zip(widths, widths[1:])):
        half_width = 1.0 if l == 0 else grid_range
        layer = Layer.uniform(n_in, n_out, KnotGrid.uniform(-half_width, half_width, knots), basis)
        for j in range(n_out):
            for i in range(n_in):
                direction = spec[i] if l == 0 else Direction.INCREASING
                grid = layer.knots[j, i]
                if direction is Direction.FREE:
                    values, slopes = _free_edge(grid, rng)
                    omega_b = INIT_BASIS_WEIGHT
                else:
                    values, slopes = _feasible_edge(grid, direction.sign, rng)
                    omega_b = INIT_BASIS_WEIGHT * direction.sign
                layer.values[j, i] = values
                layer.slopes[j, i] = slopes
                layer.omega_phi[j, i] = 1.0
                layer.omega_b[j, i] = omega_b
        layers.append(layer)
    return MonoKanModel(
        layers=layers,
        spec=spec,
        input_scaler=input_scaler,
        output_scaler=output_scaler,
        task=task,
    )


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: Optional[float]
    val_metrics: Dict[str, float]
    projection: Dict[str, int]
    seconds: float


@dataclass
class StepRecord:
    epoch: int
    step: int
    projection: Dict[str, int]


@dataclass
class TrainLog:
    """One record per completed epoch, plus optional per-step projection records."""

    epochs: List[EpochRecord] = field(default_factory=list)
    steps: List[StepRecord] = field(default_factory=list)
    stopped_early: bool = False

    @property
    def train_losses(self) -> List[float]:
        return [record.train_loss for record in self.epochs]

    def records(self) -> List[Dict[str, Any]]:
        """Epoch and step records in the order they happened."""
        items: List[Tuple[Tuple[int, int], Dict[str, Any]]] = [
            ((r.epoch, r.step), {"type": "step", **asdict(r)}) for r in self.steps
        ]
        items += [
            ((r.epoch, 1 << 62), {"type": "epoch", **asdict(r)}) for r in self.epochs
        ]
        return [record for _, record in sorted(items, key=lambda item: item[0])]

    def to_ndjson(self) -> str:
        return "".join(json.dumps(record) + "\n" for record in self.records())

    def write(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_ndjson(), encoding="utf-8")


def batch_size_for(config: TrainConfig, n_rows: int) -> int:
    if config.batch_size == "full":
        return n_rows
    if config.batch_size is None:
        return n_rows if n_rows <= FULL_BATCH_LIMIT else DEFAULT_BATCH
    return min(int(config.batch_size), n_rows)


def _check_finite(value: float, epoch: int, step: int, config: TrainConfig) -> None:
    if not np.isfinite(value):
        message = (
            f"Loss became {value} at epoch {epoch}, step {step} "
            f"(learning rate {config.learning_rate}); try a lower learning rate"
        )
        logger.error(message)
        raise TrainingDivergedError(message)


def train(  # pylint: disable=too-many-arguments, too-many-locals, too-many-branches
    model: MonoKanModel,
    dataset: Dataset,
    config: TrainConfig,
    validation: Optional[Dataset] = None,
    *,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
    on_step: Optional[Callable[[int, MonoKanModel], None]] = None,
) -> Tuple[MonoKanModel, TrainLog]:
    """Train `model` in place with projected gradient steps.

    `dataset` (and `validation`) carry features already scaled by the model's input
    scaler and raw targets; targets are mapped through the model's output scaler
    before the loss. Returns the model and its log. With early stopping the
    parameters of the best validation epoch are restored.
    """
    if len(dataset) == 0:
        raise ArgumentError("Cannot train on an empty dataset")
    if dataset.features.shape[1] != model.widths[0]:
        raise ArgumentError(
            f"Dataset has {dataset.features.shape[1]} features, model expects {model.widths[0]}"
        )
    assert model.output_scaler is not None
    kind = config.loss or (
        LossKind.BCE if dataset.task is Task.CLASSIFICATION else LossKind.MSE
    )
    features = dataset.features
    target = model.output_scaler.transform(dataset.target)
    val_target = None if validation is None else model.output_scaler.transform(validation.target)

    optimizer = make_optimizer(model, config)
    rng = np.random.default_rng(config.seed)
    batch = batch_size_for(config, len(dataset))
    log = TrainLog()
    best_loss, best_params, waited = np.inf, None, 0
    step = 0

    project_model(model)
    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        epoch_report = ProjectionReport()
        order = rng.permutation(len(dataset)) if batch < len(dataset) else np.arange(len(dataset))
        for start in range(0, len(dataset), batch):
            rows = order[start : start + batch]
            output, tape = forward(model, features[rows])
            value, d_output = loss(output, target[rows], kind)
            _check_finite(value, epoch, step, config)
            assert tape is not None
            grads = backward(model, tape, d_output)
            optimizer.step([arr for layer_grads in grads for arr in layer_grads.arrays()])
            step += 1
            if config.projection is ProjectionSchedule.PER_STEP:
                report = project_model(model)
                epoch_report = epoch_report + report
                if config.log_steps:
                    log.steps.append(StepRecord(epoch, step, report.as_dict()))
            if on_step is not None:
                on_step(step, model)
        if config.projection is ProjectionSchedule.PER_EPOCH:
            epoch_report = project_model(model)

        output, _ = forward(model, features, keep_tape=False)
        train_loss = loss(output, target, kind)[0]
        _check_finite(train_loss, epoch, step, config)
        val_loss: Optional[float] = None
        val_metrics: Dict[str, float] = {}
        if validation is not None and len(validation) and val_target is not None:
            val_output, _ = forward(model, validation.features, keep_tape=False)
            val_loss = loss(val_output, val_target, kind)[0]
            val_metrics = score(model, validation)
        record = EpochRecord(
            epoch=epoch,
            train_loss=train_loss,
            val_loss=val_loss,
            val_metrics=val_metrics,
            projection=epoch_report.as_dict(),
            seconds=time.perf_counter() - started,
        )
        log.epochs.append(record)
        logger.debug("Epoch %d: loss %.6g, projection %s", epoch, train_loss, record.projection)
        if on_epoch is not None:
            on_epoch(record)

        if config.patience is not None and val_loss is not None:
            if val_loss < best_loss:
                best_loss, waited = val_loss, 0
                best_params = [arr.copy() for arr in model.parameters()]
            else:
                waited += 1
                if waited >= config.patience:
                    logger.info(
                        "Early stop at epoch %d, best validation loss %.6g", epoch, best_loss
                    )
                    log.stopped_early = True
                    break

    if best_params is not None:
        for param, best in zip(model.parameters(), best_params):
            param[...] = best
    return model, log
