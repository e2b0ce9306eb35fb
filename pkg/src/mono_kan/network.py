"""Kolmogorov-Arnold network with cubic Hermite spline edges.

Node equation of layer l (n_in -> n_out):

    x_{l+1,j} = sum_i ( omega_phi[j,i] * phi_{j,i}(x_{l,i}) + omega_b[j,i] * b(x_{l,i}) ) + theta[j]

Parameters of a layer are kept as dense arrays (edges on the two leading axes) so
that forward and backward are vectorised over the batch and all edges at once.
`Layer.edge` gives a per-edge view in terms of the spline module types.
"""

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from mono_kan.errors import ArgumentError, ModelFormatError, StaleTapeError
from mono_kan.spline import (
    Direction,
    HermiteCoefficients,
    HermiteSpline,
    KnotGrid,
    hermite_coefficients,
)

logger = logging.getLogger(__name__)

MODEL_SCHEMA = "monokan-model-v1"


class BasisFunction(str, enum.Enum):
    """Fixed activation added on every edge next to the spline."""

    SIGMOID = "sigmoid"
    TANH = "tanh"
    SOFTPLUS = "softplus"
    IDENTITY = "identity"
    # Not monotone. Only accepted when reading foreign model files so that the
    # certifier can reject them explicitly.
    SILU = "silu"

    @property
    def monotone(self) -> bool:
        return self is not BasisFunction.SILU

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self is BasisFunction.SIGMOID:
            return expit(x)
        if self is BasisFunction.TANH:
            return np.tanh(x)
        if self is BasisFunction.SOFTPLUS:
            return np.logaddexp(0.0, x)
        if self is BasisFunction.IDENTITY:
            return np.array(x, dtype=float)
        return x * expit(x)

    def derivative(self, x: np.ndarray) -> np.ndarray:
        if self is BasisFunction.SIGMOID:
            s = expit(x)
            return s * (1.0 - s)
        if self is BasisFunction.TANH:
            return 1.0 - np.tanh(x) ** 2
        if self is BasisFunction.SOFTPLUS:
            return expit(x)
        if self is BasisFunction.IDENTITY:
            return np.ones_like(x, dtype=float)
        s = expit(x)
        return s * (1.0 + x * (1.0 - s))


MONOTONE_BASES = tuple(basis for basis in BasisFunction if basis.monotone)


@dataclass
class Edge:
    """Spline plus the spline weight omega_phi and the basis weight omega_b."""

    spline: HermiteSpline
    omega_phi: float
    omega_b: float


@dataclass
class MonotonicitySpec:
    """One direction tag per model input."""

    directions: Tuple[Direction, ...]

    def __post_init__(self) -> None:
        self.directions = tuple(Direction.parse(d) for d in self.directions)

    @classmethod
    def free(cls, n_inputs: int) -> "MonotonicitySpec":
        return cls(tuple(Direction.FREE for _ in range(n_inputs)))

    def __len__(self) -> int:
        return len(self.directions)

    def __getitem__(self, index: int) -> Direction:
        return self.directions[index]

    @property
    def constrained(self) -> List[int]:
        """Indices of inputs tagged increasing or decreasing."""
        return [i for i, d in enumerate(self.directions) if d is not Direction.FREE]


@dataclass
class AffineScaler:
    """Per-feature map z = (x - shift) / scale with positive scale."""

    shift: np.ndarray
    scale: np.ndarray

    def __post_init__(self) -> None:
        self.shift = np.atleast_1d(np.array(self.shift, dtype=float))
        self.scale = np.atleast_1d(np.array(self.scale, dtype=float))
        if self.shift.shape != self.scale.shape:
            raise ArgumentError("Scaler shift and scale must have the same length")

    @classmethod
    def identity(cls, size: int) -> "AffineScaler":
        return cls(np.zeros(size), np.ones(size))

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.shift) / self.scale

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.scale + self.shift

    def to_dict(self) -> Dict[str, List[float]]:
        return {"shift": self.shift.tolist(), "scale": self.scale.tolist()}


class Layer:
    """n_out x n_in spline edges, one bias per output node and a shared basis function."""

    def __init__(  # pylint: disable=too-many-arguments
        self,
        knots: np.ndarray,
        values: np.ndarray,
        slopes: np.ndarray,
        omega_phi: np.ndarray,
        omega_b: np.ndarray,
        biases: np.ndarray,
        basis: BasisFunction = BasisFunction.SIGMOID,
    ) -> None:
        self.knots = np.array(knots, dtype=float)
        self.values = np.array(values, dtype=float)
        self.slopes = np.array(slopes, dtype=float)
        self.omega_phi = np.array(omega_phi, dtype=float)
        self.omega_b = np.array(omega_b, dtype=float)
        self.biases = np.array(biases, dtype=float)
        self.basis = BasisFunction(basis)
        self._validate()

    def _validate(self) -> None:
        if self.knots.ndim != 3 or self.knots.shape[-1] < 2:
            raise ArgumentError(f"Layer knots must be (n_out, n_in, K>=2), got {self.knots.shape}")
        n_out, n_in, _ = self.knots.shape
        if n_out < 1 or n_in < 1:
            raise ArgumentError("A layer needs at least one input and one output")
        for name in ("values", "slopes"):
            if getattr(self, name).shape != self.knots.shape:
                raise ArgumentError(f"Layer {name} must have shape {self.knots.shape}")
        for name in ("omega_phi", "omega_b"):
            if getattr(self, name).shape != (n_out, n_in):
                raise ArgumentError(f"Layer {name} must have shape {(n_out, n_in)}")
        if self.biases.shape != (n_out,):
            raise ArgumentError(f"Layer biases must have length {n_out}")
        if np.any(np.diff(self.knots, axis=-1) <= 0):
            raise ArgumentError("Layer knots must be strictly increasing on every edge")
        for arr in self.parameters():
            if not np.all(np.isfinite(arr)):
                raise ArgumentError("Layer parameters must be finite")

    @classmethod
    def uniform(  # pylint: disable=too-many-arguments
        cls,
        n_in: int,
        n_out: int,
        grid: KnotGrid,
        basis: BasisFunction = BasisFunction.SIGMOID,
    ) -> "Layer":
        """All-zero layer whose edges share the same knot grid."""
        shape = (n_out, n_in, grid.size)
        return cls(
            knots=np.broadcast_to(grid.knots, shape),
            values=np.zeros(shape),
            slopes=np.zeros(shape),
            omega_phi=np.zeros((n_out, n_in)),
            omega_b=np.zeros((n_out, n_in)),
            biases=np.zeros(n_out),
            basis=basis,
        )

    @property
    def n_out(self) -> int:
        return int(self.knots.shape[0])

    @property
    def n_in(self) -> int:
        return int(self.knots.shape[1])

    @property
    def n_knots(self) -> int:
        return int(self.knots.shape[2])

    def parameters(self) -> List[np.ndarray]:
        """Trainable arrays, by reference, in the canonical order."""
        return [self.values, self.slopes, self.omega_phi, self.omega_b, self.biases]

    def edge(self, j: int, i: int) -> Edge:
        """Copy of the edge from input i to output j."""
        return Edge(
            spline=HermiteSpline(
                KnotGrid(self.knots[j, i]), self.values[j, i].copy(), self.slopes[j, i].copy()
            ),
            omega_phi=float(self.omega_phi[j, i]),
            omega_b=float(self.omega_b[j, i]),
        )

    def set_edge(self, j: int, i: int, edge: Edge) -> None:
        """Write an edge back into the layer arrays."""
        if edge.spline.grid.size != self.n_knots:
            raise ArgumentError(f"Edge must have {self.n_knots} knots")
        self.knots[j, i] = edge.spline.grid.knots
        self.values[j, i] = edge.spline.values
        self.slopes[j, i] = edge.spline.slopes
        self.omega_phi[j, i] = edge.omega_phi
        self.omega_b[j, i] = edge.omega_b

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, "LayerRecord"]:
        """x: (N, n_in) -> (N, n_out)."""
        coef = hermite_coefficients(self.knots, x[:, None, :])
        phi = coef.value(self.values, self.slopes)
        basis_out = self.basis(x)
        out = np.sum(self.omega_phi * phi, axis=-1) + basis_out @ self.omega_b.T + self.biases
        return out, LayerRecord(x, coef, phi, basis_out)

    def backward(
        self, record: "LayerRecord", upstream: np.ndarray
    ) -> Tuple["LayerGradients", np.ndarray]:
        """Parameter gradients summed over the batch and dLoss/dx of the layer input."""
        weighted = upstream[:, :, None] * self.omega_phi
        coef = record.coefficients
        grads = LayerGradients(
            values=coef.accumulate(weighted * coef.y_left, weighted * coef.y_right, self.n_knots),
            slopes=coef.accumulate(weighted * coef.m_left, weighted * coef.m_right, self.n_knots),
            omega_phi=np.sum(upstream[:, :, None] * record.phi, axis=0),
            omega_b=upstream.T @ record.basis_out,
            biases=np.sum(upstream, axis=0),
        )
        dphi_dx = coef.derivative(self.values, self.slopes)
        d_input = np.sum(weighted * dphi_dx, axis=1) + (upstream @ self.omega_b) * (
            self.basis.derivative(record.inputs)
        )
        return grads, d_input

    def to_dict(self) -> Dict[str, Any]:
        return {
            "biases": self.biases.tolist(),
            "edges": [
                {
                    "knots": self.knots[j, i].tolist(),
                    "values": self.values[j, i].tolist(),
                    "slopes": self.slopes[j, i].tolist(),
                    "omega_phi": float(self.omega_phi[j, i]),
                    "omega_b": float(self.omega_b[j, i]),
                }
                for j in range(self.n_out)
                for i in range(self.n_in)
            ],
        }

    @classmethod
    def from_dict(
        cls, data: Dict[str, Any], n_in: int, n_out: int, basis: BasisFunction
    ) -> "Layer":
        edges = data["edges"]
        if len(edges) != n_in * n_out:
            raise ModelFormatError(f"Expected {n_in * n_out} edges, found {len(edges)}")

        def stack(key: str) -> np.ndarray:
            return np.array([edge[key] for edge in edges], dtype=float)

        knots = stack("knots")
        return cls(
            knots=knots.reshape(n_out, n_in, -1),
            values=stack("values").reshape(n_out, n_in, -1),
            slopes=stack("slopes").reshape(n_out, n_in, -1),
            omega_phi=stack("omega_phi").reshape(n_out, n_in),
            omega_b=stack("omega_b").reshape(n_out, n_in),
            biases=data["biases"],
            basis=basis,
        )


@dataclass
class LayerRecord:
    """What a layer's backward pass needs from its forward pass."""

    inputs: np.ndarray
    coefficients: HermiteCoefficients
    phi: np.ndarray
    basis_out: np.ndarray


@dataclass
class LayerGradients:
    values: np.ndarray
    slopes: np.ndarray
    omega_phi: np.ndarray
    omega_b: np.ndarray
    biases: np.ndarray

    def arrays(self) -> List[np.ndarray]:
        """Gradients in the same order as `Layer.parameters`."""
        return [self.values, self.slopes, self.omega_phi, self.omega_b, self.biases]


Gradients = List[LayerGradients]


@dataclass
class Tape:
    """Activation record of one forward pass."""

    widths: Tuple[int, ...]
    knots: Tuple[int, ...]
    records: List[LayerRecord]


@dataclass
class MonoKanModel:  # pylint: disable=too-many-instance-attributes
    """A stack of KAN layers with a scalar output and a monotonicity spec over its inputs."""

    layers: List[Layer]
    spec: MonotonicitySpec
    input_scaler: Optional[AffineScaler] = None
    output_scaler: Optional[AffineScaler] = None
    task: str = "regression"
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.layers:
            raise ArgumentError("A model needs at least one layer")
        for previous, current in zip(self.layers, self.layers[1:]):
            if current.n_in != previous.n_out:
                raise ArgumentError(
                    f"Layer widths do not chain: {previous.n_out} outputs into {current.n_in} inputs"
                )
        if self.layers[-1].n_out != 1:
            raise ArgumentError("The last layer must have a single output")
        if len(self.spec) != self.layers[0].n_in:
            raise ArgumentError(
                f"Monotonicity spec has {len(self.spec)} tags for {self.layers[0].n_in} inputs"
            )
        if self.input_scaler is None:
            self.input_scaler = AffineScaler.identity(self.layers[0].n_in)
        if self.output_scaler is None:
            self.output_scaler = AffineScaler.identity(1)

    @property
    def widths(self) -> Tuple[int, ...]:
        return (self.layers[0].n_in,) + tuple(layer.n_out for layer in self.layers)

    @property
    def basis(self) -> BasisFunction:
        return self.layers[0].basis

    def parameters(self) -> List[np.ndarray]:
        """All trainable arrays in canonical order (layer by layer)."""
        return [arr for layer in self.layers for arr in layer.parameters()]

    def copy(self) -> "MonoKanModel":
        return model_from_dict(model_to_dict(self))


def forward(
    model: MonoKanModel, x: np.ndarray, keep_tape: bool = True
) -> Tuple[Union[float, np.ndarray], Optional[Tape]]:
    """Evaluate the network on standardized inputs.

    x: a single input vector (n_0,) or a batch (N, n_0). Returns a float for a single
    vector and an (N,) array for a batch, together with the tape (None when
    `keep_tape` is false).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != model.widths[0]:
        raise ArgumentError(f"Expected inputs with {model.widths[0]} features, got shape {x.shape}")
    records = []
    for layer in model.layers:
        batch, record = layer.forward(batch)
        if keep_tape:
            records.append(record)
    output = batch[:, 0]
    tape = (
        Tape(model.widths, tuple(layer.n_knots for layer in model.layers), records)
        if keep_tape
        else None
    )
    return (float(output[0]) if single else output), tape


def backward(model: MonoKanModel, tape: Tape, d_output: Union[float, np.ndarray]) -> Gradients:
    """Reverse-mode gradients of the loss for every trainable parameter."""
    if (
        tape.widths != model.widths
        or tape.knots != tuple(layer.n_knots for layer in model.layers)
        or len(tape.records) != len(model.layers)
    ):
        raise StaleTapeError("Tape was recorded on a model with a different architecture")
    upstream = np.atleast_1d(np.asarray(d_output, dtype=float))[:, None]
    if upstream.shape[0] != tape.records[0].inputs.shape[0]:
        raise StaleTapeError("Output gradient does not match the recorded batch size")
    grads: Gradients = []
    for layer, record in zip(reversed(model.layers), reversed(tape.records)):
        layer_grads, upstream = layer.backward(record, upstream)
        grads.append(layer_grads)
    grads.reverse()
    return grads


def param_count(model: MonoKanModel) -> int:
    """K values + K slopes + 2 weights per edge, plus one bias per non-input node."""
    return sum(
        layer.n_out * layer.n_in * (2 * layer.n_knots + 2) + layer.n_out for layer in model.layers
    )


def predict(model: MonoKanModel, raw_features: np.ndarray, proba: bool = False) -> np.ndarray:
    """Model output in raw target units (or probabilities with `proba` for classifiers)."""
    assert model.input_scaler is not None and model.output_scaler is not None
    scaled = model.input_scaler.transform(np.atleast_2d(raw_features))
    output, _ = forward(model, scaled, keep_tape=False)
    output = model.output_scaler.inverse(output)
    return expit(output) if proba else output


def model_to_dict(model: MonoKanModel) -> Dict[str, Any]:
    assert model.input_scaler is not None and model.output_scaler is not None
    bases = {layer.basis for layer in model.layers}
    if len(bases) != 1:
        raise ModelFormatError("All layers of a serialized model must share one basis function")
    return {
        "schema": MODEL_SCHEMA,
        "widths": list(model.widths),
        "spec": [d.value for d in model.spec.directions],
        "basis": model.basis.value,
        "task": model.task,
        "input_scaler": model.input_scaler.to_dict(),
        "output_scaler": model.output_scaler.to_dict(),
        "metadata": model.metadata,
        "layers": [layer.to_dict() for layer in model.layers],
    }


def model_from_dict(data: Dict[str, Any]) -> MonoKanModel:
    if not isinstance(data, dict):
        raise ModelFormatError(f"Model document must be a JSON object, got {type(data).__name__}")
    if data.get("schema") != MODEL_SCHEMA:
        raise ModelFormatError(
            f"Unsupported model schema {data.get('schema')!r}, expected {MODEL_SCHEMA!r}"
        )
    try:
        widths = [int(w) for w in data["widths"]]
        basis = BasisFunction(data["basis"])
        if len(data["layers"]) != len(widths) - 1:
            raise ModelFormatError("Number of layers does not match widths")
        layers = [
            Layer.from_dict(layer, n_in, n_out, basis)
            for layer, n_in, n_out in zip(data["layers"], widths, widths[1:])
        ]
        output_scaler = data.get("output_scaler")
        return MonoKanModel(
            layers=layers,
            spec=MonotonicitySpec(tuple(data["spec"])),
            input_scaler=AffineScaler(**data["input_scaler"]),
            output_scaler=AffineScaler(**output_scaler) if output_scaler else None,
            task=data.get("task", "regression"),
            metadata=data.get("metadata", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"Malformed model document: {exc}") from exc


def save_model(model: MonoKanModel, path: Union[str, Path]) -> None:
    """Write the model as a `monokan-model-v1` JSON document."""
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1), encoding="utf-8")
    logger.info("Model saved to %s", path)


def load_model(path: Union[str, Path]) -> MonoKanModel:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    return model_from_dict(data)


def stack_models(models: Sequence[MonoKanModel]) -> MonoKanModel:
    """Compose single-output models: the output of models[k] feeds models[k+1].

    Every model after the first must have exactly one input. The composite keeps
    the first model's spec and input scaler.
    """
    first = models[0]
    layers: List[Layer] = []
    for model in models:
        if layers and model.widths[0] != 1:
            raise ArgumentError("Only single-input models can be stacked on top of another")
        for layer in model.layers:
            layers.append(Layer.from_dict(layer.to_dict(), layer.n_in, layer.n_out, layer.basis))
    return MonoKanModel(
        layers=layers,
        spec=first.spec,
        input_scaler=first.input_scaler,
        task=first.task,
    )
