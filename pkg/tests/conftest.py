import pathlib

import numpy as np
import pytest

from mono_kan.network import BasisFunction, Layer, MonoKanModel, MonotonicitySpec
from mono_kan.spline import Direction, KnotGrid

HERE = pathlib.Path(__file__).parent
DIRECTIONS = [Direction.INCREASING, Direction.DECREASING, Direction.FREE]


@pytest.fixture
def resources():
    return HERE / 'resources'


def build_identity_model(widths=(1, 1), n_knots=4, basis=BasisFunction.IDENTITY, spec=None):
    """Every edge is the identity spline on [-1, 1] with omega_phi=1, omega_b=0."""
    layers = []
    for n_in, n_out in zip(widths, widths[1:]):
        layer = Layer.uniform(n_in, n_out, KnotGrid.uniform(-1.0, 1.0, n_knots), basis)
        layer.values[...] = layer.knots
        layer.slopes[...] = 1.0
        layer.omega_phi[...] = 1.0
        layers.append(layer)
    spec = spec or MonotonicitySpec(tuple(Direction.INCREASING for _ in range(widths[0])))
    return MonoKanModel(layers=layers, spec=spec)


def build_random_model(seed, widths=(3, 4, 1), n_knots=5, spec=None, scale=1.0):
    """Unconstrained random parameters on jittered grids; usually infeasible."""
    rng = np.random.default_rng(seed)
    layers = []
    for l, (n_in, n_out) in enumerate(zip(widths, widths[1:])):
        half_width = 1.0 if l == 0 else 2.0
        base = np.linspace(-half_width, half_width, n_knots)
        jitter = rng.uniform(-0.2, 0.2, (n_out, n_in, n_knots)) * (base[1] - base[0])
        shape = (n_out, n_in, n_knots)
        layers.append(
            Layer(
                knots=base + jitter,
                values=scale * rng.normal(0.0, 0.5, shape),
                slopes=scale * rng.normal(0.0, 0.5, shape),
                omega_phi=scale * rng.normal(0.0, 0.7, (n_out, n_in)),
                omega_b=scale * rng.normal(0.0, 0.7, (n_out, n_in)),
                biases=rng.normal(0.0, 0.3, n_out),
                basis=BasisFunction.SIGMOID,
            )
        )
    if spec is None:
        spec = MonotonicitySpec(tuple(DIRECTIONS[k] for k in rng.integers(0, 3, widths[0])))
    return MonoKanModel(layers=layers, spec=spec)


def random_architecture(seed):
    """Widths bounded by [8, 6, 4, 1], K in {4, 8}."""
    rng = np.random.default_rng(seed)
    depth = int(rng.integers(1, 4))
    bounds = [8, 6, 4][:depth]
    widths = [int(rng.integers(1, b + 1)) for b in bounds] + [1]
    return widths, int(rng.choice([4, 8]))


@pytest.fixture
def identity_model():
    return build_identity_model


@pytest.fixture
def random_model():
    return build_random_model


@pytest.fixture
def architecture():
    return random_architecture
