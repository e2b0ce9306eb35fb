"""Partially monotone Kolmogorov-Arnold networks with exact certification.

The file is mandatory for build system to find the package.
"""

from mono_kan.__about__ import __version__
from mono_kan.certifier import Certificate, Verdict, certify, falsify, falsify_async
from mono_kan.constraints import ProjectionReport, apply_cons, project_model
from mono_kan.dataio import Dataset, DatasetSpec, Task, load
from mono_kan.network import (
    AffineScaler,
    BasisFunction,
    MonoKanModel,
    MonotonicitySpec,
    backward,
    forward,
    load_model,
    param_count,
    predict,
    save_model,
)
from mono_kan.spline import Direction, HermiteSpline, KnotGrid, hermite_basis
from mono_kan.trainer import TrainConfig, TrainLog, evaluate, init_model, loss, train

__all__ = [
    "__version__",
    "AffineScaler",
    "BasisFunction",
    "Certificate",
    "Dataset",
    "DatasetSpec",
    "Direction",
    "HermiteSpline",
    "KnotGrid",
    "MonoKanModel",
    "MonotonicitySpec",
    "ProjectionReport",
    "Task",
    "TrainConfig",
    "TrainLog",
    "Verdict",
    "apply_cons",
    "backward",
    "certify",
    "evaluate",
    "falsify",
    "falsify_async",
    "forward",
    "hermite_basis",
    "init_model",
    "load",
    "load_model",
    "loss",
    "param_count",
    "predict",
    "project_model",
    "save_model",
    "train",
]
