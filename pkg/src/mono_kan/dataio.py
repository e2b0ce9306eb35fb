"""Dataset descriptors, CSV ingestion, scaling and splitting.

A descriptor (YAML or JSON) names the CSV file, the target, categorical columns
(one-hot expanded, always free) and the monotonicity direction of selected
features. Scalers are fitted on the training split only.
"""

import asyncio
import enum
import logging
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import aiohttp
import numpy as np
import pandas as pd
import yaml

from mono_kan.errors import ConfigError, DataError
from mono_kan.network import AffineScaler, MonotonicitySpec
from mono_kan.spline import Direction

logger = logging.getLogger(__name__)

DATA_DIR_ENV = "MONOKAN_DATA_DIR"
DEFAULT_DATA_DIR = "data"
BUNDLED_DESCRIPTORS = {
    "auto-mpg": "auto_mpg.yml",
    "heart-disease": "heart_disease.yml",
}
DOWNLOAD_PARALLELISM = 4


class Task(str, enum.Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Parse a YAML (or JSON) mapping; parse errors carry `path:line`."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"Cannot read {path}: {exc.strerror}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = f":{mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{path}{line}: {exc.problem or exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}:1: expected a mapping at the top level")
    return data


def key_lines(path: Union[str, Path]) -> Dict[str, int]:
    """1-based line of every top-level key of a YAML mapping file."""
    try:
        node = yaml.compose(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError):
        return {}
    if not isinstance(node, yaml.MappingNode):
        return {}
    return {str(key.value): key.start_mark.line + 1 for key, _ in node.value}


@dataclass
class Dataset:
    """Feature matrix, target vector and feature names of one split."""

    features: np.ndarray
    target: np.ndarray
    feature_names: List[str]
    task: Task = Task.REGRESSION

    def __post_init__(self) -> None:
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        self.target = np.asarray(self.target, dtype=float).reshape(-1)
        self.task = Task(self.task)
        if self.features.shape[0] != self.target.shape[0]:
            raise DataError(
                f"{self.features.shape[0]} feature rows but {self.target.shape[0]} targets"
            )
        if self.features.shape[1] != len(self.feature_names):
            raise DataError("Feature names do not match the number of feature columns")
        if np.isnan(self.features).any() or np.isnan(self.target).any():
            raise DataError("Dataset contains missing values")
        if self.task is Task.CLASSIFICATION and not np.isin(self.target, (0.0, 1.0)).all():
            raise DataError("Classification targets must be 0 or 1")

    def __len__(self) -> int:
        return int(self.target.shape[0])

    def transform(
        self, input_scaler: AffineScaler, output_scaler: Optional[AffineScaler] = None
    ) -> "Dataset":
        """Copy with scaled features (and scaled target when `output_scaler` is given)."""
        target = self.target if output_scaler is None else output_scaler.transform(self.target)
        return Dataset(input_scaler.transform(self.features), target, self.feature_names, self.task)


@dataclass
class DatasetSpec:  # pylint: disable=too-many-instance-attributes
    """Where a dataset lives and how to turn it into features and target."""

    path: Path
    target: str
    directions: Dict[str, Direction] = field(default_factory=dict)
    categorical: List[str] = field(default_factory=list)
    drop: List[str] = field(default_factory=list)
    columns: Optional[List[str]] = None
    delimiter: str = ","
    na_values: List[str] = field(default_factory=list)
    task: Task = Task.REGRESSION
    positive_above: Optional[float] = None
    split: Tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0
    url: Optional[str] = None
    name: str = ""

    @classmethod
    def from_dict(cls, data: Dict[str, Any], base_dir: Path, source: str = "") -> "DatasetSpec":
        """Build from a parsed descriptor; relative paths resolve against `base_dir`."""
        known = set(cls.__dataclass_fields__)  # pylint: disable=no-member
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"{source}: unknown descriptor keys: {', '.join(unknown)}")
        for key in ("path", "target"):
            if key not in data:
                raise ConfigError(f"{source}: descriptor needs a {key!r} entry")
        try:
            split = tuple(float(f) for f in data.get("split", cls.split))
            if len(split) != 3 or any(f < 0 for f in split) or abs(sum(split) - 1.0) > 1e-9:
                raise ValueError("split must be three nonnegative fractions summing to 1")
            path = Path(data["path"]).expanduser()
            spec = cls(
                path=path if path.is_absolute() else base_dir / path,
                target=str(data["target"]),
                directions={
                    str(col): Direction.parse(tag)
                    for col, tag in (data.get("directions") or {}).items()
                },
                categorical=[str(c) for c in data.get("categorical") or []],
                drop=[str(c) for c in data.get("drop") or []],
                columns=[str(c) for c in data["columns"]] if data.get("columns") else None,
                delimiter=str(data.get("delimiter", ",")),
                na_values=[str(v) for v in data.get("na_values") or []],
                task=Task(data.get("task", "regression")),
                positive_above=(
                    None if data.get("positive_above") is None else float(data["positive_above"])
                ),
                split=split,  # type: ignore[arg-type]
                seed=int(data.get("seed", 0)),
                url=data.get("url"),
                name=str(data.get("name", "")),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: {exc}") from exc
        overlap = set(spec.categorical) & set(spec.directions)
        if overlap:
            raise ConfigError(
                f"{source}: categorical columns are always free: {', '.join(sorted(overlap))}"
            )
        return spec

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "DatasetSpec":
        path = Path(path)
        return cls.from_dict(read_config_file(path), path.parent, str(path))

    @classmethod
    def bundled(cls, name: str, data_dir: Optional[Union[str, Path]] = None) -> "DatasetSpec":
        """A descriptor shipped with the package; data files live in `data_dir`."""
        if name not in BUNDLED_DESCRIPTORS:
            raise ConfigError(
                f"Unknown dataset {name!r}, bundled: {', '.join(sorted(BUNDLED_DESCRIPTORS))}"
            )
        descriptor = resources.files("mono_kan.datasets").joinpath(BUNDLED_DESCRIPTORS[name])
        data = yaml.safe_load(descriptor.read_text(encoding="utf-8"))
        base_dir = Path(data_dir or os.environ.get(DATA_DIR_ENV, DEFAULT_DATA_DIR))
        return cls.from_dict(data, base_dir, name)

    @classmethod
    def resolve(
        cls, name_or_path: Union[str, Path], data_dir: Optional[Union[str, Path]] = None
    ) -> "DatasetSpec":
        """Bundled descriptor by name, otherwise a descriptor file path."""
        if str(name_or_path) in BUNDLED_DESCRIPTORS:
            return cls.bundled(str(name_or_path), data_dir)
        return cls.from_file(name_or_path)


def read_frame(spec: DatasetSpec) -> Tuple[pd.DataFrame, pd.Series]:
    """Read, clean and one-hot encode the descriptor's CSV; returns (features, target)."""
    read_options: Dict[str, Any] = {"sep": spec.delimiter, "na_values": spec.na_values}
    if spec.columns:
        read_options.update(header=None, names=spec.columns)
    try:
        frame = pd.read_csv(spec.path, **read_options)
    except FileNotFoundError as exc:
        raise DataError(f"Dataset file not found: {spec.path}") from exc
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"Cannot parse {spec.path}: {exc}") from exc

    missing = [c for c in [spec.target, *spec.drop, *spec.categorical] if c not in frame.columns]
    if missing:
        raise DataError(f"Columns not found in {spec.path}: {', '.join(missing)}")
    frame = frame.drop(columns=spec.drop)

    rows = len(frame)
    frame = frame.dropna().reset_index(drop=True)
    if len(frame) < rows:
        logger.info("Dropped %d rows with missing values from %s", rows - len(frame), spec.path)

    try:
        target = frame.pop(spec.target).astype(float)
    except ValueError as exc:
        raise DataError(f"Target column {spec.target!r} in {spec.path} is not numeric: {exc}") from exc
    if spec.positive_above is not None:
        target = (target > spec.positive_above).astype(float)

    for column, direction in spec.directions.items():
        if column not in frame.columns:
            raise DataError(f"Monotone feature {column!r} ({direction.value}) not in dataset")
        if not pd.api.types.is_numeric_dtype(frame[column]):
            raise DataError(f"Monotone feature {column!r} is not numeric")

    frame = pd.get_dummies(frame, columns=spec.categorical, prefix_sep="=", dtype=float)
    non_numeric = [c for c in frame.columns if not pd.api.types.is_numeric_dtype(frame[c])]
    if non_numeric:
        raise DataError(
            f"Non-numeric columns must be declared categorical or dropped: {', '.join(non_numeric)}"
        )
    return frame.astype(float), target


def fit_input_scaler(features: np.ndarray) -> AffineScaler:
    """Min-max map of every feature onto [-1, 1]; constant features map to 0."""
    low = features.min(axis=0)
    high = features.max(axis=0)
    half_range = (high - low) / 2.0
    return AffineScaler((high + low) / 2.0, np.where(half_range > 0, half_range, 1.0))


def fit_target_scaler(target: np.ndarray, task: Task) -> AffineScaler:
    """Standardizing map for regression targets, identity for classification."""
    if task is Task.CLASSIFICATION:
        return AffineScaler.identity(1)
    std = float(np.std(target))
    return AffineScaler([float(np.mean(target))], [std if std > 0 else 1.0])


def split_indices(
    n_rows: int, fractions: Sequence[float], seed: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded shuffle cut into train/validation/test index arrays.

    Validation and test sizes round half up and training keeps the remainder,
    so a zero validation or test fraction yields an empty split.
    """
    order = np.random.default_rng(seed).permutation(n_rows)
    n_test = min(int(np.floor(fractions[2] * n_rows + 0.5)), n_rows)
    n_val = min(int(np.floor(fractions[1] * n_rows + 0.5)), n_rows - n_test)
    n_train = n_rows - n_val - n_test
    return order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :]


class Splits(NamedTuple):
    train: Dataset
    val: Dataset
    test: Dataset
    scaler: AffineScaler
    target_scaler: AffineScaler
    spec: MonotonicitySpec


def load(spec: DatasetSpec) -> Splits:
    """Raw train/validation/test splits plus scalers fitted on the training rows."""
    frame, target = read_frame(spec)
    names = list(frame.columns)
    features = frame.to_numpy(dtype=float)
    labels = target.to_numpy(dtype=float)

    parts = []
    for part, indices in zip(
        ("train", "validation", "test"), split_indices(len(frame), spec.split, spec.seed)
    ):
        if len(indices) == 0 and (part != "validation" or spec.split[1] > 0):
            raise DataError(f"The {part} split of {spec.path} is empty")
        parts.append(Dataset(features[indices], labels[indices], names, spec.task))
    train, val, test = parts

    monotonicity = MonotonicitySpec(
        tuple(spec.directions.get(name, Direction.FREE) for name in names)
    )
    return Splits(
        train=train,
        val=val,
        test=test,
        scaler=fit_input_scaler(train.features),
        target_scaler=fit_target_scaler(train.target, spec.task),
        spec=monotonicity,
    )


async def download(
    session: aiohttp.ClientSession, url: str, path: Path, semaphore: asyncio.Semaphore
) -> Path:
    """Fetch one URL into `path`."""
    async with semaphore:
        try:
            async with session.get(url) as response:
                response.raise_for_status()
                payload = await response.read()
        except aiohttp.ClientError as exc:
            raise DataError(f"Download of {url} failed: {exc}") from exc
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)
    logger.info("Downloaded %s to %s (%d bytes)", url, path, len(payload))
    return path


async def fetch_async(
    specs: Sequence[DatasetSpec],
    out_dir: Union[str, Path],
    *,
    parallelism: int = DOWNLOAD_PARALLELISM,
) -> List[Path]:
    """Download the source file of every descriptor into `out_dir`."""
    semaphore = asyncio.Semaphore(parallelism)
    for spec in specs:
        if not spec.url:
            raise ConfigError(f"Dataset {spec.name or spec.path} has no download url")
    async with aiohttp.ClientSession() as session:
        return list(
            await asyncio.gather(
                *(
                    download(session, str(spec.url), Path(out_dir) / spec.path.name, semaphore)
                    for spec in specs
                )
            )
        )


def fetch(specs: Sequence[DatasetSpec], out_dir: Union[str, Path]) -> List[Path]:
    """Synchronous wrapper around `fetch_async`."""
    return asyncio.run(fetch_async(specs, out_dir))
