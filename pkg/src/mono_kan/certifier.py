"""Certification of partial monotonicity.

`certify` checks the closed-form sufficient conditions on the stored parameters,
edge by edge and interval by interval. Because the splines continue linearly
outside their knot range, passing means the model is monotone on all of R^n.

`falsify` is the empirical counterpart: it samples input pairs that differ in one
constrained coordinate and counts pairs whose outputs are ordered the wrong way.
It can only find counterexamples, never prove their absence.
"""

import asyncio
import enum
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from mono_kan.errors import ArgumentError
from mono_kan.network import Layer, MonoKanModel, forward
from mono_kan.spline import (
    FRITSCH_RADIUS_SQ,
    FRITSCH_TOL,
    ZERO_TOL,
    Direction,
    monotonicity_failures,
)

logger = logging.getLogger(__name__)

# A pair counts as a violation only when its gap exceeds
# FALSIFY_SLACK + FALSIFY_RELATIVE * max(|f_low|, |f_high|).
FALSIFY_SLACK = 1e-12
FALSIFY_RELATIVE = 8 * float(np.finfo(float).eps)
FALSIFY_CHUNK = 16384
THREADS_ENV = "MONOKAN_THREADS"

# Offsets into the condition numbering: 1-5 on input edges, 6-10 on deeper layers.
INPUT_CONDITIONS = 0
HIDDEN_CONDITIONS = 5

_INTERVAL_CONDITIONS = (("order", 2), ("flat", 3), ("slope_sign", 4), ("fritsch", 5))


class Verdict(str, enum.Enum):
    PASS = "PASS"
    FAIL = "FAIL"


@dataclass
class Violation:  # pylint: disable=too-many-instance-attributes
    """One failed check. `interval` is None for per-edge and per-model checks."""

    kind: str
    layer: Optional[int] = None
    output: Optional[int] = None
    input: Optional[int] = None
    interval: Optional[int] = None
    condition: Optional[int] = None
    observed: Dict[str, float] = field(default_factory=dict)


@dataclass
class Certificate:
    verdict: Verdict
    violations: List[Violation]
    tolerances: Dict[str, float]

    @property
    def passed(self) -> bool:
        return self.verdict is Verdict.PASS

    def to_dict(self) -> Dict[str, Any]:
        return {
            "verdict": self.verdict.value,
            "violations": [asdict(v) for v in self.violations],
            "tolerances": self.tolerances,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _check_column(  # pylint: disable=too-many-arguments
    layer: Layer, l: int, i: int, sign: int, offset: int, violations: List[Violation]
) -> None:
    omega_phi = layer.omega_phi[:, i]
    omega_b = layer.omega_b[:, i]
    for j in np.flatnonzero((omega_phi < 0.0) | (sign * omega_b < 0.0)):
        violations.append(
            Violation(
                kind="weight_sign",
                layer=l,
                output=int(j),
                input=i,
                condition=offset + 1,
                observed={"omega_phi": float(omega_phi[j]), "omega_b": float(omega_b[j])},
            )
        )

    values, slopes = layer.values[:, i, :], layer.slopes[:, i, :]
    failures = monotonicity_failures(values, slopes, layer.knots[:, i, :], sign)
    for key, condition in _INTERVAL_CONDITIONS:
        for j, k in np.argwhere(failures[key]):
            violations.append(
                Violation(
                    kind=key,
                    layer=l,
                    output=int(j),
                    input=i,
                    interval=int(k),
                    condition=offset + condition,
                    observed={
                        "secant": float(failures["secant"][j, k]),
                        "slope_left": float(slopes[j, k]),
                        "slope_right": float(slopes[j, k + 1]),
                        "alpha_sq_plus_beta_sq": float(failures["radius_sq"][j, k]),
                    },
                )
            )


def certify(model: MonoKanModel) -> Certificate:
    """Check every sufficient monotonicity condition and collect all violations."""
    violations: List[Violation] = []
    for l, layer in enumerate(model.layers):
        if not layer.basis.monotone:
            violations.append(Violation(kind="basis_not_monotone", layer=l))
    for l, layer in enumerate(model.layers):
        for i in range(layer.n_in):
            if l == 0:
                direction = model.spec[i]
                if direction is Direction.FREE:
                    continue
                _check_column(layer, l, i, direction.sign, INPUT_CONDITIONS, violations)
            else:
                _check_column(layer, l, i, 1, HIDDEN_CONDITIONS, violations)
    assert model.output_scaler is not None
    if np.any(model.output_scaler.scale <= 0.0):
        violations.append(
            Violation(
                kind="output_scale",
                observed={"scale": float(np.min(model.output_scaler.scale))},
            )
        )
    violations.sort(
        key=lambda v: (
            -1 if v.layer is None else v.layer,
            v.input or 0,
            v.output or 0,
            v.interval if v.interval is not None else -1,
            v.condition or 0,
        )
    )
    return Certificate(
        verdict=Verdict.FAIL if violations else Verdict.PASS,
        violations=violations,
        tolerances={
            "zero_tolerance": ZERO_TOL,
            "fritsch_radius_sq": FRITSCH_RADIUS_SQ,
            "fritsch_tolerance": FRITSCH_TOL,
        },
    )


@dataclass
class CounterExample:
    """Input pair x < x' (in one coordinate) whose outputs are in the wrong order."""

    feature: int
    low: List[float]
    high: List[float]
    f_low: float
    f_high: float
    gap: float


@dataclass
class FalsificationResult:
    pairs: int
    violations: int
    per_feature: Dict[int, int]
    worst: Optional[CounterExample] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def default_parallelism() -> int:
    """Worker cap from MONOKAN_THREADS, else the CPU count."""
    value = os.environ.get(THREADS_ENV)
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            logger.warning("Ignoring %s=%r, expected an integer", THREADS_ENV, value)
    return os.cpu_count() or 1


def _falsify_chunk(  # pylint: disable=too-many-arguments, too-many-locals
    model: MonoKanModel,
    feature: int,
    sign: int,
    n_pairs: int,
    seed: Tuple[int, ...],
    bound: float,
) -> Tuple[int, Optional[CounterExample]]:
    rng = np.random.default_rng(list(seed))
    base = rng.uniform(-bound, bound, size=(n_pairs, model.widths[0]))
    ends = np.sort(rng.uniform(-bound, bound, size=(n_pairs, 2)), axis=1)
    low, high = base.copy(), base
    low[:, feature] = ends[:, 0]
    high[:, feature] = ends[:, 1]
    f_low, _ = forward(model, low, keep_tape=False)
    f_high, _ = forward(model, high, keep_tape=False)
    gap = sign * (f_low - f_high)
    tolerance = FALSIFY_SLACK + FALSIFY_RELATIVE * np.maximum(np.abs(f_low), np.abs(f_high))
    bad = gap > tolerance
    count = int(np.count_nonzero(bad))
    if not count:
        return 0, None
    worst = int(np.argmax(gap))
    return count, CounterExample(
        feature=feature,
        low=low[worst].tolist(),
        high=high[worst].tolist(),
        f_low=float(f_low[worst]),
        f_high=float(f_high[worst]),
        gap=float(gap[worst]),
    )


async def falsify_async(  # pylint: disable=too-many-arguments, too-many-locals
    model: MonoKanModel,
    n_pairs: int = 100_000,
    seed: int = 0,
    range_expansion: float = 2.0,
    *,
    parallelism: Optional[int] = None,
    chunk_size: int = FALSIFY_CHUNK,
) -> FalsificationResult:
    """Sample pairs per constrained feature on worker threads.

    Base points are uniform on [-1 - range_expansion, 1 + range_expansion]^n in the
    standardized input scale. Every chunk draws from its own seeded stream, so the
    result does not depend on the order in which workers finish.
    """
    if n_pairs < 1:
        raise ArgumentError("n_pairs must be at least 1")
    semaphore = asyncio.Semaphore(parallelism or default_parallelism())
    bound = 1.0 + range_expansion

    async def run_chunk(
        feature: int, sign: int, size: int, index: int
    ) -> Tuple[int, int, Optional[CounterExample]]:
        async with semaphore:
            count, example = await asyncio.to_thread(
                _falsify_chunk, model, feature, sign, size, (seed, feature, index), bound
            )
        return feature, count, example

    tasks = []
    for feature in model.spec.constrained:
        sign = model.spec[feature].sign
        for index, start in enumerate(range(0, n_pairs, chunk_size)):
            size = min(chunk_size, n_pairs - start)
            tasks.append(run_chunk(feature, sign, size, index))
    results = await asyncio.gather(*tasks)

    per_feature = {feature: 0 for feature in model.spec.constrained}
    worst: Optional[CounterExample] = None
    for feature, count, example in results:
        per_feature[feature] += count
        if example is not None and (worst is None or example.gap > worst.gap):
            worst = example
    violations = sum(per_feature.values())
    if violations:
        logger.info("Falsification found %d violating pairs", violations)
    return FalsificationResult(
        pairs=n_pairs * len(per_feature),
        violations=violations,
        per_feature=per_feature,
        worst=worst,
    )


def falsify(  # pylint: disable=too-many-arguments
    model: MonoKanModel,
    n_pairs: int = 100_000,
    seed: int = 0,
    range_expansion: float = 2.0,
    *,
    parallelism: Optional[int] = None,
    chunk_size: int = FALSIFY_CHUNK,
) -> FalsificationResult:
    """Synchronous wrapper around `falsify_async`."""
    return asyncio.run(
        falsify_async(
            model,
            n_pairs,
            seed,
            range_expansion,
            parallelism=parallelism,
            chunk_size=chunk_size,
        )
    )
