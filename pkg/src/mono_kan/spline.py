"""Cubic Hermite splines with linear extrapolation.

A spline is defined by fixed knots x^1 < ... < x^K, values y_k and slopes m_k.
Inside [x^1, x^K] it is the piecewise cubic Hermite interpolant, outside it continues
linearly with slope m_1 on the left and m_K on the right, so it is C1 on the whole line.

The batched kernel `hermite_coefficients` is shared with the network layers: the
spline value is linear in (y, m), so a single set of coefficients gives the value,
the parameter gradients and (with the derivative coefficients) dp/dx.
"""

import enum
from dataclasses import dataclass
from typing import Dict, NamedTuple, Tuple, Union

import numpy as np

from mono_kan.errors import ArgumentError, DomainError

ArrayLike = Union[float, np.ndarray]

# |d_k| at or below this is treated as a flat interval.
ZERO_TOL = 1e-12
FRITSCH_RADIUS_SQ = 9.0
FRITSCH_TOL = 1e-9


class Direction(str, enum.Enum):
    """Monotonicity direction of a model input (or of a single spline)."""

    INCREASING = "increasing"
    DECREASING = "decreasing"
    FREE = "free"

    @property
    def sign(self) -> int:
        """+1 for increasing, -1 for decreasing, 0 for free."""
        return {"increasing": 1, "decreasing": -1, "free": 0}[self.value]

    @classmethod
    def parse(cls, value: Union[str, "Direction"]) -> "Direction":
        """Accept the enum, its value or the short forms `inc`/`dec`/`+`/`-`."""
        if isinstance(value, Direction):
            return value
        aliases = {"inc": "increasing", "+": "increasing", "dec": "decreasing", "-": "decreasing"}
        text = str(value).strip().lower()
        try:
            return cls(aliases.get(text, text))
        except ValueError as exc:
            raise ArgumentError(f"Unknown monotonicity direction: {value!r}") from exc


def hermite_basis(t: ArrayLike) -> Tuple[ArrayLike, ArrayLike, ArrayLike, ArrayLike]:
    """The four cubic Hermite basis polynomials (h00, h10, h01, h11) at t in [0, 1].

    >>> hermite_basis(0.5)
    (0.5, 0.125, 0.5, -0.125)
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(~((t_arr >= 0.0) & (t_arr <= 1.0))):
        raise DomainError(f"Hermite basis is defined on [0, 1], got t={t}")
    t2 = t_arr * t_arr
    t3 = t2 * t_arr
    basis = (2 * t3 - 3 * t2 + 1, t3 - 2 * t2 + t_arr, -2 * t3 + 3 * t2, t3 - t2)
    if t_arr.ndim == 0:
        return tuple(float(h) for h in basis)  # type: ignore[return-value]
    return basis


def gather(arr: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """arr[..., idx] where arr's leading axes broadcast against idx."""
    full = np.broadcast_to(arr, idx.shape + arr.shape[-1:])
    return np.take_along_axis(full, idx[..., None], axis=-1)[..., 0]


class HermiteCoefficients(NamedTuple):
    """Coefficients of p(x) and p'(x) on (y_k, m_k, y_{k+1}, m_{k+1}) of the interval `idx`.

    Outside the knot range the left (right) linear piece is expressed on interval 0
    (K-2), so every evaluation touches exactly two neighbouring knots.
    """

    idx: np.ndarray
    y_left: np.ndarray
    m_left: np.ndarray
    y_right: np.ndarray
    m_right: np.ndarray
    dy_left: np.ndarray
    dm_left: np.ndarray
    dy_right: np.ndarray
    dm_right: np.ndarray

    def value(self, values: np.ndarray, slopes: np.ndarray) -> np.ndarray:
        """Spline values for knot values/slopes of shape (..., K)."""
        idx = self.idx
        return (
            self.y_left * gather(values, idx)
            + self.m_left * gather(slopes, idx)
            + self.y_right * gather(values, idx + 1)
            + self.m_right * gather(slopes, idx + 1)
        )

    def derivative(self, values: np.ndarray, slopes: np.ndarray) -> np.ndarray:
        """dp/dx for knot values/slopes of shape (..., K)."""
        idx = self.idx
        return (
            self.dy_left * gather(values, idx)
            + self.dm_left * gather(slopes, idx)
            + self.dy_right * gather(values, idx + 1)
            + self.dm_right * gather(slopes, idx + 1)
        )

    def accumulate(self, left: np.ndarray, right: np.ndarray, n_knots: int) -> np.ndarray:
        """Scatter per-sample weights of the two bounding knots onto the knot axis.

        `left`/`right` have the shape of `idx`, whose first axis is the batch; the
        batch axis is summed. Summation order is fixed, so the result is reproducible.
        """
        out = np.zeros(self.idx.shape[1:] + (n_knots,))
        for k in range(n_knots):
            out[..., k] = np.sum(np.where(self.idx == k, left, 0.0), axis=0) + np.sum(
                np.where(self.idx == k - 1, right, 0.0), axis=0
            )
        return out


def hermite_coefficients(knots: np.ndarray, x: ArrayLike) -> HermiteCoefficients:
    """Locate x on the knot grid(s) and compute the Hermite coefficients.

    knots: (..., K) strictly increasing along the last axis.
    x: broadcastable against knots[..., 0].
    """
    knots = np.asarray(knots, dtype=float)
    x = np.asarray(x, dtype=float)
    n_knots = knots.shape[-1]
    first = knots[..., 0]
    last = knots[..., -1]

    idx = np.zeros(np.broadcast(x, first).shape, dtype=np.intp)
    for k in range(1, n_knots - 1):
        idx += x >= knots[..., k]
    x_lo = gather(knots, idx)
    width = gather(knots, idx + 1) - x_lo
    t = np.clip((x - x_lo) / width, 0.0, 1.0)
    t2 = t * t
    t3 = t2 * t

    left = x < first
    right = x > last
    inside = ~(left | right)
    zero = np.zeros(idx.shape)

    y_left = np.where(inside, 2 * t3 - 3 * t2 + 1, np.where(left, 1.0, 0.0))
    m_left = np.where(inside, (t3 - 2 * t2 + t) * width, np.where(left, x - first, 0.0))
    y_right = np.where(inside, -2 * t3 + 3 * t2, np.where(right, 1.0, 0.0))
    m_right = np.where(inside, (t3 - t2) * width, np.where(right, x - last, 0.0))

    dy_left = np.where(inside, (6 * t2 - 6 * t) / width, zero)
    dm_left = np.where(inside, 3 * t2 - 4 * t + 1, np.where(left, 1.0, 0.0))
    dy_right = np.where(inside, (6 * t - 6 * t2) / width, zero)
    dm_right = np.where(inside, 3 * t2 - 2 * t, np.where(right, 1.0, 0.0))
    return HermiteCoefficients(
        idx, y_left, m_left, y_right, m_right, dy_left, dm_left, dy_right, dm_right
    )


def secant_slopes(values: np.ndarray, knots: np.ndarray) -> np.ndarray:
    """d_k = (y_{k+1} - y_k) / (x^{k+1} - x^k) along the last axis."""
    return np.diff(values, axis=-1) / np.diff(knots, axis=-1)


def monotonicity_failures(
    values: np.ndarray, slopes: np.ndarray, knots: np.ndarray, sign: int
) -> Dict[str, np.ndarray]:
    """Per-interval failure masks of the Fritsch-Carlson sufficient conditions.

    All arrays are (..., K); the masks are (..., K-1). `sign` is +1 to check an
    increasing spline, -1 for decreasing (checked on the negated spline).

    Keys: `order` (d_k has the wrong sign), `flat` (d_k ~ 0 but a slope is nonzero),
    `slope_sign` (a slope has the wrong sign), `fritsch` (alpha^2 + beta^2 > 9),
    plus the observed `secant` and `radius_sq` values.
    """
    d = sign * secant_slopes(values, knots)
    m = sign * np.asarray(slopes, dtype=float)
    m_lo, m_hi = m[..., :-1], m[..., 1:]
    flat = np.abs(d) <= ZERO_TOL
    rising = d > ZERO_TOL
    safe_d = np.where(rising, d, 1.0)
    radius_sq = np.where(rising, (m_lo / safe_d) ** 2 + (m_hi / safe_d) ** 2, 0.0)
    return {
        "order": d < -ZERO_TOL,
        "flat": flat & ((m_lo != 0.0) | (m_hi != 0.0)),
        "slope_sign": rising & ((m_lo < 0.0) | (m_hi < 0.0)),
        "fritsch": rising & (radius_sq > FRITSCH_RADIUS_SQ + FRITSCH_TOL),
        "secant": d * sign,
        "radius_sq": radius_sq,
    }


@dataclass(frozen=True)
class KnotGrid:
    """Fixed, strictly increasing knot abscissae."""

    knots: np.ndarray

    def __post_init__(self) -> None:
        knots = np.array(self.knots, dtype=float)
        if knots.ndim != 1 or knots.size < 2:
            raise ArgumentError(f"A knot grid needs at least 2 knots, got {knots.size}")
        if not np.all(np.isfinite(knots)) or np.any(np.diff(knots) <= 0):
            raise ArgumentError("Knots must be finite and strictly increasing")
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @classmethod
    def uniform(cls, low: float, high: float, count: int) -> "KnotGrid":
        """`count` equally spaced knots on [low, high]."""
        return cls(np.linspace(low, high, count))

    @property
    def size(self) -> int:
        return int(self.knots.size)

    @property
    def interval(self) -> Tuple[float, float]:
        """The interpolation interval [x^1, x^K]."""
        return float(self.knots[0]), float(self.knots[-1])


@dataclass
class HermiteSpline:
    """One learnable edge activation: values y_k and slopes m_k on a fixed grid."""

    grid: KnotGrid
    values: np.ndarray
    slopes: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.array(self.values, dtype=float)
        self.slopes = np.array(self.slopes, dtype=float)
        for name, arr in (("values", self.values), ("slopes", self.slopes)):
            if arr.shape != (self.grid.size,):
                raise ArgumentError(
                    f"Spline {name} must have {self.grid.size} entries, got shape {arr.shape}"
                )
            if not np.all(np.isfinite(arr)):
                raise ArgumentError(f"Spline {name} must be finite")

    def _coefficients(self, x: ArrayLike) -> HermiteCoefficients:
        return hermite_coefficients(self.grid.knots, x)

    def eval(self, x: ArrayLike) -> ArrayLike:
        """p(x); linear extrapolation outside the knot interval."""
        result = self._coefficients(x).value(self.values, self.slopes)
        return float(result) if np.ndim(result) == 0 else result

    __call__ = eval

    def eval_derivative(self, x: ArrayLike) -> ArrayLike:
        """dp/dx; equals m_k at knot k and m_1 / m_K outside the interval."""
        result = self._coefficients(x).derivative(self.values, self.slopes)
        return float(result) if np.ndim(result) == 0 else result

    def param_gradients(self, x: float) -> Tuple[np.ndarray, np.ndarray]:
        """(dp/dy, dp/dm) at a scalar x, each of length K."""
        coef = self._coefficients(np.asarray([x], dtype=float))
        size = self.grid.size
        return (
            coef.accumulate(coef.y_left, coef.y_right, size),
            coef.accumulate(coef.m_left, coef.m_right, size),
        )

    def secant_slopes(self) -> np.ndarray:
        """The K-1 secant slopes d_k."""
        return secant_slopes(self.values, self.grid.knots)

    def is_monotone(self, direction: Direction) -> bool:
        """Fritsch-Carlson sufficient check on every interval (flat intervals need zero slopes)."""
        direction = Direction.parse(direction)
        if direction is Direction.FREE:
            raise ArgumentError("Monotonicity check needs an increasing or decreasing direction")
        failures = monotonicity_failures(
            self.values, self.slopes, self.grid.knots, direction.sign
        )
        return not any(
            np.any(failures[key]) for key in ("order", "flat", "slope_sign", "fritsch")
        )
