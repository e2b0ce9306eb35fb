"""Projection of KAN parameters onto the monotone-feasible set.

`apply_cons` clamps one edge column (every edge leaving input i of a layer) in
place: weights nonnegative, values nondecreasing, slopes sign-correct and inside
the Fritsch-Carlson disk alpha^2 + beta^2 <= 9. The sweep is sequential over the
intervals and vectorised over the edges of the column.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict

import numpy as np

from mono_kan.network import Layer, MonoKanModel
from mono_kan.spline import FRITSCH_RADIUS_SQ, FRITSCH_TOL, ZERO_TOL, Direction

logger = logging.getLogger(__name__)


@dataclass
class ProjectionReport:
    """What a projection pass changed. All counts are zero on a feasible model."""

    edges_touched: int = 0
    weights_clamped: int = 0
    values_clamped: int = 0
    slopes_zeroed: int = 0
    fritsch_rescaled: int = 0

    def __add__(self, other: "ProjectionReport") -> "ProjectionReport":
        return ProjectionReport(
            **{key: value + getattr(other, key) for key, value in asdict(self).items()}
        )

    @property
    def is_identity(self) -> bool:
        return not any(asdict(self).values())

    def as_dict(self) -> Dict[str, int]:
        return asdict(self)


def apply_cons(  # pylint: disable=too-many-arguments, too-many-locals
    omega_phi: np.ndarray,
    omega_b: np.ndarray,
    values: np.ndarray,
    slopes: np.ndarray,
    knots: np.ndarray,
) -> ProjectionReport:
    """Clamp an edge column towards increasing monotonicity, in place.

    omega_phi, omega_b: (n_edges,); values, slopes, knots: (n_edges, K).
    Order of the steps is fixed: weights, then for every interval k the value
    sweep, the slope clamp and the Fritsch rescale.
    """
    before = [arr.copy() for arr in (omega_phi, omega_b, values, slopes)]
    rescaled = 0

    np.maximum(omega_phi, 0.0, out=omega_phi)
    np.maximum(omega_b, 0.0, out=omega_b)

    for k in range(values.shape[-1] - 1):
        np.maximum(values[..., k + 1], values[..., k], out=values[..., k + 1])
        d = (values[..., k + 1] - values[..., k]) / (knots[..., k + 1] - knots[..., k])
        flat = np.abs(d) <= ZERO_TOL

        m_lo = np.where(flat, 0.0, np.maximum(slopes[..., k], 0.0))
        m_hi = np.where(flat, 0.0, np.maximum(slopes[..., k + 1], 0.0))

        safe_d = np.where(flat, 1.0, d)
        alpha = m_lo / safe_d
        beta = m_hi / safe_d
        radius_sq = alpha**2 + beta**2
        outside = ~flat & (radius_sq > FRITSCH_RADIUS_SQ + FRITSCH_TOL)
        if np.any(outside):
            tau = 3.0 / np.sqrt(np.where(outside, radius_sq, 1.0))
            m_lo = np.where(outside, tau * alpha * d, m_lo)
            m_hi = np.where(outside, tau * beta * d, m_hi)
            rescaled += int(np.count_nonzero(outside))

        slopes[..., k] = m_lo
        slopes[..., k + 1] = m_hi

    after = (omega_phi, omega_b, values, slopes)
    changed = [old != new for old, new in zip(before, after)]
    per_edge = changed[0] | changed[1] | np.any(changed[2], axis=-1) | np.any(changed[3], axis=-1)
    return ProjectionReport(
        edges_touched=int(np.count_nonzero(per_edge)),
        weights_clamped=int(np.count_nonzero(changed[0]) + np.count_nonzero(changed[1])),
        values_clamped=int(np.count_nonzero(changed[2])),
        slopes_zeroed=int(np.count_nonzero((before[3] != 0.0) & (slopes == 0.0))),
        fritsch_rescaled=rescaled,
    )


def apply_cons_decreasing(
    omega_phi: np.ndarray,
    omega_b: np.ndarray,
    values: np.ndarray,
    slopes: np.ndarray,
    knots: np.ndarray,
) -> ProjectionReport:
    """Clamp an edge column towards decreasing monotonicity, in place.

    Runs `apply_cons` on (omega_phi, -omega_b, -values, -slopes) and negates back,
    so the result has omega_phi >= 0, omega_b <= 0 and decreasing splines.
    """
    neg_b, neg_values, neg_slopes = -omega_b, -values, -slopes
    report = apply_cons(omega_phi, neg_b, neg_values, neg_slopes, knots)
    omega_b[...] = -neg_b
    values[...] = -neg_values
    slopes[...] = -neg_slopes
    return report


def project_column(layer: Layer, i: int, direction: Direction) -> ProjectionReport:
    """Project the edges leaving input i of `layer`; free columns are left untouched."""
    if direction is Direction.FREE:
        return ProjectionReport()
    project = apply_cons if direction is Direction.INCREASING else apply_cons_decreasing
    # Column slices are views, the projection writes straight into the layer.
    return project(
        layer.omega_phi[:, i],
        layer.omega_b[:, i],
        layer.values[:, i, :],
        layer.slopes[:, i, :],
        layer.knots[:, i, :],
    )


def project_model(model: MonoKanModel) -> ProjectionReport:
    """Make the model satisfy every sufficient monotonicity condition, in place.

    Layer 0: columns follow the model's spec. Deeper layers: every column is
    clamped increasing, including paths fed only by free inputs.
    """
    total = ProjectionReport()
    for l, layer in enumerate(model.layers):
        for i in range(layer.n_in):
            direction = model.spec[i] if l == 0 else Direction.INCREASING
            total = total + project_column(layer, i, direction)
    logger.debug("Projection: %s", total.as_dict())
    return total
