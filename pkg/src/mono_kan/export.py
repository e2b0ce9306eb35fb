"""Export of the learned edge activations for plotting.

Every edge becomes a CSV of (x, phi, dphi) sampled uniformly over the knot range
widened by `EXPORT_MARGIN` on both sides, so the linear tails are visible.
`index.csv` maps (layer, output, input) to the file names.
"""

import logging
import math
from pathlib import Path
from typing import List, NamedTuple, Union

import numpy as np
import pandas as pd

from mono_kan.errors import ArgumentError, OutputError
from mono_kan.network import MonoKanModel
from mono_kan.spline import Direction

logger = logging.getLogger(__name__)

DEFAULT_SAMPLES = 201
EXPORT_MARGIN = 0.5
INDEX_FILE = "index.csv"
SVG_FILE = "splines.svg"

_CELL_WIDTH = 180
_CELL_HEIGHT = 130
_PAD = 14


class EdgeCurve(NamedTuple):
    layer: int
    output: int
    input: int
    direction: Direction
    frame: pd.DataFrame

    @property
    def file_name(self) -> str:
        return f"edge_l{self.layer}_j{self.output}_i{self.input}.csv"


def edge_curves(model: MonoKanModel, samples: int = DEFAULT_SAMPLES) -> List[EdgeCurve]:
    """Sampled phi and phi' of every edge, layer by layer, row-major over (j, i)."""
    if samples < 2:
        raise ArgumentError("Need at least 2 samples per edge")
    curves = []
    for l, layer in enumerate(model.layers):
        for j in range(layer.n_out):
            for i in range(layer.n_in):
                spline = layer.edge(j, i).spline
                low, high = spline.grid.interval
                x = np.linspace(low - EXPORT_MARGIN, high + EXPORT_MARGIN, samples)
                frame = pd.DataFrame(
                    {"x": x, "phi": spline.eval(x), "dphi": spline.eval_derivative(x)}
                )
                direction = model.spec[i] if l == 0 else Direction.INCREASING
                curves.append(EdgeCurve(l, j, i, direction, frame))
    return curves


def export_splines(
    model: MonoKanModel,
    out_dir: Union[str, Path],
    samples: int = DEFAULT_SAMPLES,
    svg: bool = False,
) -> List[Path]:
    """Write one CSV per edge plus the index (and the SVG grid when asked)."""
    out_dir = Path(out_dir)
    curves = edge_curves(model, samples)
    written = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for curve in curves:
            path = out_dir / curve.file_name
            curve.frame.to_csv(path, index=False, float_format="%.17g")
            written.append(path)
        index = pd.DataFrame(
            [
                {
                    "layer": c.layer,
                    "output": c.output,
                    "input": c.input,
                    "direction": c.direction.value,
                    "file": c.file_name,
                }
                for c in curves
            ]
        )
        index.to_csv(out_dir / INDEX_FILE, index=False)
        written.append(out_dir / INDEX_FILE)
        if svg:
            (out_dir / SVG_FILE).write_text(render_svg(curves), encoding="utf-8")
            written.append(out_dir / SVG_FILE)
    except OSError as exc:
        raise OutputError(f"Cannot write to {out_dir}: {exc.strerror or exc}") from exc
    logger.info("Exported %d edge curves to %s", len(curves), out_dir)
    return written


def _polyline(x: np.ndarray, y: np.ndarray, left: float, top: float) -> str:
    width = _CELL_WIDTH - 2 * _PAD
    height = _CELL_HEIGHT - 3 * _PAD
    y_low, y_high = float(np.min(y)), float(np.max(y))
    y_span = y_high - y_low if y_high > y_low else 1.0
    px = left + _PAD + (x - x[0]) / (x[-1] - x[0]) * width
    py = top + 2 * _PAD + (y_high - y) / y_span * height
    return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))


def render_svg(curves: List[EdgeCurve]) -> str:
    """Self-contained small-multiples SVG, one panel per edge."""
    columns = max(1, math.ceil(math.sqrt(len(curves))))
    rows = max(1, math.ceil(len(curves) / columns))
    colors = {Direction.INCREASING: "#1f77b4", Direction.DECREASING: "#d62728"}
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{columns * _CELL_WIDTH}" '
        f'height="{rows * _CELL_HEIGHT}" font-family="sans-serif" font-size="10">'
    ]
    for n, curve in enumerate(curves):
        left = (n % columns) * _CELL_WIDTH
        top = (n // columns) * _CELL_HEIGHT
        points = _polyline(curve.frame["x"].to_numpy(), curve.frame["phi"].to_numpy(), left, top)
        parts.append(
            f'<rect x="{left + 2}" y="{top + 2}" width="{_CELL_WIDTH - 4}" '
            f'height="{_CELL_HEIGHT - 4}" fill="none" stroke="#ccc"/>'
        )
        parts.append(
            f'<text x="{left + _PAD}" y="{top + _PAD + 2}">'
            f"l={curve.layer} j={curve.output} i={curve.input} ({curve.direction.value})</text>"
        )
        parts.append(
            f'<polyline fill="none" stroke="{colors.get(curve.direction, "#555")}" '
            f'stroke-width="1.5" points="{points}"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
