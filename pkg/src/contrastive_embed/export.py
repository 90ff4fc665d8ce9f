"""Embedding CSV files and static SVG scatter plots."""

from __future__ import annotations

import csv
import logging
import xml.etree.ElementTree as ET
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import matplotlib
import numpy as np
import numpy.typing as npt
from matplotlib.colors import to_hex

from .exceptions import ShapeError, ValidationError

logger = logging.getLogger(__name__)

FIXED_COLUMNS = ("index", "label", "split")
PALETTE: tuple[str, ...] = tuple(to_hex(c) for c in matplotlib.colormaps["tab20"].colors)
SVG_NS = "http://www.w3.org/2000/svg"
MARGIN = 0.05


@dataclass(frozen=True)
class EmbeddingTable:
    index: npt.NDArray[np.int64]
    labels: npt.NDArray[np.int64]
    splits: list[str]
    z: npt.NDArray[np.float64]

    @property
    def dim(self) -> int:
        return self.z.shape[1]

    def __len__(self) -> int:
        return len(self.index)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_embedding_csv(
    path: Path, z: npt.ArrayLike, labels: Sequence[int], splits: Sequence[str]
) -> Path:
    """One row per image: ``index,label,split,z1..zd`` with round-trip float precision."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ShapeError(f"embedding must be 2-D, got shape {z.shape}")
    if not len(labels) == len(splits) == len(z):
        raise ShapeError(f"{len(z)} rows, {len(labels)} labels and {len(splits)} split flags")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*FIXED_COLUMNS, *(f"z{j + 1}" for j in range(z.shape[1]))])
        for i, (row, label, split) in enumerate(zip(z, labels, splits)):
            writer.writerow([i, int(label), split, *map(_fmt, row)])
    logger.info("wrote %d x %d embedding to %s", z.shape[0], z.shape[1], path)
    return path


def read_embedding_csv(path: Path) -> EmbeddingTable:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header[:3]) != FIXED_COLUMNS:
            expected = ",".join(FIXED_COLUMNS)
            raise ValidationError(f"{path}: expected a header starting with {expected}")
        dim = len(header) - 3
        rows = list(reader)
    index: list[int] = []
    labels: list[int] = []
    splits: list[str] = []
    values: list[list[float]] = []
    for line_no, row in enumerate(rows, start=2):
        if len(row) != dim + 3:
            raise ValidationError(f"{path}:{line_no}: expected {dim + 3} fields, got {len(row)}")
        try:
            index.append(int(row[0]))
            labels.append(int(row[1]))
            values.append([float(v) for v in row[3:]])
        except ValueError as exc:
            raise ValidationError(f"{path}:{line_no}: {exc}") from exc
        splits.append(row[2])
    return EmbeddingTable(
        index=np.asarray(index, dtype=np.int64),
        labels=np.asarray(labels, dtype=np.int64),
        splits=splits,
        z=np.asarray(values, dtype=np.float64).reshape(len(values), dim),
    )


def _view_box(z: npt.NDArray[np.float64]) -> tuple[float, float, float, float]:
    """Equal-aspect box around the data with a 5% margin on each extent."""
    if len(z) == 0:
        return -0.5 - MARGIN, -0.5 - MARGIN, 1.0 + 2 * MARGIN, 1.0 + 2 * MARGIN
    lo, hi = z.min(axis=0), z.max(axis=0)
    extent = hi - lo
    # a flat extent gets unit size so the box stays non-degenerate
    extent = np.where(extent > 0, extent, 1.0)
    centre = (lo + hi) / 2
    w, h = extent * (1 + 2 * MARGIN)
    # y grows downwards in SVG, so the box is taken over -y
    return float(centre[0] - w / 2), float(-centre[1] - h / 2), float(w), float(h)


def render_scatter_svg(table: EmbeddingTable, path: Path, *, radius: float = 0.005) -> Path:
    """One ``<circle>`` per row, filled by class from a fixed 20-colour palette."""
    if table.dim != 2:
        raise ValidationError(f"scatter plots need a 2-D embedding, got {table.dim} dimensions")
    x0, y0, w, h = _view_box(table.z)
    r = radius * max(w, h)
    ET.register_namespace("", SVG_NS)
    svg = ET.Element(
        f"{{{SVG_NS}}}svg",
        viewBox=f"{_fmt(x0)} {_fmt(y0)} {_fmt(w)} {_fmt(h)}",
        preserveAspectRatio="xMidYMid meet",
    )
    points = ET.SubElement(svg, f"{{{SVG_NS}}}g", stroke="none")
    for (x, y), label in zip(table.z, table.labels):
        attrs: dict[str, Any] = {
            "cx": _fmt(x),
            "cy": _fmt(-y),
            "r": _fmt(r),
            "fill": PALETTE[int(label) % len(PALETTE)],
        }
        ET.SubElement(points, f"{{{SVG_NS}}}circle", attrs)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ET.ElementTree(svg).write(path, encoding="utf-8", xml_declaration=True)
    logger.info("wrote scatter plot with %d points to %s", len(table), path)
    return path
