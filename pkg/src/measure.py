"""
Discrete Measures

This module provides the non-negative discrete measures everything else works
on: weighted point clouds and pixel grids, their CSV/PGM interchange formats,
normalization, domain rescaling for the length scale kappa, bilinear
rasterization and the synthetic two-ellipse images.
"""

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

# A point is a real coordinate vector; clouds are stored as (n, d) arrays.
Point = NDArray[np.float64]

MEASURE_FORMATS = ('csv_points', 'csv_grid')

logger = logging.getLogger('hk_tangent.measure')


class MeasureError(Exception):
    """Base exception for invalid measures and measure parameters."""
    pass


class EmptyMeasureError(MeasureError):
    """Raised when a measure carries no mass where mass is required."""
    pass


class MeasureFormatError(MeasureError):
    """Raised when a measure file cannot be parsed."""
    pass


class OutsideGridError(MeasureError):
    """Raised when a point lies too far outside a raster grid."""
    pass


@dataclass(frozen=True)
class GridSpec:
    """Regular Cartesian grid; node (i, j) sits at (x0 + j*dx, y0 + i*dy)."""

    shape: Tuple[int, int]
    origin: Tuple[float, float] = (0.0, 0.0)
    spacing: Tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        shape = tuple(int(v) for v in self.shape)
        origin = tuple(float(v) for v in self.origin)
        spacing = tuple(float(v) for v in self.spacing)
        if len(shape) != 2 or len(origin) != 2 or len(spacing) != 2:
            raise MeasureError("Grid shape, origin and spacing must all have two entries")
        if shape[0] < 1 or shape[1] < 1:
            raise MeasureError(f"Grid needs at least one row and column (got {shape[0]}x{shape[1]})")
        if not all(math.isfinite(v) for v in origin + spacing):
            raise MeasureError("Grid origin and spacing must be finite")
        if spacing[0] <= 0 or spacing[1] <= 0:
            raise MeasureError(f"Grid spacing must be positive (got {spacing})")
        object.__setattr__(self, 'shape', shape)
        object.__setattr__(self, 'origin', origin)
        object.__setattr__(self, 'spacing', spacing)

    @classmethod
    def pixels(cls, rows: int, cols: int) -> 'GridSpec':
        """Unit pixel grid with nodes at pixel centres, pixel j covering [j, j+1)."""
        return cls((rows, cols), (0.5, 0.5), (1.0, 1.0))

    @classmethod
    def parse(cls, text: str) -> 'GridSpec':
        """Parse a ``ROWSxCOLS`` flag value into a pixel grid."""
        try:
            rows, cols = (int(part) for part in text.lower().split('x'))
        except ValueError:
            raise MeasureError(f"Grid must look like ROWSxCOLS, e.g. 64x64 (got {text!r})")
        return cls.pixels(rows, cols)

    @property
    def rows(self) -> int:
        return self.shape[0]

    @property
    def cols(self) -> int:
        return self.shape[1]

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def nodes(self) -> NDArray[np.float64]:
        """All node coordinates in row-major order, shape (rows*cols, 2)."""
        xs = self.origin[0] + self.spacing[0] * np.arange(self.cols)
        ys = self.origin[1] + self.spacing[1] * np.arange(self.rows)
        grid_x, grid_y = np.meshgrid(xs, ys)
        return np.column_stack([grid_x.ravel(), grid_y.ravel()])

    def bounds(self) -> NDArray[np.float64]:
        """Bounding box of the nodes as [[xmin, ymin], [xmax, ymax]]."""
        lo = np.array(self.origin)
        hi = lo + np.array(self.spacing) * np.array([self.cols - 1, self.rows - 1])
        return np.vstack([lo, hi])

    def header(self) -> str:
        """The ``#grid`` header line of the csv_grid format."""
        values = [str(self.rows), str(self.cols)] + [_fmt(v) for v in self.origin + self.spacing]
        return '#grid ' + ' '.join(values)


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """
    Non-negative measure sum_i masses[i] * delta(points[i]) inside a box.

    Arrays are copied and frozen on construction, so instances are safe to
    share between threads.
    """

    points: NDArray[np.float64]
    masses: NDArray[np.float64]
    domain_box: Optional[NDArray[np.float64]] = None

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        masses = np.array(self.masses, dtype=float).reshape(-1)
        if points.ndim == 1:
            points = points.reshape(-1, 1) if masses.size != 1 else points.reshape(1, -1)
        if points.ndim != 2 or points.shape[0] < 1 or points.shape[1] < 1:
            raise MeasureError("A measure needs at least one point with at least one coordinate")
        if points.shape[0] != masses.size:
            raise MeasureError(f"Got {points.shape[0]} points but {masses.size} masses")
        if not np.all(np.isfinite(points)):
            raise MeasureError("Point coordinates must be finite")
        if not np.all(np.isfinite(masses)):
            raise MeasureError("Masses must be finite")
        if np.any(masses < 0):
            raise MeasureError(f"Masses must be non-negative (minimum {masses.min():.3g})")

        if self.domain_box is None:
            box = np.vstack([points.min(axis=0), points.max(axis=0)])
        else:
            box = np.array(self.domain_box, dtype=float).reshape(2, points.shape[1])
            slack = 1e-9 * max(1.0, float(np.abs(box).max()))
            if np.any(points < box[0] - slack) or np.any(points > box[1] + slack):
                raise MeasureError("All points must lie inside the domain box")

        for array in (points, masses, box):
            array.setflags(write=False)
        object.__setattr__(self, 'points', points)
        object.__setattr__(self, 'masses', masses)
        object.__setattr__(self, 'domain_box', box)

    def __len__(self) -> int:
        return self.masses.size

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    def with_masses(self, masses: NDArray[np.float64]) -> 'DiscreteMeasure':
        """Same support and box, new masses."""
        return DiscreteMeasure(self.points, masses, self.domain_box)

    def scaled(self, factor: float) -> 'DiscreteMeasure':
        """Multiply every mass by a non-negative factor."""
        return self.with_masses(self.masses * factor)

    def compact(self) -> 'DiscreteMeasure':
        """Drop zero-mass points (keeps the measure unchanged if all masses are zero)."""
        keep = self.masses > 0
        if keep.all() or not keep.any():
            return self
        return DiscreteMeasure(self.points[keep], self.masses[keep], self.domain_box)

    def same_support(self, other: 'DiscreteMeasure') -> bool:
        return self.points.shape == other.points.shape and np.array_equal(self.points, other.points)


def point_cloud(points: NDArray[np.float64], masses: NDArray[np.float64], fallback: Optional[NDArray[np.float64]] = None) -> DiscreteMeasure:
    """
    Build a measure from atoms, dropping zero-mass atoms.

    When every atom has zero mass the zero measure is returned on ``fallback``
    (or on the given points), because a measure needs at least one point.
    """
    points = np.asarray(points, dtype=float)
    masses = np.asarray(masses, dtype=float).reshape(-1)
    keep = masses > 0
    if keep.any():
        return DiscreteMeasure(points[keep], masses[keep])
    base = np.asarray(fallback, dtype=float) if fallback is not None else points
    if len(base) == 0:
        raise EmptyMeasureError("No atoms to build a measure from")
    return DiscreteMeasure(base[:1], np.zeros(1))


def _fmt(value: float) -> str:
    """Round-trip float formatting used by every writer."""
    return format(float(value), '.17g')


def infer_format(path: str) -> str:
    """Return 'csv_grid' when the first line is a ``#grid`` header, else 'csv_points'."""
    with open(path, 'r', encoding='utf-8') as f:
        first = f.readline()
    return 'csv_grid' if first.split()[:1] == ['#grid'] else 'csv_points'


def read_grid_header(path: str) -> Optional[GridSpec]:
    """Grid geometry of a csv_grid file, or None for point files."""
    with open(path, 'r', encoding='utf-8') as f:
        first = f.readline()
    tokens = first.split()
    if tokens[:1] != ['#grid']:
        return None
    return _parse_grid_tokens(tokens, path)


def _parse_grid_tokens(tokens: List[str], path: str) -> GridSpec:
    if len(tokens) != 7:
        raise MeasureFormatError(f"{path}: grid header must be '#grid rows cols x0 y0 dx dy'")
    try:
        rows, cols = int(tokens[1]), int(tokens[2])
        x0, y0, dx, dy = (float(v) for v in tokens[3:])
    except ValueError:
        raise MeasureFormatError(f"{path}: grid header contains non-numeric values")
    try:
        return GridSpec((rows, cols), (x0, y0), (dx, dy))
    except MeasureError as e:
        raise MeasureFormatError(f"{path}: {e}")


def _data_lines(lines: Sequence[str]) -> List[Tuple[int, str]]:
    """Non-empty, non-comment lines with their 1-based line numbers."""
    return [(number, line) for number, line in enumerate(lines, start=1) if line.strip() and not line.lstrip().startswith('#')]


def load_measure(path: str, format: Optional[str] = None) -> DiscreteMeasure:
    """
    Load a measure from a csv_points or csv_grid file.

    Args:
        path: File to read
        format: 'csv_points', 'csv_grid' or None to detect from the first line

    Returns:
        Measure with zero-mass points dropped

    Raises:
        FileNotFoundError: If the file does not exist
        MeasureFormatError: On parse failures and negative masses
        EmptyMeasureError: If the file carries no mass at all
    """
    file_path = Path(path)
    if not file_path.exists():
        raise FileNotFoundError(f"Measure file not found: {path}")

    format = format or infer_format(str(file_path))
    if format not in MEASURE_FORMATS:
        raise MeasureFormatError(f"Unknown measure format {format!r}; expected one of {', '.join(MEASURE_FORMATS)}")

    lines = file_path.read_text(encoding='utf-8').splitlines()
    if format == 'csv_grid':
        mu = _load_grid(lines, str(file_path))
    else:
        mu = _load_points(lines, str(file_path))

    logger.debug(f"Loaded {len(mu)} support points (mass {mu.total_mass:.6g}) from {file_path.name}")
    return mu


def _load_points(lines: List[str], path: str) -> DiscreteMeasure:
    data = _data_lines(lines)
    if not data:
        raise MeasureFormatError(f"{path}: missing 'x,y,mass' header")
    header = [h.strip() for h in data[0][1].split(',')]
    if header != ['x', 'y', 'mass']:
        raise MeasureFormatError(f"{path}: header must be 'x,y,mass' (got {','.join(header)})")

    points, masses = [], []
    numbers = [number for number, _ in data[1:]]
    rows = csv.reader(line for _, line in data[1:])
    for number, row in zip(numbers, rows):
        if len(row) != 3:
            raise MeasureFormatError(f"{path}:{number}: expected 3 columns, got {len(row)}")
        try:
            x, y, m = (float(value) for value in row)
        except ValueError:
            raise MeasureFormatError(f"{path}:{number}: non-numeric value in {row}")
        if m < 0:
            raise MeasureFormatError(f"{path}:{number}: negative mass {m}")
        if m > 0:
            points.append((x, y))
            masses.append(m)

    if not masses:
        raise EmptyMeasureError(f"{path}: measure carries no mass")
    return DiscreteMeasure(np.array(points), np.array(masses))


def _load_grid(lines: List[str], path: str) -> DiscreteMeasure:
    if not lines or lines[0].split()[:1] != ['#grid']:
        raise MeasureFormatError(f"{path}: first line must be a '#grid rows cols x0 y0 dx dy' header")
    grid = _parse_grid_tokens(lines[0].split(), path)

    data = _data_lines(lines[1:])
    if len(data) != grid.rows:
        raise MeasureFormatError(f"{path}: expected {grid.rows} grid rows, found {len(data)}")
    image = np.empty(grid.shape)
    for i, (number, line) in enumerate(data):
        values = line.split(',')
        if len(values) != grid.cols:
            raise MeasureFormatError(f"{path}:{number + 1}: expected {grid.cols} values, got {len(values)}")
        try:
            image[i] = [float(v) for v in values]
        except ValueError:
            raise MeasureFormatError(f"{path}:{number + 1}: non-numeric value")

    if np.any(image < 0):
        raise MeasureFormatError(f"{path}: negative mass {image.min()}")
    if not np.any(image > 0):
        raise EmptyMeasureError(f"{path}: measure carries no mass")
    return measure_from_image(image, grid)


def measure_from_image(image: NDArray[np.float64], grid: GridSpec) -> DiscreteMeasure:
    """Measure supported on the non-zero pixels of a (rows, cols) image."""
    image = np.asarray(image, dtype=float)
    if image.shape != grid.shape:
        raise MeasureError(f"Image shape {image.shape} does not match grid {grid.shape}")
    flat = image.ravel()
    keep = flat > 0
    if not keep.any():
        raise EmptyMeasureError("Image carries no mass")
    return DiscreteMeasure(grid.nodes()[keep], flat[keep], grid.bounds())


def save_measure(mu: DiscreteMeasure, path: str, format: str = 'csv_points', grid: Optional[GridSpec] = None, metadata: Optional[Dict[str, str]] = None) -> str:
    """
    Write a measure as csv_points or csv_grid.

    Metadata entries become ``# key=value`` comment lines right after the
    header. Grid output rasterizes the measure onto ``grid`` first.

    Returns:
        The written path
    """
    if format not in MEASURE_FORMATS:
        raise MeasureFormatError(f"Unknown measure format {format!r}")
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    comments = [f"# {key}={value}" for key, value in (metadata or {}).items()]

    if format == 'csv_grid':
        if grid is None:
            raise MeasureError("csv_grid output needs a grid")
        image = to_image(mu, grid)
        lines = [grid.header()] + comments + [','.join(_fmt(v) for v in row) for row in image]
    else:
        if mu.dim != 2:
            raise MeasureError(f"csv_points stores planar measures only (got dimension {mu.dim})")
        lines = ['x,y,mass'] + comments + [f"{_fmt(x)},{_fmt(y)},{_fmt(m)}" for (x, y), m in zip(mu.points, mu.masses)]

    file_path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    logger.debug(f"Wrote {format} measure to {file_path}")
    return str(file_path)


def save_pgm(image: NDArray[np.float64], path: str) -> str:
    """Write an image as 8-bit binary PGM, linearly scaled to its maximum."""
    image = np.asarray(image, dtype=float)
    peak = image.max() if image.size else 0.0
    scaled = np.zeros_like(image) if peak <= 0 else np.clip(image / peak, 0.0, 1.0)
    pixels = np.round(scaled * 255).astype(np.uint8)
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode('ascii')
    file_path.write_bytes(header + pixels.tobytes())
    return str(file_path)


def normalize(mu: DiscreteMeasure) -> DiscreteMeasure:
    """Rescale masses to unit total mass."""
    total = mu.total_mass
    if total <= 0:
        raise EmptyMeasureError("Cannot normalize a measure with zero total mass")
    return mu.with_masses(mu.masses / total)


def rescale_domain(mu: DiscreteMeasure, kappa: float) -> DiscreteMeasure:
    """Divide every coordinate (and the domain box) by kappa; masses unchanged."""
    if not kappa > 0 or not math.isfinite(kappa):
        raise MeasureError(f"Length scale kappa must be positive and finite (got {kappa})")
    if kappa == 1:
        return mu
    return DiscreteMeasure(mu.points / kappa, mu.masses, mu.domain_box / kappa)


def uniform_measure(grid: GridSpec, total_mass: float = 1.0) -> DiscreteMeasure:
    """Equal mass on every node of the grid."""
    return DiscreteMeasure(grid.nodes(), np.full(grid.size, total_mass / grid.size), grid.bounds())


def union_support(mu: DiscreteMeasure, nu: DiscreteMeasure) -> Tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """
    Align two measures on the union of their (exactly matching) points.

    Returns:
        (points, masses of mu, masses of nu) on the union support
    """
    if mu.dim != nu.dim:
        raise MeasureError(f"Dimension mismatch: {mu.dim} vs {nu.dim}")
    index: Dict[Tuple[float, ...], int] = {}
    for p in np.vstack([mu.points, nu.points]):
        index.setdefault(tuple(p), len(index))
    points = np.array(list(index.keys()), dtype=float).reshape(len(index), mu.dim)
    a = np.zeros(len(index))
    b = np.zeros(len(index))
    np.add.at(a, [index[tuple(p)] for p in mu.points], mu.masses)
    np.add.at(b, [index[tuple(p)] for p in nu.points], nu.masses)
    return points, a, b


def merge_duplicates(mu: DiscreteMeasure) -> DiscreteMeasure:
    """Sum the masses of coincident points."""
    unique, inverse = np.unique(mu.points, axis=0, return_inverse=True)
    if len(unique) == len(mu):
        return mu
    masses = np.bincount(inverse.reshape(-1), weights=mu.masses, minlength=len(unique))
    return DiscreteMeasure(unique, masses, mu.domain_box)


def _splat(mu: DiscreteMeasure, grid: GridSpec, clip_outside: bool = False) -> NDArray[np.float64]:
    """Bilinear splatting of a planar measure onto grid nodes."""
    if mu.dim != 2:
        raise MeasureError(f"Rasterization needs planar measures (got dimension {mu.dim})")
    fx = (mu.points[:, 0] - grid.origin[0]) / grid.spacing[0]
    fy = (mu.points[:, 1] - grid.origin[1]) / grid.spacing[1]

    far = (fx < -1) | (fx > grid.cols) | (fy < -1) | (fy > grid.rows)
    if np.any(far):
        if not clip_outside:
            worst = mu.points[np.argmax(far)]
            raise OutsideGridError(f"Point {worst.tolist()} lies more than one grid spacing outside the grid")
        logger.warning(f"Clamping {int(far.sum())} points lying far outside the grid")

    fx = np.clip(fx, 0, grid.cols - 1)
    fy = np.clip(fy, 0, grid.rows - 1)
    j0 = np.clip(np.floor(fx).astype(int), 0, max(grid.cols - 2, 0))
    i0 = np.clip(np.floor(fy).astype(int), 0, max(grid.rows - 2, 0))
    tx = fx - j0
    ty = fy - i0
    j1 = np.minimum(j0 + 1, grid.cols - 1)
    i1 = np.minimum(i0 + 1, grid.rows - 1)

    image = np.zeros(grid.shape)
    m = mu.masses
    np.add.at(image, (i0, j0), (1 - tx) * (1 - ty) * m)
    np.add.at(image, (i0, j1), tx * (1 - ty) * m)
    np.add.at(image, (i1, j0), (1 - tx) * ty * m)
    np.add.at(image, (i1, j1), tx * ty * m)
    return image


def to_image(mu: DiscreteMeasure, grid: GridSpec, clip_outside: bool = False) -> NDArray[np.float64]:
    """Rasterize a measure into a dense (rows, cols) mass image."""
    return _splat(mu, grid, clip_outside)


def rasterize(mu: DiscreteMeasure, grid: GridSpec, clip_outside: bool = False) -> DiscreteMeasure:
    """
    Distribute each point's mass over its surrounding grid nodes with bilinear weights.

    Points up to one spacing outside the grid are clamped to the boundary;
    points further out raise OutsideGridError unless ``clip_outside`` is set.
    """
    image = _splat(mu, grid, clip_outside)
    flat = image.ravel()
    keep = flat > 0
    if not keep.any():
        return DiscreteMeasure(grid.nodes()[:1], np.zeros(1), grid.bounds())
    return DiscreteMeasure(grid.nodes()[keep], flat[keep], grid.bounds())


# Two-ellipse images, geometry in units of a 64-pixel image.
ELLIPSE_CENTERS = ((16.0, 32.0), (48.0, 32.0))
ELLIPSE_RADIUS = 7.0
ELLIPSE_ELONGATION = 0.35
ELLIPSE_SIZE_STEP = 0.25


def ellipse_axes(p1: float, p2: float, resolution: int = 64) -> Tuple[Tuple[float, float], Tuple[float, float]]:
    """Semi-axes (x, y) of the two ellipses for parameters (p1, p2)."""
    scale = resolution / 64.0
    c = ELLIPSE_ELONGATION * p1
    stretch = math.sqrt((1 + c) / (1 - c))
    radius_a = scale * (ELLIPSE_RADIUS + ELLIPSE_SIZE_STEP * p2)
    radius_b = scale * (ELLIPSE_RADIUS - ELLIPSE_SIZE_STEP * p2)
    return (radius_a * stretch, radius_a / stretch), (radius_b / stretch, radius_b * stretch)


def ellipses_image(p1: float, p2: float, resolution: int = 64, supersample: int = 4) -> NDArray[np.float64]:
    """
    Render the two-ellipse image: density 1 inside, 0 outside.

    The left ellipse grows with p2 and stretches horizontally for p1 > 0, the
    right one shrinks with p2 and stretches vertically. Boundaries are
    anti-aliased by averaging a supersample x supersample block per pixel.
    """
    if resolution < 16:
        raise MeasureError(f"Ellipse images need resolution >= 16 (got {resolution})")
    for name, value in (('p1', p1), ('p2', p2)):
        if not -1 <= value <= 1:
            raise MeasureError(f"{name} must lie in [-1, 1] (got {value})")

    scale = resolution / 64.0
    n = resolution * supersample
    sub = (np.arange(n) + 0.5) / supersample
    xs, ys = np.meshgrid(sub, sub)

    inside = np.zeros((n, n), dtype=bool)
    for (cx, cy), (ax, ay) in zip(ELLIPSE_CENTERS, ellipse_axes(p1, p2, resolution)):
        inside |= ((xs - cx * scale) / ax) ** 2 + ((ys - cy * scale) / ay) ** 2 <= 1.0

    return inside.reshape(resolution, supersample, resolution, supersample).mean(axis=(1, 3))


def gen_ellipses(p1: float, p2: float, resolution: int = 64) -> DiscreteMeasure:
    """Two-ellipse sample as a measure on the pixel grid of the given resolution."""
    grid = GridSpec.pixels(resolution, resolution)
    return measure_from_image(ellipses_image(p1, p2, resolution), grid)
