#!/usr/bin/env python3
"""
Microstructure Geometry

Maps the 9-parameter design vector to a periodic layout of elliptical
inclusions and answers the geometric questions the rest of the pipeline asks:
which side of an interface a point lies on, and how far apart the inclusions
are.

Features:
- Design vector with the global design bounds and named presets
- Periodic two-set ellipse lattice with vertical crack-offset shift
- Smooth signed level set (first-order distance normalization)
- Polygonal clearance with penetration depth for overlapping inclusions
- Plain-text layout export for plotting and debugging
"""

import logging
import math
from dataclasses import dataclass, field, asdict, replace
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from shapely.geometry import Polygon

logger = logging.getLogger(__name__)


class MicrostructureError(Exception):
    """Base class of every error raised by the toughness pipeline"""


RVE_WIDTH = 15.0
SCENARIOS: Tuple[float, ...] = (0.0, 0.25, 0.5, 0.75)
POLYGON_SIDES = 256

DESIGN_NAMES = ("x1", "x2", "x3", "x4", "x5", "x6", "x7", "x8", "x9")
DESIGN_BOUNDS = np.array([
    [0.0, 0.5],                   # x1 horizontal alignment
    [0.0, 0.5],                   # x2 vertical alignment
    [2.5, 5.0],                   # x3 set-1 radius
    [2.5, 5.0],                   # x4 set-1 radius
    [0.0, math.pi / 2],           # x5 set-1 orientation
    [2.5, 5.0],                   # x6 set-2 radius
    [2.5, 5.0],                   # x7 set-2 radius
    [-math.pi / 2, math.pi / 2],  # x8 set-2 orientation
    [6.0, 15.0],                  # x9 RVE height
])


@dataclass(frozen=True)
class DesignVector:
    """The nine inclusion shape/placement parameters"""
    x1: float
    x2: float
    x3: float
    x4: float
    x5: float
    x6: float
    x7: float
    x8: float
    x9: float

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in DESIGN_NAMES], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "DesignVector":
        values = [float(v) for v in values]
        if len(values) != len(DESIGN_NAMES):
            raise ValueError(f"Design vector needs {len(DESIGN_NAMES)} values, got {len(values)}")
        return cls(*values)

    @classmethod
    def from_dict(cls, data: Dict[str, float]) -> "DesignVector":
        return cls(**{name: float(data[name]) for name in DESIGN_NAMES})

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    def within_bounds(self, tol: float = 1e-12) -> bool:
        values = self.to_array()
        return bool(np.all(values >= DESIGN_BOUNDS[:, 0] - tol) and np.all(values <= DESIGN_BOUNDS[:, 1] + tol))

    def with_values(self, **changes: float) -> "DesignVector":
        return replace(self, **changes)


# Staggered circular lattice, x1 left free
SETUP_A = DesignVector(x1=0.5, x2=0.5, x3=2.5, x4=2.5, x5=0.0, x6=2.5, x7=2.5, x8=0.0, x9=6.0)
# Circles and vertically elongated ellipses on a taller cell
SETUP_B = DesignVector(x1=0.5, x2=0.5, x3=2.5, x4=5.0, x5=0.0, x6=2.5, x7=5.0, x8=0.0, x9=11.0)

PRESETS: Dict[str, DesignVector] = {"setup_a": SETUP_A, "setup_b": SETUP_B}


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned rectangle"""
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @classmethod
    def centered_on_crack(cls, length: float, height: float) -> "Rectangle":
        """Domain [0, length] x [-height/2, height/2] with the crack line on y = 0"""
        return cls(0.0, -0.5 * height, float(length), 0.5 * height)


@dataclass(frozen=True)
class Ellipse:
    """Elliptical inclusion"""
    center: Tuple[float, float]
    radii: Tuple[float, float]
    orientation: float = 0.0
    label: int = 1

    def __post_init__(self):
        if min(self.radii) <= 0.0:
            raise ValueError(f"Ellipse radii must be strictly positive, got {self.radii}")

    @property
    def outer_radius(self) -> float:
        return max(self.radii)

    @property
    def inner_radius(self) -> float:
        return min(self.radii)

    def half_extents(self) -> Tuple[float, float]:
        """Half width and half height of the bounding box"""
        a, b = self.radii
        c, s = math.cos(self.orientation), math.sin(self.orientation)
        return math.sqrt((a * c) ** 2 + (b * s) ** 2), math.sqrt((a * s) ** 2 + (b * c) ** 2)

    def translated(self, dx: float, dy: float) -> "Ellipse":
        return replace(self, center=(self.center[0] + dx, self.center[1] + dy))

    def _local(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        dx = points[:, 0] - self.center[0]
        dy = points[:, 1] - self.center[1]
        c, s = math.cos(self.orientation), math.sin(self.orientation)
        return c * dx + s * dy, -s * dx + c * dy

    def contains(self, points: np.ndarray) -> np.ndarray:
        xl, yl = self._local(points)
        a, b = self.radii
        return (xl / a) ** 2 + (yl / b) ** 2 < 1.0

    def level_set(self, points: np.ndarray) -> np.ndarray:
        """
        Signed approximate distance, negative inside

        The elliptic radius rho is normalized by its gradient norm, which is
        exact for circles and keeps the zero contour on the ellipse.
        """
        xl, yl = self._local(points)
        a, b = self.radii
        rho = np.sqrt((xl / a) ** 2 + (yl / b) ** 2)
        grad = np.sqrt(xl ** 2 / a ** 4 + yl ** 2 / b ** 4)
        out = np.full(rho.shape, -min(a, b))
        nz = grad > 0.0
        out[nz] = (rho[nz] - 1.0) * rho[nz] / grad[nz]
        return out

    def boundary_points(self, n: int = POLYGON_SIDES) -> np.ndarray:
        t = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
        a, b = self.radii
        c, s = math.cos(self.orientation), math.sin(self.orientation)
        xl, yl = a * np.cos(t), b * np.sin(t)
        return np.column_stack([
            self.center[0] + c * xl - s * yl,
            self.center[1] + s * xl + c * yl,
        ])

    def polygon(self, n: int = POLYGON_SIDES) -> Polygon:
        return Polygon(self.boundary_points(n))

    def record(self) -> str:
        return (f"{self.center[0]:.12g} {self.center[1]:.12g} "
                f"{self.radii[0]:.12g} {self.radii[1]:.12g} {self.orientation:.12g}")


@dataclass
class InclusionLayout:
    """
    Inclusions of one simulation

    Attributes:
        ellipses: Inclusions covering the domain (plus margin when tiled)
        rve: Lattice period (width, height), None for a free arrangement
        crack_offset_fraction: Vertical lattice shift w in units of the RVE height
        tile: The two generating ellipses of a periodic lattice
    """
    ellipses: List[Ellipse] = field(default_factory=list)
    rve: Optional[Tuple[float, float]] = None
    crack_offset_fraction: float = 0.0
    tile: List[Ellipse] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ellipses)

    @classmethod
    def from_ellipses(cls, ellipses: Iterable[Ellipse]) -> "InclusionLayout":
        """Non-periodic layout; clearance compares all pairs"""
        ellipses = list(ellipses)
        return cls(ellipses=ellipses, rve=None, tile=list(ellipses))

    def interior(self, domain: Rectangle, strip: float) -> "InclusionLayout":
        """Keep only ellipses whose bounding box stays `strip` away from the domain boundary"""
        kept = []
        for ellipse in self.ellipses:
            hx, hy = ellipse.half_extents()
            cx, cy = ellipse.center
            if (cx - hx >= domain.x0 + strip and cx + hx <= domain.x1 - strip
                    and cy - hy >= domain.y0 + strip and cy + hy <= domain.y1 - strip):
                kept.append(ellipse)
        logger.debug(f"Layout clipped to domain interior: {len(kept)}/{len(self.ellipses)} inclusions kept")
        return InclusionLayout(ellipses=kept, rve=self.rve,
                               crack_offset_fraction=self.crack_offset_fraction, tile=list(self.tile))

    def level_sets(self, points: np.ndarray) -> np.ndarray:
        """Level set of every ellipse, shape (n_ellipses, n_points)"""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if not self.ellipses:
            return np.empty((0, len(points)))
        return np.stack([e.level_set(points) for e in self.ellipses])


def build_layout(x: DesignVector, w: float, domain: Rectangle) -> InclusionLayout:
    """
    Tile both inclusion sets over the domain plus one RVE period

    Args:
        x: Design vector
        w: Crack-offset fraction, one of SCENARIOS
        domain: Computational domain

    Returns:
        Periodic InclusionLayout
    """
    if not x.within_bounds():
        raise ValueError(f"Design vector outside bounds: {x.to_dict()}")
    if not any(abs(w - s) < 1e-12 for s in SCENARIOS):
        raise ValueError(f"Crack offset fraction must be one of {SCENARIOS}, got {w}")

    width, height = RVE_WIDTH, x.x9
    shift = w * height
    tile = [
        Ellipse(center=(0.0, shift), radii=(x.x3, x.x4), orientation=x.x5, label=1),
        Ellipse(center=(x.x1 * width, x.x2 * height + shift), radii=(x.x6, x.x7), orientation=x.x8, label=2),
    ]

    lo_x, hi_x = domain.x0 - width, domain.x1 + width
    lo_y, hi_y = domain.y0 - height, domain.y1 + height
    ellipses: List[Ellipse] = []
    for base in tile:
        i_range = range(math.floor((lo_x - base.center[0]) / width), math.ceil((hi_x - base.center[0]) / width) + 1)
        j_range = range(math.floor((lo_y - base.center[1]) / height), math.ceil((hi_y - base.center[1]) / height) + 1)
        for i in i_range:
            for j in j_range:
                cx, cy = base.center[0] + i * width, base.center[1] + j * height
                if lo_x <= cx <= hi_x and lo_y <= cy <= hi_y:
                    ellipses.append(base.translated(i * width, j * height))

    return InclusionLayout(ellipses=ellipses, rve=(width, height), crack_offset_fraction=w, tile=tile)


def tile_layout(x: DesignVector) -> InclusionLayout:
    """Generating tile only; enough for periodic clearance"""
    return build_layout(x, 0.0, Rectangle(0.0, 0.0, RVE_WIDTH, x.x9))


def level_set(layout: InclusionLayout, p: np.ndarray) -> np.ndarray:
    """
    Signed level set of the nearest inclusion

    Negative inside any inclusion, zero on an interface, positive in the matrix.
    Returns a scalar for a single point.
    """
    points = np.atleast_2d(np.asarray(p, dtype=float))
    if not layout.ellipses:
        values = np.full(len(points), np.inf)
    else:
        values = layout.level_sets(points).min(axis=0)
    return float(values[0]) if np.ndim(p) == 1 else values


def _penetration_depth(a: np.ndarray, b: np.ndarray) -> float:
    """Minimum overlap of the projections over all edge normals of two convex polygons"""
    edges = np.vstack([np.roll(a, -1, axis=0) - a, np.roll(b, -1, axis=0) - b])
    normals = np.column_stack([-edges[:, 1], edges[:, 0]])
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    pa, pb = a @ normals.T, b @ normals.T
    overlap = np.minimum(pa.max(axis=0), pb.max(axis=0)) - np.maximum(pa.min(axis=0), pb.min(axis=0))
    return float(max(overlap.min(), 0.0))


def pair_gap(first: Ellipse, second: Ellipse, sides: int = POLYGON_SIDES) -> float:
    """Boundary gap between two ellipses, negative penetration depth on overlap"""
    pa, pb = first.polygon(sides), second.polygon(sides)
    if pa.intersects(pb):
        return -_penetration_depth(first.boundary_points(sides), second.boundary_points(sides))
    return float(pa.distance(pb))


def _candidate_pairs(layout: InclusionLayout) -> List[Tuple[Ellipse, Ellipse]]:
    if layout.rve is None:
        items = layout.ellipses
        return [(items[i], items[j]) for i in range(len(items)) for j in range(i + 1, len(items))]
    width, height = layout.rve
    tile = layout.tile or layout.ellipses
    pairs = []
    for k, first in enumerate(tile):
        for m, second in enumerate(tile):
            for i in range(-2, 3):
                for j in range(-2, 3):
                    if k == m and i == 0 and j == 0:
                        continue
                    pairs.append((first, second.translated(i * width, j * height)))
    return pairs


def _pair_class(first: Ellipse, second: Ellipse) -> str:
    labels = sorted((first.label, second.label))
    return f"set{labels[0]}-set{labels[1]}"


def pair_clearances(layout: InclusionLayout) -> Dict[str, float]:
    """Minimum gap per pair class (set1-set1, set1-set2, set2-set2)"""
    best: Dict[str, float] = {}
    for first, second in _candidate_pairs(layout):
        key = _pair_class(first, second)
        dist = math.dist(first.center, second.center)
        lower = dist - first.outer_radius - second.outer_radius
        if key in best and lower > best[key]:
            continue
        gap = pair_gap(first, second)
        best[key] = min(best.get(key, math.inf), gap)
    return best


def clearance(layout: InclusionLayout) -> float:
    """
    Minimum gap between any two distinct inclusions

    Periodic layouts compare the generating tile against its neighbor images;
    free layouts compare all pairs. Negative values are penetration depths.
    """
    pairs = _candidate_pairs(layout)
    if not pairs:
        raise ValueError("Clearance needs at least two inclusions")
    # Cheap bounds first: circumscribed circles bound the gap from below
    lower = np.array([math.dist(a.center, b.center) - a.outer_radius - b.outer_radius for a, b in pairs])
    best = math.inf
    for index in np.argsort(lower, kind="stable"):
        if lower[index] > best:
            break
        first, second = pairs[index]
        best = min(best, pair_gap(first, second))
    return best


@lru_cache(maxsize=8192)
def design_clearance(x: DesignVector) -> float:
    return clearance(tile_layout(x))


def is_feasible(x: DesignVector, z_min: float) -> bool:
    """True iff the periodic layout keeps every inclusion pair at least z_min apart"""
    return design_clearance(x) >= z_min


def write_layout(layout: InclusionLayout, path: Path) -> Path:
    """One ellipse per line: cx cy r1 r2 theta"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["# cx cy r1 r2 theta"] + [e.record() for e in layout.ellipses]
    path.write_text("\n".join(lines) + "\n")
    logger.debug(f"Wrote {len(layout.ellipses)} ellipses to {path}")
    return path


def read_layout(path: Path) -> InclusionLayout:
    ellipses = []
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        cx, cy, r1, r2, theta = (float(v) for v in line.split())
        ellipses.append(Ellipse(center=(cx, cy), radii=(r1, r2), orientation=theta))
    return InclusionLayout.from_ellipses(ellipses)
