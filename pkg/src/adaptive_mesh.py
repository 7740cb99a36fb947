#!/usr/bin/env python3
"""
Adaptive Quadtree Mesh

Square bilinear cells on a uniform root grid, refined and coarsened locally
around the crack. Cells are addressed by (level, i, j); vertices by integer
coordinates on the finest grid, so vertex identity survives adaptation.

Features:
- 2:1 balance including corner neighbors
- Interface cells kept level with all their neighbors (no hanging vertex on a cut cell)
- Hanging-node constraints with transitive master expansion
- Crack-tip tracking and refine/coarsen marking driven by the phase field
- Field transfer by bilinear interpolation and injection
- Legacy VTK (ASCII) export
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Set, Tuple

import numpy as np
import scipy.sparse as sp

from microstructure_geometry import MicrostructureError, Rectangle

logger = logging.getLogger(__name__)

CellKey = Tuple[int, int, int]
VertexKey = Tuple[int, int]

# Cut classification codes
UNCUT, CUT, NEEDS_REFINEMENT = 0, 1, 2

_DIRECTIONS = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)]
_CORNERS = [(0, 0), (1, 0), (1, 1), (0, 1)]


class MeshAdaptationError(MicrostructureError):
    """Marked sets cannot be honored within the level cap"""


def crack_domain(length: float, height: float, eps: float, h_ratio: float = 0.4) -> Tuple[Rectangle, int, int, int]:
    """(domain, nx, ny, levels) of a root grid with h_max <= pi*eps and h_min = h_ratio*eps"""
    h_min = h_ratio * eps
    levels = max(int(math.floor(math.log2(math.pi * eps / h_min) + 1e-12)), 0)
    root = h_min * 2 ** levels
    nx = int(math.ceil(length / root - 1e-9))
    ny = 2 * int(math.ceil(height / (2.0 * root) - 1e-9))
    return Rectangle(0.0, -0.5 * ny * root, nx * root, 0.5 * ny * root), nx, ny, levels


@dataclass
class HangingConstraints:
    """Constrained vertex row -> [(master row, weight), ...]"""
    rows: Dict[int, List[Tuple[int, float]]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows)

    def as_list(self) -> List[Tuple[int, List[Tuple[int, float]]]]:
        return sorted(self.rows.items())

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Overwrite constrained entries with the weighted master values"""
        out = np.array(values, dtype=float, copy=True)
        for row, masters in self.rows.items():
            out[row] = sum(weight * out[m] for m, weight in masters)
        return out


class AdaptiveMesh:
    """
    Quadtree of square cells over a rectangular domain

    Args:
        domain: Rectangle covered by the root grid
        nx: Root cells along x
        ny: Root cells along y
        max_level: Finest refinement level
        cells: Active cells, defaults to the root grid
        classifier: Optional callable (origins, sizes) -> cut codes
        generation: Topology counter
    """

    def __init__(
        self,
        domain: Rectangle,
        nx: int,
        ny: int,
        max_level: int,
        cells: Optional[Iterable[CellKey]] = None,
        classifier: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
        generation: int = 0,
        cut_codes: Optional[Dict[CellKey, int]] = None,
    ):
        self.domain = domain
        self.nx = int(nx)
        self.ny = int(ny)
        self.max_level = int(max_level)
        self.root_size = domain.width / self.nx
        if abs(domain.height / self.ny - self.root_size) > 1e-9 * self.root_size:
            raise ValueError(f"Root cells must be square: {domain.width}/{nx} vs {domain.height}/{ny}")
        self.h_min = self.root_size / 2 ** self.max_level
        self.classifier = classifier
        self.generation = generation
        self._codes: Dict[CellKey, int] = cut_codes if cut_codes is not None else {}
        if cells is None:
            cells = [(0, i, j) for i in range(self.nx) for j in range(self.ny)]
        self.cells: Set[CellKey] = set(cells)
        self._build()

    # ------------------------------------------------------------------ factory

    @classmethod
    def for_crack_domain(cls, length: float, height: float, eps: float, h_ratio: float = 0.4,
                         classifier=None) -> "AdaptiveMesh":
        """
        Root grid with h_max <= pi*eps and finest cells h_min = h_ratio*eps

        The domain is rounded up to whole root cells, symmetric about y = 0.
        """
        domain, nx, ny, levels = crack_domain(length, height, eps, h_ratio)
        if abs(domain.width - length) > 1e-9 or abs(domain.height - height) > 1e-9:
            logger.info(f"Domain rounded to whole root cells: {domain.width:g} x {domain.height:g}")
        return cls(domain, nx, ny, levels, classifier=classifier)

    # ------------------------------------------------------------ tree helpers

    def _in_range(self, key: CellKey) -> bool:
        level, i, j = key
        return 0 <= i < self.nx << level and 0 <= j < self.ny << level

    def _scale(self, level: int) -> int:
        return 1 << (self.max_level - level)

    def _box(self, key: CellKey) -> Tuple[int, int, int, int]:
        level, i, j = key
        s = self._scale(level)
        return i * s, j * s, (i + 1) * s, (j + 1) * s

    def _touches(self, a: CellKey, b: CellKey) -> bool:
        ax0, ay0, ax1, ay1 = self._box(a)
        bx0, by0, bx1, by1 = self._box(b)
        return not (ax1 < bx0 or bx1 < ax0 or ay1 < by0 or by1 < ay0)

    @staticmethod
    def _children(key: CellKey) -> List[CellKey]:
        level, i, j = key
        return [(level + 1, 2 * i + di, 2 * j + dj) for dj in (0, 1) for di in (0, 1)]

    @staticmethod
    def _parent(key: CellKey) -> CellKey:
        level, i, j = key
        return level - 1, i // 2, j // 2

    @staticmethod
    def _covering(cells: Set[CellKey], key: CellKey) -> Optional[CellKey]:
        """Active cell containing the region of key, None when the region is refined"""
        while key[0] >= 0:
            if key in cells:
                return key
            key = AdaptiveMesh._parent(key)
        return None

    def _leaves(self, cells: Set[CellKey], key: CellKey) -> Iterator[CellKey]:
        if key in cells:
            yield key
        elif key[0] < self.max_level:
            for child in self._children(key):
                yield from self._leaves(cells, child)

    def _neighbors(self, cells: Set[CellKey], key: CellKey) -> List[CellKey]:
        level, i, j = key
        found: Set[CellKey] = set()
        for di, dj in _DIRECTIONS:
            region = (level, i + di, j + dj)
            if not self._in_range(region):
                continue
            cover = self._covering(cells, region)
            if cover is not None:
                found.add(cover)
            else:
                found.update(leaf for leaf in self._leaves(cells, region) if self._touches(leaf, key))
        return sorted(found)

    def neighbors(self, key: CellKey) -> List[CellKey]:
        """Active cells sharing an edge or a corner with key"""
        return self._neighbors(self.cells, key)

    def cut_code(self, key: CellKey) -> int:
        if self.classifier is None:
            return UNCUT
        code = self._codes.get(key)
        if code is None:
            level, i, j = key
            size = self.root_size / 2 ** level
            origin = np.array([[self.domain.x0 + i * size, self.domain.y0 + j * size]])
            code = int(self.classifier(origin, np.array([size]))[0])
            self._codes[key] = code
        return code

    # ------------------------------------------------------------ adaptation

    def _split(self, cells: Set[CellKey], key: CellKey) -> List[CellKey]:
        if key[0] >= self.max_level:
            raise MeshAdaptationError(f"Cell {key} is already at the level cap {self.max_level}")
        cells.remove(key)
        children = self._children(key)
        cells.update(children)
        return children

    def _balance(self, cells: Set[CellKey], work: Iterable[CellKey]) -> None:
        """Restore 2:1 balance and level interface cells with their neighbors"""
        stack = sorted(set(work), reverse=True)
        while stack:
            key = stack.pop()
            if key not in cells:
                continue
            level = key[0]
            code = self.cut_code(key)
            target: Optional[CellKey] = None
            if code == NEEDS_REFINEMENT and level < self.max_level:
                target = key
            else:
                i, j = key[1], key[2]
                for di, dj in _DIRECTIONS:
                    region = (level, i + di, j + dj)
                    if not self._in_range(region):
                        continue
                    cover = self._covering(cells, region)
                    if cover is None:
                        if code == CUT and level < self.max_level:
                            target = key
                            break
                    elif cover[0] < level - 1 or (code == CUT and cover[0] < level):
                        target = cover
                        break
            if target is None:
                continue
            touching = self._neighbors(cells, target)
            children = self._split(cells, target)
            stack.extend(sorted(touching + children, reverse=True))
            if target != key:
                stack.append(key)

    def _can_coarsen(self, cells: Set[CellKey], parent: CellKey) -> bool:
        if self.cut_code(parent) != UNCUT:
            return False
        children = self._children(parent)
        if any(child not in cells or self.cut_code(child) != UNCUT for child in children):
            return False
        level = parent[0]
        i, j = parent[1], parent[2]
        for di, dj in _DIRECTIONS:
            region = (level, i + di, j + dj)
            if not self._in_range(region):
                continue
            cover = self._covering(cells, region)
            if cover is not None:
                if self.cut_code(cover) == CUT and cover[0] != level:
                    return False
                continue
            for leaf in self._leaves(cells, region):
                if not self._touches(leaf, parent):
                    continue
                if leaf[0] > level + 1 or self.cut_code(leaf) == CUT:
                    return False
        return True

    def adapt(self, refine: Iterable[CellKey], coarsen: Iterable[CellKey]) -> Tuple["AdaptiveMesh", bool]:
        """New mesh with coarsening (vetoed where unbalanced) then balanced refinement"""
        cells = set(self.cells)
        coarsened = 0
        parents = sorted({self._parent(c) for c in coarsen if c[0] > 0 and c in cells})
        marked = set(coarsen)
        for parent in parents:
            children = self._children(parent)
            if not all(child in marked for child in children):
                continue
            if not self._can_coarsen(cells, parent):
                logger.debug(f"Coarsening of {parent} vetoed")
                continue
            cells.difference_update(children)
            cells.add(parent)
            coarsened += 1

        work: List[CellKey] = []
        refined = 0
        for key in sorted(set(refine)):
            if key not in cells:
                continue
            if key[0] >= self.max_level:
                raise MeshAdaptationError(f"Refinement requested beyond the level cap for {key}")
            work.extend(self._neighbors(cells, key))
            work.extend(self._split(cells, key))
            refined += 1
        self._balance(cells, work)

        changed = cells != self.cells
        if not changed:
            return self, False
        logger.debug(f"Adapted mesh: {refined} refined, {coarsened} coarsened, {len(cells)} active cells")
        mesh = AdaptiveMesh(self.domain, self.nx, self.ny, self.max_level, cells=cells,
                            classifier=self.classifier, generation=self.generation + 1, cut_codes=self._codes)
        return mesh, True

    def settle_interfaces(self, interface_level: int) -> "AdaptiveMesh":
        """Refine cut cells to interface_level and split cells needing refinement"""
        mesh = self
        level_cap = min(interface_level, self.max_level)
        while True:
            marked = [c for c in sorted(mesh.cells)
                      if (mesh.cut_code(c) != UNCUT and c[0] < level_cap)
                      or (mesh.cut_code(c) == NEEDS_REFINEMENT and c[0] < mesh.max_level)]
            if not marked:
                work = sorted(mesh.cells)
                cells = set(mesh.cells)
                mesh._balance(cells, work)
                if cells == mesh.cells:
                    return mesh
                return AdaptiveMesh(mesh.domain, mesh.nx, mesh.ny, mesh.max_level, cells=cells,
                                    classifier=mesh.classifier, generation=mesh.generation + 1,
                                    cut_codes=mesh._codes)
            mesh, _ = mesh.adapt(marked, [])

    def refine_region(self, region: Rectangle, level: int) -> "AdaptiveMesh":
        """Refine every cell intersecting region down to the given level"""
        mesh = self
        while True:
            inside = ((mesh.cell_origin[:, 0] < region.x1) & (mesh.cell_origin[:, 0] + mesh.cell_size > region.x0)
                      & (mesh.cell_origin[:, 1] < region.y1) & (mesh.cell_origin[:, 1] + mesh.cell_size > region.y0)
                      & (mesh.cell_level < min(level, mesh.max_level)))
            marked = [mesh.cell_keys[k] for k in np.flatnonzero(inside)]
            if not marked:
                return mesh
            mesh, _ = mesh.adapt(marked, [])

    # ------------------------------------------------------------ derived data

    def _build(self) -> None:
        self.cell_keys: List[CellKey] = sorted(self.cells, key=lambda k: (k[2] << (self.max_level - k[0]),
                                                                          k[1] << (self.max_level - k[0]), k[0]))
        self.cell_row: Dict[CellKey, int] = {k: r for r, k in enumerate(self.cell_keys)}
        n_cells = len(self.cell_keys)
        self.cell_level = np.array([k[0] for k in self.cell_keys], dtype=int)
        self.cell_size = self.root_size / 2.0 ** self.cell_level

        corner_keys = np.empty((n_cells, 4, 2), dtype=np.int64)
        for r, (level, i, j) in enumerate(self.cell_keys):
            s = self._scale(level)
            for c, (a, b) in enumerate(_CORNERS):
                corner_keys[r, c] = ((i + a) * s, (j + b) * s)
        flat = corner_keys.reshape(-1, 2)
        unique, inverse = np.unique(flat[:, 1] * (1 << 40) + flat[:, 0], return_inverse=True)
        self.vertex_keys = np.column_stack([unique % (1 << 40), unique // (1 << 40)]).astype(np.int64)
        self.vertex_index: Dict[VertexKey, int] = {(int(a), int(b)): r for r, (a, b) in enumerate(self.vertex_keys)}
        self.cell_vertices = inverse.reshape(n_cells, 4)
        self.points = np.column_stack([
            self.domain.x0 + self.vertex_keys[:, 0] * self.h_min,
            self.domain.y0 + self.vertex_keys[:, 1] * self.h_min,
        ])
        self.cell_origin = self.points[self.cell_vertices[:, 0]]

        n_fine_x = self.nx << self.max_level
        n_fine_y = self.ny << self.max_level
        self.boundary = ((self.vertex_keys[:, 0] == 0) | (self.vertex_keys[:, 0] == n_fine_x)
                         | (self.vertex_keys[:, 1] == 0) | (self.vertex_keys[:, 1] == n_fine_y))

        self.constraints = self._hanging_constraints()
        hanging = np.zeros(len(self.points), dtype=bool)
        hanging[list(self.constraints.rows)] = True
        self.hanging = hanging
        self.free_vertices = np.flatnonzero(~hanging)
        column = -np.ones(len(self.points), dtype=int)
        column[self.free_vertices] = np.arange(len(self.free_vertices))
        self.free_column = column

        rows, cols, vals = [], [], []
        for v in self.free_vertices:
            rows.append(v)
            cols.append(column[v])
            vals.append(1.0)
        for v, masters in self.constraints.rows.items():
            for m, weight in masters:
                rows.append(v)
                cols.append(column[m])
                vals.append(weight)
        self.prolongation = sp.csr_matrix((vals, (rows, cols)), shape=(len(self.points), len(self.free_vertices)))

    def _hanging_constraints(self) -> HangingConstraints:
        direct: Dict[int, Tuple[int, int]] = {}
        for level, i, j in self.cell_keys:
            if level >= self.max_level:
                continue
            s = self._scale(level)
            h = s // 2
            x0, y0, x1, y1 = i * s, j * s, (i + 1) * s, (j + 1) * s
            for mid, a, b in (((x0 + h, y0), (x0, y0), (x1, y0)),
                              ((x0 + h, y1), (x0, y1), (x1, y1)),
                              ((x0, y0 + h), (x0, y0), (x0, y1)),
                              ((x1, y0 + h), (x1, y0), (x1, y1))):
                row = self.vertex_index.get(mid)
                if row is not None:
                    direct[row] = (self.vertex_index[a], self.vertex_index[b])

        resolved: Dict[int, Dict[int, float]] = {}

        def expand(row: int) -> Dict[int, float]:
            if row not in direct:
                return {row: 1.0}
            if row not in resolved:
                combined: Dict[int, float] = {}
                for master in direct[row]:
                    for m, weight in expand(master).items():
                        combined[m] = combined.get(m, 0.0) + 0.5 * weight
                resolved[row] = combined
            return resolved[row]

        return HangingConstraints(rows={row: sorted(expand(row).items()) for row in sorted(direct)})

    # ------------------------------------------------------------ queries

    @property
    def n_cells(self) -> int:
        return len(self.cell_keys)

    @property
    def n_vertices(self) -> int:
        return len(self.points)

    def statistics(self) -> Dict[str, int]:
        levels = np.bincount(self.cell_level, minlength=self.max_level + 1)
        return {
            "generation": self.generation,
            "cells": self.n_cells,
            "vertices": self.n_vertices,
            "hanging": len(self.constraints),
            **{f"level_{k}": int(n) for k, n in enumerate(levels)},
        }

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Row of the active cell containing each point (points on edges go up/right)"""
        points = np.atleast_2d(points)
        n_fine_x = self.nx << self.max_level
        n_fine_y = self.ny << self.max_level
        fi = np.clip(np.floor((points[:, 0] - self.domain.x0) / self.h_min).astype(int), 0, n_fine_x - 1)
        fj = np.clip(np.floor((points[:, 1] - self.domain.y0) / self.h_min).astype(int), 0, n_fine_y - 1)
        rows = np.empty(len(points), dtype=int)
        for k, (a, b) in enumerate(zip(fi, fj)):
            for level in range(self.max_level + 1):
                shift = self.max_level - level
                key = (level, int(a) >> shift, int(b) >> shift)
                row = self.cell_row.get(key)
                if row is not None:
                    rows[k] = row
                    break
            else:
                raise ValueError(f"Point {points[k]} is outside the mesh")
        return rows

    def cell_vertex_values(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values)[self.cell_vertices]

    def interpolate(self, values: np.ndarray, points: np.ndarray, rows: Optional[np.ndarray] = None) -> np.ndarray:
        """Bilinear interpolation of a (constrained) nodal field"""
        points = np.atleast_2d(points)
        if rows is None:
            rows = self.locate(points)
        xi = (points[:, 0] - self.cell_origin[rows, 0]) / self.cell_size[rows]
        eta = (points[:, 1] - self.cell_origin[rows, 1]) / self.cell_size[rows]
        weights = np.column_stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta])
        corner = np.asarray(values)[self.cell_vertices[rows]]
        if corner.ndim == 2:
            return np.sum(weights * corner, axis=1)
        return np.einsum("nc,nc...->n...", weights, corner)

    def transfer(self, new: "AdaptiveMesh", values: np.ndarray) -> np.ndarray:
        """Move a nodal field onto another mesh of the same root grid"""
        values = self.constraints.apply(values)
        out = np.empty((new.n_vertices,) + np.shape(values)[1:], dtype=float)
        missing = []
        for row, key in enumerate(map(tuple, new.vertex_keys)):
            old = self.vertex_index.get((int(key[0]), int(key[1])))
            if old is None:
                missing.append(row)
            else:
                out[row] = values[old]
        if missing:
            missing = np.array(missing)
            out[missing] = self.interpolate(values, new.points[missing])
        return new.constraints.apply(out)


# ---------------------------------------------------------------- operations


def find_crack_tip(mesh: AdaptiveMesh, alpha: np.ndarray, alpha_tip: float = 0.95,
                   initial_tip: Tuple[float, float] = (0.0, 0.0)) -> np.ndarray:
    """Rightmost vertex with alpha >= alpha_tip, or the initial tip when none qualifies"""
    alpha = np.asarray(alpha)
    hits = np.flatnonzero(alpha >= alpha_tip)
    if hits.size == 0:
        return np.array(initial_tip, dtype=float)
    x = mesh.points[hits, 0]
    front = hits[x >= x.max() - 1e-12]
    best = front[np.lexsort((np.abs(mesh.points[front, 1]), -alpha[front]))[0]]
    return mesh.points[best].copy()


def mark_refine(mesh: AdaptiveMesh, alpha: np.ndarray, tip: np.ndarray, alpha_refine: float = 1e-3,
                margin: float = math.pi) -> Set[CellKey]:
    """Damaged cells ahead of tip - margin plus two rings of neighbors, below the level cap"""
    corner_alpha = mesh.cell_vertex_values(alpha)
    seeds = ((corner_alpha > alpha_refine).any(axis=1)
             & (mesh.cell_origin[:, 0] + mesh.cell_size >= tip[0] - margin))
    marked = {mesh.cell_keys[k] for k in np.flatnonzero(seeds)}
    ring = set(marked)
    for _ in range(2):
        grown = set()
        for key in ring:
            grown.update(mesh.neighbors(key))
        ring = grown - marked
        marked |= grown
    return {key for key in marked if key[0] < mesh.max_level}


def mark_coarsen(mesh: AdaptiveMesh, alpha: np.ndarray, tip: np.ndarray, threshold: float = 0.8,
                 margin: float = math.pi) -> Set[CellKey]:
    """Refined cells fully behind tip - margin whose vertices are all damaged beyond threshold"""
    corner_alpha = mesh.cell_vertex_values(alpha)
    behind = mesh.cell_origin[:, 0] + mesh.cell_size < tip[0] - margin
    damaged = (corner_alpha >= threshold).all(axis=1)
    rows = np.flatnonzero(behind & damaged & (mesh.cell_level > 0))
    return {mesh.cell_keys[k] for k in rows}


def execute_adaptation(mesh: AdaptiveMesh, refine: Iterable[CellKey], coarsen: Iterable[CellKey],
                       fields: Dict[str, np.ndarray]) -> Tuple[AdaptiveMesh, Dict[str, np.ndarray], bool]:
    """
    Refine/coarsen and carry nodal fields over

    Returns:
        (new mesh, transferred fields, changed)
    """
    refine, coarsen = set(refine), set(coarsen)
    if not refine and not coarsen:
        return mesh, fields, False
    new, changed = mesh.adapt(refine, coarsen)
    if not changed:
        return mesh, fields, False
    moved = {name: mesh.transfer(new, values) for name, values in fields.items()}
    logger.info(f"Mesh generation {new.generation}: {new.n_cells} cells, {new.n_vertices} vertices, "
                f"{len(new.constraints)} hanging")
    return new, moved, True


def check_balance(mesh: AdaptiveMesh) -> bool:
    """Exhaustive 2:1 scan"""
    return all(abs(nb[0] - key[0]) <= 1 for key in mesh.cell_keys for nb in mesh.neighbors(key))


def write_vtk(mesh: AdaptiveMesh, path: Path, point_data: Optional[Dict[str, np.ndarray]] = None,
              title: str = "fracture state") -> Path:
    """Legacy ASCII unstructured grid of VTK_QUAD cells"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_vertices} double"]
    lines += [f"{x:.12g} {y:.12g} 0" for x, y in mesh.points]
    lines.append(f"CELLS {mesh.n_cells} {5 * mesh.n_cells}")
    lines += ["4 " + " ".join(str(v) for v in quad) for quad in mesh.cell_vertices]
    lines.append(f"CELL_TYPES {mesh.n_cells}")
    lines += ["9"] * mesh.n_cells
    lines.append(f"CELL_DATA {mesh.n_cells}")
    lines += ["SCALARS level int 1", "LOOKUP_TABLE default"]
    lines += [str(level) for level in mesh.cell_level]
    if point_data:
        lines.append(f"POINT_DATA {mesh.n_vertices}")
        for name, values in point_data.items():
            values = np.asarray(values)
            if values.ndim == 2:
                lines.append(f"VECTORS {name} double")
                lines += [f"{u:.12g} {v:.12g} 0" for u, v in values]
            else:
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                lines += [f"{v:.12g}" for v in values]
    path.write_text("\n".join(lines) + "\n")
    return path
