#!/usr/bin/env python3
"""
XFEM Assembly

Discretization of the regularized fracture energy on an adaptive mesh:
bilinear displacement and phase-field bases, shifted-sign enrichment on cells
cut by inclusion interfaces, sub-cell and interface quadrature, surfing
Dirichlet data, and the discrete energy with its exact gradient and Hessian.

Features:
- Per-cell interface classification (uncut / cut / needs refinement)
- Sub-triangulated cut cells with 3-point rules and 2-point interface lines
- Enriched dofs dropped where the opposite-side support vanishes
- Sparse operators built once per mesh generation, energies evaluated by products
- Hanging-node constraints condensed through the mesh prolongation
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from adaptive_mesh import AdaptiveMesh, CUT, NEEDS_REFINEMENT, UNCUT
from fracture_model import C_W, MaterialParams, degradation, elasticity_matrix, geometric, kolosov, lame
from microstructure_geometry import InclusionLayout, MicrostructureError

logger = logging.getLogger(__name__)

GAUSS_LINE = np.array([0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)])
TRIANGLE_RULE = np.array([
    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
])
UNIT_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
MINORITY_AREA_FRACTION = 1e-8


class AmbiguousCutError(MicrostructureError):
    """A cell is crossed on all four edges and must be refined"""

    def __init__(self, origin: Sequence[float], size: float):
        super().__init__(f"Ambiguous interface cut in cell at {tuple(origin)} (size {size}); refine it")
        self.origin = tuple(origin)
        self.size = size


class StateMeshMismatchError(MicrostructureError):
    """State and discretization belong to different mesh generations"""


# ------------------------------------------------------------------ surfing data


@dataclass(frozen=True)
class SurfingParams:
    """Mode-I K-field translated at constant velocity"""
    K_I: float = 1.1
    v: float = 50.0
    E: float = 1.0
    nu: float = 0.3

    def __post_init__(self):
        if self.K_I <= 0 or self.v <= 0 or self.E <= 0:
            raise ValueError("Surfing parameters must be positive")

    @property
    def mu(self) -> float:
        return lame(self.E, self.nu)[1]

    @property
    def kappa(self) -> float:
        return kolosov(self.nu)


def surfing_displacement(p: np.ndarray, t: float, tip_y: float, params: SurfingParams) -> np.ndarray:
    """
    K-field displacement about the moving center (v t, tip_y)

    Args:
        p: Point (2,) or points (n, 2)
        t: Pseudo-time
        tip_y: Vertical position of the tracked crack tip
        params: Surfing parameters

    Returns:
        Displacement with the shape of p
    """
    points = np.atleast_2d(np.asarray(p, dtype=float))
    dx = points[:, 0] - params.v * t
    dy = points[:, 1] - tip_y
    r = np.hypot(dx, dy)
    theta = np.arctan2(dy, dx)
    amplitude = params.K_I / (2.0 * params.mu) * np.sqrt(r / (2.0 * math.pi)) * (params.kappa - np.cos(theta))
    out = np.column_stack([amplitude * np.cos(0.5 * theta), amplitude * np.sin(0.5 * theta)])
    return out[0] if np.ndim(p) == 1 else out


# ------------------------------------------------------------------ cut classification


def _interfaces_of(layout: Union[InclusionLayout, Sequence[Any], None]) -> List[Any]:
    if layout is None:
        return []
    if isinstance(layout, InclusionLayout):
        return list(layout.ellipses)
    return list(layout)


@dataclass
class CellCut:
    code: int
    inclusion: int = -1
    values: Optional[np.ndarray] = None
    side: int = 1


class InterfaceClassifier:
    """
    Classifies square cells against a set of interfaces

    Each interface exposes level_set(points) (negative inside); ellipses also
    provide a bounding circle used to skip far cells.
    """

    def __init__(self, layout: Union[InclusionLayout, Sequence[Any], None]):
        self.interfaces = _interfaces_of(layout)
        centers, radii = [], []
        for item in self.interfaces:
            if hasattr(item, "center") and hasattr(item, "outer_radius"):
                centers.append(item.center)
                radii.append(item.outer_radius)
            else:
                centers.append((0.0, 0.0))
                radii.append(np.inf)
        self._centers = np.array(centers, dtype=float).reshape(-1, 2)
        self._radii = np.array(radii, dtype=float)

    def candidates(self, origins: np.ndarray, sizes: np.ndarray) -> np.ndarray:
        """Boolean (n_cells, n_interfaces) mask of interfaces that may touch each cell"""
        origins = np.atleast_2d(origins)
        if not self.interfaces:
            return np.zeros((len(origins), 0), dtype=bool)
        lo = origins[:, None, :]
        hi = lo + np.asarray(sizes)[:, None, None]
        gap = np.maximum(np.maximum(lo - self._centers[None], self._centers[None] - hi), 0.0)
        return np.hypot(gap[..., 0], gap[..., 1]) <= self._radii[None] + 1e-12

    def classify(self, origin: np.ndarray, size: float, candidates: Optional[np.ndarray] = None) -> CellCut:
        corners = np.asarray(origin) + size * UNIT_CORNERS
        if candidates is None:
            candidates = self.candidates(np.atleast_2d(origin), np.array([size]))[0]
        cuts: List[Tuple[int, np.ndarray]] = []
        side = 1
        for index in np.flatnonzero(candidates):
            values = np.asarray(self.interfaces[index].level_set(corners), dtype=float)
            negative = values < 0.0
            if negative.all():
                side = -1
            elif negative.any():
                cuts.append((int(index), values))
        if not cuts:
            return CellCut(code=UNCUT, side=side)
        if len(cuts) > 1:
            return CellCut(code=NEEDS_REFINEMENT, inclusion=cuts[0][0], values=cuts[0][1])
        index, values = cuts[0]
        signs = values >= 0.0
        changes = int(np.sum(signs != np.roll(signs, -1)))
        code = NEEDS_REFINEMENT if changes == 4 else CUT
        return CellCut(code=code, inclusion=index, values=values)

    def __call__(self, origins: np.ndarray, sizes: np.ndarray) -> np.ndarray:
        origins = np.atleast_2d(origins)
        mask = self.candidates(origins, sizes)
        codes = np.zeros(len(origins), dtype=int)
        for k in np.flatnonzero(mask.any(axis=1)):
            codes[k] = self.classify(origins[k], float(sizes[k]), mask[k]).code
        return codes


# ------------------------------------------------------------------ quadrature


@dataclass
class QuadratureRule:
    """Bulk and interface quadrature of one cell"""
    points: np.ndarray
    weights: np.ndarray
    sides: np.ndarray
    interface_points: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    interface_weights: np.ndarray = field(default_factory=lambda: np.empty(0))
    normals: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    inclusion: int = -1
    corner_sides: np.ndarray = field(default_factory=lambda: np.ones(4, dtype=int))
    line_point: Optional[np.ndarray] = None
    line_normal: Optional[np.ndarray] = None
    side_areas: Dict[int, float] = field(default_factory=dict)

    @property
    def is_cut(self) -> bool:
        return self.inclusion >= 0

    def side_of(self, points: np.ndarray) -> np.ndarray:
        """+1 on the matrix side, -1 on the inclusion side"""
        points = np.atleast_2d(points)
        if self.line_point is None:
            return np.full(len(points), int(self.sides[0]) if len(self.sides) else 1)
        return np.where((points - self.line_point) @ self.line_normal >= 0.0, 1, -1)


def _uncut_rule(origin: np.ndarray, size: float, side: int) -> QuadratureRule:
    gx, gy = np.meshgrid(GAUSS_LINE, GAUSS_LINE)
    local = np.column_stack([gx.ravel(), gy.ravel()])
    return QuadratureRule(
        points=np.asarray(origin) + size * local,
        weights=np.full(4, 0.25 * size * size),
        sides=np.full(4, side, dtype=int),
        corner_sides=np.full(4, side, dtype=int),
        side_areas={side: size * size},
    )


def _triangle_points(polygon: List[np.ndarray]) -> Tuple[np.ndarray, np.ndarray, float]:
    points, weights, total = [], [], 0.0
    for k in range(1, len(polygon) - 1):
        tri = np.array([polygon[0], polygon[k], polygon[k + 1]])
        e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
        area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
        points.append(TRIANGLE_RULE @ tri)
        weights.append(np.full(3, area / 3.0))
        total += area
    if not points:
        return np.empty((0, 2)), np.empty(0), 0.0
    return np.vstack(points), np.concatenate(weights), total


def cut_cell_rule(origin: np.ndarray, size: float, values: np.ndarray, inclusion: int = 0) -> QuadratureRule:
    """
    Sub-cell quadrature for a cell with corner level-set values

    The interface is the straight segment through the linear edge crossings.
    """
    origin = np.asarray(origin, dtype=float)
    corners = origin + size * UNIT_CORNERS
    values = np.asarray(values, dtype=float)
    sides = np.where(values >= 0.0, 1, -1)
    changes = int(np.sum(sides != np.roll(sides, -1)))
    if changes == 0:
        return _uncut_rule(origin, size, int(sides[0]))
    if changes == 4:
        raise AmbiguousCutError(origin, size)

    polygons: Dict[int, List[np.ndarray]] = {1: [], -1: []}
    crossings: List[np.ndarray] = []
    for k in range(4):
        nxt = (k + 1) % 4
        polygons[int(sides[k])].append(corners[k])
        if sides[nxt] != sides[k]:
            t = values[k] / (values[k] - values[nxt])
            point = corners[k] + t * (corners[nxt] - corners[k])
            polygons[1].append(point)
            polygons[-1].append(point)
            crossings.append(point)
    p0, p1 = crossings
    tangent = p1 - p0
    length = float(np.linalg.norm(tangent))
    toward_matrix = np.mean(polygons[1], axis=0) - np.mean(polygons[-1], axis=0)
    if length > 0.0:
        normal = np.array([-tangent[1], tangent[0]]) / length
    else:
        normal = toward_matrix / max(np.linalg.norm(toward_matrix), 1e-300)
    if normal @ toward_matrix < 0.0:
        normal = -normal

    points, weights, cell_sides, areas = [], [], [], {}
    for side in (1, -1):
        pts, wts, area = _triangle_points(polygons[side])
        points.append(pts)
        weights.append(wts)
        cell_sides.append(np.full(len(wts), side, dtype=int))
        areas[side] = area

    return QuadratureRule(
        points=np.vstack(points),
        weights=np.concatenate(weights),
        sides=np.concatenate(cell_sides),
        interface_points=p0 + GAUSS_LINE[:, None] * tangent,
        interface_weights=np.full(2, 0.5 * length),
        normals=np.tile(normal, (2, 1)),
        inclusion=inclusion,
        corner_sides=sides,
        line_point=p0,
        line_normal=normal,
        side_areas=areas,
    )


def classify_and_quadrature(origin: np.ndarray, size: float,
                            layout: Union[InclusionLayout, Sequence[Any], InterfaceClassifier]) -> QuadratureRule:
    """Quadrature rule of one cell against the interfaces of a layout"""
    classifier = layout if isinstance(layout, InterfaceClassifier) else InterfaceClassifier(layout)
    cut = classifier.classify(np.asarray(origin, dtype=float), float(size))
    if cut.code == UNCUT:
        return _uncut_rule(np.asarray(origin, dtype=float), float(size), cut.side)
    if cut.code == NEEDS_REFINEMENT:
        raise AmbiguousCutError(origin, size)
    return cut_cell_rule(origin, size, cut.values, cut.inclusion)


def shape_values(origin: np.ndarray, size: float, point: np.ndarray,
                 corner_sides: Optional[Sequence[int]] = None, side: Optional[int] = None) -> Dict[str, np.ndarray]:
    """
    Bilinear basis and shifted-sign enriched basis at a point of a cell

    Returns:
        phi (4,), grad (4, 2), enriched (4,), enriched_grad (4, 2)
    """
    xi, eta = (np.asarray(point, dtype=float) - np.asarray(origin, dtype=float)) / size
    phi = np.array([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta])
    grad = np.array([
        [-(1 - eta), -(1 - xi)],
        [(1 - eta), -xi],
        [eta, xi],
        [-eta, (1 - xi)],
    ]) / size
    if corner_sides is None:
        corner_sides = np.ones(4, dtype=int)
    if side is None:
        side = 1
    xi_factor = side - np.asarray(corner_sides, dtype=float)
    return {
        "phi": phi,
        "grad": grad,
        "enriched": xi_factor * phi,
        "enriched_grad": xi_factor[:, None] * grad,
    }


def _shape_arrays(local: np.ndarray, sizes: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    xi, eta = local[:, 0], local[:, 1]
    phi = np.column_stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta])
    dx = np.column_stack([-(1 - eta), (1 - eta), eta, -eta]) / sizes[:, None]
    dy = np.column_stack([-(1 - xi), -xi, xi, (1 - xi)]) / sizes[:, None]
    return phi, dx, dy


# ------------------------------------------------------------------ dofs and state


@dataclass
class DofLayout:
    """
    Reduced unknown ordering [a | b | c]

    a: two components per free (non-hanging) vertex, interleaved
    b: two components per enriched (vertex, inclusion) pair
    c: one phase-field value per free vertex
    """
    n_free: int
    enriched: List[Tuple[int, int]]
    free_vertices: np.ndarray

    @property
    def n_enriched(self) -> int:
        return len(self.enriched)

    @property
    def n_a(self) -> int:
        return 2 * self.n_free

    @property
    def n_b(self) -> int:
        return 2 * self.n_enriched

    @property
    def n_u(self) -> int:
        return self.n_a + self.n_b

    @property
    def n_dofs(self) -> int:
        return self.n_u + self.n_free

    @property
    def c_offset(self) -> int:
        return self.n_u

    def dof_vertex(self) -> np.ndarray:
        """Mesh vertex row of every reduced dof"""
        enriched_rows = np.array([v for v, _ in self.enriched], dtype=int)
        return np.concatenate([np.repeat(self.free_vertices, 2), np.repeat(enriched_rows, 2), self.free_vertices])

    def dof_component(self) -> np.ndarray:
        return np.concatenate([np.tile([0, 1], self.n_free), np.tile([0, 1], self.n_enriched),
                               np.full(self.n_free, 2)])

    def dof_owner(self) -> np.ndarray:
        """Owning inclusion of enriched dofs, -1 elsewhere"""
        owners = np.array([l for _, l in self.enriched], dtype=int)
        return np.concatenate([np.full(self.n_a, -1), np.repeat(owners, 2), np.full(self.n_free, -1)])


@dataclass
class FractureState:
    """Solution vectors living on one mesh generation"""
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    step: int = 0
    generation: int = 0

    @classmethod
    def zeros(cls, dofs: DofLayout, generation: int, step: int = 0) -> "FractureState":
        return cls(a=np.zeros(dofs.n_a), b=np.zeros(dofs.n_b), c=np.zeros(dofs.n_free), step=step,
                   generation=generation)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.a, self.b, self.c])

    def with_vector(self, z: np.ndarray) -> "FractureState":
        n_a, n_b = len(self.a), len(self.b)
        return replace(self, a=z[:n_a].copy(), b=z[n_a:n_a + n_b].copy(), c=z[n_a + n_b:].copy())

    def copy(self) -> "FractureState":
        return replace(self, a=self.a.copy(), b=self.b.copy(), c=self.c.copy())


@dataclass
class BoundaryData:
    """Dirichlet data in reduced numbering (c indices relative to the c block)"""
    u_index: np.ndarray
    u_value: np.ndarray
    c_index: np.ndarray
    c_value: np.ndarray
    t: float = 0.0
    tip_y: float = 0.0


# ------------------------------------------------------------------ discretization


class Discretization:
    """
    Quadrature, dof layout and sparse operators of one mesh generation

    Args:
        mesh: Adaptive mesh
        layout: Inclusion layout or sequence of interfaces with level_set()
        material: Material parameters
    """

    def __init__(self, mesh: AdaptiveMesh, layout: Union[InclusionLayout, Sequence[Any], None],
                 material: MaterialParams):
        self.mesh = mesh
        self.material = material
        self.classifier = InterfaceClassifier(layout)
        self.generation = mesh.generation
        self._classify_cells()
        self._build_dofs()
        self._build_quadrature()
        self._build_operators()
        logger.debug(f"Discretization gen {self.generation}: {self.dofs.n_dofs} dofs "
                     f"({self.dofs.n_enriched} enriched nodes), {len(self.q_weights)} bulk points, "
                     f"{len(self.s_weights)} interface points")

    # ---------------------------------------------------------------- setup

    def _classify_cells(self) -> None:
        mesh = self.mesh
        n = mesh.n_cells
        self.cell_side = np.ones(n, dtype=int)
        self.cut_rules: Dict[int, QuadratureRule] = {}
        mask = self.classifier.candidates(mesh.cell_origin, mesh.cell_size)
        for row in np.flatnonzero(mask.any(axis=1)):
            cut = self.classifier.classify(mesh.cell_origin[row], float(mesh.cell_size[row]), mask[row])
            if cut.code == UNCUT:
                self.cell_side[row] = cut.side
                continue
            if cut.code == NEEDS_REFINEMENT:
                raise AmbiguousCutError(mesh.cell_origin[row], float(mesh.cell_size[row]))
            self.cut_rules[int(row)] = cut_cell_rule(mesh.cell_origin[row], float(mesh.cell_size[row]),
                                                     cut.values, cut.inclusion)

    def _build_dofs(self) -> None:
        mesh = self.mesh
        support: Dict[Tuple[int, int], float] = {}
        for row, rule in self.cut_rules.items():
            area = float(mesh.cell_size[row]) ** 2
            for corner, vertex in enumerate(mesh.cell_vertices[row]):
                if mesh.boundary[vertex]:
                    continue
                if mesh.hanging[vertex]:
                    logger.warning(f"Hanging vertex {vertex} on a cut cell; enrichment dropped")
                    continue
                opposite = rule.side_areas.get(-int(rule.corner_sides[corner]), 0.0) / area
                key = (int(vertex), rule.inclusion)
                support[key] = max(support.get(key, 0.0), opposite)
        enriched = sorted(key for key, fraction in support.items() if fraction >= MINORITY_AREA_FRACTION)
        dropped = len(support) - len(enriched)
        if dropped:
            logger.debug(f"Dropped {dropped} enriched nodes with vanishing support")
        self.dofs = DofLayout(n_free=len(mesh.free_vertices), enriched=enriched, free_vertices=mesh.free_vertices)
        self.enriched_index = {key: k for k, key in enumerate(enriched)}

    def _build_quadrature(self) -> None:
        mesh = self.mesh
        uncut = np.setdiff1d(np.arange(mesh.n_cells), np.array(sorted(self.cut_rules), dtype=int))
        gx, gy = np.meshgrid(GAUSS_LINE, GAUSS_LINE)
        ref = np.column_stack([gx.ravel(), gy.ravel()])

        cells = [np.repeat(uncut, 4)]
        local = [np.tile(ref, (len(uncut), 1))]
        weights = [np.repeat(0.25 * mesh.cell_size[uncut] ** 2, 4)]
        sides = [np.repeat(self.cell_side[uncut], 4)]
        enrich = [np.zeros((4 * len(uncut), 4))]
        enrich_idx = [-np.ones((4 * len(uncut), 4), dtype=int)]

        s_cells, s_local, s_weights, s_idx, s_normals = [], [], [], [], []
        for row in sorted(self.cut_rules):
            rule = self.cut_rules[row]
            origin, size = mesh.cell_origin[row], float(mesh.cell_size[row])
            idx = np.array([self.enriched_index.get((int(v), rule.inclusion), -1)
                            for v in mesh.cell_vertices[row]], dtype=int)
            n = len(rule.weights)
            cells.append(np.full(n, row))
            local.append((rule.points - origin) / size)
            weights.append(rule.weights)
            sides.append(rule.sides)
            factors = rule.sides[:, None] - rule.corner_sides[None, :].astype(float)
            enrich.append(np.where(idx[None, :] >= 0, factors, 0.0))
            enrich_idx.append(np.tile(idx, (n, 1)))
            m = len(rule.interface_weights)
            s_cells.append(np.full(m, row))
            s_local.append((rule.interface_points - origin) / size)
            s_weights.append(rule.interface_weights)
            s_idx.append(np.tile(idx, (m, 1)))
            s_normals.append(rule.normals)

        self.q_cell = np.concatenate(cells).astype(int)
        self.q_local = np.vstack(local)
        self.q_weights = np.concatenate(weights)
        self.q_sides = np.concatenate(sides).astype(int)
        self.q_enrich = np.vstack(enrich)
        self.q_enrich_idx = np.vstack(enrich_idx)
        self.q_points = mesh.cell_origin[self.q_cell] + self.q_local * mesh.cell_size[self.q_cell, None]

        if s_cells:
            self.s_cell = np.concatenate(s_cells).astype(int)
            self.s_local = np.vstack(s_local)
            self.s_weights = np.concatenate(s_weights)
            self.s_idx = np.vstack(s_idx)
            self.s_normals = np.vstack(s_normals)
        else:
            self.s_cell = np.empty(0, dtype=int)
            self.s_local = np.empty((0, 2))
            self.s_weights = np.empty(0)
            self.s_idx = np.empty((0, 4), dtype=int)
            self.s_normals = np.empty((0, 2))
        self.s_points = (mesh.cell_origin[self.s_cell] + self.s_local * mesh.cell_size[self.s_cell, None]
                         if len(self.s_cell) else np.empty((0, 2)))

    def _build_operators(self) -> None:
        mesh, dofs = self.mesh, self.dofs
        n_q, n_v = len(self.q_weights), mesh.n_vertices
        phi, dx, dy = _shape_arrays(self.q_local, mesh.cell_size[self.q_cell])
        verts = mesh.cell_vertices[self.q_cell]
        q = np.repeat(np.arange(n_q), 4)

        # strain from all-vertex displacements, then condensed to free vertices
        rows = np.concatenate([3 * q, 3 * q + 1, 3 * q + 2, 3 * q + 2])
        cols = np.concatenate([2 * verts.ravel(), 2 * verts.ravel() + 1, 2 * verts.ravel(), 2 * verts.ravel() + 1])
        vals = np.concatenate([dx.ravel(), dy.ravel(), dy.ravel(), dx.ravel()])
        strain_all = sp.csr_matrix((vals, (rows, cols)), shape=(3 * n_q, 2 * n_v))
        prolong2 = sp.kron(mesh.prolongation, sp.identity(2), format="csr")
        strain_a = strain_all @ prolong2

        mask = self.q_enrich_idx.ravel() >= 0
        e = self.q_enrich_idx.ravel()[mask]
        qe = q[mask]
        fx = (self.q_enrich * dx).ravel()[mask]
        fy = (self.q_enrich * dy).ravel()[mask]
        strain_b = sp.csr_matrix((
            np.concatenate([fx, fy, fy, fx]),
            (np.concatenate([3 * qe, 3 * qe + 1, 3 * qe + 2, 3 * qe + 2]),
             np.concatenate([2 * e, 2 * e + 1, 2 * e, 2 * e + 1])),
        ), shape=(3 * n_q, dofs.n_b))
        self.B = sp.hstack([strain_a, strain_b], format="csr")

        value_all = sp.csr_matrix((phi.ravel(), (q, verts.ravel())), shape=(n_q, n_v))
        grad_all = sp.csr_matrix((np.concatenate([dx.ravel(), dy.ravel()]),
                                  (np.concatenate([2 * q, 2 * q + 1]), np.concatenate([verts.ravel()] * 2))),
                                 shape=(2 * n_q, n_v))
        self.N = (value_all @ mesh.prolongation).tocsr()
        self.G = (grad_all @ mesh.prolongation).tocsr()

        n_s = len(self.s_weights)
        if n_s:
            s_phi, _, _ = _shape_arrays(self.s_local, mesh.cell_size[self.s_cell])
            sq = np.repeat(np.arange(n_s), 4)
            smask = self.s_idx.ravel() >= 0
            se, sq, sv = self.s_idx.ravel()[smask], sq[smask], 2.0 * s_phi.ravel()[smask]
            jump_b = sp.csr_matrix((np.concatenate([sv, sv]),
                                    (np.concatenate([2 * sq, 2 * sq + 1]), np.concatenate([2 * se, 2 * se + 1]))),
                                   shape=(2 * n_s, dofs.n_b))
        else:
            jump_b = sp.csr_matrix((0, dofs.n_b))
        self.J = sp.hstack([sp.csr_matrix((2 * n_s, dofs.n_a)), jump_b], format="csr")

        self.D_matrix = elasticity_matrix(self.material.E_matrix, self.material.nu)
        self.D_inclusion = elasticity_matrix(self.material.E_inclusion, self.material.nu)
        self.q_D = np.where((self.q_sides > 0)[:, None, None], self.D_matrix[None], self.D_inclusion[None])

    # ---------------------------------------------------------------- fields

    def nodal_displacement(self, state: FractureState) -> np.ndarray:
        """Standard part of the displacement at all mesh vertices, shape (n_v, 2)"""
        return (self.mesh.prolongation @ state.a.reshape(-1, 2))

    def nodal_phase_field(self, state: FractureState) -> np.ndarray:
        return self.mesh.prolongation @ state.c

    def state_from_nodal(self, displacement: np.ndarray, alpha: np.ndarray, step: int = 0) -> FractureState:
        free = self.mesh.free_vertices
        return FractureState(a=np.asarray(displacement)[free].ravel().copy(), b=np.zeros(self.dofs.n_b),
                             c=np.asarray(alpha)[free].copy(), step=step, generation=self.generation)

    def zero_state(self, step: int = 0) -> FractureState:
        return FractureState.zeros(self.dofs, self.generation, step)

    def boundary_data(self, displacement: Callable[[np.ndarray], np.ndarray], t: float = 0.0,
                      tip_y: float = 0.0) -> BoundaryData:
        """Dirichlet data: displacement on all free boundary vertices, phase field pinned to 0"""
        mesh = self.mesh
        vertices = mesh.free_vertices[mesh.boundary[mesh.free_vertices]]
        columns = mesh.free_column[vertices]
        values = np.atleast_2d(displacement(mesh.points[vertices]))
        return BoundaryData(
            u_index=np.column_stack([2 * columns, 2 * columns + 1]).ravel(),
            u_value=values.ravel(),
            c_index=columns,
            c_value=np.zeros(len(columns)),
            t=t,
            tip_y=tip_y,
        )

    def surfing_boundary(self, t: float, tip_y: float, params: SurfingParams) -> BoundaryData:
        return self.boundary_data(lambda p: surfing_displacement(p, t, tip_y, params), t=t, tip_y=tip_y)

    def evaluate(self, state: FractureState, points: np.ndarray, rows: Optional[np.ndarray] = None
                 ) -> Dict[str, np.ndarray]:
        """Displacement, displacement gradient, phase field and side at arbitrary points"""
        self._check(state)
        mesh = self.mesh
        points = np.atleast_2d(points)
        if rows is None:
            rows = mesh.locate(points)
        sizes = mesh.cell_size[rows]
        local = (points - mesh.cell_origin[rows]) / sizes[:, None]
        phi, dx, dy = _shape_arrays(local, sizes)
        verts = mesh.cell_vertices[rows]
        u_nodes = self.nodal_displacement(state)[verts]
        alpha_nodes = self.nodal_phase_field(state)[verts]
        sides = self.cell_side[rows].copy()
        b = state.b.reshape(-1, 2)
        for k, row in enumerate(rows):
            rule = self.cut_rules.get(int(row))
            if rule is None:
                continue
            sides[k] = int(rule.side_of(points[k])[0])
            for corner, vertex in enumerate(verts[k]):
                e = self.enriched_index.get((int(vertex), rule.inclusion))
                if e is not None:
                    u_nodes[k, corner] += (sides[k] - rule.corner_sides[corner]) * b[e]
        u = np.einsum("nc,nci->ni", phi, u_nodes)
        grad = np.stack([np.einsum("nc,nci->ni", dx, u_nodes), np.einsum("nc,nci->ni", dy, u_nodes)], axis=-1)
        return {
            "u": u,
            "grad_u": grad,
            "alpha": np.sum(phi * alpha_nodes, axis=1),
            "side": sides,
        }

    # ---------------------------------------------------------------- energy

    def _check(self, state: FractureState) -> None:
        if state.generation != self.generation:
            raise StateMeshMismatchError(
                f"State lives on mesh generation {state.generation}, discretization on {self.generation}")

    def _fields(self, state: FractureState):
        u = np.concatenate([state.a, state.b])
        strain = (self.B @ u).reshape(-1, 3)
        alpha = self.N @ state.c
        grad_alpha = (self.G @ state.c).reshape(-1, 2)
        jump = (self.J @ u).reshape(-1, 2)
        return strain, alpha, grad_alpha, jump

    def energy_terms(self, state: FractureState) -> Dict[str, float]:
        """The four contributions of the total energy"""
        self._check(state)
        mat = self.material
        strain, alpha, grad_alpha, jump = self._fields(state)
        stress = np.einsum("qij,qj->qi", self.q_D, strain)
        psi = 0.5 * np.sum(stress * strain, axis=1)
        g, _, _ = degradation(alpha, mat)
        w, _ = geometric(alpha)
        matrix = self.q_sides > 0
        wq = self.q_weights
        return {
            "bulk_matrix": float(np.sum(wq[matrix] * g[matrix] * psi[matrix])),
            "bulk_inclusion": float(np.sum(wq[~matrix] * psi[~matrix])),
            "phase_field": float(mat.G_c / C_W * np.sum(wq * (w / mat.eps + mat.eps * np.sum(grad_alpha ** 2, axis=1)))),
            "interface": float(0.5 * mat.k_I * np.sum(self.s_weights * np.sum(jump ** 2, axis=1))),
        }

    def energy(self, state: FractureState) -> float:
        return sum(self.energy_terms(state).values())

    def gradient(self, state: FractureState, freeze_alpha: bool = False) -> np.ndarray:
        self._check(state)
        mat = self.material
        strain, alpha, grad_alpha, jump = self._fields(state)
        stress = np.einsum("qij,qj->qi", self.q_D, strain)
        matrix = self.q_sides > 0
        g, dg, _ = degradation(alpha, mat)
        factor = np.where(matrix, g, 1.0) * self.q_weights
        r_u = self.B.T @ (factor[:, None] * stress).ravel()
        r_u += self.J.T @ (mat.k_I * self.s_weights[:, None] * jump).ravel()
        if freeze_alpha:
            return r_u
        psi = 0.5 * np.sum(stress * strain, axis=1)
        _, dw = geometric(alpha)
        coeff = mat.G_c / C_W
        r_alpha = self.q_weights * (np.where(matrix, dg * psi, 0.0) + coeff * dw / mat.eps)
        r_c = self.N.T @ r_alpha + self.G.T @ (2.0 * coeff * mat.eps * self.q_weights[:, None] * grad_alpha).ravel()
        return np.concatenate([r_u, r_c])

    def hessian(self, state: FractureState, freeze_alpha: bool = False) -> sp.csr_matrix:
        self._check(state)
        mat = self.material
        n_q = len(self.q_weights)
        strain, alpha, grad_alpha, jump = self._fields(state)
        stress = np.einsum("qij,qj->qi", self.q_D, strain)
        matrix = self.q_sides > 0
        g, dg, ddg = degradation(alpha, mat)
        factor = np.where(matrix, g, 1.0) * self.q_weights

        base = 3 * np.arange(n_q)
        r = (base[:, None, None] + np.arange(3)[None, :, None]) * np.ones((1, 1, 3), dtype=int)
        c = (base[:, None, None] + np.arange(3)[None, None, :]) * np.ones((1, 3, 1), dtype=int)
        blocks = sp.csr_matrix(((factor[:, None, None] * self.q_D).ravel(), (r.ravel(), c.ravel())),
                               shape=(3 * n_q, 3 * n_q))
        k_uu = self.B.T @ blocks @ self.B
        if len(self.s_weights):
            k_uu = k_uu + mat.k_I * (self.J.T @ sp.diags(np.repeat(self.s_weights, 2)) @ self.J)
        if freeze_alpha:
            return sp.csr_matrix(k_uu)

        psi = 0.5 * np.sum(stress * strain, axis=1)
        coeff = mat.G_c / C_W
        coupling = np.where(matrix, dg, 0.0) * self.q_weights
        s_rows = (base[:, None] + np.arange(3)[None, :]).ravel()
        s_cols = np.repeat(np.arange(n_q), 3)
        mixed = sp.csr_matrix(((coupling[:, None] * stress).ravel(), (s_rows, s_cols)), shape=(3 * n_q, n_q))
        k_uc = self.B.T @ mixed @ self.N
        curvature = self.q_weights * (np.where(matrix, ddg * psi, 0.0) - 2.0 * coeff / mat.eps)
        k_cc = (self.N.T @ sp.diags(curvature) @ self.N
                + 2.0 * coeff * mat.eps * (self.G.T @ sp.diags(np.repeat(self.q_weights, 2)) @ self.G))
        return sp.bmat([[k_uu, k_uc], [k_uc.T, k_cc]], format="csr")

    def total_area(self) -> float:
        return float(np.sum(self.q_weights))

    def interface_length(self) -> float:
        return float(np.sum(self.s_weights))


def assemble(state: FractureState, disc: Discretization, mode: str = "energy", freeze_alpha: bool = False):
    """
    Discrete energy, gradient or Hessian of a state

    Args:
        state: Solution vectors on disc's mesh generation
        disc: Discretization of the current mesh
        mode: 'energy', 'gradient' or 'hessian'
        freeze_alpha: Omit phase-field rows and columns
    """
    if mode == "energy":
        return disc.energy(state)
    if mode == "gradient":
        return disc.gradient(state, freeze_alpha)
    if mode == "hessian":
        return disc.hessian(state, freeze_alpha)
    raise ValueError(f"Unknown assembly mode: {mode}")
