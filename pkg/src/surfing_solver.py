#!/usr/bin/env python3
"""
Surfing Solver

Time-stepping driver of the phase-field fracture simulation with surfing
boundary conditions. Every pseudo-time step minimizes the total energy
monolithically in (u, alpha) under box constraints on the phase field,
tracks the crack tip, backtracks when the crack runs too far, and adapts
the mesh around the crack.

Features:
- Displacement presolve at frozen phase field (one sparse SPD solve)
- Log-barrier Newton with fraction-to-boundary steps and Armijo line search
- Threshold irreversibility and a pre-damaged notch imposed through lower bounds
- Backtracking in pseudo-time without mesh adaptation
- Coarsen-once / refine-until-stable adaptation with field projection
- dt halving on rejected steps (tenacity)
"""

import logging
import math
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt

from adaptive_mesh import (AdaptiveMesh, crack_domain, execute_adaptation, find_crack_tip, mark_coarsen,
                           mark_refine, write_vtk)
from fracture_model import C_W, MaterialParams
from microstructure_geometry import (DesignVector, InclusionLayout, MicrostructureError, Rectangle,
                                     build_layout)
from toughness import JSample, JTrace, j_integral
from xfem_assembly import (GAUSS_LINE, BoundaryData, Discretization, FractureState, InterfaceClassifier,
                           SurfingParams)

logger = logging.getLogger(__name__)

BOUND_TOL = 1e-8
INTERIOR_OFFSET = 1e-6
FRACTION_TO_BOUNDARY = 0.995
ARMIJO = 1e-4


class PresolveError(MicrostructureError):
    """Singular displacement system, usually missing Dirichlet data"""


class StepRejectedError(MicrostructureError):
    """Newton iteration cap reached or line search breakdown"""


class BacktrackingExhaustedError(MicrostructureError):
    """The crack kept advancing too far after the allowed number of backtracks"""


@dataclass
class StepControls:
    """Pseudo-time stepping, interior-point and adaptation controls"""
    dt: float = 0.01
    max_crack_advance: float = 2.0
    target_crack_length: float = 80.0
    final_time: Optional[float] = None
    t_start: Optional[float] = None
    irreversibility_threshold: float = 0.5
    barrier_init: float = 1e-9
    barrier_min: float = 1e-12
    barrier_factor: float = 0.1
    newton_rtol: float = 1e-8
    newton_atol: float = 1e-10
    max_newton: int = 200
    max_backtracks: int = 50
    max_dt_halvings: int = 4
    max_steps: int = 10000
    max_adapt_cycles: int = 8
    alpha_tip: float = 0.95
    alpha_refine: float = 1e-3
    refine_margin: float = math.pi
    coarsen_threshold: float = 0.8
    coarsen_margin: Optional[float] = None
    vtk_every: int = 0

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.max_crack_advance <= 0.0:
            raise ValueError(f"max_crack_advance must be positive, got {self.max_crack_advance}")
        if not 0.0 < self.barrier_factor < 1.0:
            raise ValueError(f"barrier_factor must lie in (0, 1), got {self.barrier_factor}")
        if self.barrier_min > self.barrier_init:
            raise ValueError("barrier_min must not exceed barrier_init")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class DomainParams:
    """Computational domain and its initial crack"""
    length: float = 100.0
    height: float = 30.0
    notch_length: float = 5.0
    h_ratio: float = 0.4
    interface_level: int = 1
    inclusions: bool = True
    boundary_strip: Optional[float] = None
    free_crack_mouth: bool = True

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class KKTState:
    """Bound multipliers of the phase field at the final barrier parameter"""
    lower: np.ndarray
    upper: np.ndarray
    barrier: float
    residual: float = 0.0
    iterations: int = 0

    @property
    def min_multiplier(self) -> float:
        values = np.concatenate([self.lower, self.upper])
        return float(values.min()) if len(values) else 0.0


@dataclass
class SimulationResult:
    trace: JTrace
    termination_reason: str
    step_times: List[float] = field(default_factory=list)
    mesh_statistics: Dict[str, int] = field(default_factory=dict)
    backtracking_events: int = 0
    dt_halvings: int = 0
    final_time: float = 0.0
    wall_time: float = 0.0
    final_mesh: Optional[AdaptiveMesh] = field(default=None, repr=False)
    final_fields: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def summary(self) -> Dict[str, Any]:
        last = self.trace.samples[-1] if len(self.trace) else None
        return {
            "termination_reason": self.termination_reason,
            "accepted_steps": len(self.trace),
            "backtracking_events": self.backtracking_events,
            "dt_halvings": self.dt_halvings,
            "final_time": self.final_time,
            "final_tip_x": last.tip_x if last else None,
            "final_crack_length": last.crack_length if last else None,
            "mesh": dict(self.mesh_statistics),
            "wall_time": round(self.wall_time, 3),
        }


# ------------------------------------------------------------------ per-step solves


def _submatrix(matrix: sp.spmatrix, rows: np.ndarray, cols: np.ndarray) -> sp.csc_matrix:
    return sp.csr_matrix(matrix)[rows][:, cols].tocsc()


def presolve_displacement(disc: Discretization, state: FractureState, bcs: BoundaryData) -> FractureState:
    """
    Minimize the energy in (a, b) with the phase field frozen

    The frozen-alpha energy is quadratic and strictly convex in the
    displacement, so one sparse solve on the non-Dirichlet dofs suffices.
    """
    n_u = disc.dofs.n_u
    z = state.vector()
    z[bcs.u_index] = bcs.u_value
    trial = state.with_vector(z)

    free = np.ones(n_u, dtype=bool)
    free[bcs.u_index] = False
    idx = np.flatnonzero(free)
    if idx.size == 0:
        return trial

    stiffness = _submatrix(disc.hessian(trial, freeze_alpha=True), idx, idx)
    residual = disc.gradient(trial, freeze_alpha=True)[idx]
    try:
        lu = splu(stiffness, permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:
        raise PresolveError(f"Displacement system is singular ({len(idx)} free dofs): {exc}") from exc
    du = lu.solve(-residual)
    if not np.all(np.isfinite(du)):
        raise PresolveError("Displacement presolve produced non-finite values")
    z[idx] += du
    logger.debug(f"Presolve: |r_u| {np.abs(residual).max():.3e} -> solved {len(idx)} dofs")
    return trial.with_vector(z)


def _newton_direction(hessian: sp.csc_matrix, gradient: np.ndarray) -> Tuple[np.ndarray, float]:
    """Newton step, regularized with a growing diagonal shift until it is a descent direction"""
    scale = float(np.abs(hessian.diagonal()).max()) if hessian.shape[0] else 1.0
    identity = sp.identity(hessian.shape[0], format="csc")
    shift = 0.0
    for _ in range(8):
        matrix = hessian if shift == 0.0 else (hessian + shift * identity).tocsc()
        try:
            step = splu(matrix).solve(-gradient)
        except RuntimeError:
            step = None
        if step is not None and np.all(np.isfinite(step)) and gradient @ step < 0.0:
            return step, shift
        shift = 1e-8 * max(scale, 1e-300) if shift == 0.0 else 100.0 * shift
    return -gradient, shift


def solve_coupled(disc: Discretization, state: FractureState, bcs: BoundaryData, lower: np.ndarray,
                  controls: StepControls) -> Tuple[FractureState, KKTState]:
    """
    Minimize the total energy subject to lower <= c <= 1

    Primal log-barrier Newton over a decreasing barrier schedule. Dirichlet
    phase-field dofs keep their prescribed value; dofs with lower bound 1 are
    fixed at 1.

    Args:
        disc: Discretization of the current mesh
        state: Warm start, usually presolved
        bcs: Dirichlet data of the current pseudo-time
        lower: Lower bounds of the c block
        controls: Barrier schedule and Newton tolerances

    Returns:
        (converged state, bound multipliers)
    """
    n_u, n_c = disc.dofs.n_u, disc.dofs.n_free
    z = state.vector()
    z[bcs.u_index] = bcs.u_value

    lo = np.clip(np.asarray(lower, dtype=float), 0.0, 1.0).copy()
    pinned = np.zeros(n_c, dtype=bool)
    pinned[bcs.c_index] = True
    lo[pinned] = 0.0
    at_one = ~pinned & (lo >= 1.0 - BOUND_TOL)
    c = z[n_u:]
    c[bcs.c_index] = bcs.c_value
    c[at_one] = 1.0
    movable = ~(pinned | at_one)
    gap = np.minimum(INTERIOR_OFFSET, 0.5 * (1.0 - lo))
    c[movable] = np.clip(c[movable], lo[movable] + gap[movable], 1.0 - gap[movable])

    free = np.ones(len(z), dtype=bool)
    free[bcs.u_index] = False
    free[n_u + np.flatnonzero(~movable)] = False
    idx = np.flatnonzero(free)
    on_c = idx >= n_u
    c_pos = idx[on_c] - n_u
    lo_f = lo[c_pos]

    def barrier(values: np.ndarray, mu: float) -> Tuple[float, np.ndarray, np.ndarray]:
        s1, s2 = values - lo_f, 1.0 - values
        return (-mu * float(np.sum(np.log(s1) + np.log(s2))), -mu / s1 + mu / s2, mu / s1 ** 2 + mu / s2 ** 2)

    def merit(vector: np.ndarray, mu: float) -> float:
        return disc.energy(state.with_vector(vector)) + barrier(vector[n_u:][c_pos], mu)[0]

    def reduced_gradient(vector: np.ndarray, mu: float) -> np.ndarray:
        g = disc.gradient(state.with_vector(vector))[idx]
        g[on_c] += barrier(vector[n_u:][c_pos], mu)[1]
        return g

    mu = controls.barrier_init
    iterations = 0
    g = reduced_gradient(z, mu)
    tol = max(controls.newton_atol, controls.newton_rtol * float(np.abs(g).max(initial=0.0)))
    while True:
        while np.abs(g).max(initial=0.0) > tol:
            iterations += 1
            if iterations > controls.max_newton:
                raise StepRejectedError(f"Newton did not converge in {controls.max_newton} iterations "
                                        f"(|g| = {np.abs(g).max():.3e}, mu = {mu:.1e})")
            current = state.with_vector(z)
            hessian = _submatrix(disc.hessian(current), idx, idx)
            curvature = np.zeros(len(idx))
            curvature[on_c] = barrier(z[n_u:][c_pos], mu)[2]
            hessian = (hessian + sp.diags(curvature)).tocsc()
            step, shift = _newton_direction(hessian, g)

            dc = step[on_c]
            cc = z[n_u:][c_pos]
            with np.errstate(divide="ignore", invalid="ignore"):
                limits = np.where(dc < 0.0, (cc - lo_f) / -dc, np.where(dc > 0.0, (1.0 - cc) / dc, np.inf))
            s = min(1.0, FRACTION_TO_BOUNDARY * float(limits.min(initial=np.inf)))

            phi0 = merit(z, mu)
            if not math.isfinite(phi0):
                raise StepRejectedError("Non-finite energy during the coupled solve")
            slope = float(g @ step)
            while s > 1e-12:
                trial = z.copy()
                trial[idx] += s * step
                phi = merit(trial, mu)
                if math.isfinite(phi) and phi <= phi0 + ARMIJO * s * slope:
                    break
                s *= 0.5
            else:
                if abs(slope) <= 1e-14 * (1.0 + abs(phi0)):
                    logger.debug(f"Line search stalled at round-off level (mu = {mu:.1e})")
                    break
                raise StepRejectedError(f"Line search failed (slope {slope:.3e}, mu = {mu:.1e})")
            z = trial
            g = reduced_gradient(z, mu)
            logger.debug(f"Newton {iterations}: |g| {np.abs(g).max():.3e}, step {s:.3g}, shift {shift:.1e}, "
                         f"mu {mu:.1e}")
        if mu <= controls.barrier_min * (1.0 + 1e-12):
            break
        mu = max(mu * controls.barrier_factor, controls.barrier_min)
        g = reduced_gradient(z, mu)

    result = state.with_vector(z)
    c = z[n_u:]
    lower_mult = np.zeros(n_c)
    upper_mult = np.zeros(n_c)
    m_idx = np.flatnonzero(movable)
    lower_mult[m_idx] = mu / (c[m_idx] - lo[m_idx])
    upper_mult[m_idx] = mu / (1.0 - c[m_idx])
    if at_one.any():
        r_c = disc.gradient(result)[n_u:]
        lower_mult[at_one] = np.maximum(r_c[at_one], 0.0)
        upper_mult[at_one] = np.maximum(-r_c[at_one], 0.0)
    complementarity = float(np.max(np.concatenate([lower_mult[m_idx] * (c[m_idx] - lo[m_idx]),
                                                   upper_mult[m_idx] * (1.0 - c[m_idx]), [0.0]])))
    residual = float(np.abs(g).max(initial=0.0)) + complementarity
    return result, KKTState(lower=lower_mult, upper=upper_mult, barrier=mu, residual=residual, iterations=iterations)


# ------------------------------------------------------------------ measures and bounds


def crack_length(mesh: AdaptiveMesh, alpha: np.ndarray, eps: float) -> float:
    """Regularized crack surface (1/c_w) * int w(alpha)/eps + eps |grad alpha|^2"""
    corner = np.asarray(alpha, dtype=float)[mesh.cell_vertices]
    size = mesh.cell_size
    total = 0.0
    for xi in GAUSS_LINE:
        for eta in GAUSS_LINE:
            phi = np.array([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta])
            d_xi = np.array([-(1 - eta), (1 - eta), eta, -eta])
            d_eta = np.array([-(1 - xi), -xi, xi, (1 - xi)])
            a = corner @ phi
            ax = corner @ d_xi / size
            ay = corner @ d_eta / size
            density = (2.0 * a - a * a) / eps + eps * (ax * ax + ay * ay)
            total += float(np.sum(0.25 * size * size * density))
    return total / C_W


def irreversibility_bounds(history: np.ndarray, threshold: float = 0.5,
                           notch: Optional[np.ndarray] = None) -> np.ndarray:
    """Lower bounds: accepted damage where it reached the threshold, 1 on the notch, else 0"""
    history = np.asarray(history, dtype=float)
    lower = np.where(history >= threshold, np.clip(history, 0.0, 1.0), 0.0)
    if notch is not None:
        lower = np.maximum(lower, np.where(notch, 1.0, 0.0))
    return lower


# ------------------------------------------------------------------ driver


@dataclass
class _Trial:
    mesh: AdaptiveMesh
    disc: Discretization
    history: np.ndarray
    state: FractureState
    tip: np.ndarray
    t: float


class SurfingSimulation:
    """
    One surfing run on a fixed inclusion layout

    Args:
        layout: Inclusions inside the domain (empty for the pure matrix)
        controls: Step controls
        material: Material parameters
        surfing: K-field parameters
        domain: Domain and notch
        output_dir: Directory for VTK dumps (only used when controls.vtk_every > 0)
    """

    def __init__(self, layout: InclusionLayout, controls: StepControls, material: MaterialParams,
                 surfing: SurfingParams, domain: DomainParams, output_dir: Optional[Path] = None):
        self.layout = layout
        self.controls = controls
        self.material = material
        self.surfing = surfing
        self.domain = domain
        self.output_dir = Path(output_dir) if output_dir else None

        mesh = AdaptiveMesh.for_crack_domain(domain.length, domain.height, material.eps, domain.h_ratio,
                                             classifier=InterfaceClassifier(layout))
        mesh = mesh.settle_interfaces(domain.interface_level)
        band = math.pi * material.eps
        mesh = mesh.refine_region(Rectangle(mesh.domain.x0, -band, domain.notch_length + controls.refine_margin, band),
                                  mesh.max_level)
        self.mesh = mesh
        self.disc = Discretization(mesh, layout, material)
        self.history = np.zeros(mesh.n_vertices)
        self.state = self.disc.zero_state()
        self.tip = np.array([mesh.domain.x0 + domain.notch_length, 0.0])
        self.t = controls.t_start if controls.t_start is not None else domain.notch_length / surfing.v
        self.step = 0
        self.trace = JTrace()
        self.step_times: List[float] = []
        self.backtracking_events = 0
        self.dt_halvings = 0
        logger.info(f"Surfing run: domain {mesh.domain.width:g} x {mesh.domain.height:g}, "
                    f"{len(layout)} inclusions, {mesh.n_cells} cells, {self.disc.dofs.n_dofs} dofs")

    # ---------------------------------------------------------------- helpers

    def _notch_mask(self, mesh: AdaptiveMesh) -> np.ndarray:
        x, y = mesh.points[:, 0], mesh.points[:, 1]
        return (np.abs(y) < 1e-9 * mesh.h_min) & (x <= mesh.domain.x0 + self.domain.notch_length + 1e-9)

    def _mouth_mask(self, mesh: AdaptiveMesh) -> np.ndarray:
        if not self.domain.free_crack_mouth:
            return np.zeros(mesh.n_vertices, dtype=bool)
        half = 0.5 * math.pi * self.material.eps
        return (np.abs(mesh.points[:, 0] - mesh.domain.x0) < 1e-9) & (np.abs(mesh.points[:, 1]) <= half + 1e-9)

    def _boundary(self, disc: Discretization, t: float) -> BoundaryData:
        bcs = disc.surfing_boundary(t, float(self.tip[1]), self.surfing)
        mesh = disc.mesh
        mouth = self._mouth_mask(mesh)[mesh.free_vertices[bcs.c_index]]
        bcs.c_index = bcs.c_index[~mouth]
        bcs.c_value = bcs.c_value[~mouth]
        return bcs

    def _lower(self, disc: Discretization, history: np.ndarray) -> np.ndarray:
        free = disc.mesh.free_vertices
        return irreversibility_bounds(history[free], self.controls.irreversibility_threshold,
                                      self._notch_mask(disc.mesh)[free])

    def _solve(self, disc: Discretization, history: np.ndarray, warm: FractureState,
               t: float) -> FractureState:
        bcs = self._boundary(disc, t)
        state = presolve_displacement(disc, warm, bcs)
        state, kkt = solve_coupled(disc, state, bcs, self._lower(disc, history), self.controls)
        logger.debug(f"t={t:.4f}: {kkt.iterations} Newton iterations, KKT residual {kkt.residual:.2e}")
        return state

    def _locate_tip(self, disc: Discretization, state: FractureState) -> np.ndarray:
        return find_crack_tip(disc.mesh, disc.nodal_phase_field(state), self.controls.alpha_tip,
                              initial_tip=tuple(self.tip))

    # ---------------------------------------------------------------- algorithm

    def _advance(self, dt: float) -> _Trial:
        """
        Trial step: solve, backtrack, adapt, and repeat on a changed mesh

        The trial is returned only from a pass whose crack advance respects
        max_crack_advance. Leaves the accepted state untouched.
        """
        controls = self.controls
        mesh, disc, history = self.mesh, self.disc, self.history
        t = self.t + dt
        state = self._solve(disc, history, self.state, t)

        backtracks = 0
        coarsen_done = False
        for cycle in range(controls.max_adapt_cycles + 1):
            tip = self._locate_tip(disc, state)
            while np.linalg.norm(tip - self.tip) > controls.max_crack_advance:
                backtracks += 1
                if backtracks > controls.max_backtracks:
                    raise BacktrackingExhaustedError(
                        f"Crack advance {np.linalg.norm(tip - self.tip):.3f} still above "
                        f"{controls.max_crack_advance} after {controls.max_backtracks} backtracks at t={t:.4f}")
                t -= dt
                logger.info(f"Backtracking: crack advanced {np.linalg.norm(tip - self.tip):.3f} "
                            f"> {controls.max_crack_advance}, retrying at t={t:.4f}")
                state = self._solve(disc, history, state, t)
                tip = self._locate_tip(disc, state)

            if cycle == controls.max_adapt_cycles:
                if cycle:
                    logger.warning(f"Mesh adaptation did not settle within {controls.max_adapt_cycles} cycles")
                break
            alpha = disc.nodal_phase_field(state)
            refine = mark_refine(mesh, alpha, tip, controls.alpha_refine, controls.refine_margin)
            coarsen = set()
            if not coarsen_done:
                margin = controls.coarsen_margin
                if margin is None:
                    margin = 2.0 * math.pi * self.material.eps
                coarsen = mark_coarsen(mesh, alpha, tip, controls.coarsen_threshold, margin)
                coarsen_done = True
            fields = {"u": disc.nodal_displacement(state), "alpha": alpha, "history": history}
            new_mesh, moved, changed = execute_adaptation(mesh, refine, coarsen, fields)
            if not changed:
                break
            # same t on the new mesh, then the advance guard again
            mesh = new_mesh
            disc = Discretization(mesh, self.layout, self.material)
            history = np.clip(moved["history"], 0.0, 1.0)
            warm = disc.state_from_nodal(moved["u"], np.clip(moved["alpha"], 0.0, 1.0), step=self.step)
            state = self._solve(disc, history, warm, t)

        self.backtracking_events += backtracks
        return _Trial(mesh=mesh, disc=disc, history=history, state=state, tip=tip, t=t)

    def _accept(self, trial: _Trial, started: float) -> JSample:
        self.mesh, self.disc, self.t, self.tip = trial.mesh, trial.disc, trial.t, trial.tip
        self.state = trial.state
        self.state.step = self.step
        alpha = self.disc.nodal_phase_field(self.state)
        self.history = np.clip(np.maximum(alpha, 0.0), 0.0, 1.0)
        sample = JSample(
            step=self.step,
            t=self.t,
            tip_x=float(self.tip[0]),
            tip_y=float(self.tip[1]),
            crack_length=crack_length(self.mesh, alpha, self.material.eps),
            J=j_integral(self.state, self.disc),
            energy=self.disc.energy(self.state),
            n_dofs=self.disc.dofs.n_dofs,
        )
        self.trace.append(sample)
        self.step_times.append(time.perf_counter() - started)
        if self.controls.vtk_every and self.output_dir and self.step % self.controls.vtk_every == 0:
            self.write_fields(self.output_dir / f"state_{self.step:05d}.vtk")
        logger.info(f"Step {self.step}: t={self.t:.4f}, tip=({sample.tip_x:.3f}, {sample.tip_y:.3f}), "
                    f"length={sample.crack_length:.3f}, J={sample.J:.4f}, dofs={sample.n_dofs}")
        return sample

    def _step_with_retries(self) -> JSample:
        started = time.perf_counter()
        dt = [self.controls.dt]

        def halve(retry_state) -> None:
            dt[0] *= 0.5
            self.dt_halvings += 1
            logger.warning(f"Step {self.step} rejected ({retry_state.outcome.exception()}); "
                           f"retrying with dt={dt[0]:g}")

        retryer = Retrying(stop=stop_after_attempt(self.controls.max_dt_halvings + 1),
                           retry=retry_if_exception_type(StepRejectedError), before_sleep=halve, reraise=True)
        trial = retryer(lambda: self._advance(dt[0]))
        return self._accept(trial, started)

    def _termination(self, sample: JSample) -> Optional[str]:
        controls = self.controls
        if sample.crack_length >= controls.target_crack_length:
            return "target_crack_length"
        if controls.final_time is not None and self.t >= controls.final_time:
            return "final_time"
        if sample.tip_x >= self.mesh.domain.x1 - math.pi * self.material.eps:
            return "domain_exhausted"
        if self.step >= controls.max_steps:
            return "max_steps"
        return None

    def run(self, progress: Optional[Callable[[JSample], None]] = None) -> SimulationResult:
        started = time.perf_counter()
        step_started = time.perf_counter()
        self.state = self._solve(self.disc, self.history, self.state, self.t)
        self.tip = self._locate_tip(self.disc, self.state)
        sample = self._accept(_Trial(self.mesh, self.disc, self.history, self.state, self.tip, self.t), step_started)
        reason = self._termination(sample)
        while reason is None:
            self.step += 1
            sample = self._step_with_retries()
            if progress:
                progress(sample)
            reason = self._termination(sample)
        logger.info(f"Surfing run finished after {self.step} steps: {reason}")
        return SimulationResult(
            trace=self.trace,
            termination_reason=reason,
            step_times=self.step_times,
            mesh_statistics=self.mesh.statistics(),
            backtracking_events=self.backtracking_events,
            dt_halvings=self.dt_halvings,
            final_time=self.t,
            wall_time=time.perf_counter() - started,
            final_mesh=self.mesh,
            final_fields=self.fields(),
        )

    def fields(self) -> Dict[str, np.ndarray]:
        return {"displacement": self.disc.nodal_displacement(self.state),
                "alpha": self.disc.nodal_phase_field(self.state)}

    def write_fields(self, path: Path) -> Path:
        return write_vtk(self.mesh, path, self.fields(), title=f"surfing step {self.step}")


def simulation_layout(x: Optional[DesignVector], w: float, domain: DomainParams,
                      material: MaterialParams) -> InclusionLayout:
    """Inclusions of one scenario, restricted to those clear of the domain boundary"""
    if x is None or not domain.inclusions:
        return InclusionLayout()
    mesh_domain = crack_domain(domain.length, domain.height, material.eps, domain.h_ratio)[0]
    layout = build_layout(x, w, mesh_domain)
    strip = domain.boundary_strip
    if strip is None:
        strip = math.pi * material.eps
    return layout.interior(mesh_domain, strip)


def run_surfing_simulation(x: Optional[DesignVector], w: float, controls: Optional[StepControls] = None,
                           material: Optional[MaterialParams] = None, surfing: Optional[SurfingParams] = None,
                           domain: Optional[DomainParams] = None, output_dir: Optional[Path] = None,
                           progress: Optional[Callable[[JSample], None]] = None) -> SimulationResult:
    """
    Surfing simulation of a design in one crack-offset scenario

    Args:
        x: Design vector, None for the homogeneous matrix
        w: Crack-offset fraction
        controls: Step controls
        material: Material parameters
        surfing: K-field parameters
        domain: Domain and notch
        output_dir: Optional directory for VTK dumps
        progress: Called with every accepted sample
    """
    controls = controls or StepControls()
    material = material or MaterialParams()
    domain = domain or DomainParams()
    surfing = surfing or SurfingParams(E=material.E_matrix, nu=material.nu)
    layout = simulation_layout(x, w, domain, material)
    simulation = SurfingSimulation(layout, controls, material, surfing, domain, output_dir)
    return simulation.run(progress)
