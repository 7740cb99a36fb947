#!/usr/bin/env python3
"""
Toughness Post-processing

J-integral evaluation on rectangular contours, the J trace of a surfing run,
effective-toughness extraction and the worst-case composite objective.

Features:
- Boundary-contour J from the Eshelby energy-momentum tensor
- Interior rectangular contours for path-independence checks
- Trace and toughness CSV files with provenance comment lines (pandas)
- Centered moving-average peak over a crack-tip window
- Static HTML plot of the J trace (plotly)
"""

import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd

from fracture_model import degradation, lame
from microstructure_geometry import MicrostructureError, Rectangle, SCENARIOS
from xfem_assembly import Discretization, FractureState

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["step", "t", "tip_x", "tip_y", "crack_length", "J", "energy", "n_dofs"]
TOUGHNESS_COLUMNS = ["design_id", "w", "G_eff", "x_lo", "x_hi", "half_width", "n_samples"]


class EmptyWindowError(MicrostructureError):
    """The run ended before the crack tip reached the evaluation window"""


class MissingScenarioError(MicrostructureError):
    """A crack-offset scenario has no toughness value"""


@dataclass
class JSample:
    step: int
    t: float
    tip_x: float
    tip_y: float
    crack_length: float
    J: float
    energy: float = float("nan")
    n_dofs: int = 0


@dataclass
class JTrace:
    """
    J-integral history of one simulation, ordered by accepted step

    Steps increase strictly. Pseudo-time does not: a backtracked step can be
    accepted at a t no later than the previous one.
    """
    samples: List[JSample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def append(self, sample: JSample) -> None:
        if not math.isfinite(sample.J):
            raise ValueError(f"Non-finite J at step {sample.step}")
        if self.samples and sample.step <= self.samples[-1].step:
            raise ValueError(f"Trace steps must increase: {sample.step} after {self.samples[-1].step}")
        self.samples.append(sample)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(s) for s in self.samples], columns=TRACE_COLUMNS)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "JTrace":
        trace = cls()
        for row in frame.sort_values("step").itertuples(index=False):
            trace.append(JSample(step=int(row.step), t=float(row.t), tip_x=float(row.tip_x), tip_y=float(row.tip_y),
                                 crack_length=float(row.crack_length), J=float(row.J),
                                 energy=float(getattr(row, "energy", float("nan"))),
                                 n_dofs=int(getattr(row, "n_dofs", 0))))
        return trace

    @property
    def tip_x(self) -> np.ndarray:
        return np.array([s.tip_x for s in self.samples])

    @property
    def J(self) -> np.ndarray:
        return np.array([s.J for s in self.samples])


@dataclass
class ToughnessReport:
    G_eff: float
    window: Tuple[float, float]
    half_width: int = 3
    n_samples: int = 0

    def __post_init__(self):
        if self.G_eff < 0:
            raise ValueError(f"Effective toughness must be non-negative, got {self.G_eff}")

    def to_dict(self) -> Dict[str, float]:
        return {"G_eff": self.G_eff, "x_lo": self.window[0], "x_hi": self.window[1],
                "half_width": self.half_width, "n_samples": self.n_samples}


# ------------------------------------------------------------------ CSV I/O


def write_csv(frame: pd.DataFrame, path: Path, config_hash: str = "") -> Path:
    """CSV with a leading '# config_hash: ...' comment line"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(f"# config_hash: {config_hash}\n")
        frame.to_csv(f, index=False)
    return path


def read_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def write_trace(trace: JTrace, path: Path, config_hash: str = "") -> Path:
    return write_csv(trace.to_frame(), path, config_hash)


def read_trace(path: Path) -> JTrace:
    return JTrace.from_frame(read_csv(path))


def write_toughness(rows: Iterable[Dict[str, float]], path: Path, config_hash: str = "") -> Path:
    return write_csv(pd.DataFrame(list(rows), columns=TOUGHNESS_COLUMNS), path, config_hash)


# ------------------------------------------------------------------ J-integral


def _contour_points(rect: Rectangle, spacing: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Composite 2-point Gauss points, weights and outward normals along a rectangle (CCW)"""
    gauss = np.array([0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)])
    corners = [(rect.x0, rect.y0), (rect.x1, rect.y0), (rect.x1, rect.y1), (rect.x0, rect.y1)]
    normals = [(0.0, -1.0), (1.0, 0.0), (0.0, 1.0), (-1.0, 0.0)]
    points, weights, outward = [], [], []
    for k in range(4):
        start, end = np.array(corners[k]), np.array(corners[(k + 1) % 4])
        length = float(np.linalg.norm(end - start))
        n_seg = max(int(round(length / spacing)), 1)
        s = (np.arange(n_seg)[:, None] + gauss[None, :]).ravel() / n_seg
        points.append(start + s[:, None] * (end - start))
        weights.append(np.full(len(s), 0.5 * length / n_seg))
        outward.append(np.tile(normals[k], (len(s), 1)))
    return np.vstack(points), np.concatenate(weights), np.vstack(outward)


def j_integral(state: FractureState, disc: Discretization, contour: Optional[Rectangle] = None) -> float:
    """
    J = closed integral of e1 . [Psi I - (grad u)^T sigma] . n ds

    Args:
        state: Converged state
        disc: Discretization of the state's mesh
        contour: Rectangle aligned with the finest grid; defaults to the domain boundary

    Returns:
        Crack driving force in the horizontal direction
    """
    mesh = disc.mesh
    rect = contour or mesh.domain
    points, weights, normals = _contour_points(rect, mesh.h_min)
    rows = mesh.locate(points - 1e-9 * mesh.h_min * normals)
    fields = disc.evaluate(state, points, rows)

    grad = fields["grad_u"]
    strain = 0.5 * (grad + np.swapaxes(grad, 1, 2))
    mat = disc.material
    E = np.where(fields["side"] > 0, mat.E_matrix, mat.E_inclusion)
    lam, mu = lame(E, mat.nu)
    trace = strain[:, 0, 0] + strain[:, 1, 1]
    sigma = lam[:, None, None] * trace[:, None, None] * np.eye(2) + 2.0 * mu[:, None, None] * strain
    g, _, _ = degradation(np.clip(fields["alpha"], 0.0, 1.0), mat)
    g = np.where(fields["side"] > 0, g, 1.0)
    sigma = g[:, None, None] * sigma
    psi = 0.5 * np.einsum("nij,nij->n", sigma, strain)
    traction_work = np.einsum("nk,nkj,nj->n", grad[:, :, 0], sigma, normals)
    return float(np.sum(weights * (psi * normals[:, 0] - traction_work)))


# ------------------------------------------------------------------ toughness


def moving_average(values: np.ndarray, half_width: int = 3) -> np.ndarray:
    """Centered moving average over 2*half_width+1 samples, shrinking at the ends"""
    series = pd.Series(np.asarray(values, dtype=float))
    return series.rolling(window=2 * half_width + 1, center=True, min_periods=1).mean().to_numpy()


def smoothed_j(trace: JTrace, half_width: int = 3) -> np.ndarray:
    return moving_average(trace.J, half_width)


def effective_toughness(trace: JTrace, window: Tuple[float, float], half_width: int = 3) -> ToughnessReport:
    """Maximum of the moving average of J, taken over the samples with tip_x inside the window only"""
    x_lo, x_hi = window
    inside = (trace.tip_x >= x_lo) & (trace.tip_x <= x_hi) if len(trace) else np.zeros(0, dtype=bool)
    if not inside.any():
        reached = float(trace.tip_x.max()) if len(trace) else float("nan")
        raise EmptyWindowError(f"No samples with crack tip in [{x_lo}, {x_hi}]; furthest tip at {reached}")
    smoothed = moving_average(trace.J[inside], half_width)
    return ToughnessReport(G_eff=float(max(smoothed.max(), 0.0)), window=(float(x_lo), float(x_hi)),
                           half_width=half_width, n_samples=int(inside.sum()))


def worst_case_objective(reports: Mapping[float, Union[ToughnessReport, float, None]],
                         scenarios: Iterable[float] = SCENARIOS) -> float:
    """Minimum toughness over the crack-offset scenarios"""
    values = []
    for w in scenarios:
        match = [key for key in reports if abs(float(key) - w) < 1e-12]
        if not match:
            raise MissingScenarioError(f"No toughness for scenario w={w}")
        report = reports[match[0]]
        if report is None:
            raise MissingScenarioError(f"Scenario w={w} failed")
        values.append(report.G_eff if isinstance(report, ToughnessReport) else float(report))
    return float(min(values))


def plot_trace(trace: JTrace, path: Path, window: Optional[Tuple[float, float]] = None,
               half_width: int = 3, title: str = "J-integral") -> Path:
    """Static HTML plot of J and smoothed J against the crack-tip position"""
    import plotly.graph_objects as go

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=trace.tip_x, y=trace.J, mode="lines+markers", name="J"))
    if len(trace):
        fig.add_trace(go.Scatter(x=trace.tip_x, y=smoothed_j(trace, half_width), mode="lines",
                                 name=f"moving average ({2 * half_width + 1})"))
    if window is not None:
        fig.add_vrect(x0=window[0], x1=window[1], fillcolor="gray", opacity=0.15, line_width=0)
    fig.update_layout(title=title, xaxis_title="crack tip x", yaxis_title="J", template="plotly_white")
    fig.write_html(str(path), include_plotlyjs="cdn")
    return path
