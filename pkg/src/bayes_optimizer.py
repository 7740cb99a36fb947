#!/usr/bin/env python3
"""
Bayesian Optimizer

Constrained batch Bayesian optimization of the worst-case toughness over the
crack-offset scenarios: one Gaussian process per scenario, Monte-Carlo batch
UCB on the composite minimum, differential evolution over feasible batches
and a trust region that follows the incumbent.

Features:
- Matern-5/2 ARD Gaussian processes with multi-start marginal-likelihood fits
- Joint posterior sampling with common random numbers per iteration
- Feasible-only DE populations (clearance constraint)
- Successive domain reduction around the best design
- YAML checkpoints with exact resume
"""

import logging
import math
from concurrent.futures import Executor
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.optimize import NonlinearConstraint, differential_evolution, minimize

from microstructure_geometry import DESIGN_BOUNDS, SCENARIOS, DesignVector, MicrostructureError, design_clearance

logger = logging.getLogger(__name__)

SQRT5 = math.sqrt(5.0)
STREAMS = ("init", "fit", "de", "mc")

Evaluator = Callable[[np.ndarray, float], float]
ClearanceFn = Callable[[np.ndarray], float]


class InfeasibleSeedError(MicrostructureError):
    """Too few feasible designs found within the sampling budget"""

    def __init__(self, found: int, needed: int, draws: int):
        self.feasible_fraction = found / max(draws, 1)
        super().__init__(f"Found {found}/{needed} feasible designs in {draws} draws "
                         f"(feasible volume fraction ~ {self.feasible_fraction:.2e})")


def rng_streams(seed: int, iteration: int = 0) -> Dict[str, np.random.Generator]:
    """Named independent generators for one campaign iteration, derived from a master seed"""
    return {name: np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k, iteration)))
            for k, name in enumerate(STREAMS)}


def design_clearance_array(x: np.ndarray) -> float:
    return design_clearance(DesignVector.from_array(x))


# ------------------------------------------------------------------ settings


@dataclass
class BOSettings:
    n_initial: int = 20
    iterations: int = 20
    beta: float = 4.0
    n_mc: int = 256
    gp_restarts: int = 5
    noise: float = 1e-8
    z_min: float = 1.0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class DEConfig:
    """Differential evolution over stacked batches of q designs"""
    population_factor: int = 15
    batch_size: int = 5
    strategy: str = "rand1bin"
    mutation: float = 0.7
    recombination: float = 0.9
    maxiter: int = 200
    tol: float = 0.01
    seed_budget_factor: int = 50

    def population_points(self, dim: int) -> int:
        """N * q^2 * d feasible design points, grouped into individuals of q points"""
        return self.population_factor * self.batch_size ** 2 * dim

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TrustRegionSettings:
    enabled: bool = True
    gamma_down: float = 0.7
    gamma_up: float = 1.3
    floor: float = 0.1

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


# ------------------------------------------------------------------ Gaussian processes


def matern52(a: np.ndarray, b: np.ndarray, lengthscales: np.ndarray, variance: float) -> np.ndarray:
    """Matern-5/2 kernel with per-dimension lengthscales over the last axis"""
    diff = (a[..., :, None, :] - b[..., None, :, :]) / lengthscales
    s = SQRT5 * np.sqrt(np.maximum(np.sum(diff * diff, axis=-1), 0.0))
    return variance * (1.0 + s + s * s / 3.0) * np.exp(-s)


class GaussianProcess:
    """
    Zero-mean GP on standardized outputs with a fixed jitter noise

    Args:
        X: Inputs in the unit box, shape (n, d)
        y: Outputs, shape (n,)
        noise: Noise variance in standardized units
    """

    LOG_LENGTH_BOUNDS = (math.log(1e-2), math.log(1e1))
    LOG_VARIANCE_BOUNDS = (math.log(1e-2), math.log(1e2))

    def __init__(self, X: np.ndarray, y: np.ndarray, noise: float = 1e-8):
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float)
        self.noise = noise
        self.y_mean = float(y.mean())
        spread = float(y.std())
        self.degenerate = spread < 1e-12
        self.y_std = 1.0 if self.degenerate else spread
        self.z = (y - self.y_mean) / self.y_std
        self.lengthscales = np.full(self.X.shape[1], 0.5)
        self.variance = 1.0

    def _factor(self, lengthscales: np.ndarray, variance: float):
        K = matern52(self.X, self.X, lengthscales, variance) + self.noise * np.eye(len(self.X))
        return cho_factor(K, lower=True)

    def negative_log_likelihood(self, theta: np.ndarray) -> float:
        lengthscales, variance = np.exp(theta[:-1]), float(np.exp(theta[-1]))
        try:
            factor = self._factor(lengthscales, variance)
        except np.linalg.LinAlgError:
            return 1e25
        alpha = cho_solve(factor, self.z)
        return float(0.5 * self.z @ alpha + np.sum(np.log(np.diag(factor[0])))
                     + 0.5 * len(self.z) * math.log(2.0 * math.pi))

    def fit(self, rng: np.random.Generator, restarts: int = 5) -> "GaussianProcess":
        if self.degenerate:
            logger.warning("All training outputs equal; using prior hyperparameters")
        else:
            d = self.X.shape[1]
            bounds = [self.LOG_LENGTH_BOUNDS] * d + [self.LOG_VARIANCE_BOUNDS]
            starts = [np.concatenate([np.full(d, math.log(0.5)), [0.0]])]
            lo, hi = np.array(bounds).T
            starts += [rng.uniform(lo, hi) for _ in range(restarts)]
            best = None
            for theta0 in starts:
                result = minimize(self.negative_log_likelihood, theta0, method="L-BFGS-B", bounds=bounds)
                if best is None or result.fun < best.fun:
                    best = result
            self.lengthscales = np.exp(best.x[:-1])
            self.variance = float(np.exp(best.x[-1]))
            logger.debug(f"GP fit: nll {best.fun:.4f}, lengthscales {np.round(self.lengthscales, 3)}, "
                         f"variance {self.variance:.3g}")
        self._cho = self._factor(self.lengthscales, self.variance)
        self._alpha = cho_solve(self._cho, self.z)
        return self

    def predict(self, Xs: np.ndarray, full_cov: bool = False) -> Tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance (or covariance) in output units"""
        Xs = np.atleast_2d(Xs)
        ks = matern52(Xs, self.X, self.lengthscales, self.variance)
        mean = ks @ self._alpha
        v = solve_triangular(self._cho[0], ks.T, lower=True)
        if full_cov:
            cov = matern52(Xs, Xs, self.lengthscales, self.variance) - v.T @ v
            return self.y_mean + self.y_std * mean, self.y_std ** 2 * cov
        var = np.maximum(self.variance - np.sum(v * v, axis=0), 0.0)
        return self.y_mean + self.y_std * mean, self.y_std ** 2 * var

    def joint_moments(self, batches: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Mean (S, q) and covariance (S, q, q) of every batch of q points"""
        S, q, d = batches.shape
        flat = batches.reshape(-1, d)
        ks = matern52(flat, self.X, self.lengthscales, self.variance)
        mean = (ks @ self._alpha).reshape(S, q)
        v = solve_triangular(self._cho[0], ks.T, lower=True).reshape(len(self.X), S, q)
        prior = matern52(batches, batches, self.lengthscales, self.variance)
        cov = prior - np.einsum("nsa,nsb->sab", v, v)
        return self.y_mean + self.y_std * mean, self.y_std ** 2 * cov


def _batched_cholesky(cov: np.ndarray, scale: float) -> np.ndarray:
    q = cov.shape[-1]
    eye = np.eye(q)
    jitter = 1e-10 * max(scale, 1e-300)
    for _ in range(6):
        try:
            return np.linalg.cholesky(cov + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 100.0
    w, V = np.linalg.eigh(cov)
    return V * np.sqrt(np.maximum(w, 0.0))[..., None, :]


@dataclass
class GPSurrogate:
    """Independent GPs per scenario over inputs normalized to the current bounds"""
    bounds: np.ndarray
    scenarios: Tuple[float, ...]
    models: List[GaussianProcess] = field(default_factory=list)

    def normalize(self, X: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return (np.asarray(X, dtype=float) - lo) / np.where(hi > lo, hi - lo, 1.0)

    @classmethod
    def fit(cls, X: np.ndarray, Y: np.ndarray, bounds: np.ndarray, scenarios: Sequence[float] = SCENARIOS,
            rng: Optional[np.random.Generator] = None, restarts: int = 5, noise: float = 1e-8) -> "GPSurrogate":
        """
        Args:
            X: Designs, shape (n, d)
            Y: Scenario outputs, shape (n, n_scenarios); NaN marks a failed run
            bounds: Normalization box, shape (d, 2)
        """
        rng = rng or np.random.default_rng(0)
        surrogate = cls(bounds=np.asarray(bounds, dtype=float), scenarios=tuple(scenarios))
        U = surrogate.normalize(X)
        Y = np.asarray(Y, dtype=float).reshape(len(U), -1)
        for k, w in enumerate(surrogate.scenarios):
            ok = np.isfinite(Y[:, k])
            if len(np.unique(U[ok], axis=0)) < 2:
                raise ValueError(f"Scenario w={w} needs at least two distinct training points")
            surrogate.models.append(GaussianProcess(U[ok], Y[ok, k], noise).fit(rng, restarts))
        return surrogate

    def predict(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Mean and variance, each shape (n, n_scenarios)"""
        U = self.normalize(np.atleast_2d(X))
        moments = [gp.predict(U) for gp in self.models]
        return np.column_stack([m for m, _ in moments]), np.column_stack([v for _, v in moments])

    def composite_samples(self, batches: np.ndarray, base_samples: np.ndarray) -> np.ndarray:
        """
        Joint posterior samples of min over scenarios

        Args:
            batches: Designs, shape (S, q, d)
            base_samples: Standard normals, shape (n_mc, n_scenarios, q_max)

        Returns:
            Samples of shape (S, n_mc, q)
        """
        S, q, _ = batches.shape
        U = self.normalize(batches)
        composite = None
        for k, gp in enumerate(self.models):
            mean, cov = gp.joint_moments(U)
            L = _batched_cholesky(cov, gp.variance * gp.y_std ** 2)
            draws = mean[:, None, :] + np.einsum("sab,mb->sma", L, base_samples[:, k, :q])
            composite = draws if composite is None else np.minimum(composite, draws)
        return composite


def fit(record: "CampaignRecord", settings: BOSettings, rng: np.random.Generator) -> GPSurrogate:
    """Surrogate over every evaluated design, normalized to the record's current bounds"""
    X, Y = record.training_data()
    return GPSurrogate.fit(X, Y, record.bounds, record.scenarios, rng, settings.gp_restarts, settings.noise)


# ------------------------------------------------------------------ acquisition


def batch_acquisition(surrogate: GPSurrogate, batches: np.ndarray, beta: float, base_samples: np.ndarray,
                      chunk: int = 256) -> np.ndarray:
    """qUCB of the composite objective for every batch, shape (S,)"""
    batches = np.asarray(batches, dtype=float)
    factor = math.sqrt(beta * math.pi / 2.0)
    out = np.empty(len(batches))
    for start in range(0, len(batches), chunk):
        samples = surrogate.composite_samples(batches[start:start + chunk], base_samples)
        mean = samples.mean(axis=1, keepdims=True)
        stat = mean + factor * np.abs(samples - mean)
        out[start:start + chunk] = stat.max(axis=2).mean(axis=1)
    return out


def base_normals(n_mc: int, n_scenarios: int, q: int, rng: np.random.Generator) -> np.ndarray:
    """Common random numbers shared by every acquisition call of one proposal"""
    return rng.standard_normal((n_mc, n_scenarios, q))


def acquisition(surrogate: GPSurrogate, X: np.ndarray, beta: float, n_mc: Union[int, np.ndarray] = 256,
                rng: Optional[np.random.Generator] = None) -> float:
    """
    Monte-Carlo batch UCB of a single batch

    Args:
        X: Batch of shape (q, d)
        n_mc: Number of draws, or fixed base samples of shape (n_mc, n_scenarios, q_max)
        rng: Generator for fresh base samples (seed 0 when omitted)
    """
    X = np.atleast_2d(X)
    if isinstance(n_mc, np.ndarray):
        base = n_mc
    else:
        base = base_normals(int(n_mc), len(surrogate.models), len(X), rng or np.random.default_rng(0))
    return float(batch_acquisition(surrogate, X[None], beta, base)[0])


def acquisition_samples(surrogate: GPSurrogate, X: np.ndarray, base_samples: np.ndarray) -> np.ndarray:
    """Composite samples of one batch, shape (n_mc, q)"""
    return surrogate.composite_samples(np.atleast_2d(X)[None], base_samples)[0]


# ------------------------------------------------------------------ proposals


def sample_feasible(bounds: np.ndarray, n: int, clearance_fn: ClearanceFn, z_min: float,
                    rng: np.random.Generator, budget_factor: int = 50, chunk: int = 256) -> np.ndarray:
    """n uniform designs inside bounds with clearance >= z_min"""
    bounds = np.asarray(bounds, dtype=float)
    budget = budget_factor * max(n, 1)
    found: List[np.ndarray] = []
    draws = 0
    while len(found) < n and draws < budget:
        size = min(chunk, budget - draws)
        candidates = rng.uniform(bounds[:, 0], bounds[:, 1], size=(size, len(bounds)))
        draws += size
        for x in candidates:
            if clearance_fn(x) >= z_min:
                found.append(x)
                if len(found) == n:
                    break
    if len(found) < n:
        raise InfeasibleSeedError(len(found), n, draws)
    logger.debug(f"Sampled {n} feasible designs from {draws} draws")
    return np.array(found)


def _stacked_clearance(clearance_fn: ClearanceFn, q: int, d: int) -> Callable[[np.ndarray], np.ndarray]:
    def constraint(flat: np.ndarray) -> np.ndarray:
        flat = np.asarray(flat, dtype=float)
        if flat.ndim == 1:
            return np.array([clearance_fn(x) for x in flat.reshape(q, d)])
        batches = flat.T.reshape(-1, q, d)
        return np.array([[clearance_fn(x) for x in batch] for batch in batches]).T
    return constraint


def propose_batch(surrogate: GPSurrogate, bounds: np.ndarray, z_min: float, config: DEConfig, beta: float,
                  base_samples: np.ndarray, rng: np.random.Generator,
                  clearance_fn: ClearanceFn = design_clearance_array) -> np.ndarray:
    """
    Maximize the batch acquisition over feasible batches with differential evolution

    Returns:
        Proposed designs, shape (q, d)
    """
    bounds = np.asarray(bounds, dtype=float)
    q, d = config.batch_size, len(bounds)
    points = sample_feasible(bounds, config.population_points(d), clearance_fn, z_min, rng,
                             config.seed_budget_factor)
    population = points.reshape(-1, q * d)

    def objective(flat: np.ndarray) -> np.ndarray:
        batches = np.asarray(flat, dtype=float).T.reshape(-1, q, d)
        return -batch_acquisition(surrogate, batches, beta, base_samples)

    result = differential_evolution(
        objective,
        bounds=np.tile(bounds, (q, 1)),
        strategy=config.strategy,
        maxiter=config.maxiter,
        mutation=config.mutation,
        recombination=config.recombination,
        tol=config.tol,
        init=population,
        constraints=NonlinearConstraint(_stacked_clearance(clearance_fn, q, d), z_min, np.inf),
        polish=False,
        seed=int(rng.integers(2 ** 31 - 1)),
        vectorized=True,
        updating="deferred",
    )
    batch = result.x.reshape(q, d)
    if not all(clearance_fn(x) >= z_min for x in batch):
        logger.warning("DE returned an infeasible batch; falling back to the best seed batch")
        values = objective(population.T)
        batch = population[int(np.argmin(values))].reshape(q, d)
    logger.info(f"Proposed batch of {q}: acquisition {-float(result.fun):.4f} after {result.nit} generations")
    return batch


def resize_box(bounds: np.ndarray, center: np.ndarray, success: bool, global_bounds: np.ndarray,
               settings: TrustRegionSettings) -> np.ndarray:
    """Scale the edges, recenter on a point and shift the box back inside the global bounds"""
    bounds = np.asarray(bounds, dtype=float)
    global_bounds = np.asarray(global_bounds, dtype=float)
    g_lo, g_hi = global_bounds[:, 0], global_bounds[:, 1]
    g_edges = g_hi - g_lo
    edges = (bounds[:, 1] - bounds[:, 0]) * (settings.gamma_up if success else settings.gamma_down)
    edges = np.clip(edges, settings.floor * g_edges, g_edges)
    lo = np.asarray(center, dtype=float) - 0.5 * edges
    lo = np.clip(lo, g_lo, g_hi - edges)
    return np.column_stack([lo, lo + edges])


def update_trust_region(record: "CampaignRecord", success: bool,
                        settings: Optional[TrustRegionSettings] = None) -> np.ndarray:
    """New trust-region bounds around the record's incumbent; unchanged without a complete design"""
    settings = settings or TrustRegionSettings()
    best = record.best
    if not settings.enabled or best is None:
        return record.bounds.copy()
    return resize_box(record.bounds, np.array(best.x), success, record.global_bounds, settings)


# ------------------------------------------------------------------ campaign


@dataclass
class Evaluation:
    design_id: int
    x: List[float]
    values: Dict[float, Optional[float]]
    iteration: int = 0
    errors: Dict[float, str] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return all(v is not None for v in self.values.values())

    @property
    def worst(self) -> Optional[float]:
        return min(self.values.values()) if self.complete and self.values else None

    def to_dict(self) -> Dict[str, Any]:
        return {"design_id": self.design_id, "x": [float(v) for v in self.x], "iteration": self.iteration,
                "values": {float(w): (None if v is None else float(v)) for w, v in self.values.items()},
                "errors": {float(w): e for w, e in self.errors.items()}}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Evaluation":
        return cls(design_id=int(data["design_id"]), x=[float(v) for v in data["x"]],
                   values={float(w): (None if v is None else float(v)) for w, v in data["values"].items()},
                   iteration=int(data.get("iteration", 0)),
                   errors={float(w): str(e) for w, e in (data.get("errors") or {}).items()})


@dataclass
class CampaignRecord:
    global_bounds: np.ndarray
    bounds: np.ndarray
    scenarios: Tuple[float, ...] = SCENARIOS
    evaluations: List[Evaluation] = field(default_factory=list)
    iteration: int = 0
    seed: int = 0
    config_hash: str = ""
    convergence: List[Dict[str, float]] = field(default_factory=list)

    @property
    def best(self) -> Optional[Evaluation]:
        complete = [e for e in self.evaluations if e.worst is not None]
        return max(complete, key=lambda e: (e.worst, -e.design_id)) if complete else None

    @property
    def best_value(self) -> float:
        best = self.best
        return best.worst if best else -math.inf

    def training_data(self) -> Tuple[np.ndarray, np.ndarray]:
        X = np.array([e.x for e in self.evaluations], dtype=float)
        Y = np.array([[np.nan if e.values.get(w) is None else e.values[w] for w in self.scenarios]
                      for e in self.evaluations], dtype=float)
        return X, Y

    def log_progress(self) -> None:
        self.convergence.append({"iteration": self.iteration, "designs": len(self.evaluations),
                                 "simulations": len(self.evaluations) * len(self.scenarios),
                                 "best": self.best_value})

    def convergence_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.convergence, columns=["iteration", "designs", "simulations", "best"])

    def evaluations_frame(self) -> pd.DataFrame:
        rows = []
        for e in self.evaluations:
            for w in self.scenarios:
                rows.append({"design_id": e.design_id, "iteration": e.iteration,
                             **{f"x{k + 1}": v for k, v in enumerate(e.x)}, "w": w,
                             "G_eff": e.values.get(w), "error": e.errors.get(w, "")})
        return pd.DataFrame(rows)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "iteration": self.iteration,
            "scenarios": [float(w) for w in self.scenarios],
            "global_bounds": self.global_bounds.tolist(),
            "bounds": self.bounds.tolist(),
            "evaluations": [e.to_dict() for e in self.evaluations],
            "convergence": self.convergence,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CampaignRecord":
        return cls(global_bounds=np.array(data["global_bounds"], dtype=float),
                   bounds=np.array(data["bounds"], dtype=float),
                   scenarios=tuple(float(w) for w in data["scenarios"]),
                   evaluations=[Evaluation.from_dict(e) for e in data.get("evaluations", [])],
                   iteration=int(data.get("iteration", 0)), seed=int(data.get("seed", 0)),
                   config_hash=str(data.get("config_hash", "")),
                   convergence=list(data.get("convergence", [])))

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False)
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path: Path) -> "CampaignRecord":
        with open(path, "r") as f:
            return cls.from_dict(yaml.safe_load(f))


def evaluate_designs(evaluator: Evaluator, designs: np.ndarray, scenarios: Sequence[float],
                     executor: Optional[Executor] = None) -> List[Tuple[Dict[float, Optional[float]], Dict[float, str]]]:
    """All (design, scenario) simulations; failures become None with the error message"""
    tasks = [(i, float(w)) for i in range(len(designs)) for w in scenarios]
    results: Dict[Tuple[int, float], Any] = {}
    if executor is not None:
        futures = {task: executor.submit(evaluator, np.array(designs[task[0]]), task[1]) for task in tasks}
        for task, future in futures.items():
            try:
                results[task] = float(future.result())
            except Exception as exc:
                results[task] = exc
    else:
        for task in tasks:
            try:
                results[task] = float(evaluator(np.array(designs[task[0]]), task[1]))
            except Exception as exc:
                results[task] = exc

    out = []
    for i in range(len(designs)):
        values: Dict[float, Optional[float]] = {}
        errors: Dict[float, str] = {}
        for w in scenarios:
            value = results[(i, float(w))]
            if isinstance(value, Exception) or not math.isfinite(value):
                logger.error(f"Design {i} scenario w={w} failed: {value}")
                values[float(w)] = None
                errors[float(w)] = str(value)
            else:
                values[float(w)] = value
        out.append((values, errors))
    return out


def _append(record: CampaignRecord, designs: np.ndarray, results, iteration: int) -> None:
    for x, (values, errors) in zip(designs, results):
        record.evaluations.append(Evaluation(design_id=len(record.evaluations), x=[float(v) for v in x],
                                             values=values, iteration=iteration, errors=errors))


def run_campaign(evaluator: Evaluator, global_bounds: np.ndarray = DESIGN_BOUNDS, z_min: float = 1.0,
                 budget: int = 20, settings: Optional[BOSettings] = None, de: Optional[DEConfig] = None,
                 trust: Optional[TrustRegionSettings] = None, clearance_fn: ClearanceFn = design_clearance_array,
                 seed: int = 0, scenarios: Sequence[float] = SCENARIOS, executor: Optional[Executor] = None,
                 checkpoint: Optional[Path] = None, record: Optional[CampaignRecord] = None,
                 config_hash: str = "") -> CampaignRecord:
    """
    Constrained batch BO of the worst-case objective

    Args:
        evaluator: (design array, w) -> toughness
        global_bounds: Design bounds, shape (d, 2)
        z_min: Minimum clearance
        budget: Number of BO iterations after the initial designs
        clearance_fn: Design array -> clearance
        executor: Optional pool for the per-iteration simulations
        checkpoint: YAML file written after the initial phase and every iteration
        record: Checkpointed record to resume from

    Returns:
        The campaign record
    """
    settings = settings or BOSettings()
    de = de or DEConfig()
    trust = trust or TrustRegionSettings()
    global_bounds = np.asarray(global_bounds, dtype=float)

    if record is None:
        record = CampaignRecord(global_bounds=global_bounds, bounds=global_bounds.copy(),
                                scenarios=tuple(float(w) for w in scenarios), seed=seed, config_hash=config_hash)
        streams = rng_streams(seed, 0)
        initial = sample_feasible(global_bounds, settings.n_initial, clearance_fn, z_min, streams["init"],
                                  de.seed_budget_factor)
        logger.info(f"Evaluating {len(initial)} initial designs x {len(record.scenarios)} scenarios")
        _append(record, initial, evaluate_designs(evaluator, initial, record.scenarios, executor), 0)
        record.log_progress()
        if checkpoint:
            record.save(checkpoint)
    else:
        logger.info(f"Resuming campaign at iteration {record.iteration} with {len(record.evaluations)} designs")

    while record.iteration < budget:
        k = record.iteration + 1
        streams = rng_streams(record.seed, k)
        incumbent = record.best_value
        surrogate = fit(record, settings, streams["fit"])
        base = base_normals(settings.n_mc, len(record.scenarios), de.batch_size, streams["mc"])
        batch = propose_batch(surrogate, record.bounds, z_min, de, settings.beta, base, streams["de"], clearance_fn)
        _append(record, batch, evaluate_designs(evaluator, batch, record.scenarios, executor), k)

        success = record.best_value > incumbent
        record.bounds = update_trust_region(record, success, trust)
        record.iteration = k
        record.log_progress()
        logger.info(f"Iteration {k}: best worst-case toughness {record.best_value:.4f} "
                    f"({'improved' if success else 'no improvement'}), {len(record.evaluations)} designs")
        if checkpoint:
            record.save(checkpoint)
    return record


def plot_convergence(record: CampaignRecord, path: Path) -> Path:
    """Best worst-case toughness against the number of evaluated designs (plotly HTML)"""
    import plotly.graph_objects as go

    frame = record.convergence_frame()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig = go.Figure(go.Scatter(x=frame["designs"], y=frame["best"], mode="lines+markers", name="best"))
    fig.update_layout(title="Worst-case toughness vs evaluated designs", xaxis_title="designs",
                      yaxis_title="best worst-case toughness", template="plotly_white")
    fig.write_html(str(path), include_plotlyjs="cdn")
    return path
