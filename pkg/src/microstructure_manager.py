#!/usr/bin/env python3
"""
Microstructure Manager - Main Orchestrator

Command-line entry point tying the pipeline together:
- simulate: surfing runs of one design for the configured crack offsets
- sweep: worst-case landscape over one or two design parameters
- optimize: constrained batch Bayesian optimization campaign (resumable)
- report: re-derive the effective toughness of an existing trace
"""

import argparse
import hashlib
import logging
import logging.handlers
import math
import os
import shutil
import sys
from concurrent.futures import Executor, ProcessPoolExecutor
from dataclasses import replace
from functools import partial
from itertools import product
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import colorlog
import numpy as np
import pandas as pd
import yaml
from dotenv import load_dotenv

from adaptive_mesh import write_vtk
from bayes_optimizer import CampaignRecord, InfeasibleSeedError, design_clearance_array, plot_convergence, run_campaign
from microstructure_geometry import DesignVector, MicrostructureError, design_clearance
from run_config import (ConfigError, ConfigHashMismatchError, RunConfig, apply_overrides, config_hash, load_config,
                        save_config)
from surfing_solver import SimulationResult, run_surfing_simulation
from toughness import (ToughnessReport, effective_toughness, plot_trace, read_trace, write_csv, write_toughness,
                       write_trace)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_SIMULATION = 4
EXIT_RESUME = 5

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def setup_logging(config: RunConfig, verbose: bool = False) -> None:
    """Colored console output plus an optional rotating log file"""
    settings = config.logging
    level = logging.DEBUG if verbose else getattr(logging, str(settings.level).upper(), logging.INFO)
    root = logging.getLogger()
    root.setLevel(level)
    for handler in list(root.handlers):
        root.removeHandler(handler)

    console = colorlog.StreamHandler()
    console.setFormatter(colorlog.ColoredFormatter("%(log_color)s" + LOG_FORMAT))
    root.addHandler(console)

    if settings.file:
        log_path = Path(settings.file)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.handlers.RotatingFileHandler(log_path, maxBytes=settings.max_size,
                                                            backupCount=settings.backup_count)
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(file_handler)


def run_key(x: Optional[np.ndarray], w: float) -> str:
    """Directory name of one (design, scenario) run"""
    values = "homogeneous" if x is None else ",".join(f"{v:.12g}" for v in np.asarray(x, dtype=float))
    return hashlib.sha256(f"{values}|{w:.12g}".encode("utf-8")).hexdigest()[:10]


def run_scenario(x: Optional[np.ndarray], w: float, config: RunConfig,
                 output_dir: Optional[Path] = None) -> Tuple[SimulationResult, ToughnessReport]:
    """One surfing simulation and its toughness; writes trace.csv when output_dir is given"""
    controls = config.solver
    if config.run.dump_fields and controls.vtk_every == 0:
        controls = replace(controls, vtk_every=10)
    design = None if x is None else DesignVector.from_array(x)
    result = run_surfing_simulation(design, w, controls=controls, material=config.material,
                                    surfing=config.surfing_params(), domain=config.domain,
                                    output_dir=output_dir if config.run.dump_fields else None)
    if output_dir is not None:
        output_dir = Path(output_dir)
        write_trace(result.trace, output_dir / "trace.csv", config_hash(config))
        if config.run.dump_fields and result.final_mesh is not None:
            write_vtk(result.final_mesh, output_dir / "final.vtk", result.final_fields, title=f"w={w:g}")
    report = effective_toughness(result.trace, config.window, config.postproc.half_width)
    return result, report


def simulate_toughness(x: Optional[np.ndarray], w: float, config: RunConfig,
                       runs_dir: Optional[Path] = None) -> float:
    """Evaluator (x, w) -> G_eff used by sweeps and campaigns"""
    output_dir = Path(runs_dir) / run_key(x, w) if runs_dir else None
    _, report = run_scenario(x, w, config, output_dir)
    return report.G_eff


def _scenario_task(x: Optional[np.ndarray], w: float, config: RunConfig, output_dir: Path) -> Dict[str, Any]:
    result, report = run_scenario(x, w, config, output_dir)
    plot_trace(result.trace, output_dir / "trace.html", config.window, config.postproc.half_width,
               title=f"J-integral, w={w:g}")
    return {"summary": result.summary(), "report": report.to_dict()}


class MicrostructureManager:
    """
    Runs the commands of one configuration into one output directory

    Args:
        config: Run configuration (overrides already applied)
        output_dir: Artifact directory
    """

    def __init__(self, config: RunConfig, output_dir: Optional[Path] = None):
        self.config = config
        self.output_dir = Path(output_dir or config.run.out)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.config_hash = config_hash(config)
        self.workers = config.run.workers
        logger.info(f"Output directory {self.output_dir}, config hash {self.config_hash}, {self.workers} worker(s)")

    def _executor(self) -> Optional[Executor]:
        return ProcessPoolExecutor(max_workers=self.workers) if self.workers > 1 else None

    def write_summary(self, summary: Dict[str, Any]) -> Path:
        path = self.output_dir / "summary.yaml"
        data = {"config_hash": self.config_hash, **summary}
        with open(path, "w") as f:
            yaml.safe_dump(data, f, sort_keys=False)
        return path

    def _design(self) -> Optional[np.ndarray]:
        if not self.config.domain.inclusions:
            return None
        return self.config.design_vector().to_array()

    # ---------------------------------------------------------------- simulate

    def simulate(self, scenarios: Optional[Sequence[float]] = None) -> Dict[str, Any]:
        """Surfing runs of the configured design; raises InfeasibleDesign on a clearance violation"""
        config = self.config
        scenarios = list(scenarios) if scenarios is not None else config.scenarios
        x = self._design()
        clearance_value = None
        if x is not None:
            clearance_value = design_clearance(DesignVector.from_array(x))
            if clearance_value < config.bayesopt.z_min:
                raise InfeasibleDesign(clearance_value, config.bayesopt.z_min)
        save_config(config, self.output_dir / "config.yaml")

        tasks = {w: (x, w, config, self.output_dir / f"w_{w:g}") for w in scenarios}
        results: Dict[float, Dict[str, Any]] = {}
        executor = self._executor()
        try:
            if executor is None:
                for w, args in tasks.items():
                    results[w] = _scenario_task(*args)
            else:
                futures = {w: executor.submit(_scenario_task, *args) for w, args in tasks.items()}
                results = {w: future.result() for w, future in futures.items()}
        finally:
            if executor is not None:
                executor.shutdown()

        rows = [{"design_id": 0, "w": w, **results[w]["report"]} for w in scenarios]
        write_toughness(rows, self.output_dir / "toughness.csv", self.config_hash)
        worst = min(row["G_eff"] for row in rows)
        summary = {
            "command": "simulate",
            "design": None if x is None else DesignVector.from_array(x).to_dict(),
            "clearance": clearance_value,
            "worst_case_toughness": worst,
            "scenarios": {float(w): {**results[w]["summary"], "G_eff": results[w]["report"]["G_eff"]}
                          for w in scenarios},
        }
        logger.info(f"Worst-case effective toughness {worst:.4f} over {len(scenarios)} scenario(s)")
        return summary

    # ---------------------------------------------------------------- sweep

    def sweep(self, evaluator=None) -> Tuple[pd.DataFrame, pd.DataFrame]:
        """Long-format landscape (one row per grid point and scenario) and its composite minimum"""
        config = self.config
        grid = config.grid()
        names = list(grid)
        base = config.design_vector()
        evaluator = evaluator or partial(simulate_toughness, config=config, runs_dir=self.output_dir / "runs")
        points = [dict(zip(names, (float(v) for v in values))) for values in product(*grid.values())]

        designs: List[Tuple[Dict[str, float], np.ndarray, float]] = []
        for params in points:
            x = base.with_values(**params)
            designs.append((params, x.to_array(), design_clearance(x)))

        executor = self._executor()
        futures: Dict[Tuple[int, float], Any] = {}
        try:
            for i, (params, x, clearance_value) in enumerate(designs):
                if clearance_value < config.bayesopt.z_min:
                    continue
                for w in config.scenarios:
                    if executor is None:
                        futures[(i, w)] = _call(evaluator, x, w)
                    else:
                        futures[(i, w)] = executor.submit(evaluator, x, w)
            rows = []
            for i, (params, x, clearance_value) in enumerate(designs):
                feasible = clearance_value >= config.bayesopt.z_min
                for w in config.scenarios:
                    value, error = math.nan, ""
                    if feasible:
                        outcome = futures[(i, w)]
                        if executor is not None:
                            outcome = _call(lambda: outcome.result())
                        value, error = outcome
                    rows.append({**params, "w": w, "G_eff": value, "infeasible": not feasible,
                                 "clearance": clearance_value, "error": error})
        finally:
            if executor is not None:
                executor.shutdown()

        frame = pd.DataFrame(rows, columns=names + ["w", "G_eff", "infeasible", "clearance", "error"])
        composite = (frame.groupby(names, sort=False)
                     .agg(G_eff_min=("G_eff", lambda s: s.min(skipna=False)), infeasible=("infeasible", "first"))
                     .reset_index())
        write_csv(frame, self.output_dir / "sweep.csv", self.config_hash)
        write_csv(composite, self.output_dir / "sweep_composite.csv", self.config_hash)
        logger.info(f"Sweep over {names}: {len(points)} grid points, "
                    f"{int((~composite['infeasible']).sum())} feasible")
        return frame, composite

    # ---------------------------------------------------------------- optimize

    def optimize(self, resume: bool = False, evaluator=None) -> CampaignRecord:
        config = self.config
        checkpoint = self.output_dir / "campaign.yaml"
        record = None
        if resume:
            if not checkpoint.exists():
                raise ConfigError(f"No checkpoint at {checkpoint} to resume from")
            record = CampaignRecord.load(checkpoint)
            if record.config_hash != self.config_hash:
                raise ConfigHashMismatchError(f"Checkpoint hash {record.config_hash} differs from "
                                              f"config hash {self.config_hash}")
        runs_dir = self.output_dir / "runs"
        evaluator = evaluator or partial(simulate_toughness, config=config, runs_dir=runs_dir)
        save_config(config, self.output_dir / "config.yaml")

        executor = self._executor()
        try:
            record = run_campaign(
                evaluator,
                global_bounds=config.global_bounds(),
                z_min=config.bayesopt.z_min,
                budget=config.bayesopt.iterations,
                settings=config.bayesopt,
                de=config.de,
                trust=config.trust_region,
                clearance_fn=design_clearance_array,
                seed=config.run.seed,
                scenarios=config.scenarios,
                executor=executor,
                checkpoint=checkpoint,
                record=record,
                config_hash=self.config_hash,
            )
        finally:
            if executor is not None:
                executor.shutdown()

        write_csv(record.convergence_frame(), self.output_dir / "convergence.csv", self.config_hash)
        write_csv(record.evaluations_frame(), self.output_dir / "evaluations.csv", self.config_hash)
        plot_convergence(record, self.output_dir / "convergence.html")
        self._collect_best(record, runs_dir)
        return record

    def _collect_best(self, record: CampaignRecord, runs_dir: Path) -> None:
        best = record.best
        if best is None:
            logger.warning("No design completed every scenario; nothing to collect")
            return
        x = np.array(best.x)
        for w in record.scenarios:
            source = runs_dir / run_key(x, w) / "trace.csv"
            if source.exists():
                target = self.output_dir / "best" / f"w_{w:g}"
                target.mkdir(parents=True, exist_ok=True)
                shutil.copy2(source, target / "trace.csv")
        with open(self.output_dir / "best_design.yaml", "w") as f:
            yaml.safe_dump({"design_id": best.design_id,
                            "x": DesignVector.from_array(x).to_dict(),
                            "values": {float(w): v for w, v in best.values.items()},
                            "worst_case_toughness": best.worst}, f, sort_keys=False)
        logger.info(f"Best design #{best.design_id}: worst-case toughness {best.worst:.4f}")

    # ---------------------------------------------------------------- report

    def report(self, trace_path: Path, window: Optional[Tuple[float, float]] = None,
               half_width: Optional[int] = None) -> ToughnessReport:
        """Effective toughness of an existing trace with (possibly different) smoothing"""
        trace_path = Path(trace_path)
        window = window or self.config.window
        half_width = half_width if half_width is not None else self.config.postproc.half_width
        trace = read_trace(trace_path)
        result = effective_toughness(trace, window, half_width)
        write_toughness([{"design_id": 0, "w": math.nan, **result.to_dict()}],
                        self.output_dir / "toughness.csv", self.config_hash)
        plot_trace(trace, self.output_dir / "trace.html", window, half_width)
        logger.info(f"Effective toughness {result.G_eff:.4f} from {trace_path} "
                    f"(window {window}, half width {half_width})")
        return result


class InfeasibleDesign(MicrostructureError):
    """The configured design violates the clearance constraint"""

    def __init__(self, clearance_value: float, z_min: float):
        self.clearance = clearance_value
        self.z_min = z_min
        super().__init__(f"Design clearance {clearance_value:.4f} is below z_min {z_min:g}")


def _call(fn, *args) -> Tuple[float, str]:
    """(value, error message) of one evaluation; failures become NaN"""
    try:
        return float(fn(*args)), ""
    except Exception as e:
        logger.error(f"Evaluation failed: {e}")
        return math.nan, str(e)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=os.getenv("MICROSTRUCTURE_CONFIG"),
                        help="Path to microstructure config YAML")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Override a config value, e.g. solver.dt=0.005 (repeatable)")
    common.add_argument("--seed", type=int, help="Master random seed")
    common.add_argument("--workers", type=int, help="Number of worker processes")
    common.add_argument("--out", type=str, default=os.getenv("MICROSTRUCTURE_OUTPUT"), help="Output directory")
    common.add_argument("--dump-fields", action="store_true", help="Write VTK field dumps")
    common.add_argument("--verbose", "-v", action="store_true", help="Debug logging")

    parser = argparse.ArgumentParser(description="Microstructure toughness simulation and optimization")
    commands = parser.add_subparsers(dest="command", required=True)
    simulate = commands.add_parser("simulate", parents=[common], help="Simulate one design")
    simulate.add_argument("--w", type=float, action="append", help="Crack-offset scenario (repeatable)")
    commands.add_parser("sweep", parents=[common], help="Sweep one or two design parameters")
    optimize = commands.add_parser("optimize", parents=[common], help="Run a Bayesian optimization campaign")
    optimize.add_argument("--resume", action="store_true", help="Resume from the campaign checkpoint")
    report = commands.add_parser("report", parents=[common], help="Re-derive toughness from a trace")
    report.add_argument("trace", type=str, help="Path to trace.csv")
    report.add_argument("--window", type=float, nargs=2, metavar=("X_LO", "X_HI"), help="Crack-tip window")
    report.add_argument("--half-width", type=int, help="Moving-average half width")
    return parser


def _finish(manager: Optional[MicrostructureManager], status: str, code: int, **details: Any) -> int:
    if manager is not None:
        manager.write_summary({"status": status, "exit_code": code, **details})
    for key, value in details.items():
        if not isinstance(value, (dict, list)):
            print(f"{key}: {value}")
    print(f"status: {status}")
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    """CLI entry point"""
    load_dotenv()
    args = build_parser().parse_args(argv)

    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.workers is not None:
        overrides.append(f"run.workers={args.workers}")
    if args.out:
        overrides.append(f"run.out={args.out}")
    if args.dump_fields:
        overrides.append("run.dump_fields=true")

    manager = None
    try:
        config = apply_overrides(load_config(args.config), overrides)
        setup_logging(config, args.verbose)
        manager = MicrostructureManager(config)

        if args.command == "simulate":
            summary = manager.simulate(args.w)
            return _finish(manager, "ok", EXIT_OK, **summary)
        if args.command == "sweep":
            frame, _ = manager.sweep()
            return _finish(manager, "ok", EXIT_OK, command="sweep", rows=len(frame))
        if args.command == "optimize":
            record = manager.optimize(resume=args.resume)
            return _finish(manager, "ok", EXIT_OK, command="optimize", designs=len(record.evaluations),
                           iterations=record.iteration, best_worst_case_toughness=record.best_value)
        result = manager.report(Path(args.trace), tuple(args.window) if args.window else None, args.half_width)
        return _finish(manager, "ok", EXIT_OK, command="report", G_eff=result.G_eff)

    except ConfigHashMismatchError as e:
        logger.error(str(e))
        return _finish(manager, "resume_refused", EXIT_RESUME, reason=str(e))
    except ConfigError as e:
        logger.error(str(e))
        return _finish(manager, "config_error", EXIT_CONFIG, reason=str(e))
    except InfeasibleDesign as e:
        logger.error(str(e))
        return _finish(manager, "infeasible", EXIT_INFEASIBLE, clearance=e.clearance, z_min=e.z_min)
    except InfeasibleSeedError as e:
        logger.error(str(e))
        return _finish(manager, "infeasible", EXIT_INFEASIBLE, reason=str(e),
                       feasible_fraction=e.feasible_fraction)
    except MicrostructureError as e:
        logger.error(f"Simulation failed: {e}")
        return _finish(manager, "simulation_failed", EXIT_SIMULATION, reason=str(e))


if __name__ == "__main__":
    sys.exit(main())
