from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
from tqdm import tqdm

from heat_estimator.catalog import CatalogEntry, get_entry
from heat_estimator.equilibration import (
    EquilibratedFlux,
    build_global_flux,
    equilibration_residual,
    normal_trace_jumps,
)
from heat_estimator.estimators import (
    EstimatorReport,
    build_report,
    effectivity_study,
    verify_residual_identity,
    verify_upper_bound,
)
from heat_estimator.fem_core import FeSpace, estimate_projection_stability
from heat_estimator.log import logger
from heat_estimator.mesh import (
    Mesh,
    build_interval_mesh,
    build_unit_square_mesh,
    quality_report,
    read_mesh,
    uniform_refine,
)
from heat_estimator.report import (
    CONVERGENCE_COLUMNS,
    MODE_COLUMNS,
    convergence_rows,
    mode_rows,
    print_status,
    print_table,
    report_to_dict,
    write_csv,
    write_json,
)
from heat_estimator.semidiscrete import (
    ModeProblem,
    counterexample_sweep,
    mode_energy_report,
    random_mode_problem,
)
from heat_estimator.settings import MeshFamily, Setting, SettingsManager, StudyKind, TimeRule
from heat_estimator.timestepper import SpaceTimeSolution, TimeGrid, run_implicit_euler

INTERVAL_COLUMNS = ("index", "t_start", "t_end", "jump_sq", "flux_sq", "osc_sq")
HYPERCIRCLE_COLUMNS = ("instance", "lambda", "steps", "pythagoras_gap", "radius_gap", "jump_gap")
IDENTITY_COLUMNS = ("field", "lhs", "rhs", "gap", "scale")


@dataclass
class StudyResult:
    study: StudyKind
    columns: tuple[str, ...]
    rows: list[dict[str, Any]]
    passed: bool = True
    failures: list[str] = field(default_factory=list)
    details: dict[str, Any] = field(default_factory=dict)

    def fail(self, message: str) -> None:
        self.passed = False
        self.failures.append(message)
        logger.error("{}", message)


@dataclass(frozen=True)
class LevelRun:
    mesh: Mesh
    solution: SpaceTimeSolution
    flux: EquilibratedFlux
    report: EstimatorReport


class Runner:
    """Runs the study named in the settings and writes its outputs."""

    def __init__(self, setting: Setting | None = None):
        self.setting = setting or SettingsManager.get_setting()
        self.threads = self.setting.solver.thread_count

    def build_mesh(self, level: int = 0) -> Mesh:
        """Base mesh refined for sweep level `level` (resolution doubled per level)."""
        mesh_setting = self.setting.mesh
        if mesh_setting.mesh_file is not None:
            mesh = read_mesh(mesh_setting.mesh_file)
            for _ in range(level):
                mesh = uniform_refine(mesh)
            return mesh
        n = mesh_setting.resolution * 2**level
        if mesh_setting.family == MeshFamily.INTERVAL:
            return build_interval_mesh(n)
        return build_unit_square_mesh(n)

    def build_grid(self, mesh: Mesh) -> TimeGrid:
        time_setting = self.setting.time
        final_time = time_setting.final_time
        if time_setting.rule == TimeRule.TAU_EQ_H:
            steps = math.ceil(final_time / mesh.h_max - 1e-12)
        elif time_setting.rule == TimeRule.TAU_EQ_H_SQ:
            steps = math.ceil(final_time / mesh.h_max**2 - 1e-12)
        else:
            steps = time_setting.steps
        if time_setting.grading != 1.0:
            return TimeGrid.geometric(final_time, steps, time_setting.grading)
        return TimeGrid.uniform(final_time, steps)

    def entry(self, mesh: Mesh) -> CatalogEntry:
        entry = get_entry(self.setting.problem.name)
        if entry.dimension is not None and entry.dimension != mesh.dim:
            raise ValueError(
                f"catalog entry {entry.name!r} is {entry.dimension}D but the mesh is {mesh.dim}D"
            )
        return entry

    def solve_level(self, level: int) -> LevelRun:
        mesh = self.build_mesh(level)
        grid = self.build_grid(mesh)
        exact = self.entry(mesh).solution
        solver = self.setting.solver
        logger.info(f"Level {level}: {mesh!r}, {grid!r}")
        solution = run_implicit_euler(
            FeSpace(mesh), grid, exact, tol=solver.tol, max_iters=solver.max_iters
        )
        flux = build_global_flux(solution, solver.flux_degree, threads=self.threads)
        return LevelRun(mesh, solution, flux, build_report(solution, flux, exact))

    def check_equilibration(self, run: LevelRun, result: StudyResult, level: int) -> None:
        rtol = self.setting.check.equilibration_rtol
        residual = float(equilibration_residual(run.solution, run.flux).max(initial=0.0))
        jumps = float(normal_trace_jumps(run.flux).max(initial=0.0))
        if residual > rtol:
            result.fail(f"level {level}: equilibration residual {residual:.3e} exceeds {rtol:.1e}")
        if jumps > rtol:
            result.fail(f"level {level}: normal-trace jump {jumps:.3e} exceeds {rtol:.1e}")

    def check_bound(self, run: LevelRun, result: StudyResult, level: int) -> None:
        check = verify_upper_bound(run.report, slack=self.setting.check.bound_slack)
        if check.passed:
            logger.debug(f"level {level}: upper bound holds with margin {check.margin:.3e}")
        else:
            result.fail(
                f"level {level}: error {check.lhs:.6e} exceeds estimator + oscillation "
                f"{check.rhs:.6e}"
            )

    def run_solve(self) -> StudyResult:
        run = self.solve_level(0)
        report = run.report
        result = StudyResult(
            StudyKind.SOLVE,
            INTERVAL_COLUMNS,
            [
                {
                    "index": item.index,
                    "t_start": item.t_start,
                    "t_end": item.t_end,
                    "jump_sq": item.jump_sq,
                    "flux_sq": item.flux_sq,
                    "osc_sq": item.osc_sq,
                }
                for item in report.per_interval
            ],
        )
        self.check_equilibration(run, result, 0)
        self.check_bound(run, result, 0)
        quality = quality_report(run.mesh)
        stability = estimate_projection_stability(run.solution.space, n_refinements=1)
        logger.info(
            f"Mesh h_max {quality.h_max:.4e}, shape regularity {quality.shape_regularity:.4f}, "
            f"C_Pi >= {stability:.4f}"
        )
        result.details["levels"] = [self._level_payload(run)]
        result.details["projection_stability"] = stability
        result.details["shape_regularity"] = quality.shape_regularity
        return result

    def _level_payload(self, run: LevelRun) -> dict[str, Any]:
        flux = run.flux if self.setting.output.dump_flux else None
        return report_to_dict(run.report, flux)

    def _sweep(self, study: StudyKind) -> tuple[list[LevelRun], StudyResult]:
        runs = []
        for level in tqdm(range(self.setting.mesh.refinements + 1), desc=f"{study} sweep"):
            runs.append(self.solve_level(level))
        check = self.setting.check
        gamma = check.gamma if study == StudyKind.EFFECTIVITY else None
        reports = [run.report for run in runs]
        effectivity = effectivity_study(
            reports, gamma=gamma, bounds=check.effectivity_bounds, growth=check.effectivity_growth
        )
        result = StudyResult(study, CONVERGENCE_COLUMNS, convergence_rows(reports, effectivity))
        result.details["levels"] = [self._level_payload(run) for run in runs]
        if study == StudyKind.EFFECTIVITY:
            for message in effectivity.failures:
                result.fail(message)
        return runs, result

    def run_convergence(self) -> StudyResult:
        _, result = self._sweep(StudyKind.CONVERGENCE)
        return result

    def run_upper_bound(self) -> StudyResult:
        runs, result = self._sweep(StudyKind.UPPER_BOUND)
        for level, run in enumerate(runs):
            self.check_equilibration(run, result, level)
            self.check_bound(run, result, level)
        return result

    def run_effectivity(self) -> StudyResult:
        _, result = self._sweep(StudyKind.EFFECTIVITY)
        return result

    def run_appendix_ode(self) -> StudyResult:
        sweep = counterexample_sweep(self.setting.problem.lambdas)
        result = StudyResult(StudyKind.APPENDIX_ODE, MODE_COLUMNS, mode_rows(sweep))
        if not sweep.affine_monotone:
            result.fail("jump / err_affine does not grow as lambda decreases")
        if not sweep.const_monotone:
            result.fail("jump / err_const does not grow as lambda increases")
        time = self.setting.time
        mode = ModeProblem.constant(
            self.setting.problem.lam, TimeGrid.uniform(time.final_time, time.steps), 1.0
        )
        report = mode_energy_report(mode)
        result.details["configured_mode"] = {
            "lambda": mode.lam,
            "steps": mode.grid.n_intervals,
            **asdict(report),
            "pythagoras_gap": report.pythagoras_gap,
            "radius_gap": report.radius_gap,
        }
        return result

    def run_hypercircle(self) -> StudyResult:
        problem = self.setting.problem
        rtol = self.setting.check.hypercircle_rtol
        rng = np.random.default_rng(problem.seed)
        result = StudyResult(StudyKind.HYPERCIRCLE, HYPERCIRCLE_COLUMNS, [])
        for instance in tqdm(range(problem.instances), desc="hypercircle"):
            mode = random_mode_problem(rng, max_steps=problem.max_steps)
            report = mode_energy_report(mode)
            jump_gap = abs(report.jump_quadrature**2 - report.jump_E**2) / (report.jump_E**2 or 1.0)
            row = {
                "instance": instance,
                "lambda": mode.lam,
                "steps": mode.grid.n_intervals,
                "pythagoras_gap": report.pythagoras_gap,
                "radius_gap": report.radius_gap,
                "jump_gap": jump_gap,
            }
            result.rows.append(row)
            worst = max(report.pythagoras_gap, report.radius_gap, jump_gap)
            if worst > rtol:
                result.fail(f"instance {instance} (lambda {mode.lam:.3e}): gap {worst:.3e}")
        return result

    def run_residual_identity(self) -> StudyResult:
        problem = self.setting.problem
        rtol = self.setting.check.identity_rtol
        mesh = self.build_mesh(0)
        grid = self.build_grid(mesh)
        exact = self.entry(mesh).solution
        solver = self.setting.solver
        solution = run_implicit_euler(
            FeSpace(mesh), grid, exact, tol=solver.tol, max_iters=solver.max_iters
        )
        rng = np.random.default_rng(problem.seed)
        result = StudyResult(StudyKind.RESIDUAL_IDENTITY, IDENTITY_COLUMNS, [])
        for index in tqdm(range(problem.test_fields), desc="residual identity"):
            phi = rng.standard_normal(solution.coefficients.shape)
            identity = verify_residual_identity(solution, exact, phi)
            result.rows.append(
                {
                    "field": index,
                    "lhs": identity.lhs,
                    "rhs": identity.rhs,
                    "gap": identity.gap,
                    "scale": identity.scale,
                }
            )
            if identity.gap > rtol * identity.scale:
                result.fail(
                    f"test field {index}: gap {identity.gap:.3e} against scale {identity.scale:.3e}"
                )
        return result

    def run(self) -> StudyResult:
        handlers = {
            StudyKind.SOLVE: self.run_solve,
            StudyKind.CONVERGENCE: self.run_convergence,
            StudyKind.UPPER_BOUND: self.run_upper_bound,
            StudyKind.EFFECTIVITY: self.run_effectivity,
            StudyKind.APPENDIX_ODE: self.run_appendix_ode,
            StudyKind.HYPERCIRCLE: self.run_hypercircle,
            StudyKind.RESIDUAL_IDENTITY: self.run_residual_identity,
        }
        study = self.setting.study
        logger.info(f"Running study <cyan>{study}</cyan> on {self.threads} thread(s)")
        result = handlers[study]()
        self.write_outputs(result)
        return result

    def write_outputs(self, result: StudyResult) -> None:
        output = self.setting.output
        print_table(result.columns, result.rows)
        if output.csv_path is not None:
            write_csv(output.csv_path, result.columns, result.rows)
        if output.json_path is not None:
            write_json(
                output.json_path,
                {
                    "config": self.setting.model_dump(mode="json", by_alias=True),
                    "study": str(result.study),
                    "passed": result.passed,
                    "failures": result.failures,
                    "rows": result.rows,
                    **result.details,
                },
            )
        if result.passed:
            print_status(True, f"{result.study} finished, all checks passed")
        else:
            print_status(False, f"{result.study}: {len(result.failures)} check(s) failed")
