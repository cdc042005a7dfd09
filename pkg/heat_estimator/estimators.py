from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from heat_estimator.equilibration import EquilibratedFlux
from heat_estimator.errors import IntegrityError
from heat_estimator.fem_core import DEFAULT_QUADRATURE_DEGREE
from heat_estimator.log import logger
from heat_estimator.mesh import Mesh, vertex_patches
from heat_estimator.quadrature import gauss_interval, get_quadrature, map_to_cells
from heat_estimator.timestepper import (
    ReconstructionKind,
    SpaceTimeSolution,
    TimeGrid,
    interval_coefficients,
)

JUMP_RTOL = 1e-12
EFFECTIVITY_GUARD = 1e-12
ERROR_TIME_POINTS = 5

SpaceTimeFunction = Callable[[np.ndarray, float], np.ndarray]


def _scaled(fn: Callable, c: float) -> Callable:
    return lambda *args: c * np.asarray(fn(*args))


@dataclass(frozen=True)
class ExactSolution:
    """Analytic u with f = du/dt - laplace(u); spatial arguments have shape (npts, d)."""

    u: SpaceTimeFunction
    grad_u: SpaceTimeFunction
    f: SpaceTimeFunction
    u0: Callable[[np.ndarray], np.ndarray]
    laplace_u: SpaceTimeFunction
    dimension: int
    bounds: tuple[float, float] = (0.0, 1.0)

    def spot_check(
        self,
        samples: int = 20,
        seed: int = 0,
        step: float = 1e-5,
        final_time: float = 1.0,
    ) -> float:
        """Largest |du/dt - laplace(u) - f| at random space-time points, du/dt by central differences."""
        rng = np.random.default_rng(seed)
        lo, hi = self.bounds
        worst = 0.0
        for _ in range(samples):
            x = rng.uniform(lo, hi, size=(1, self.dimension))
            t = float(rng.uniform(step, final_time - step))
            dt = (self.u(x, t + step) - self.u(x, t - step)) / (2.0 * step)
            residual = dt - self.laplace_u(x, t) - self.f(x, t)
            worst = max(worst, float(np.abs(residual).max()))
        return worst

    def scaled(self, c: float) -> ExactSolution:
        """The solution for data (c u0, c f)."""
        return ExactSolution(
            u=_scaled(self.u, c),
            grad_u=_scaled(self.grad_u, c),
            f=_scaled(self.f, c),
            u0=_scaled(self.u0, c),
            laplace_u=_scaled(self.laplace_u, c),
            dimension=self.dimension,
            bounds=self.bounds,
        )


@dataclass(frozen=True)
class EnergyError:
    """||u - recon||_E together with its two parts."""

    energy: float
    x_norm: float
    final_l2: float


@dataclass(frozen=True)
class OscillationSurrogate:
    """Computable upper surrogates of the data oscillation terms.

    `osc_upper` = `mean_free` + `cell_means` + `initial`; `patch_terms[n-1, a]`
    bounds the local oscillation of vertex a on interval n.
    """

    osc_upper: float
    mean_free: float
    cell_means: float
    initial: float
    patch_terms: np.ndarray

    @property
    def per_interval_sq(self) -> np.ndarray:
        return (self.patch_terms**2).sum(axis=1)


@dataclass(frozen=True)
class IntervalEstimate:
    index: int
    t_start: float
    t_end: float
    jump_sq: float
    flux_sq: float
    osc_sq: float


@dataclass(frozen=True)
class EstimatorReport:
    per_interval: tuple[IntervalEstimate, ...]
    est_jump: float
    est_flux: float
    total_estimator: float
    osc_total: float
    h_max: float
    tau_max: float
    gamma_realized: float
    data_scale: float
    err_energy: float | None = None
    err_X_const: float | None = None
    err_X_affine: float | None = None
    effectivity: float | None = None
    quantifier_E: float | None = None
    flux_sq_per_cell: np.ndarray | None = field(default=None, repr=False)


@dataclass(frozen=True)
class BoundCheck:
    passed: bool
    margin: float
    lhs: float
    rhs: float


@dataclass(frozen=True)
class ResidualIdentity:
    lhs: float
    rhs: float
    scale: float

    @property
    def gap(self) -> float:
        return abs(self.lhs - self.rhs)


@dataclass(frozen=True)
class EffectivityRow:
    level: int
    h_max: float
    gamma_realized: float
    effectivity: float | None
    eoc_err: float | None
    eoc_est: float | None
    asserted: bool


@dataclass(frozen=True)
class EffectivityStudy:
    rows: tuple[EffectivityRow, ...]
    passed: bool
    failures: tuple[str, ...]


def gamma_realized(mesh: Mesh, grid: TimeGrid) -> float:
    """max over patches and intervals of h_{omega_a}^2 / tau_n."""
    diameter = max(p.diameter for p in vertex_patches(mesh))
    return float(diameter**2 / grid.steps.min())


def jump_estimator(sol: SpaceTimeSolution) -> np.ndarray:
    """Per-interval 1/4 int_{I_n} ||grad(u_{h,tau} - U_{h,tau})||^2, shape (N,).

    The closed form 1/4 (tau_n / 3) ||grad(u_n - u_{n-1})||^2 is returned
    after comparison with two-point Gauss quadrature of the difference of
    both reconstructions.

    Raises:
        IntegrityError: If both evaluations disagree.
    """
    stiffness = sol.space.stiffness
    steps = sol.grid.steps
    u = sol.coefficients
    s, w = gauss_interval(2)
    closed = np.empty(sol.grid.n_intervals)
    for n in range(1, sol.grid.n_intervals + 1):
        jump = sol.jump(n)
        tau = steps[n - 1]
        closed[n - 1] = 0.25 * tau / 3.0 * float(jump @ (stiffness @ jump))
        affine = interval_coefficients(ReconstructionKind.PIECEWISE_AFFINE, u[n - 1], u[n], s)
        constant = interval_coefficients(ReconstructionKind.PIECEWISE_CONSTANT, u[n - 1], u[n], s)
        difference = affine - constant
        energies = np.einsum("qi,qi->q", difference, (stiffness @ difference.T).T)
        quadrature = 0.25 * tau * float(w @ energies)
        if abs(quadrature - closed[n - 1]) > JUMP_RTOL * abs(closed[n - 1]):
            raise IntegrityError(
                f"jump estimator on interval {n}: closed form {closed[n - 1]:.17g} "
                f"differs from quadrature {quadrature:.17g}"
            )
    return closed


def flux_estimator_per_cell(
    sol: SpaceTimeSolution,
    flux: EquilibratedFlux,
    variant: ReconstructionKind = ReconstructionKind.MIDPOINT,
    degree: int = DEFAULT_QUADRATURE_DEGREE,
) -> np.ndarray:
    """int_{I_n} ||sigma + grad w||_K^2 per interval and cell, shape (N, nc).

    `w` is the reconstruction named by `variant`; the integrand is quadratic
    in time, so two Gauss points per interval are exact.
    """
    fe = sol.space
    _, weights, values, _ = flux.basis.tabulate(degree)
    s, wt = gauss_interval(2)
    u = sol.coefficients
    out = np.zeros((sol.grid.n_intervals, fe.mesh.n_cells))
    for n in range(1, sol.grid.n_intervals + 1):
        tau = sol.grid.steps[n - 1]
        sigma = np.einsum("cqld,cl->cqd", values, flux.per_interval[n - 1])
        recon = interval_coefficients(variant, u[n - 1], u[n], s)
        for q in range(len(s)):
            total = sigma + fe.cell_gradients(recon[q])[:, None, :]
            out[n - 1] += tau * wt[q] * np.einsum("cq,cqd,cqd->c", weights, total, total)
    return out


def flux_estimator(
    sol: SpaceTimeSolution,
    flux: EquilibratedFlux,
    variant: ReconstructionKind = ReconstructionKind.MIDPOINT,
) -> np.ndarray:
    """Per-interval int_{I_n} ||sigma + grad w||^2, shape (N,)."""
    return flux_estimator_per_cell(sol, flux, variant).sum(axis=1)


def friedrichs_constant(mesh: Mesh) -> float:
    """Friedrichs constant of the bounding box, 1 / (pi sqrt(sum_i L_i^-2))."""
    return 1.0 / (math.pi * math.sqrt(float(np.sum(mesh.bounding_box**-2.0))))


def oscillation_surrogate(
    sol: SpaceTimeSolution,
    exact: ExactSolution,
    degree: int = DEFAULT_QUADRATURE_DEGREE,
    time_points: int = ERROR_TIME_POINTS,
) -> OscillationSurrogate:
    """Guaranteed computable bound of the data oscillation.

    With r = f - f_{h,tau}, the cell-mean-free part of r is bounded with the
    Payne-Weinberger factor h_K / pi and the cell means with the Friedrichs
    constant of the domain; the initial term is ||u0 - u_{h,tau,0}||.
    """
    fe = sol.space
    mesh = fe.mesh
    rule = get_quadrature(mesh.dim, degree)
    points, weights = map_to_cells(mesh.cell_vertices, mesh.cell_measures, rule)
    nc, nq, d = points.shape
    flat = points.reshape(-1, d)
    measures = mesh.cell_measures
    factor = (mesh.cell_diameters / math.pi) ** 2
    s, wt = gauss_interval(time_points)
    patches = vertex_patches(mesh)

    mean_free = 0.0
    cell_means = 0.0
    patch_terms = np.zeros((sol.grid.n_intervals, mesh.n_vertices))
    for n in range(1, sol.grid.n_intervals + 1):
        tau = sol.grid.steps[n - 1]
        t_start = sol.grid.nodes[n - 1]
        f_h = sol.data_snapshots[n - 1] @ rule.points.T
        cell_sq = np.zeros(nc)
        for q in range(time_points):
            r = np.asarray(exact.f(flat, t_start + s[q] * tau)).reshape(nc, nq) - f_h
            squares = (weights * r**2).sum(axis=1)
            means = (weights * r).sum(axis=1) / measures
            fluctuation = np.maximum(squares - measures * means**2, 0.0)
            mean_free += tau * wt[q] * float(factor @ fluctuation)
            cell_means += tau * wt[q] * float(measures @ means**2)
            cell_sq += tau * wt[q] * squares
        for patch in patches:
            patch_terms[n - 1, patch.vertex] = (
                patch.diameter / math.pi * math.sqrt(cell_sq[list(patch.cells)].sum())
            )

    initial_error = np.asarray(exact.u0(flat)).reshape(nc, nq) - fe.evaluate_at(
        sol.coefficients[0], rule.points
    )
    initial = math.sqrt(float((weights * initial_error**2).sum()))
    mean_free = math.sqrt(mean_free)
    cell_means = friedrichs_constant(mesh) * math.sqrt(cell_means)
    return OscillationSurrogate(
        osc_upper=mean_free + cell_means + initial,
        mean_free=mean_free,
        cell_means=cell_means,
        initial=initial,
        patch_terms=patch_terms,
    )


def energy_errors(
    sol: SpaceTimeSolution,
    exact: ExactSolution,
    kinds: Sequence[ReconstructionKind] = tuple(ReconstructionKind),
    degree: int = DEFAULT_QUADRATURE_DEGREE,
    time_points: int = ERROR_TIME_POINTS,
) -> dict[ReconstructionKind, EnergyError]:
    """||u - recon||_E for several reconstructions sharing one pass over the exact gradient."""
    fe = sol.space
    mesh = fe.mesh
    rule = get_quadrature(mesh.dim, degree)
    points, weights = map_to_cells(mesh.cell_vertices, mesh.cell_measures, rule)
    nc, nq, d = points.shape
    flat = points.reshape(-1, d)
    s, wt = gauss_interval(time_points)
    u = sol.coefficients
    x_sq = dict.fromkeys(kinds, 0.0)
    for n in range(1, sol.grid.n_intervals + 1):
        tau = sol.grid.steps[n - 1]
        t_start = sol.grid.nodes[n - 1]
        recons = {kind: interval_coefficients(kind, u[n - 1], u[n], s) for kind in kinds}
        for q in range(time_points):
            exact_grad = np.asarray(exact.grad_u(flat, t_start + s[q] * tau)).reshape(nc, nq, d)
            for kind in kinds:
                diff = exact_grad - fe.cell_gradients(recons[kind][q])[:, None, :]
                x_sq[kind] += tau * wt[q] * float(np.einsum("cq,cqd,cqd->", weights, diff, diff))

    final_time = sol.grid.final_time
    final_diff = np.asarray(exact.u(flat, final_time)).reshape(nc, nq) - fe.evaluate_at(
        u[-1], rule.points
    )
    final_sq = float((weights * final_diff**2).sum())
    return {
        kind: EnergyError(
            energy=math.sqrt(0.5 * final_sq + x_sq[kind]),
            x_norm=math.sqrt(x_sq[kind]),
            final_l2=math.sqrt(final_sq),
        )
        for kind in kinds
    }


def energy_error(
    sol: SpaceTimeSolution, recon_kind: ReconstructionKind, exact: ExactSolution
) -> EnergyError:
    """Energy-norm error of one reconstruction, 5-point Gauss per interval in time."""
    return energy_errors(sol, exact, kinds=(ReconstructionKind(recon_kind),))[
        ReconstructionKind(recon_kind)
    ]


def error_quantifier(sol: SpaceTimeSolution, exact: ExactSolution) -> float:
    """E = ||u - u_{h,tau}||_E + ||u - U_{h,tau}||_E."""
    errors = energy_errors(
        sol,
        exact,
        kinds=(ReconstructionKind.PIECEWISE_CONSTANT, ReconstructionKind.PIECEWISE_AFFINE),
    )
    return sum(e.energy for e in errors.values())


def data_scale(sol: SpaceTimeSolution) -> float:
    """||u_{h,tau,0}|| + ||f_{h,tau}||_{L2(0,T;L2)}, the size of the discrete data."""
    fe = sol.space
    u0 = sol.coefficients[0]
    initial = math.sqrt(max(float(u0 @ (fe.mass @ u0)), 0.0))
    source = 0.0
    for n in range(1, sol.grid.n_intervals + 1):
        snapshot = sol.data_snapshots[n - 1]
        source += sol.grid.steps[n - 1] * float(
            np.einsum("ci,cij,cj->", snapshot, fe.local_mass, snapshot)
        )
    return initial + math.sqrt(source)


def build_report(
    sol: SpaceTimeSolution,
    flux: EquilibratedFlux,
    exact: ExactSolution | None = None,
) -> EstimatorReport:
    """Collect estimators, oscillation surrogates and, when `exact` is given, errors."""
    mesh = sol.space.mesh
    grid = sol.grid
    jump = jump_estimator(sol)
    flux_cells = flux_estimator_per_cell(sol, flux)
    flux_sq = flux_cells.sum(axis=1)
    osc = oscillation_surrogate(sol, exact) if exact is not None else None
    osc_sq = osc.per_interval_sq if osc is not None else np.zeros(grid.n_intervals)
    per_interval = tuple(
        IntervalEstimate(
            index=n,
            t_start=float(grid.nodes[n - 1]),
            t_end=float(grid.nodes[n]),
            jump_sq=float(jump[n - 1]),
            flux_sq=float(flux_sq[n - 1]),
            osc_sq=float(osc_sq[n - 1]),
        )
        for n in range(1, grid.n_intervals + 1)
    )
    est_jump = math.sqrt(float(jump.sum()))
    est_flux = math.sqrt(float(flux_sq.sum()))
    total = math.sqrt(float(jump.sum() + flux_sq.sum()))
    scale = data_scale(sol)
    report = dict(
        per_interval=per_interval,
        est_jump=est_jump,
        est_flux=est_flux,
        total_estimator=total,
        osc_total=osc.osc_upper if osc is not None else 0.0,
        h_max=mesh.h_max,
        tau_max=float(grid.steps.max()),
        gamma_realized=gamma_realized(mesh, grid),
        data_scale=scale,
        flux_sq_per_cell=flux_cells,
    )
    if exact is not None:
        errors = energy_errors(sol, exact)
        err = errors[ReconstructionKind.MIDPOINT].energy
        quantifier = (
            errors[ReconstructionKind.PIECEWISE_CONSTANT].energy
            + errors[ReconstructionKind.PIECEWISE_AFFINE].energy
        )
        if err > 0.5 * quantifier * (1.0 + 1e-12) + 1e-15:
            raise IntegrityError(
                f"midpoint error {err:.6e} exceeds half the quantifier {quantifier:.6e}"
            )
        effectivity = total / err if err > EFFECTIVITY_GUARD * scale else None
        if effectivity is None:
            logger.warning(
                f"Error {err:.3e} is negligible against the data scale {scale:.3e}; "
                "effectivity left undefined"
            )
        report.update(
            err_energy=err,
            err_X_const=errors[ReconstructionKind.PIECEWISE_CONSTANT].x_norm,
            err_X_affine=errors[ReconstructionKind.PIECEWISE_AFFINE].x_norm,
            effectivity=effectivity,
            quantifier_E=quantifier,
        )
    return EstimatorReport(**report)


def verify_upper_bound(report: EstimatorReport, slack: float = 1e-9) -> BoundCheck:
    """Check err_energy <= total_estimator + osc_total + slack.

    The returned margin is rhs - lhs without the slack.
    """
    if report.err_energy is None:
        raise ValueError("report carries no exact error; build it with an exact solution")
    rhs = report.total_estimator + report.osc_total
    lhs = report.err_energy
    return BoundCheck(passed=lhs <= rhs + slack, margin=rhs - lhs, lhs=lhs, rhs=rhs)


def verify_residual_identity(
    sol: SpaceTimeSolution,
    exact: ExactSolution,
    phi: np.ndarray,
    degree: int = 12,
    time_points: int = 8,
) -> ResidualIdentity:
    """Evaluate both sides of the discrete residual identity for a test field.

    `phi` holds the nodal coefficients phi_h(t_0..t_N), shape (N + 1, n_dofs),
    of a continuous piecewise-affine-in-time V_h-valued field. The left side
    is 1/2 int [(d_t phi, u_h - U) + (grad phi, grad(u_h - U))]; the right
    side is B(u - u_mid, phi) - int (f - f_h, phi) - (u0 - u_h0, phi(0)).
    """
    fe = sol.space
    mesh = fe.mesh
    grid = sol.grid
    phi = np.asarray(phi, dtype=float)
    if phi.shape != sol.coefficients.shape:
        raise ValueError(f"phi must have shape {sol.coefficients.shape}, got {phi.shape}")
    rule = get_quadrature(mesh.dim, degree)
    bary = rule.points
    points, weights = map_to_cells(mesh.cell_vertices, mesh.cell_measures, rule)
    nc, nq, d = points.shape
    flat = points.reshape(-1, d)
    s, wt = gauss_interval(time_points)
    u = sol.coefficients

    def inner(a: np.ndarray, b: np.ndarray) -> float:
        return float((weights * a * b).sum())

    lhs = 0.0
    dt_term = grad_term = data_term = 0.0
    for n in range(1, grid.n_intervals + 1):
        tau = grid.steps[n - 1]
        t_start = grid.nodes[n - 1]
        dphi = fe.evaluate_at((phi[n] - phi[n - 1]) / tau, bary)
        f_h = sol.data_snapshots[n - 1] @ bary.T
        jump = sol.jump(n)
        for q in range(time_points):
            theta = s[q]
            t = t_start + theta * tau
            phi_t = (1.0 - theta) * phi[n - 1] + theta * phi[n]
            phi_values = fe.evaluate_at(phi_t, bary)
            phi_grad = fe.cell_gradients(phi_t)
            difference = (1.0 - theta) * jump
            discrete = inner(dphi, fe.evaluate_at(difference, bary)) + float(
                mesh.cell_measures @ np.einsum("cd,cd->c", phi_grad, fe.cell_gradients(difference))
            )
            lhs += 0.5 * tau * wt[q] * discrete

            midpoint = interval_coefficients(ReconstructionKind.MIDPOINT, u[n - 1], u[n], theta)
            error = np.asarray(exact.u(flat, t)).reshape(nc, nq) - fe.evaluate_at(midpoint, bary)
            error_grad = (
                np.asarray(exact.grad_u(flat, t)).reshape(nc, nq, d)
                - fe.cell_gradients(midpoint)[:, None, :]
            )
            residual = np.asarray(exact.f(flat, t)).reshape(nc, nq) - f_h
            dt_term -= tau * wt[q] * inner(dphi, error)
            grad_term += tau * wt[q] * float(
                np.einsum("cq,cqd,cd->", weights, error_grad, phi_grad)
            )
            data_term -= tau * wt[q] * inner(residual, phi_values)

    final_error = np.asarray(exact.u(flat, grid.final_time)).reshape(nc, nq) - fe.evaluate_at(
        u[-1], bary
    )
    final_term = inner(final_error, fe.evaluate_at(phi[-1], bary))
    initial_error = np.asarray(exact.u0(flat)).reshape(nc, nq) - fe.evaluate_at(u[0], bary)
    initial_term = -inner(initial_error, fe.evaluate_at(phi[0], bary))

    terms = (final_term, dt_term, grad_term, data_term, initial_term)
    rhs = sum(terms)
    scale = abs(lhs) + sum(abs(t) for t in terms)
    logger.debug(f"Residual identity: lhs {lhs:.17g}, rhs {rhs:.17g}")
    return ResidualIdentity(lhs=lhs, rhs=rhs, scale=scale)


def _eoc(previous: float | None, current: float | None, h_prev: float, h_cur: float) -> float | None:
    if not previous or not current or h_prev == h_cur:
        return None
    return math.log(previous / current) / math.log(h_prev / h_cur)


def effectivity_study(
    reports: Sequence[EstimatorReport],
    gamma: float | None = None,
    bounds: tuple[float, float] = (0.5, 10.0),
    growth: float = 1.5,
) -> EffectivityStudy:
    """Effectivity indices and EOCs over a refinement sequence.

    Levels with gamma_realized <= `gamma` (all levels when `gamma` is None)
    are checked against `bounds`, and the last checked effectivity may not
    exceed `growth` times the first.
    """
    rows = []
    failures = []
    for level, report in enumerate(reports):
        previous = reports[level - 1] if level > 0 else None
        asserted = gamma is None or report.gamma_realized <= gamma
        rows.append(
            EffectivityRow(
                level=level,
                h_max=report.h_max,
                gamma_realized=report.gamma_realized,
                effectivity=report.effectivity,
                eoc_err=_eoc(previous.err_energy, report.err_energy, previous.h_max, report.h_max)
                if previous
                else None,
                eoc_est=_eoc(
                    previous.total_estimator, report.total_estimator, previous.h_max, report.h_max
                )
                if previous
                else None,
                asserted=asserted,
            )
        )
        if asserted and report.effectivity is not None:
            low, high = bounds
            if not low <= report.effectivity <= high:
                failures.append(
                    f"level {level}: effectivity {report.effectivity:.4f} outside [{low}, {high}]"
                )
    checked = [r.effectivity for r in rows if r.asserted and r.effectivity is not None]
    if len(checked) >= 2 and checked[-1] > growth * checked[0]:
        failures.append(
            f"effectivity grew from {checked[0]:.4f} to {checked[-1]:.4f} (limit x{growth})"
        )
    return EffectivityStudy(rows=tuple(rows), passed=not failures, failures=tuple(failures))
