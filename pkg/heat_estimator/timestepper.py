from __future__ import annotations

from dataclasses import dataclass
from enum import StrEnum
from typing import Protocol, Sequence

import numpy as np

from heat_estimator.errors import NumericFailure
from heat_estimator.fem_core import FeSpace, broken_p1_project, l2_project, solve_spd
from heat_estimator.log import logger
from heat_estimator.mesh import locate_points


class TimeGrid:
    """Strictly increasing time nodes 0 = t_0 < ... < t_N = T."""

    def __init__(self, nodes: Sequence[float]):
        nodes = np.array(nodes, dtype=float)
        if nodes.ndim != 1 or len(nodes) < 2:
            raise ValueError("a time grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise ValueError(f"time grid must start at 0, got {nodes[0]}")
        if np.any(np.diff(nodes) <= 0.0):
            raise ValueError("time nodes must be strictly increasing")
        self.nodes = nodes
        self.nodes.setflags(write=False)

    @classmethod
    def uniform(cls, final_time: float, n_steps: int) -> TimeGrid:
        if n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {n_steps}")
        if not final_time > 0.0:
            raise ValueError(f"final time must be positive, got {final_time}")
        return cls(np.linspace(0.0, final_time, n_steps + 1))

    @classmethod
    def geometric(cls, final_time: float, n_steps: int, ratio: float) -> TimeGrid:
        """Steps growing by `ratio` from one interval to the next."""
        if n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {n_steps}")
        if not ratio > 0.0:
            raise ValueError(f"grading ratio must be positive, got {ratio}")
        steps = ratio ** np.arange(n_steps)
        nodes = np.concatenate([[0.0], np.cumsum(steps / steps.sum() * final_time)])
        nodes[-1] = final_time
        return cls(nodes)

    @property
    def final_time(self) -> float:
        return float(self.nodes[-1])

    @property
    def n_intervals(self) -> int:
        return len(self.nodes) - 1

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    def locate(self, t: float) -> int:
        """Index n with t in (t_{n-1}, t_n]; 0 for t = 0."""
        tolerance = 1e-14 * self.final_time
        if t < -tolerance or t > self.final_time + tolerance:
            raise ValueError(f"t = {t} outside [0, {self.final_time}]")
        t = min(max(t, 0.0), self.final_time)
        return int(np.searchsorted(self.nodes, t, side="left"))

    def __repr__(self) -> str:
        return f"TimeGrid(T={self.final_time}, N={self.n_intervals})"


class ProblemSpec(Protocol):
    """Initial datum and source; spatial arguments have shape (npts, d)."""

    def u0(self, x: np.ndarray) -> np.ndarray: ...

    def f(self, x: np.ndarray, t: float) -> np.ndarray: ...


@dataclass(frozen=True)
class SpaceTimeSolution:
    """Nodal coefficients u_{h,0..N} and the broken-P1 source snapshots f_{h,1..N}."""

    space: FeSpace
    grid: TimeGrid
    coefficients: np.ndarray
    data_snapshots: np.ndarray

    def jump(self, n: int) -> np.ndarray:
        return self.coefficients[n] - self.coefficients[n - 1]


class ReconstructionKind(StrEnum):
    PIECEWISE_CONSTANT = "piecewise_constant"
    PIECEWISE_AFFINE = "piecewise_affine"
    MIDPOINT = "midpoint"


@dataclass(frozen=True)
class Reconstruction:
    kind: ReconstructionKind
    solution: SpaceTimeSolution

    def coefficients_at(self, t: float) -> np.ndarray:
        grid = self.solution.grid
        n = grid.locate(t)
        u = self.solution.coefficients
        if n == 0:
            return u[0].copy()
        theta = (t - grid.nodes[n - 1]) / (grid.nodes[n] - grid.nodes[n - 1])
        return interval_coefficients(self.kind, u[n - 1], u[n], theta)


def interval_coefficients(
    kind: ReconstructionKind, previous: np.ndarray, current: np.ndarray, theta
) -> np.ndarray:
    """Reconstruction on I_n at relative time theta in [0, 1].

    `theta` may be an array, giving one row per time.
    """
    theta = np.asarray(theta, dtype=float)
    constant = np.broadcast_to(current, theta.shape + current.shape)
    affine = (1.0 - theta)[..., None] * previous + theta[..., None] * current
    if theta.ndim == 0:
        affine = affine.reshape(current.shape)
    if kind == ReconstructionKind.PIECEWISE_CONSTANT:
        return np.array(constant)
    if kind == ReconstructionKind.PIECEWISE_AFFINE:
        return affine
    return 0.5 * (constant + affine)


def evaluate(recon: Reconstruction, t: float, x) -> float | np.ndarray:
    """Point values of a reconstruction at time `t`.

    Raises:
        ValueError: If `t` is outside [0, T] or `x` outside the mesh.
    """
    space = recon.solution.space
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1 and x.size == space.mesh.dim
    cells, bary = locate_points(space.mesh, x.reshape(-1, space.mesh.dim))
    nodal = space.to_nodal(recon.coefficients_at(t))
    values = (nodal[space.mesh.cells[cells]] * bary).sum(axis=1)
    return float(values[0]) if single else values


def time_derivative_affine(sol: SpaceTimeSolution, n: int) -> np.ndarray:
    """(u_n - u_{n-1}) / tau_n, the constant slope of U_{h,tau} on I_n."""
    if not 1 <= n <= sol.grid.n_intervals:
        raise IndexError(f"interval index {n} outside 1..{sol.grid.n_intervals}")
    return sol.jump(n) / sol.grid.steps[n - 1]


def run_implicit_euler(
    space: FeSpace,
    grid: TimeGrid,
    problem: ProblemSpec,
    *,
    tol: float = 1e-12,
    max_iters: int | None = None,
    data_snapshots: np.ndarray | None = None,
) -> SpaceTimeSolution:
    """March (M / tau_n + A) u_n = M u_{n-1} / tau_n + M f_n from u_0 = Pi_h u0.

    f_n is the broken-P1 L2 projection of f(., t_n) unless `data_snapshots`
    (shape (N, nc, d + 1)) is supplied. Each step solves for the increment
    u_n - u_{n-1}, which keeps the solver residual on the scale of the
    time derivative.

    Raises:
        NumericFailure: With `step` set to the failing time-step index.
    """
    mesh = space.mesh
    if data_snapshots is None:
        data_snapshots = np.stack(
            [broken_p1_project(mesh, lambda x, t=t: problem.f(x, t)) for t in grid.nodes[1:]]
        )
    else:
        data_snapshots = np.array(data_snapshots, dtype=float)
        expected = (grid.n_intervals, mesh.n_cells, mesh.dim + 1)
        if data_snapshots.shape != expected:
            raise ValueError(f"data_snapshots must have shape {expected}")

    u_prev = l2_project(space, problem.u0, tol=tol, max_iters=max_iters)
    coefficients = np.empty((grid.n_intervals + 1, space.n_dofs))
    coefficients[0] = u_prev
    mass, stiffness = space.mass, space.stiffness
    operators = {}
    for n, tau in enumerate(grid.steps, start=1):
        op = operators.get(tau)
        if op is None:
            op = operators[tau] = (mass / tau + stiffness).tocsr()
        rhs = space.assemble_broken_load(data_snapshots[n - 1]) - stiffness @ u_prev
        try:
            increment = solve_spd(op, rhs, tol=tol, max_iters=max_iters)
        except NumericFailure as exc:
            raise NumericFailure(
                f"implicit Euler step {n}: {exc}",
                residual=exc.residual,
                iterations=exc.iterations,
                step=n,
            ) from exc
        u_prev = u_prev + increment
        coefficients[n] = u_prev
    logger.debug(f"Implicit Euler finished {grid.n_intervals} steps on {mesh!r}")
    coefficients.setflags(write=False)
    data_snapshots.setflags(write=False)
    return SpaceTimeSolution(space, grid, coefficients, data_snapshots)
