"""Single Fourier mode of the heat equation, u' + lam u = f, under implicit Euler.

A mode with eigenvalue `lam` turns ||grad v||^2 into lam |v|^2 and the L2
norm into the absolute value, so the energy norm reads
||v||_E^2 = 1/2 |v(T)|^2 + lam int_0^T |v|^2 dt.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from heat_estimator.quadrature import gauss_interval
from heat_estimator.timestepper import TimeGrid

MODE_GAUSS_POINTS = 10
LAYER_WIDTH = 40.0
DEFAULT_LAMBDAS = (1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3)


class UnsupportedForcing(ValueError):
    """The closed-form solution needs forcing that is constant on [0, T]."""


@dataclass(frozen=True)
class ModeProblem:
    """u' + lam u = f_n on I_n, u(0) = u0, with one forcing value per interval."""

    lam: float
    grid: TimeGrid
    forcing: np.ndarray
    u0: float

    def __post_init__(self):
        if not self.lam > 0.0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        forcing = np.array(self.forcing, dtype=float).reshape(-1)
        if len(forcing) != self.grid.n_intervals:
            raise ValueError(
                f"forcing needs {self.grid.n_intervals} values, got {len(forcing)}"
            )
        forcing.setflags(write=False)
        object.__setattr__(self, "forcing", forcing)
        object.__setattr__(self, "u0", float(self.u0))

    @classmethod
    def constant(cls, lam: float, grid: TimeGrid, value: float, u0: float = 0.0) -> ModeProblem:
        return cls(lam, grid, np.full(grid.n_intervals, float(value)), u0)

    @property
    def final_time(self) -> float:
        return self.grid.final_time

    @property
    def has_constant_forcing(self) -> bool:
        return bool(np.all(self.forcing == self.forcing[0]))


@dataclass(frozen=True)
class ModeEnergyReport:
    err_const_E: float
    err_affine_E: float
    err_mid_E: float
    jump_E: float
    jump_quadrature: float

    @property
    def pythagoras_gap(self) -> float:
        """|err_const^2 + err_affine^2 - jump^2| / jump^2."""
        target = self.jump_E**2
        gap = abs(self.err_const_E**2 + self.err_affine_E**2 - target)
        return gap / target if target > 0.0 else gap

    @property
    def radius_gap(self) -> float:
        """|err_mid - jump / 2| / (jump / 2)."""
        radius = 0.5 * self.jump_E
        gap = abs(self.err_mid_E - radius)
        return gap / radius if radius > 0.0 else gap


@dataclass(frozen=True)
class CounterexampleRow:
    lam: float
    jump_E: float
    err_const_E: float
    err_affine_E: float
    err_mid_E: float
    ratio_const: float
    ratio_affine: float


@dataclass(frozen=True)
class CounterexampleSweep:
    rows: tuple[CounterexampleRow, ...]
    affine_monotone: bool
    const_monotone: bool

    @property
    def passed(self) -> bool:
        return self.affine_monotone and self.const_monotone


def solve_mode(problem: ModeProblem) -> np.ndarray:
    """u_n = (u_{n-1} + tau_n f_n) / (1 + tau_n lam), returned as u_0..u_N."""
    values = np.empty(problem.grid.n_intervals + 1)
    values[0] = problem.u0
    for n, tau in enumerate(problem.grid.steps, start=1):
        values[n] = (values[n - 1] + tau * problem.forcing[n - 1]) / (1.0 + tau * problem.lam)
    return values


def _relaxation(x: np.ndarray) -> np.ndarray:
    """(1 - e^{-x}) / x, equal to 1 at x = 0."""
    x = np.asarray(x, dtype=float)
    safe = np.where(x > 0.0, x, 1.0)
    return np.where(x > 0.0, -np.expm1(-safe) / safe, 1.0)


def _flow(start: float, forcing: float, lam: float, s: np.ndarray) -> np.ndarray:
    """Solution at elapsed time s of u' + lam u = forcing from u(0) = start."""
    s = np.asarray(s, dtype=float)
    return start * np.exp(-lam * s) + forcing * s * _relaxation(lam * s)


def exact_mode_solution(problem: ModeProblem) -> Callable[[float], np.ndarray]:
    """u(t) = F / lam + (u0 - F / lam) e^{-lam t} for forcing constant F.

    Raises:
        UnsupportedForcing: If the forcing changes between intervals; use
            `piecewise_exact_mode_solution` instead.
    """
    if not problem.has_constant_forcing:
        raise UnsupportedForcing("exact_mode_solution needs constant forcing")
    forcing = float(problem.forcing[0])
    lam, u0 = problem.lam, problem.u0

    def solution(t):
        return _flow(u0, forcing, lam, t)

    return solution


@dataclass(frozen=True)
class PiecewiseExactMode:
    """Exact solution for forcing that is constant on every interval."""

    problem: ModeProblem
    node_values: np.ndarray = field(init=False)

    def __post_init__(self):
        grid = self.problem.grid
        values = np.empty(grid.n_intervals + 1)
        values[0] = self.problem.u0
        for n, tau in enumerate(grid.steps, start=1):
            values[n] = _flow(values[n - 1], self.problem.forcing[n - 1], self.problem.lam, tau)
        values.setflags(write=False)
        object.__setattr__(self, "node_values", values)

    def on_interval(self, n: int, s: np.ndarray) -> np.ndarray:
        """Values at elapsed times `s` from t_{n-1} inside I_n."""
        return _flow(self.node_values[n - 1], self.problem.forcing[n - 1], self.problem.lam, s)

    def __call__(self, t):
        grid = self.problem.grid
        t = np.asarray(t, dtype=float)
        n = np.clip(np.searchsorted(grid.nodes, t, side="left"), 1, grid.n_intervals)
        return _flow(
            self.node_values[n - 1],
            self.problem.forcing[n - 1],
            self.problem.lam,
            t - grid.nodes[n - 1],
        )


def piecewise_exact_mode_solution(problem: ModeProblem) -> PiecewiseExactMode:
    return PiecewiseExactMode(problem)


def _composite_rule(lam: float, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss nodes and weights on [0, tau] refined inside the layer e^{-lam s}."""
    s, w = gauss_interval(MODE_GAUSS_POINTS)
    layer = min(tau, LAYER_WIDTH / lam)
    pieces = max(1, math.ceil(lam * layer))
    edges = list(np.linspace(0.0, layer, pieces + 1))
    if layer < tau:
        edges.append(tau)
    points = []
    weights = []
    for a, b in zip(edges[:-1], edges[1:]):
        points.append(a + (b - a) * s)
        weights.append((b - a) * w)
    return np.concatenate(points), np.concatenate(weights)


def mode_energy_report(
    problem: ModeProblem, trajectory: np.ndarray | None = None
) -> ModeEnergyReport:
    """Energy norms of u - u_tau, u - U_tau and u - (u_tau + U_tau)/2, and of u_tau - U_tau.

    `jump_E` uses (lam / 3) sum tau_n (u_n - u_{n-1})^2; `jump_quadrature`
    is the same quantity by quadrature.
    """
    if trajectory is None:
        trajectory = solve_mode(problem)
    trajectory = np.asarray(trajectory, dtype=float)
    lam = problem.lam
    exact = piecewise_exact_mode_solution(problem)
    const_sq = affine_sq = mid_sq = jump_sq = 0.0
    for n, tau in enumerate(problem.grid.steps, start=1):
        s, w = _composite_rule(lam, tau)
        u = exact.on_interval(n, s)
        constant = trajectory[n]
        affine = trajectory[n - 1] + (s / tau) * (trajectory[n] - trajectory[n - 1])
        const_sq += lam * float(w @ (u - constant) ** 2)
        affine_sq += lam * float(w @ (u - affine) ** 2)
        mid_sq += lam * float(w @ (u - 0.5 * (constant + affine)) ** 2)
        jump_sq += lam * float(w @ (constant - affine) ** 2)

    final_sq = 0.5 * (exact.node_values[-1] - trajectory[-1]) ** 2
    jumps = np.diff(trajectory)
    closed = lam / 3.0 * float(problem.grid.steps @ jumps**2)
    return ModeEnergyReport(
        err_const_E=math.sqrt(final_sq + const_sq),
        err_affine_E=math.sqrt(final_sq + affine_sq),
        err_mid_E=math.sqrt(final_sq + mid_sq),
        jump_E=math.sqrt(closed),
        jump_quadrature=math.sqrt(jump_sq),
    )


def _increasing(values: Sequence[float]) -> bool:
    return all(b > a for a, b in zip(values[:-1], values[1:]))


def counterexample_sweep(lambdas: Sequence[float] = DEFAULT_LAMBDAS) -> CounterexampleSweep:
    """Ratios jump_E / err_E for one step tau = 1, f = 1, u0 = 0.

    jump / err_affine must grow as lam decreases below 1 and jump / err_const
    as lam increases above 1.
    """
    grid = TimeGrid.uniform(1.0, 1)
    rows = []
    for lam in sorted(float(v) for v in lambdas):
        report = mode_energy_report(ModeProblem.constant(lam, grid, 1.0))
        rows.append(
            CounterexampleRow(
                lam=lam,
                jump_E=report.jump_E,
                err_const_E=report.err_const_E,
                err_affine_E=report.err_affine_E,
                err_mid_E=report.err_mid_E,
                ratio_const=report.jump_E / report.err_const_E,
                ratio_affine=report.jump_E / report.err_affine_E,
            )
        )
    small = [r.ratio_affine for r in reversed(rows) if r.lam <= 1.0]
    large = [r.ratio_const for r in rows if r.lam >= 1.0]
    return CounterexampleSweep(
        rows=tuple(rows),
        affine_monotone=_increasing(small),
        const_monotone=_increasing(large),
    )


def random_mode_problem(
    rng: np.random.Generator,
    max_steps: int = 16,
    lam_range: tuple[float, float] = (1e-3, 1e3),
) -> ModeProblem:
    """Log-uniform lam, random graded grid, random forcing and initial value."""
    lam = float(np.exp(rng.uniform(np.log(lam_range[0]), np.log(lam_range[1]))))
    n_steps = int(rng.integers(1, max_steps + 1))
    steps = rng.uniform(0.2, 1.0, size=n_steps)
    grid = TimeGrid(np.concatenate([[0.0], np.cumsum(steps)]))
    return ModeProblem(lam, grid, rng.normal(size=n_steps), float(rng.normal()))
