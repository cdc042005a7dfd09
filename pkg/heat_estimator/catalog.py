from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from heat_estimator.estimators import ExactSolution

PI = np.pi


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    dimension: int | None  # None: valid in every dimension
    solution: ExactSolution
    description: str


def _sin1d_decay() -> ExactSolution:
    def u(x, t):
        return np.sin(PI * x[:, 0]) * np.exp(-t)

    def grad_u(x, t):
        return (PI * np.cos(PI * x[:, 0]) * np.exp(-t))[:, None]

    return ExactSolution(
        u=u,
        grad_u=grad_u,
        f=lambda x, t: (PI**2 - 1.0) * u(x, t),
        u0=lambda x: u(x, 0.0),
        laplace_u=lambda x, t: -(PI**2) * u(x, t),
        dimension=1,
    )


def _sin2d_decay() -> ExactSolution:
    def u(x, t):
        return np.sin(PI * x[:, 0]) * np.sin(PI * x[:, 1]) * np.exp(-t)

    def grad_u(x, t):
        sx, sy = np.sin(PI * x[:, 0]), np.sin(PI * x[:, 1])
        cx, cy = np.cos(PI * x[:, 0]), np.cos(PI * x[:, 1])
        return PI * np.exp(-t) * np.column_stack([cx * sy, sx * cy])

    return ExactSolution(
        u=u,
        grad_u=grad_u,
        f=lambda x, t: (2.0 * PI**2 - 1.0) * u(x, t),
        u0=lambda x: u(x, 0.0),
        laplace_u=lambda x, t: -2.0 * PI**2 * u(x, t),
        dimension=2,
    )


def _poly1d() -> ExactSolution:
    def bubble(x):
        return x[:, 0] * (1.0 - x[:, 0])

    return ExactSolution(
        u=lambda x, t: bubble(x) * (1.0 + t),
        grad_u=lambda x, t: ((1.0 - 2.0 * x[:, 0]) * (1.0 + t))[:, None],
        f=lambda x, t: bubble(x) + 2.0 * (1.0 + t),
        u0=bubble,
        laplace_u=lambda x, t: np.full(len(x), -2.0 * (1.0 + t)),
        dimension=1,
    )


def _zero() -> ExactSolution:
    def zeros(x, t=0.0):
        return np.zeros(len(x))

    return ExactSolution(
        u=zeros,
        grad_u=lambda x, t: np.zeros(np.shape(x)),
        f=zeros,
        u0=zeros,
        laplace_u=zeros,
        dimension=2,
    )


_ENTRIES = {
    "sin1d_decay": (1, _sin1d_decay, "u = sin(pi x) e^-t on (0, 1)"),
    "sin2d_decay": (2, _sin2d_decay, "u = sin(pi x) sin(pi y) e^-t on (0, 1)^2"),
    "poly1d": (1, _poly1d, "u = x (1 - x)(1 + t) on (0, 1)"),
    "zero": (None, _zero, "u = 0 in any dimension"),
}


def catalog() -> list[CatalogEntry]:
    """All manufactured solutions, f = du/dt - laplace(u) in closed form."""
    return [get_entry(name) for name in _ENTRIES]


def get_entry(name: str) -> CatalogEntry:
    """Look up a catalog entry by name.

    Raises:
        KeyError: If `name` is unknown; the message lists the available names.
    """
    try:
        dimension, factory, description = _ENTRIES[name]
    except KeyError:
        raise KeyError(
            f"unknown catalog entry {name!r}; available: {', '.join(sorted(_ENTRIES))}"
        ) from None
    return CatalogEntry(name, dimension, factory(), description)
