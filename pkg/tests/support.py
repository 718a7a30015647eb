"""Cached profiles and lattice solutions shared across test modules."""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from vortex_lattice.cell_discretization import FieldState, build_approximate_solution, build_grid
from vortex_lattice.lattice_geometry import LatticeShape
from vortex_lattice.ls_solver import newton_solve, solve_corrector
from vortex_lattice.vortex_profile import solve_profile

SQUARE = 1j
ACCEPTANCE_LINES: list[str] = []
TRIANGULAR = complex(0.5, np.sqrt(3) / 2)


@lru_cache(maxsize=None)
def profile(n: int, kappa: float, r_max: float = 25.0, mesh_size: int = 2000):
    return solve_profile(n, kappa, r_max=r_max, mesh_size=mesh_size, tol=1e-9)


def shape(tau, R):
    return LatticeShape.square(R) if tau == SQUARE else LatticeShape.triangular(R)


@lru_cache(maxsize=None)
def approximate(kappa: float, n: int, R: float, N: int, tau=SQUARE):
    r_max = 25.0 if R <= 12 else 30.0
    return build_approximate_solution(profile(n, kappa, r_max), build_grid(shape(tau, R), N))


@lru_cache(maxsize=None)
def corrected(kappa: float, n: int, R: float, N: int, tau=SQUARE, tol: float = 1e-8):
    """(v, w, report, u) from the fixed-point corrector."""
    v = approximate(kappa, n, R, N, tau)
    w, rep = solve_corrector(v, kappa, tol=tol)
    return v, w, rep, FieldState.from_vector(v.background, v.as_vector() + w)


@lru_cache(maxsize=None)
def solved(kappa: float, n: int, R: float, N: int, tau=SQUARE):
    """Solved state: corrector, with Newton when the fixed point stalls."""
    v, w, rep, u = corrected(kappa, n, R, N, tau)
    if rep.converged:
        return u, "fixed point"
    u, _ = newton_solve(v, kappa, tol=1e-8)
    return u, "newton"
