"""Abrikosov vortex lattices at weak fields: radial vortex profiles, gauge-periodic
cell discretization, a gauge-projected corrector and linearized spectra."""

from .vortex_profile import (
    ProfileError, ProfileScalars, VortexProfile, decay_rates, eval_vortex_fields,
    first_critical_field, profile_energy, profile_flux, profile_scalars, shoot_profile, solve_profile,
)
from .lattice_geometry import LatticeShape, gauge_exponent, normalize_shape, verify_cocycle, verify_flux_condition
from .cell_discretization import CellGrid, FieldState, build_approximate_solution, build_grid
from .gl_operator import DiscreteGL, apply_L, energy, gibbs_energy, residual_F
from .ls_solver import SolveReport, SolverError, newton_solve, solve_corrector
from .spectral import SpectralReport, fiber_block, fiber_spectrum, lattice_coercivity, lattice_zero_mode_residuals

__version__ = "0.1.0"
