"""Finite-energy solutions of the Kazdan-Warner equation on the square lattice Z^2.

    -Delta u = eps exp(kappa u) + beta delta_0,   eps = +1 (source) or -1 (absorption)

The package builds the lattice Green's function, convolves with it, solves
the normalised fixed-point problems for both signs, constructs the extremal
absorption solution by monotone iteration, and measures the constants and
asymptotics that the existence theory depends on.
"""

__version__ = "0.1.0"

from .lattice import (DomainError, GridFunction, LatticePoint, TailModel, TruncatedDomain, boundary_flux,
                      laplacian, laplacian_grid, lattice_sum, norm_ordering_check, tail_bound, weighted_norm)
from .greens import (CLASSICAL_CONSTANT, HALF_GAMMA0, GreensConstructionError, GreensTable,
                     asymptotic_fit, build_greens_table, eval_phi0, fourier_oracle, load_or_build)
from .convolution import (Convolver, DecayReport, b_m_tau, convolve, decay_envelope, decay_suite,
                          mean_zero_decay_check, nonzero_mean_decay_check)
from .dirichlet import (DirichletProblem, DirichletSolver, SolverError, maximum_principle_check,
                        maximum_principle_suite, solve_dirichlet)
from .fixedpoint import FixedPointMap, IterationOptions, NonConvergenceError, iterate
from .source import SolveReport, SourceProblem, normalization_constant, solve_source, source_weight, t0_map
from .absorption import (AbsorptionProblem, BarrierConstructionError, BarrierFunction,
                         ExtremalConstructionError, MonotonicityError, barrier_eval, barrier_laplacian,
                         find_m0, layer_structure_check, solve_absorption, solve_extremal, t1_map,
                         uniqueness_check)
from .analysis import (Constants, FitResult, admissible_region_scan, fit_double_log, fit_liouville_shift,
                       fit_log_asymptote, measure_constants, threshold_h0)

__all__ = [name for name in dir() if not name.startswith("_")]
