"""Fast collision gates for fermions in a double-well superlattice.

Band structure and Wannier bases (``lattice``), Hubbard parameters
(``hubbard``), fermionic Fock spaces (``fock``), time evolution
(``dynamics``), pulse optimization (``optimize``), closed-form two-band
results (``analytic``), noise studies (``robustness``) and the command line
(``cli``).
"""

from .analytic import AnalyticSolution, analytic_trajectory, qsl_duration
from .dynamics import (GATE_PAIRS, STATE_PAIRS, GateSimulator, LeakageError, ManyBodyState, Model,
                       PulseSchedule, Trajectory, computational_state, evaluate_gate_cost,
                       evaluate_state_cost, propagate_nonadiabatic, step_propagator)
from .fock import (FockBasis, HamiltonianMatrix, assemble_3d_hamiltonian, assemble_multiband_hamiltonian,
                   assemble_two_band_hamiltonian, enumerate_fock_basis, lift_projection_to_fock)
from .hubbard import (HubbardParameters, LatticeCache, OutOfDomainError, SplineTable, band_energy_gradient,
                      build_spline_table, compute_hubbard_parameters)
from .lattice import (BandSolution, DepthPoint, Discretization, LatticeConfig, LatticeError, WannierBasis,
                      build_fourier_hamiltonian, build_wannier_basis, solve_bands, wannier_overlap_matrix)
from .optimize import (Objective, OptimizationProblem, OptimizationReport, make_problem, optimize_full_gate,
                       optimize_sqrt_swap, optimize_state_transfer, scan_scattering_length)
from .robustness import (DecayFit, NoiseSpec, fit_decay_time, simulate_intensity_grid,
                         simulate_interwell_leakage, simulate_phase_noise, scan_scattering_deviation)

__version__ = "0.1.0"
