"""Synchronization by groups for coupled wave systems with Robin boundary controls."""

from .algebra import (BiorthogonalFamily, CompatibilityReport, CouplingSpec,
                      GroupPartition, InvarianceReport, KalmanReport,
                      KernelBasis, RankReport, ReducedSystem,
                      SimilarityCertificate, SyncMatrix, biorthogonal_family,
                      block_local_condition, build_control_matrix,
                      build_sync_matrix, check_cp_compatibility,
                      invariance_coefficients, kernel_basis, numerical_rank,
                      rank_condition, reduce_matrix, reduce_system,
                      reduced_by_formula, reduced_similarity,
                      symmetric_similarity, two_group_kalman,
                      zero_sum_condition)
from .control import (ControlBasis, ControlOperator, SynthesisResult,
                      assemble_control_operator, free_final_state,
                      gramian_spectrum, neumann_to_robin_lift,
                      observation_matrix, solve_null_control,
                      synthesize_sync_control)
from .exceptions import (BlowUpError, CFLViolation, DegenerateFamilyError,
                         DimensionError, IncompatibleMatrixError,
                         MatrixConditionError, NotDiagonalizable,
                         NotRealSpectrum, PartitionError, RankConditionError,
                         RobinSyncError, SynthesisError)
from .verify import (SolverConfig, VerificationReport,
                     compare_state_independence, estimate_check,
                     extract_sync_state, noncontrollability_probe,
                     solve_decoupled_states, verify_synchronization)
from .wave import (BoxDomain, ControlSignal, SimulationTrace, State,
                   SystemInstance, boundary_work, duality_residual, energy,
                   pairing, robin_compatible, robin_via_neumann, simulate,
                   simulate_adjoint, state_norm, step)

__version__ = "0.1.0"
