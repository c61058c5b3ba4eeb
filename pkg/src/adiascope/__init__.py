"""Dynamic, geometric and error factors of driven quantum evolutions."""
__version__ = "0.1.0"

from .decompose import (EvolutionDecomposition, ModulationTrace, decompose_continuous,
                        decompose_pulses, u_err_direct, u_err_extracted)
from .errors import (AdiascopeError, ConvergenceError, DimensionError, GeometricConditionError,
                     InvariantError, LabelTrackingError, ToleranceError)
from .experiments import (CpScenario, DriveScenario, SweepResult, build_cp, build_drive,
                          modulation_trace, solve_gamma, sweep_cp, sweep_drive)
from .hamiltonian import HamiltonianModel, ParameterPath, SpinHalfFieldModel, spectral_frame_at
from .linalg import eig_hermitian, expm_skew
from .metrics import QuadratureSpec, adiabaticity_report, delta_u_err
from .propagate import PulseSequence, dyn_phase_condition_check, propagate_continuous, propagate_pulses
