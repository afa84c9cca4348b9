"""mfgkit: linear-quadratic mean-field control/games toolkit.

Riccati backward solves, closed-form Master-equation solutions and residual
checks, conditional McKean-Vlasov simulation with common noise, finite-player
approximation identities, and the interbank systemic-risk model.
"""

from .errors import (BlowUpError, ConfigError, DimensionMismatchError,
                     GridMismatchError, KindMismatchError, MfgkitError,
                     OutOfRangeError)
from .kernels import USING_COMPILED
from .lq_model import (LQParams, MasterAnsatz, MeasureMoments, eval_U, eval_V,
                       hamiltonian, optimal_control, optimal_drift,
                       solve_master_mfc, solve_master_mfg)
from .riccati import (RiccatiSolution, TimeGrid, eval_at, integrate_backward,
                      integrate_scalar_quadrature)

__version__ = "0.1.0"

__all__ = [
    "BlowUpError", "ConfigError", "DimensionMismatchError", "GridMismatchError",
    "KindMismatchError", "MfgkitError", "OutOfRangeError", "USING_COMPILED",
    "LQParams", "MasterAnsatz", "MeasureMoments", "eval_U", "eval_V",
    "hamiltonian", "optimal_control", "optimal_drift", "solve_master_mfc",
    "solve_master_mfg", "RiccatiSolution", "TimeGrid", "eval_at",
    "integrate_backward", "integrate_scalar_quadrature", "__version__",
]
