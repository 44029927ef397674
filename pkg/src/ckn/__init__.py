"""Sharp Caffarelli-Kohn-Nirenberg constants and what they force on volume growth.

Modules
-------
core        parameters, the sharp constant K_a and the extremal family
quadrature  adaptive Gauss-Kronrod integration on finite and infinite ranges
minkowski   Minkowski norms, dual norms and the normalised measure mu_F
mmspace     radial volume profiles of metric measure spaces and their audits
qengine     the Q functions, their ODE and the volume-growth pipeline
variational the radial Rayleigh quotient and a direct minimizer
symmetrize  anisotropic rearrangement of grid functions and grid CKN tests
cli         the ``ckn`` command
"""

__version__ = "0.1.0"

from .core import (CknParams, SharpConstant, extremal_profile, make_params, sharp_constant,
                   unit_ball_volume)
from .errors import (CknError, ConvergenceError, DegenerateInputError, DomainError,
                     InsufficientDataError, ParseError)

__all__ = [
    "__version__",
    "CknParams",
    "SharpConstant",
    "make_params",
    "sharp_constant",
    "extremal_profile",
    "unit_ball_volume",
    "CknError",
    "DomainError",
    "DegenerateInputError",
    "InsufficientDataError",
    "ParseError",
    "ConvergenceError",
]
