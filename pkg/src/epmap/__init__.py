"""epmap: third-order analysis of end-point maps of control-affine systems.

Library layout:

* :mod:`epmap.polyalg`    -- sparse polynomials, vector fields, Lie brackets
* :mod:`epmap.signals`    -- quasi-trig / piecewise control signals
* :mod:`epmap.flows`      -- exact and numeric flows, pullbacks, adjoints
* :mod:`epmap.endpoint`   -- cokernel and scalarized intrinsic differentials
* :mod:`epmap.conditions` -- PMP / Goh / third-order necessary conditions
* :mod:`epmap.cubic`      -- vector-valued cubic maps and regular zeros
* :mod:`epmap.openness`   -- perturbation families and ball-cover verification
* :mod:`epmap.systems`    -- problem specs, builtin examples
* :mod:`epmap.cli`        -- the ``epmap`` command
"""

__version__ = "0.1.0"

from .errors import (
    ConstructionError,
    DimensionMismatch,
    EpmapError,
    ExactBackendUnavailable,
    MembershipError,
    NumericFailure,
    SignalParseError,
    ValidationError,
)

__all__ = [
    "__version__",
    "EpmapError",
    "DimensionMismatch",
    "SignalParseError",
    "ExactBackendUnavailable",
    "NumericFailure",
    "MembershipError",
    "ConstructionError",
    "ValidationError",
]
