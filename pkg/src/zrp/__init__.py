"""Simulation and verification lab for the zero-range process in a symmetric random environment."""

__version__ = "0.1.0"

from .dynamics import Configuration, TrajectoryRecord, coupled_simulate, simulate  # noqa: E402
from .environment import (Constant, Environment, IidTwoPoint, IidUniform,  # noqa: E402
                          PeriodicCheckerboard, sample_environment)
from .errors import (ConfigurationError, ConvergenceError, PreconditionError, RangeError,  # noqa: E402
                     ResourceError, UsageError, ZRPError)
from .functions import FourierFunction, cosine, sine  # noqa: E402
from .homogenization import HomogenizedMatrix, effective_matrix, harmonic_mean_oracle_1d  # noqa: E402
from .lattice import GridFunction, TorusGrid, discrete_norms, interpolate, neighbors  # noqa: E402
from .measures import (FugacityTables, RateFunction, build_fugacity_tables,  # noqa: E402
                       sample_equilibrium, sample_profile)
from .resolvent import apply_LN, corrected_test_function, solve_resolvent  # noqa: E402

__all__ = [
    "Configuration", "TrajectoryRecord", "simulate", "coupled_simulate",
    "Constant", "Environment", "IidTwoPoint", "IidUniform", "PeriodicCheckerboard", "sample_environment",
    "ZRPError", "UsageError", "ConfigurationError", "PreconditionError", "RangeError", "ResourceError",
    "ConvergenceError", "FourierFunction", "cosine", "sine",
    "HomogenizedMatrix", "effective_matrix", "harmonic_mean_oracle_1d",
    "GridFunction", "TorusGrid", "discrete_norms", "interpolate", "neighbors",
    "FugacityTables", "RateFunction", "build_fugacity_tables", "sample_equilibrium", "sample_profile",
    "apply_LN", "corrected_test_function", "solve_resolvent",
]
