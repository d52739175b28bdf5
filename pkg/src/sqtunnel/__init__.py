"""Tunneling times of stationary Nelson diffusions in double-well potentials."""
from .errors import (BracketingError, ConfigError, DomainError, FitFailure, GridTooSmallError, InfiniteWallError,
                     InsufficientDataError, MatchingError, NoBarrierError, NoDoubletError, NumericalFailure,
                     OrderingError, ResolutionError, SqtError, StageError, UnitError)
from .potentials import RosenMorseDouble, SquareDoubleWell, TurningPoints, evaluate, reduced_mass, turning_points
from .units import UnitSystem

__version__ = "0.1.0"

__all__ = [
    "BracketingError", "ConfigError", "DomainError", "FitFailure", "GridTooSmallError", "InfiniteWallError",
    "InsufficientDataError", "MatchingError", "NoBarrierError", "NoDoubletError", "NumericalFailure",
    "OrderingError", "ResolutionError", "SqtError", "StageError", "UnitError",
    "RosenMorseDouble", "SquareDoubleWell", "TurningPoints", "evaluate", "reduced_mass", "turning_points",
    "UnitSystem", "__version__",
]
