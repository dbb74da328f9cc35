"""Feynman-Kac Monte Carlo for linear backward equations driven by a weighted
fractional Brownian field."""

from .errors import (DegenerateSeries, DomainError, FactorizationError, FracFKError, GridMismatch,
                     InvalidParams, OutOfDomain, SingularPoint, StabilityError)
from .model import HurstParams, ModelParams, ValidationReport, WeightParams, validate_params
from .paths import BrownianPath, TerminalSpec, TimeGrid
from .field_sim import FieldSample, MollifierParams
from .fk_solver import MCEstimate, SolverConfig, estimate_u, estimate_z, structure_increment

__version__ = "0.1.0"
