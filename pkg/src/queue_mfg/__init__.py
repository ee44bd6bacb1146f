"""Mean-field games of drift-controlled reflected diffusions and their queueing prelimit."""

from .errors import ConfigurationError, ConvergenceError, DomainError, NumericalError, ValidationError
from .measures import GridSpec, MeasureFlow, flow_distance, holder_constant, mix_flows, w1
from .model import ModelSpec, diagnose_assumptions, hamiltonian_argmin, make_builtin_model
from .skorohod import ReflectedTriple, reflect_path

__all__ = [
    "ConfigurationError", "ConvergenceError", "DomainError", "NumericalError", "ValidationError",
    "GridSpec", "MeasureFlow", "flow_distance", "holder_constant", "mix_flows", "w1",
    "ModelSpec", "diagnose_assumptions", "hamiltonian_argmin", "make_builtin_model",
    "ReflectedTriple", "reflect_path",
]
