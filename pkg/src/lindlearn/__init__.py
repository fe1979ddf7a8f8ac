"""Kraus-form Lindblad simulation and Levenberg-Marquardt parameter learning."""

from .model import ModelSpec, ParameterVector, build_operators, random_true_model
from .operators import Observable, all_up_state, observable_basis, pauli_string
from .propagator import KrausMap, apply, apply_adjoint, evolve_expectations, kraus_first_order, kraus_second_order

__all__ = [
    "KrausMap",
    "ModelSpec",
    "Observable",
    "ParameterVector",
    "all_up_state",
    "apply",
    "apply_adjoint",
    "build_operators",
    "evolve_expectations",
    "kraus_first_order",
    "kraus_second_order",
    "observable_basis",
    "pauli_string",
    "random_true_model",
]
