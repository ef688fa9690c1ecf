"""Queueing Petri Net models and their simulation."""

from .model import (
    Arc,
    Mode,
    Place,
    QpnModel,
    QueueSpec,
    RequestClass,
    Transition,
    WorkloadSpec,
    apply_deviation,
    load_model,
    load_workload,
    model_from_dict,
    save_model,
    validate_model,
)
from .simulate import PredictionResult, SimConfig, compile_routing, offered_load, simulate

__all__ = [
    "Arc",
    "Mode",
    "Place",
    "PredictionResult",
    "QpnModel",
    "QueueSpec",
    "RequestClass",
    "SimConfig",
    "Transition",
    "WorkloadSpec",
    "apply_deviation",
    "compile_routing",
    "load_model",
    "load_workload",
    "model_from_dict",
    "offered_load",
    "save_model",
    "simulate",
    "validate_model",
]
