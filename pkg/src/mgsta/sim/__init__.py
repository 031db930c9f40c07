"""Closed-loop simulation of the plant under the super-twisting control law."""

from ._accel import default_backend
from .core import (
    CallableDisturbance,
    CostCheck,
    DisturbanceSpec,
    LinearExosystem,
    SimConfig,
    TrajectoryRecord,
    c_of_sigma,
    MonotonicityCheck,
    check_cost_bound,
    check_nu_monotone,
    control_law,
    detect_sliding,
    export_csv,
    rhs,
    simulate,
)

__all__ = [
    "CallableDisturbance",
    "CostCheck",
    "DisturbanceSpec",
    "LinearExosystem",
    "SimConfig",
    "TrajectoryRecord",
    "c_of_sigma",
    "MonotonicityCheck",
    "check_cost_bound",
    "check_nu_monotone",
    "control_law",
    "default_backend",
    "detect_sliding",
    "export_csv",
    "rhs",
    "simulate",
]
