"""Conditioned Volterra processes: exact conditional laws, small-time limits and LDP checks."""
from .asymptotics import EpsilonLadder, LimitLaw, closed_form_limits
from .conditioning import (
    FunctionalConditionalLaw,
    FunctionalConditioner,
    PathConditionalLaw,
    PathConditioner,
)
from .models import (
    Brownian,
    ConditioningSet,
    FBm,
    Indicator,
    IntegratedVolterra,
    LinearDecay,
    MFoldIBM,
    ProcessModel,
    Tabulated,
)

__all__ = [
    "Brownian",
    "ConditioningSet",
    "EpsilonLadder",
    "FBm",
    "FunctionalConditionalLaw",
    "FunctionalConditioner",
    "Indicator",
    "IntegratedVolterra",
    "LimitLaw",
    "LinearDecay",
    "MFoldIBM",
    "PathConditionalLaw",
    "PathConditioner",
    "ProcessModel",
    "Tabulated",
    "closed_form_limits",
]
__version__ = "0.1.0"
