"""Decentralized H-infinity detectors for biasing attacks on networked observers."""

from .errors import (
    ConfigError,
    DivergenceError,
    HinfDetectError,
    InfeasibleError,
    RiccatiBoundError,
)
from .io import parse_scenario, parse_scenario_text, scenario_from_dict
from .metrics import decay_fit, detect, hinf_ratio, tracking_error
from .model import ScenarioConfig, build_tracker, validate_scenario
from .runtime import SimResult, simulate
from .signals import SignalSpec, sample
from .synthesis import check_lmi_global, integrate_riccati, sweep_gamma, synthesize

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DivergenceError",
    "HinfDetectError",
    "InfeasibleError",
    "RiccatiBoundError",
    "ScenarioConfig",
    "SignalSpec",
    "SimResult",
    "build_tracker",
    "check_lmi_global",
    "decay_fit",
    "detect",
    "hinf_ratio",
    "integrate_riccati",
    "parse_scenario",
    "parse_scenario_text",
    "sample",
    "scenario_from_dict",
    "simulate",
    "sweep_gamma",
    "synthesize",
    "tracking_error",
    "validate_scenario",
]
