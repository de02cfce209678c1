"""Trajectory-aware routing simulator for formation-flying UAV networks."""

from .campaign import ScenarioConfig, load_config, run_campaign, run_single
from .connectivity import build_timeline, earliest_reachable
from .mobility import build_scenario
from .protocol import decode_header, encode_header, establish_route

__all__ = [
    "ScenarioConfig",
    "build_scenario",
    "build_timeline",
    "decode_header",
    "earliest_reachable",
    "encode_header",
    "establish_route",
    "load_config",
    "run_campaign",
    "run_single",
]
