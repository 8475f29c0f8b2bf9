"""Discrete-event co-simulator of LTE uplink scheduling backhauled over a
DOCSIS upstream, with bandwidth-report pipelined grant scheduling."""

from .bwr import BandwidthReport, decode_bwr, encode_bwr
from .config import SimConfig, parse_config, preset
from .core import Rng, RngStreams, Simulator
from .lte import harq_grant_utilization
from .runner import run_scenario, run_single

__version__ = "0.1.0"

__all__ = [
    "BandwidthReport", "Rng", "RngStreams", "SimConfig", "Simulator",
    "decode_bwr", "encode_bwr", "harq_grant_utilization", "parse_config",
    "preset", "run_scenario", "run_single", "__version__",
]
