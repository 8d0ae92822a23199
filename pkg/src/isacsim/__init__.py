"""Link-level simulator for sensing-assisted channel estimation in distributed MIMO."""

from .config import SimConfig, parse_config
from .engine import run_frame, run_seed, run_simulation, run_sweep, summarize

__all__ = ["SimConfig", "parse_config", "run_frame", "run_seed", "run_simulation", "run_sweep", "summarize"]
__version__ = "0.1.0"
