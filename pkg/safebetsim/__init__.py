"""
SafeBet Sim - trace-driven simulator for speculative memory access control

A Python package that models how a core can let speculative loads proceed
when they only touch memory their trust domain already accessed
non-speculatively:
1. A set-associative permission table (SMACT) with slab/chunk bitmasks
2. Per-instance source tracking across region-crossing calls and returns
3. An out-of-order timing model comparing Baseline, NDA and SafeBet
4. Attack scenarios with a taint-based leak checker
"""

__version__ = "1.0.0"

from .pipeline import CoreConfig, PolicyConfig, SimStats, run
from .smact import Smact, SmactGeometry
from .trace import Trace, load_trace, parse_trace, save_trace, serialize_trace

# Import main components for easy access
from .utils.logger import get_logger, setup_logger

__all__ = [
    # Version info
    "__version__",
    # Logger utilities
    "get_logger",
    "setup_logger",
    # Simulation
    "CoreConfig",
    "PolicyConfig",
    "SimStats",
    "Smact",
    "SmactGeometry",
    "run",
    # Traces
    "Trace",
    "load_trace",
    "parse_trace",
    "save_trace",
    "serialize_trace",
]
