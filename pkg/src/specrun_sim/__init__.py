"""Cycle-approximate out-of-order core with runahead execution, Spectre PoCs and the SL-cache defense."""

__version__ = "0.1.0"

from .asm import assemble, disassemble, read_image, write_image
from .attacks import (
    PocParams, ProbeReport, gen_poc, gen_window_probe, measure_window, recover_secret, run_poc,
)
from .config import SimConfig, load_config, parse_config
from .core import Core, RunResult, count_transient_window, run, step_cycle
from .errors import (
    AddressError, AsmError, ConfigError, ParamError, ScopeError, SearchError, SimError,
    SpecrunError, TrapError,
)
from .interp import interpret
from .mem_hier import CacheHierarchy, HierarchyConfig, Level, LevelConfig

__all__ = [
    "AddressError", "AsmError", "CacheHierarchy", "ConfigError", "Core", "HierarchyConfig",
    "Level", "LevelConfig", "ParamError", "PocParams", "ProbeReport", "RunResult", "ScopeError",
    "SearchError", "SimConfig", "SimError", "SpecrunError", "TrapError", "assemble",
    "count_transient_window", "disassemble", "gen_poc", "gen_window_probe", "interpret",
    "load_config", "measure_window", "parse_config", "read_image", "recover_secret", "run",
    "run_poc", "step_cycle", "write_image",
]
