"""Simulator configuration: defaults from the modeled processor and a ``key = value`` file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import ConfigError
from .isa import DEFAULT_MEM_SIZE
from .mem_hier import HierarchyConfig, LevelConfig

TRIGGERS = ("mem_miss", "l1d_miss")
DEFENSES = ("none", "sl_cache", "skip_inv_branch")
TRACE_LEVELS = ("summary", "full", "off")


@dataclass(frozen=True)
class SimConfig:
    width: int = 4
    frontend_stages: int = 6
    rob_entries: int = 256
    iq_entries: int = 40
    lq_entries: int = 40
    sq_entries: int = 40
    fu_int_add: int = 1
    fu_int_mul: int = 2
    fu_int_div: int = 5
    fu_int_add_units: int = 4
    fu_int_mul_units: int = 2
    fu_int_div_units: int = 1
    runahead_enabled: bool = True
    runahead_trigger: str = "mem_miss"
    runahead_require_full_rob: bool = False
    defense_mode: str = "none"
    defense_sl_entries: int = 64
    defense_sl_latency: int = 1
    max_cycles: int = 20_000_000
    bp_history_bits: int = 8
    bp_btb_entries: int = 256
    bp_rsb_depth: int = 16
    bp_persist_runahead_updates: bool = True
    cache_l1i: LevelConfig = LevelConfig(16 * 1024, 4, 2)
    cache_l1d: LevelConfig = LevelConfig(16 * 1024, 4, 2)
    cache_l2: LevelConfig = LevelConfig(128 * 1024, 8, 8)
    cache_l3: LevelConfig = LevelConfig(4 * 1024 * 1024, 8, 32)
    cache_line_bytes: int = 64
    mem_latency: int = 200
    mem_size: int = DEFAULT_MEM_SIZE
    trace_events: str = "summary"
    frontend_prewarm_icache: bool = True
    check_invariants: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        counts = ("width", "frontend_stages", "rob_entries", "iq_entries", "lq_entries",
                  "sq_entries", "fu_int_add", "fu_int_mul", "fu_int_div", "fu_int_add_units",
                  "fu_int_mul_units", "fu_int_div_units", "defense_sl_entries",
                  "defense_sl_latency", "max_cycles", "bp_history_bits", "bp_btb_entries",
                  "bp_rsb_depth")
        for name in counts:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{key_of(name)} must be positive")
        if self.width > self.rob_entries:
            raise ConfigError("width must not exceed rob_entries")
        if self.runahead_trigger not in TRIGGERS:
            raise ConfigError(f"runahead.trigger must be one of {', '.join(TRIGGERS)}")
        if self.defense_mode not in DEFENSES:
            raise ConfigError(f"defense.mode must be one of {', '.join(DEFENSES)}")
        if self.trace_events not in TRACE_LEVELS:
            raise ConfigError(f"trace.events must be one of {', '.join(TRACE_LEVELS)}")
        self.hierarchy().validate()

    def hierarchy(self) -> HierarchyConfig:
        return HierarchyConfig(self.cache_l1i, self.cache_l1d, self.cache_l2, self.cache_l3,
                               self.cache_line_bytes, self.mem_latency, self.mem_size)

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def with_keys(self, overrides: dict[str, str]) -> "SimConfig":
        """Apply dotted-key string overrides, e.g. ``{"rob_entries": "64"}``."""
        changes = {}
        for key, text in overrides.items():
            name = field_of(key)
            changes[name] = _convert(name, text)
        try:
            return self.replace(**changes)
        except TypeError as e:  # pragma: no cover - guarded by field_of
            raise ConfigError(str(e)) from None

    def render(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, LevelConfig):
                v = v.render()
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{key_of(f.name)} = {v}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in dataclasses.fields(SimConfig)}
_PREFIXES = ("fu", "runahead", "defense", "bp", "cache", "mem", "trace", "frontend")


def key_of(name: str) -> str:
    """Field name to config key: ``runahead_enabled`` -> ``runahead.enabled``."""
    head, _, rest = name.partition("_")
    if head in _PREFIXES and rest:
        return f"{head}.{rest}"
    return name


_KEYS = {key_of(n): n for n in _FIELDS}


def field_of(key: str) -> str:
    k = key.strip()
    if k in _KEYS:
        return _KEYS[k]
    raise ConfigError(f"unknown config key {k!r}")


def _convert(name: str, text: str):
    default = getattr(SimConfig, name)
    t = text.strip()
    try:
        if isinstance(default, bool):
            low = t.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(t)
        if isinstance(default, int):
            return int(t, 0)
        if isinstance(default, LevelConfig):
            return LevelConfig.parse(t)
    except ValueError:
        raise ConfigError(f"bad value for {key_of(name)}: {text!r}") from None
    return t


def parse_config(text: str, base: SimConfig | None = None) -> SimConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    overrides = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        try:
            field_of(key)
        except ConfigError as e:
            raise ConfigError(f"line {lineno}: {e}") from None
        overrides[key.strip()] = value
    return (base or SimConfig()).with_keys(overrides)


def load_config(path) -> SimConfig:
    with open(path) as fh:
        return parse_config(fh.read())
