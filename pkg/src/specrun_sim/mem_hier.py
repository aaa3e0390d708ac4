"""Four-level LRU cache timing model: L1I/L1D, unified L2 and L3, flat memory.

Caches are timing-only: they track which lines are resident, never values.
Miss latency is the sum of lookup latencies along the walk, and a miss fills
every level above the one that hit (non-inclusive, no back-invalidation).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .errors import AddressError, ConfigError
from .isa import DEFAULT_MEM_SIZE


class Level(enum.IntEnum):
    L1 = 1
    L2 = 2
    L3 = 3
    MEM = 4


@dataclass(frozen=True)
class LevelConfig:
    size_bytes: int
    ways: int
    latency: int

    @classmethod
    def parse(cls, text: str) -> "LevelConfig":
        """``"16KB,4,2"`` or ``"16384,4,2"``."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 3:
            raise ConfigError(f"cache level needs size,ways,latency: {text!r}")
        return cls(_parse_size(parts[0]), int(parts[1]), int(parts[2]))

    def render(self) -> str:
        return f"{self.size_bytes},{self.ways},{self.latency}"


def _parse_size(text: str) -> int:
    t = text.upper().replace(" ", "")
    for suffix, mult in (("KB", 1 << 10), ("MB", 1 << 20), ("K", 1 << 10), ("M", 1 << 20)):
        if t.endswith(suffix):
            return int(t[: -len(suffix)]) * mult
    return int(t, 0)


@dataclass(frozen=True)
class HierarchyConfig:
    l1i: LevelConfig = LevelConfig(16 * 1024, 4, 2)
    l1d: LevelConfig = LevelConfig(16 * 1024, 4, 2)
    l2: LevelConfig = LevelConfig(128 * 1024, 8, 8)
    l3: LevelConfig = LevelConfig(4 * 1024 * 1024, 8, 32)
    line_bytes: int = 64
    mem_latency: int = 200
    mem_size: int = DEFAULT_MEM_SIZE

    def validate(self) -> None:
        for name in ("l1i", "l1d", "l2", "l3"):
            lv = getattr(self, name)
            if lv.size_bytes <= 0 or lv.ways <= 0 or lv.latency <= 0:
                raise ConfigError(f"{name}: size, ways and latency must be positive")
            if lv.size_bytes % (lv.ways * self.line_bytes):
                raise ConfigError(f"{name}: size not divisible by ways x line_bytes")
        if self.line_bytes <= 0 or self.line_bytes & (self.line_bytes - 1):
            raise ConfigError("line_bytes must be a positive power of two")
        if self.mem_latency <= 0 or self.mem_size <= 0:
            raise ConfigError("memory latency and size must be positive")
        for l1 in (self.l1i, self.l1d):
            if not l1.latency < self.l2.latency < self.l3.latency < self.mem_latency:
                raise ConfigError("latencies must increase L1 < L2 < L3 < memory")


@dataclass(frozen=True, slots=True)
class AccessResult:
    latency: int
    hit_level: Level
    line_addr: int


class CacheLevel:
    """Set-associative tag store; each set lists resident lines LRU-first."""

    def __init__(self, name: str, cfg: LevelConfig, line_bytes: int):
        self.name = name
        self.ways = cfg.ways
        self.latency = cfg.latency
        self.num_sets = cfg.size_bytes // (cfg.ways * line_bytes)
        self.sets: list[list[int]] = [[] for _ in range(self.num_sets)]

    def contains(self, line: int) -> bool:
        return line in self.sets[line % self.num_sets]

    def touch(self, line: int) -> bool:
        """Move ``line`` to MRU if resident. Returns residency."""
        s = self.sets[line % self.num_sets]
        if line in s:
            if s[-1] != line:
                s.remove(line)
                s.append(line)
            return True
        return False

    def insert(self, line: int) -> int | None:
        """Install as MRU; returns the evicted line, if any."""
        s = self.sets[line % self.num_sets]
        if line in s:
            s.remove(line)
            s.append(line)
            return None
        victim = s.pop(0) if len(s) >= self.ways else None
        s.append(line)
        return victim

    def invalidate(self, line: int) -> bool:
        s = self.sets[line % self.num_sets]
        if line in s:
            s.remove(line)
            return True
        return False

    def lru_ranks(self, set_index: int) -> dict[int, int]:
        """Rank 0 is most recently used."""
        s = self.sets[set_index]
        return {line: len(s) - 1 - i for i, line in enumerate(s)}

    def snapshot(self) -> tuple[tuple[int, ...], ...]:
        return tuple(tuple(s) for s in self.sets)


class CacheHierarchy:
    def __init__(self, cfg: HierarchyConfig | None = None):
        cfg = cfg or HierarchyConfig()
        cfg.validate()
        self.cfg = cfg
        self.line_bytes = cfg.line_bytes
        self.shift = cfg.line_bytes.bit_length() - 1
        self.mem_size = cfg.mem_size
        self.mem_latency = cfg.mem_latency
        self.l1i = CacheLevel("L1I", cfg.l1i, cfg.line_bytes)
        self.l1d = CacheLevel("L1D", cfg.l1d, cfg.line_bytes)
        self.l2 = CacheLevel("L2", cfg.l2, cfg.line_bytes)
        self.l3 = CacheLevel("L3", cfg.l3, cfg.line_bytes)

    def _check(self, addr: int) -> None:
        if not 0 <= addr < self.mem_size:
            raise AddressError(f"address {addr:#x} outside memory of {self.mem_size:#x} bytes")

    def _path(self, kind: str) -> tuple[CacheLevel, CacheLevel, CacheLevel]:
        return (self.l1i if kind == "ifetch" else self.l1d, self.l2, self.l3)

    def line_of(self, addr: int) -> int:
        return addr >> self.shift

    def access(self, addr: int, kind: str = "load") -> AccessResult:
        """Timed lookup that updates LRU state and fills on miss."""
        self._check(addr)
        line = addr >> self.shift
        path = self._path(kind)
        lat = 0
        for depth, lv in enumerate(path):
            lat += lv.latency
            if lv.touch(line):
                for upper in path[:depth]:
                    upper.insert(line)
                return AccessResult(lat, Level(depth + 1), line << self.shift)
        lat += self.mem_latency
        for lv in path:
            lv.insert(line)
        return AccessResult(lat, Level.MEM, line << self.shift)

    def peek_latency(self, addr: int, kind: str = "load") -> AccessResult:
        """What ``access`` would report, without touching any state."""
        self._check(addr)
        line = addr >> self.shift
        lat = 0
        for depth, lv in enumerate(self._path(kind)):
            lat += lv.latency
            if lv.contains(line):
                return AccessResult(lat, Level(depth + 1), line << self.shift)
        return AccessResult(lat + self.mem_latency, Level.MEM, line << self.shift)

    def flush_line(self, addr: int) -> None:
        self._check(addr)
        line = addr >> self.shift
        for lv in (self.l1i, self.l1d, self.l2, self.l3):
            lv.invalidate(line)

    def install_line(self, level: str | Level, addr: int) -> None:
        """Make the line resident and MRU at one level, free of charge."""
        self._check(addr)
        self._level(level).insert(addr >> self.shift)

    def _level(self, level) -> CacheLevel:
        key = level.name if isinstance(level, Level) else str(level).upper()
        table = {"L1": self.l1d, "L1D": self.l1d, "L1I": self.l1i, "L2": self.l2, "L3": self.l3}
        if key not in table:
            raise ValueError(f"unknown cache level {level!r}")
        return table[key]

    def resident(self, addr: int) -> list[str]:
        line = addr >> self.shift
        return [lv.name for lv in (self.l1i, self.l1d, self.l2, self.l3) if lv.contains(line)]

    def snapshot(self):
        return tuple(lv.snapshot() for lv in (self.l1i, self.l1d, self.l2, self.l3))


@dataclass
class ReferenceCache:
    """Naive map-of-lines LRU model used as an independent test oracle."""

    num_sets: int
    ways: int
    recency: dict[int, int] = field(default_factory=dict)
    clock: int = 0

    def access(self, line: int) -> tuple[bool, int | None]:
        self.clock += 1
        hit = line in self.recency
        victim = None
        if not hit:
            same_set = [l for l in self.recency if l % self.num_sets == line % self.num_sets]
            if len(same_set) >= self.ways:
                victim = min(same_set, key=self.recency.__getitem__)
                del self.recency[victim]
        self.recency[line] = self.clock
        return hit, victim
