"""Cycle-approximate out-of-order core with runahead execution and the SL-cache hooks.

Pipeline per cycle: runahead exit check, writeback, runahead entry check,
commit (or pseudo-retire), issue, dispatch, fetch. Values are computed at
issue and delivered at writeback; the ROB holds uops in program order and a
rename map points each architectural register at its youngest in-flight
producer. Caches model timing only, so architectural values always come
from the flat data memory (plus the runahead store buffer while in runahead).
"""
from __future__ import annotations

import bisect
import heapq
from collections import deque
from dataclasses import dataclass, field

from .branch_pred import BranchKind, BranchPredictor, PredictorCheckpoint
from .config import SimConfig
from .errors import SimError, TrapError
from .isa import (
    COND_BRANCHES, I_TYPE, INSN_BYTES, MASK64, NUM_REGS, R_TYPE, WORD_BYTES,
    ArchState, Op, ProgramImage, alu, branch_taken, initial_regs,
)
from .mem_hier import CacheHierarchy, Level
from .runahead import RunaheadController
from .sl_defense import DefenseState, ScopeTracker

NO_ISSUE = frozenset({"nop", "halt", "jmp"})
CONTROL_RESOLVE = frozenset({"branch", "jalr", "ret"})
SUMMARY_KINDS = ("squash", "runahead_enter", "runahead_exit", "cache_fill", "sl_fill",
                 "sl_promote", "sl_delete", "sl_bypass", "sl_refuse", "sl_wait", "skip")


def _classify(op: Op) -> str:
    if op in R_TYPE or op in I_TYPE:
        return {Op.MUL: "mul", Op.DIV: "div"}.get(op, "alu")
    return {
        Op.LI: "li", Op.LD: "load", Op.ST: "store", Op.CLFLUSH: "flush", Op.JMP: "jmp",
        Op.JALR: "jalr", Op.CALL: "call", Op.RET: "ret", Op.NOP: "nop",
        Op.RDCYCLE: "rdcycle", Op.HALT: "halt",
    }.get(op, "branch" if op in COND_BRANCHES else "alu")


@dataclass(frozen=True, slots=True)
class Decoded:
    op: Op
    cls: str
    srcs: tuple[int, ...]
    dest: int
    imm: int
    target: int | None
    fu: str


def decode(program: ProgramImage) -> list[Decoded]:
    out = []
    for ins in program.instructions:
        cls = _classify(ins.op)
        fu = cls if cls in ("mul", "div") else "alu"
        out.append(Decoded(ins.op, cls, tuple(ins.sources), ins.dest, ins.imm, ins.target, fu))
    return out


class Uop:
    """One in-flight instruction instance (a ROB entry once dispatched)."""

    __slots__ = (
        "seq", "pc", "d", "cls", "dest", "sv", "si", "st", "pending", "waiters",
        "val", "inv", "taint", "in_iq", "issued", "done", "squashed", "done_cycle",
        "ready_at", "ghr", "rsb", "ss_before", "ss_after", "ctx", "ord",
        "pred_taken", "pred_target", "actual_taken", "actual_target", "unresolved",
        "addr", "sdata", "sdata_inv", "fault", "level", "is_mem_read", "is_store",
    )

    def __init__(self, seq: int, pc: int, d: Decoded):
        self.seq = seq
        self.pc = pc
        self.d = d
        cls = self.cls = d.cls
        self.dest = d.dest
        self.sv = self.si = self.st = None
        self.pending = 0
        self.waiters = []
        self.val = 0
        self.inv = False
        self.taint = 0
        self.in_iq = False
        self.issued = False
        self.done = False
        self.squashed = False
        self.done_cycle = 0
        self.ready_at = 0
        self.ctx = 0
        self.ord = 0
        self.ss_before = self.ss_after = None
        self.pred_taken = False
        self.pred_target = None
        self.actual_taken = False
        self.actual_target = None
        self.unresolved = False
        self.addr = None
        self.sdata = 0
        self.sdata_inv = False
        self.fault = False
        self.level = None
        self.is_mem_read = cls == "load" or cls == "ret"
        self.is_store = cls == "store" or cls == "call" or cls == "flush"

    def __repr__(self) -> str:
        return f"<uop #{self.seq} pc={self.pc} {self.d.op.value}>"


def _seq_key(u: Uop) -> int:
    return u.seq


@dataclass
class RunResult:
    cycles: int
    committed_instructions: int
    runahead_episodes: int
    pseudo_retired_count: int
    final_state: ArchState
    cache: CacheHierarchy
    events: list = field(default_factory=list)
    max_window: int = 0
    squashes: int = 0
    sl_stats: dict = field(default_factory=dict)

    @property
    def ipc(self) -> float:
        return self.committed_instructions / self.cycles if self.cycles else 0.0

    def format_events(self) -> str:
        return "".join(f"{c},{k},{s},{p},{d}\n" for c, k, s, p, d in self.events)

    def stats_text(self) -> str:
        lines = [
            f"cycles {self.cycles}",
            f"committed {self.committed_instructions}",
            f"ipc {self.ipc:.6f}",
            f"runahead_episodes {self.runahead_episodes}",
            f"pseudo_retired {self.pseudo_retired_count}",
            f"squashes {self.squashes}",
            f"max_window {self.max_window}",
        ]
        lines += [f"sl_{k} {v}" for k, v in sorted(self.sl_stats.items())]
        return "\n".join(lines) + "\n"


class Core:
    def __init__(self, program: ProgramImage, cfg: SimConfig | None = None, hooks=None):
        cfg = cfg or SimConfig()
        self.cfg = cfg
        self.program = program
        self.decoded = decode(program)
        self.ninsn = len(self.decoded)
        self.hier = CacheHierarchy(cfg.hierarchy())
        self.shift = self.hier.shift
        self.mem_size = cfg.mem_size
        self.mem = program.initial_memory(cfg.mem_size)
        self.bp = BranchPredictor(cfg.bp_history_bits, cfg.bp_btb_entries, cfg.bp_rsb_depth)
        self.hooks = dict(hooks or {})

        self.rf_val = initial_regs(cfg.mem_size)
        self.rf_inv = [False] * NUM_REGS
        self.rf_taint = [0] * NUM_REGS
        self.rename: list[Uop | None] = [None] * NUM_REGS

        self.rob: deque[Uop] = deque()
        self.frontend: deque[Uop] = deque()
        self.ready: list[Uop] = []
        self.heap: list = []
        self.tick = 0
        self.sq: list[Uop] = []
        self.rdc: list[int] = []
        self.iq_count = 0
        self.lq_count = 0
        self.sq_count = 0
        self.div_free = 0
        self.inflight: dict[int, tuple[int, Level]] = {}

        self.cycle = 1
        self.next_seq = 0
        self.next_commit_seq = 0
        self.fetch_pc = program.entry
        self.fetch_line = -1
        self.fetch_stall_until = 0
        self.fetch_wait: Uop | None = None
        self.fetch_halted = False
        self.fetch_bad = False

        self.committed = 0
        self.halted = False
        self.halt_pc = -1
        self.last_progress = 1
        self.max_window = 0
        self.squashes = 0
        self.deadlock_limit = 10 * cfg.mem_latency

        self.trace_on = cfg.trace_events != "off"
        self.trace_full = cfg.trace_events == "full"
        self.events: list[tuple] = []

        h = cfg.hierarchy()
        self.l1_lat = h.l1d.latency
        self.l1i_lat = h.l1i.latency
        self._lvl_bounds = (h.l1d.latency, h.l1d.latency + h.l2.latency,
                            h.l1d.latency + h.l2.latency + h.l3.latency)
        self.fu_lat = {"alu": cfg.fu_int_add, "mul": cfg.fu_int_mul, "div": cfg.fu_int_div}

        self.ra = RunaheadController(self)
        self.sl = cfg.defense_mode == "sl_cache"
        self.skip = cfg.defense_mode == "skip_inv_branch"
        self.tracker = ScopeTracker(program.scope_map) if self.sl else None
        self.defense = (DefenseState(self.tracker, cfg.defense_sl_entries, cfg.defense_sl_latency)
                        if self.sl else None)
        self.ra_instances: dict[int, int] = {}
        self.commit_instances: dict[int, int] = {}

        if cfg.frontend_prewarm_icache:
            for line in range(0, self.ninsn * INSN_BYTES, self.hier.line_bytes):
                if line < self.mem_size:
                    self.hier.install_line("L1I", line)

    # -- logging -----------------------------------------------------------
    def log(self, kind: str, u: Uop, detail: str = "") -> None:
        if self.trace_on:
            self.events.append((self.cycle, kind, u.seq, u.pc, detail))

    def log_raw(self, kind: str, seq: int, pc: int, detail: str = "") -> None:
        if self.trace_on:
            self.events.append((self.cycle, kind, seq, pc, detail))

    def _drain_defense(self, u: Uop | None) -> None:
        ev = self.defense.events
        if ev:
            seq, pc = (u.seq, u.pc) if u is not None else (-1, -1)
            for kind, detail in ev:
                self.log_raw(kind, seq, pc, detail)
            ev.clear()

    def note_window(self, n: int) -> None:
        if n > self.max_window:
            self.max_window = n

    # -- fetch -------------------------------------------------------------
    def fetch(self) -> int:
        if self.fetch_halted or self.fetch_wait is not None or self.fetch_bad:
            return 0
        cycle = self.cycle
        if cycle < self.fetch_stall_until:
            return 0
        cfg = self.cfg
        width = cfg.width
        cap = width * cfg.frontend_stages
        fe = self.frontend
        bp = self.bp
        tracker = self.tracker
        ready_at = cycle + cfg.frontend_stages - 1
        n = 0
        while n < width and len(fe) < cap:
            pc = self.fetch_pc
            if not 0 <= pc < self.ninsn:
                self.fetch_bad = True
                break
            line = (pc * INSN_BYTES) >> self.shift
            if line != self.fetch_line:
                self.fetch_line = line
                res = self.hier.access(pc * INSN_BYTES, "ifetch")
                if res.latency > self.l1i_lat:
                    self.fetch_stall_until = cycle + res.latency
                    break
            d = self.decoded[pc]
            u = Uop(self.next_seq, pc, d)
            self.next_seq += 1
            u.ready_at = ready_at
            u.ghr = bp.ghr
            u.rsb = bp.rsb
            cls = d.cls
            if tracker is not None:
                u.ss_before = tracker.state
                u.ctx, u.ord = tracker.on_fetch(pc, cls)
                u.ss_after = tracker.state
            fe.append(u)
            n += 1
            if self.trace_full:
                self.log("fetch", u)
            nxt = pc + 1
            if cls == "branch":
                p = bp.predict(pc, BranchKind.CONDITIONAL, d.target)
                u.pred_taken = p.taken
                u.pred_target = nxt = p.target
            elif cls == "jmp":
                nxt = d.target
            elif cls == "call":
                bp.predict(pc, BranchKind.CALL, d.target)
                nxt = d.target
            elif cls == "ret" or cls == "jalr":
                p = bp.predict(pc, BranchKind.RETURN if cls == "ret" else BranchKind.INDIRECT)
                u.pred_taken = True
                u.pred_target = p.target
                if p.target is None:
                    self.fetch_wait = u
                    break
                nxt = p.target
            elif cls == "halt":
                self.fetch_halted = True
                break
            self.fetch_pc = nxt
            if nxt != pc + 1:
                break
        return n

    # -- dispatch / rename -------------------------------------------------
    def dispatch(self) -> int:
        fe = self.frontend
        if not fe:
            return 0
        cfg = self.cfg
        rob = self.rob
        cycle = self.cycle
        rename = self.rename
        n = 0
        while fe and n < cfg.width:
            u = fe[0]
            if u.ready_at > cycle or len(rob) >= cfg.rob_entries:
                break
            cls = u.cls
            needs_iq = cls not in NO_ISSUE
            if needs_iq and self.iq_count >= cfg.iq_entries:
                break
            if u.is_mem_read and self.lq_count >= cfg.lq_entries:
                break
            if u.is_store and self.sq_count >= cfg.sq_entries:
                break
            fe.popleft()
            srcs = u.d.srcs
            k = len(srcs)
            sv = [0] * k
            si = [False] * k
            st = [0] * k
            pending = 0
            for i, r in enumerate(srcs):
                if r == 0:
                    continue
                p = rename[r]
                if p is None:
                    sv[i] = self.rf_val[r]
                    si[i] = self.rf_inv[r]
                    st[i] = self.rf_taint[r]
                elif p.done:
                    sv[i] = p.val
                    si[i] = p.inv
                    st[i] = p.taint
                else:
                    p.waiters.append((u, i))
                    pending += 1
            u.sv, u.si, u.st = sv, si, st
            u.pending = pending
            if u.dest:
                rename[u.dest] = u
            rob.append(u)
            if needs_iq:
                self.iq_count += 1
                u.in_iq = True
                if not pending:
                    bisect.insort(self.ready, u, key=_seq_key)
            else:
                u.done = True
                u.done_cycle = cycle
            if u.is_mem_read:
                self.lq_count += 1
            if u.is_store:
                self.sq_count += 1
                self.sq.append(u)
            if cls == "rdcycle":
                self.rdc.append(u.seq)
            if self.trace_full:
                self.log("dispatch", u)
            n += 1
        return n

    # -- issue / execute ---------------------------------------------------
    def issue(self) -> int:
        ready = self.ready
        if not ready:
            return 0
        cfg = self.cfg
        ra = self.ra.status.active
        alu_free = cfg.fu_int_add_units
        mul_free = cfg.fu_int_mul_units
        cycle = self.cycle
        issued = 0
        i = 0
        while i < len(ready):
            u = ready[i]
            if self.rdc and u.seq > self.rdc[0]:
                break
            if ra and True in u.si:
                del ready[i]
                u.in_iq = False
                self.iq_count -= 1
                u.issued = True
                issued += 1
                if self._poison(u):
                    i = bisect.bisect_right(ready, u.seq, key=_seq_key)
                continue
            fu = u.d.fu
            if fu == "alu":
                if not alu_free:
                    i += 1
                    continue
            elif fu == "mul":
                if not mul_free:
                    i += 1
                    continue
            elif self.div_free > cycle:
                i += 1
                continue
            lat = self._execute(u)
            if lat is None:
                i += 1
                continue
            if fu == "alu":
                alu_free -= 1
            elif fu == "mul":
                mul_free -= 1
            else:
                self.div_free = cycle + lat
            del ready[i]
            u.in_iq = False
            self.iq_count -= 1
            u.issued = True
            u.done_cycle = cycle + lat
            self.tick += 1
            heapq.heappush(self.heap, (u.done_cycle, u.seq, self.tick, u))
            if self.trace_full:
                self.log("issue", u, f"lat={lat}")
            issued += 1
        return issued

    def _taint(self, u: Uop) -> int:
        st = u.st
        return max(st) if st else 0

    def _execute(self, u: Uop):
        """Compute ``u``'s result now; returns its latency, or None if it must wait."""
        cls = u.cls
        d = u.d
        sv = u.sv
        if cls == "alu":
            u.val = alu(d.op, sv[0], sv[1] if d.op in R_TYPE else d.imm & MASK64)
        elif cls == "li":
            u.val = d.imm & MASK64
        elif cls == "mul" or cls == "div":
            u.val = alu(d.op, sv[0], sv[1])
            if self.ra.status.active and self.sl:
                u.taint = self._taint(u)
            return self.fu_lat[cls]
        elif cls == "load" or cls == "ret":
            return self._exec_load(u)
        elif cls == "store":
            return self._exec_store(u, (sv[0] + d.imm) & MASK64, sv[1], u.si[1])
        elif cls == "call":
            sp = (sv[0] - WORD_BYTES) & MASK64
            u.val = sp
            return self._exec_store(u, sp, u.pc + 1, False)
        elif cls == "flush":
            addr = (sv[0] + d.imm) & MASK64
            u.addr = addr
            if addr >= self.mem_size:
                if self.ra.status.active:
                    u.inv = True
                    u.addr = None
                else:
                    u.fault = True
        elif cls == "branch":
            taken = branch_taken(d.op, sv[0], sv[1])
            u.actual_taken = taken
            u.actual_target = d.target if taken else u.pc + 1
        elif cls == "jalr":
            u.val = u.pc + 1
            u.actual_taken = True
            u.actual_target = sv[0]
        elif cls == "rdcycle":
            if not self.rob or self.rob[0] is not u:
                return None
            u.val = self.cycle
        if self.sl and self.ra.status.active:
            u.taint = self._taint(u) if cls != "li" else 0
        return self.fu_lat["alu"]

    def _exec_store(self, u: Uop, addr: int, data: int, data_inv: bool):
        u.addr = addr
        u.sdata = data & MASK64
        u.sdata_inv = data_inv
        if addr > self.mem_size - WORD_BYTES:
            if self.ra.status.active:
                u.inv = True
                u.addr = None
            else:
                u.fault = True
        return self.fu_lat["alu"]

    def _level_for(self, lat: int) -> Level:
        b1, b2, b3 = self._lvl_bounds
        if lat <= b1:
            return Level.L1
        if lat <= b2:
            return Level.L2
        if lat <= b3:
            return Level.L3
        return Level.MEM

    def _exec_load(self, u: Uop):
        ra = self.ra.status.active
        base = u.sv[0]
        addr = base if u.cls == "ret" else (base + u.d.imm) & MASK64
        if addr > self.mem_size - WORD_BYTES:
            u.addr = addr
            if ra:
                u.inv = True
                u.unresolved = u.cls == "ret"
                if u.cls == "ret":
                    u.inv = False
                    u.val = (base + WORD_BYTES) & MASK64
            else:
                u.fault = True
            return self.fu_lat["alu"]
        # memory ordering against older in-flight stores and flushes
        fwd = None
        line = addr >> self.shift
        useq = u.seq
        for s in reversed(self.sq):
            if s.seq > useq:
                continue
            if not s.issued:
                return None
            saddr = s.addr
            if saddr is None:  # INV address in runahead: unknowable, ignored
                continue
            if s.cls == "flush":
                if saddr >> self.shift == line:
                    return None
                continue
            delta = saddr - addr
            if delta == 0:
                fwd = s
                break
            if -WORD_BYTES < delta < WORD_BYTES:
                return None
        sl = self.sl
        taint = max(u.st) if (sl and ra) else 0
        if fwd is not None:
            value = fwd.sdata
            inv = ra and fwd.sdata_inv
            lat = self.l1_lat
            u.level = Level.L1
            if sl and ra:
                taint = max(taint, fwd.taint, u.ctx)
        else:
            if ra and self.ra.store_buffer.bytes:
                value = self.ra.store_buffer.read(addr, self.mem)
            else:
                value = int.from_bytes(self.mem[addr:addr + WORD_BYTES], "little")
            inv = False
            cycle = self.cycle
            line_addr = line << self.shift
            if ra and sl:
                lat = self.hier.peek_latency(addr).latency
                lat = self._merge_inflight(line, lat, record=False)
                e = self.defense.fill(line_addr, u.ctx, taint, cycle, cycle + lat)
                if e is not None and e.ready_cycle > cycle + lat:
                    lat = e.ready_cycle - cycle
                self._drain_defense(u)
                taint = max(taint, u.ctx)
            else:
                lat = None
                if sl and not ra and self.defense.C and not self.defense.bypass:
                    kind, e = self.defense.classify(line_addr)
                    if kind == "promote":
                        self.defense.promote(line_addr)
                        self.hier.install_line("L1", addr)
                        lat = max(self.defense.latency, e.ready_cycle - cycle)
                        self._drain_defense(u)
                    elif kind == "wait":
                        if self.rob and self.rob[0] is u:
                            self.defense.give_up(e)
                            self._drain_defense(u)
                        else:
                            if self.trace_full:
                                self.log("sl_wait", u, e.describe())
                            return None
                if lat is None:
                    res = self.hier.access(addr, "load")
                    lat = self._merge_inflight(line, res.latency, record=True)
                    if res.hit_level is not Level.L1 and self.trace_on:
                        self.log("cache_fill", u, f"line={line_addr:#x} level={res.hit_level.name}"
                                                  f"{' runahead' if ra else ''}")
            u.level = self._level_for(lat)
            if ra and self.ra.stalls(u.level):
                inv = True
                lat = min(lat, self.ra.inv_latency)
        u.addr = addr
        u.taint = taint
        if u.cls == "ret":
            u.val = (base + WORD_BYTES) & MASK64
            u.actual_taken = True
            u.actual_target = value
            u.unresolved = inv
        else:
            u.val = value
            u.inv = inv
        return lat

    def _merge_inflight(self, line: int, lat: int, record: bool) -> int:
        cycle = self.cycle
        inf = self.inflight.get(line)
        if inf is not None:
            if inf[0] > cycle:
                return max(lat, inf[0] - cycle)
            del self.inflight[line]
        if record and lat > self.l1_lat:
            self.inflight[line] = (cycle + lat, self._level_for(lat))
        return lat

    def _poison(self, u: Uop) -> bool:
        """Complete ``u`` immediately with INV semantics. Returns True if it squashed."""
        cls = u.cls
        si = u.si
        if cls == "store":
            if si[0]:
                u.inv = True
            else:
                self._exec_store(u, (u.sv[0] + u.d.imm) & MASK64, u.sv[1], True)
        elif cls == "jalr":
            u.val = u.pc + 1
            u.unresolved = True
        elif cls == "branch":
            u.unresolved = True
        elif cls == "ret":
            u.inv = True
            u.unresolved = True
        else:
            u.inv = True
        if self.sl:
            u.taint = max(u.st) if u.st else 0
        u.done_cycle = self.cycle
        self._complete(u)
        if self.trace_full:
            self.log("issue", u, "inv")
        if u.unresolved and self.skip:
            return self._skip(u)
        return False

    def _skip(self, u: Uop) -> bool:
        if u.cls == "branch":
            scope = self.program.scope_map.get(u.pc)
            if scope is None:
                return False
            ghr = ((u.ghr << 1) | 1) & self.bp.mask
            self.log("skip", u, f"redirect={scope.scope_end}")
            self.squash_after(u, scope.scope_end, PredictorCheckpoint(ghr, u.rsb), kind="skip")
            return True
        self.log("skip", u, "indirect")
        self.squash_after(u, u.pc + 1, PredictorCheckpoint(u.ghr, u.rsb), kind="skip")
        self.fetch_wait = u
        return True

    # -- writeback / resolution --------------------------------------------
    def _complete(self, u: Uop) -> None:
        u.done = True
        if u.cls == "rdcycle" and self.rdc:
            try:
                self.rdc.remove(u.seq)
            except ValueError:
                pass
        waiters = u.waiters
        if waiters:
            val, inv, taint = u.val, u.inv, u.taint
            ready = self.ready
            for c, i in waiters:
                if c.squashed:
                    continue
                c.sv[i] = val
                c.si[i] = inv
                c.st[i] = taint
                c.pending -= 1
                if not c.pending and c.in_iq:
                    bisect.insort(ready, c, key=_seq_key)
            u.waiters = []

    def writeback(self) -> int:
        heap = self.heap
        cycle = self.cycle
        n = 0
        while heap and heap[0][0] <= cycle:
            u = heapq.heappop(heap)[3]
            if u.squashed or u.done:
                continue
            self._complete(u)
            n += 1
            if u.cls in CONTROL_RESOLVE and not u.fault:
                if not u.unresolved:
                    self.resolve_branch(u)
                elif self.skip:
                    # a return whose loaded target came back INV
                    self._skip(u)
        return n

    def resolve_branch(self, u: Uop) -> str:
        """Train the predictor and recover from a misprediction; INV branches never resolve."""
        if u.unresolved:
            return "unresolvable"
        cls = u.cls
        bp = self.bp
        target = u.actual_target
        ra = self.ra.status.active
        if cls == "branch":
            bp.update(u.pc, u.actual_taken, target, BranchKind.CONDITIONAL, ghr=u.ghr)
            correct = u.actual_taken == u.pred_taken
            if correct:
                if u.ord:
                    self.defense.mark_ok(u.ord, ra)
                return "correct"
            ghr = ((u.ghr << 1) | u.actual_taken) & bp.mask
            scope_state = None
            if u.ord:
                if ra:
                    self.defense.verdict(u.ord, False)
                    self._drain_defense(u)
                scope_state, fresh = self.tracker.reopen(u.ss_after, u.ord)
                self.defense.mark_ok(fresh, ra)
            self.squash_after(u, target, PredictorCheckpoint(ghr, u.rsb), scope_state=scope_state)
            return "mispredicted"
        if cls == "jalr":
            bp.update(u.pc, True, target, BranchKind.INDIRECT)
            rsb_after = u.rsb
        else:
            rsb_after = u.rsb[:-1]
        if u.ord:
            self.tracker.resolve_context(u.ord)
        if u.pred_target is None:
            # fetch waited for this target; nothing younger exists
            if self.fetch_wait is u:
                self.fetch_wait = None
                self.fetch_pc = target
                self.fetch_bad = False
            if u.ord:
                self.defense.mark_ok(u.ord, ra)
            return "correct"
        if target == u.pred_target:
            if u.ord:
                self.defense.mark_ok(u.ord, ra)
            return "correct"
        if u.ord and ra:
            self.defense.verdict(u.ord, False)
            self._drain_defense(u)
        self.squash_after(u, target, PredictorCheckpoint(u.ghr, rsb_after))
        return "mispredicted"

    # -- squash ------------------------------------------------------------
    def _discard(self, x: Uop) -> None:
        x.squashed = True
        if x.in_iq:
            x.in_iq = False
            self.iq_count -= 1

    def squash_after(self, u: Uop, redirect: int, bpcp: PredictorCheckpoint,
                     scope_state=None, kind: str = "squash") -> int:
        rob = self.rob
        window = len(rob) - 1
        removed = []
        while rob and rob[-1] is not u:
            x = rob.pop()
            if x.is_mem_read:
                self.lq_count -= 1
            if x.is_store:
                self.sq_count -= 1
            removed.append(x)
        removed.extend(self.frontend)
        self.frontend.clear()
        ra = self.ra.status.active
        for x in removed:
            self._discard(x)
        if self.sq and self.sq[-1].squashed:
            self.sq = [s for s in self.sq if not s.squashed]
        if self.ready:
            self.ready[:] = [r for r in self.ready if not r.squashed]
        if self.rdc:
            self.rdc = [s for s in self.rdc if s <= u.seq]
        self._rebuild_rename()
        self.next_seq = u.seq + 1
        self._redirect(redirect)
        self.bp.restore(bpcp)
        if self.tracker is not None:
            self.tracker.restore(scope_state if scope_state is not None else u.ss_after)
            if ra:
                for x in removed:
                    if x.ord:
                        self.defense.delete_closure(x.ord)
                self._drain_defense(u)
        self.squashes += 1
        if kind == "squash":
            self.note_window(window)
        self.log(kind if kind == "squash" else "skip_squash", u, f"window={window} redirect={redirect}")
        return len(removed)

    def _redirect(self, pc: int) -> None:
        self.fetch_pc = pc
        self.fetch_wait = None
        self.fetch_halted = False
        self.fetch_bad = False
        self.fetch_line = -1
        self.fetch_stall_until = 0

    def _rebuild_rename(self) -> None:
        rename = [None] * NUM_REGS
        for x in self.rob:
            if x.dest:
                rename[x.dest] = x
        self.rename = rename

    def flush_pipeline(self, seq: int, pc: int) -> None:
        """Discard every in-flight uop and restart fetch at ``pc`` with sequence ``seq``."""
        for x in self.rob:
            x.squashed = True
        for x in self.frontend:
            x.squashed = True
        self.rob.clear()
        self.frontend.clear()
        self.ready.clear()
        self.heap = []
        self.sq = []
        self.rdc = []
        self.iq_count = self.lq_count = self.sq_count = 0
        self.rename = [None] * NUM_REGS
        self.next_seq = seq
        self._redirect(pc)

    # -- runahead hooks ----------------------------------------------------
    def poison_head(self, u: Uop) -> None:
        """Runahead entry: the stalling load's result becomes INV and it can retire."""
        if u.cls == "ret":
            u.unresolved = True
        else:
            u.inv = True
        self._complete(u)
        if self.skip and u.cls == "ret":
            self._skip(u)

    def on_runahead_enter(self, u: Uop) -> None:
        if not self.sl:
            return
        tracker = self.tracker
        live = set()
        for x in self.rob:
            for o in (x.ctx, x.ord):
                live.update(tracker.ancestors(o))
        frames = u.ss_before[0] if u.ss_before else ()
        for f in frames:
            live.update(tracker.ancestors(f[0]))
        self.defense.begin_episode(live)
        # scopes already open when the stalling load was fetched belong to committed branches
        for f in frames:
            self.defense.known_ok.add(f[0])
        self.ra_instances = {}
        self._drain_defense(u)

    def on_runahead_exit(self, cp) -> None:
        if not self.sl:
            return
        counts = self.ra_instances
        for x in self.rob:
            if x.ord and x.cls in CONTROL_RESOLVE:
                k = counts.get(x.pc, 0)
                counts[x.pc] = k + 1
                if x.unresolved or not x.done:
                    self.defense.defer(x.pc, k, x.ord, x.pred_taken, x.pred_target)
        self.defense.end_episode()
        self.commit_instances = {}
        self._drain_defense(None)

    # -- commit --------------------------------------------------------------
    def commit(self) -> int:
        rob = self.rob
        if not rob:
            return 0
        width = self.cfg.width
        ra = self.ra.status.active
        n = 0
        while rob and n < width:
            u = rob[0]
            if not u.done:
                break
            rob.popleft()
            if u.is_mem_read:
                self.lq_count -= 1
            if u.is_store:
                self.sq_count -= 1
                if self.sq and self.sq[0] is u:
                    self.sq.pop(0)
                else:
                    self.sq.remove(u)
            n += 1
            if ra:
                self._pseudo_retire(u)
            else:
                self._commit_one(u)
                if self.halted:
                    break
        if n:
            self.last_progress = self.cycle
        return n

    def _pseudo_retire(self, u: Uop) -> None:
        self.ra.pseudo_retire(u)
        if self.sl and u.ord and u.cls in CONTROL_RESOLVE:
            k = self.ra_instances.get(u.pc, 0)
            self.ra_instances[u.pc] = k + 1
            if u.unresolved:
                self.defense.defer(u.pc, k, u.ord, u.pred_taken, u.pred_target)
        if self.trace_full:
            self.log("pseudo_retire", u)

    def _commit_one(self, u: Uop) -> None:
        if u.seq != self.next_commit_seq:
            raise SimError(f"commit order broken: seq {u.seq}, expected {self.next_commit_seq}")
        self.next_commit_seq += 1
        if u.fault:
            raise TrapError(f"{u.d.op.value} at pc {u.pc} accessed {u.addr:#x} outside memory")
        cls = u.cls
        d = u.dest
        if d:
            self.rf_val[d] = u.val
            if self.rename[d] is u:
                self.rename[d] = None
        if cls == "store" or cls == "call":
            a = u.addr
            self.mem[a:a + WORD_BYTES] = u.sdata.to_bytes(WORD_BYTES, "little")
            self.hier.access(a, "store")
        elif cls == "flush":
            self.hier.flush_line(u.addr)
            self.inflight.pop(u.addr >> self.shift, None)
            if self.defense is not None and self.defense.invalidate((u.addr >> self.shift) << self.shift):
                self._drain_defense(u)
        elif cls == "halt":
            self.halted = True
            self.halt_pc = u.pc
        self.committed += 1
        if self.sl and self.defense.pending and cls in CONTROL_RESOLVE:
            k = self.commit_instances.get(u.pc, 0)
            self.commit_instances[u.pc] = k + 1
            if self.defense.judge_commit(u.pc, k, u.actual_taken, u.actual_target) is not None:
                self._drain_defense(u)
        if self.trace_full:
            self.log("commit", u)
        hook = self.hooks.get(u.pc)
        if hook is not None:
            hook(self)

    # -- cycle loop ----------------------------------------------------------
    def step(self) -> bool:
        """Advance one cycle. Returns whether any stage did work."""
        ra = self.ra
        progress = 0
        if ra.status.active and self.cycle >= ra.status.stall_ready:
            ra.maybe_exit()
            progress += 1
        progress += self.writeback()
        if ra.enabled and not ra.status.active and self.rob and ra.maybe_enter():
            progress += 1
        progress += self.commit()
        if self.halted:
            return True
        progress += self.issue()
        progress += self.dispatch()
        progress += self.fetch()
        if self.cfg.check_invariants:
            self.check_invariants()
        if self.cycle - self.last_progress > self.deadlock_limit:
            raise SimError(self._diagnose("no retirement progress"))
        self.cycle += 1
        if self.cycle > self.cfg.max_cycles:
            raise SimError(f"max_cycles ({self.cfg.max_cycles}) exhausted")
        return progress > 0

    def _next_event(self) -> int | None:
        now = self.cycle
        cands = []
        if self.heap:
            cands.append(self.heap[0][0])
        if self.frontend and self.frontend[0].ready_at >= now:
            cands.append(self.frontend[0].ready_at)
        if self.fetch_stall_until >= now and not (self.fetch_halted or self.fetch_wait or self.fetch_bad):
            cands.append(self.fetch_stall_until)
        if self.ra.status.active:
            cands.append(self.ra.status.stall_ready)
        if self.div_free >= now:
            cands.append(self.div_free)
        cands = [c for c in cands if c >= now]
        return min(cands) if cands else None

    def _diagnose(self, why: str) -> str:
        head = self.rob[0] if self.rob else None
        return (f"{why} at cycle {self.cycle}: head={head!r} done={getattr(head, 'done', None)} "
                f"rob={len(self.rob)} frontend={len(self.frontend)} fetch_pc={self.fetch_pc} "
                f"runahead={self.ra.status.active}")

    def _stuck(self) -> None:
        if self.fetch_bad and not self.rob and not self.frontend and not self.ra.status.active:
            raise TrapError(f"pc {self.fetch_pc} outside program")
        raise SimError(self._diagnose("deadlock"))

    def run(self) -> RunResult:
        while not self.halted:
            if not self.step() and not self.halted:
                nxt = self._next_event()
                if nxt is None:
                    self._stuck()
                if nxt > self.cycle:
                    if nxt - self.last_progress > self.deadlock_limit + 1:
                        self.cycle = self.last_progress + self.deadlock_limit + 1
                        raise SimError(self._diagnose("no retirement progress"))
                    self.cycle = min(nxt, self.cfg.max_cycles + 1)
                    if self.cycle > self.cfg.max_cycles:
                        raise SimError(f"max_cycles ({self.cfg.max_cycles}) exhausted")
        return self.result()

    def arch_state(self) -> ArchState:
        pc = self.halt_pc if self.halted else self.fetch_pc
        return ArchState(tuple(self.rf_val), self.mem, pc, self.halted, self.committed)

    def result(self) -> RunResult:
        st = self.ra.status
        sl_stats = {}
        if self.defense is not None:
            df = self.defense
            sl_stats = {"resident": df.C, "promoted": df.promoted, "deleted": df.deleted,
                        "refused": df.refused}
        return RunResult(self.cycle, self.committed, st.episodes, st.pseudo_retired,
                         self.arch_state(), self.hier, self.events, self.max_window,
                         self.squashes, sl_stats)

    def check_invariants(self) -> None:
        cfg = self.cfg
        if len(self.rob) > cfg.rob_entries:
            raise AssertionError("ROB over capacity")
        if not (0 <= self.iq_count <= cfg.iq_entries and 0 <= self.lq_count <= cfg.lq_entries
                and 0 <= self.sq_count <= cfg.sq_entries):
            raise AssertionError(f"queue occupancy out of range iq={self.iq_count} "
                                 f"lq={self.lq_count} sq={self.sq_count}")
        if self.defense is not None:
            self.defense.check()


def run(program: ProgramImage, config: SimConfig | None = None, hooks=None) -> RunResult:
    """Simulate ``program`` until HALT commits."""
    return Core(program, config, hooks).run()


def step_cycle(core: Core) -> list[tuple]:
    """Advance ``core`` by exactly one cycle and return the events it produced."""
    start = len(core.events)
    core.step()
    return core.events[start:]


def count_transient_window(result: RunResult) -> int:
    """Largest number of instructions held past the oldest unresolved point and later discarded."""
    best = result.max_window
    for _, kind, _, _, detail in result.events:
        if kind == "squash" or kind == "runahead_exit":
            for part in detail.split():
                if part.startswith("window="):
                    best = max(best, int(part[7:]))
    return best
