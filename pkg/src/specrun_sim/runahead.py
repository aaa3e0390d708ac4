"""Runahead mode: entry on a stalled load at the ROB head, pseudo-retirement, exit and restore.

The controller owns only runahead bookkeeping; it reaches into the core for
the ROB, register file and predictor so that entry and exit stay in one place.
"""
from __future__ import annotations

from dataclasses import dataclass

from .branch_pred import PredictorCheckpoint
from .isa import MASK64, WORD_BYTES
from .mem_hier import Level


@dataclass(frozen=True)
class Checkpoint:
    regs: tuple[int, ...]
    predictor: PredictorCheckpoint
    stall_pc: int
    stall_seq: int
    entry_cycle: int
    tables: tuple | None = None     # PHT/BTB copies when runahead updates must not persist
    scope_state: tuple | None = None


class RunaheadStoreBuffer:
    """Byte-granular buffer of stores pseudo-retired during one episode."""

    def __init__(self):
        self.bytes: dict[int, int] = {}

    def __len__(self) -> int:
        return len(self.bytes)

    def write(self, addr: int, value: int) -> None:
        b = self.bytes
        for i in range(WORD_BYTES):
            b[addr + i] = (value >> (8 * i)) & 0xFF

    def read(self, addr: int, memory) -> int:
        """Word at ``addr`` with buffered bytes layered over ``memory``."""
        raw = bytearray(memory[addr:addr + WORD_BYTES])
        b = self.bytes
        if b:
            for i in range(WORD_BYTES):
                v = b.get(addr + i)
                if v is not None:
                    raw[i] = v
        return int.from_bytes(raw, "little")

    def clear(self) -> None:
        self.bytes.clear()


@dataclass
class RunaheadStatus:
    active: bool = False
    stalling_seq: int = -1
    stalling_pc: int = -1
    stalling_line: int = -1
    stall_ready: int = 0
    episodes: int = 0
    pseudo_retired: int = 0
    episode_retired: int = 0


class RunaheadController:
    def __init__(self, core):
        self.core = core
        cfg = core.cfg
        self.enabled = cfg.runahead_enabled
        self.need_full = cfg.runahead_require_full_rob
        # a load is "stalling" when it missed at least down to this level
        self.trigger_level = Level.MEM if cfg.runahead_trigger == "mem_miss" else Level.L2
        h = cfg.hierarchy()
        # time to learn a runahead load misses the trigger level; it then turns INV
        self.inv_latency = (h.l1d.latency if self.trigger_level is Level.L2
                            else h.l1d.latency + h.l2.latency + h.l3.latency)
        self.status = RunaheadStatus()
        self.store_buffer = RunaheadStoreBuffer()
        self.checkpoint: Checkpoint | None = None

    @property
    def active(self) -> bool:
        return self.status.active

    def stalls(self, level) -> bool:
        return level is not None and level >= self.trigger_level

    def maybe_enter(self) -> bool:
        core = self.core
        if not self.enabled or self.status.active or not core.rob:
            return False
        u = core.rob[0]
        if not (u.is_mem_read and u.issued and not u.done and self.stalls(u.level)):
            return False
        if self.need_full and len(core.rob) < core.cfg.rob_entries:
            return False
        bp = core.bp
        cp = Checkpoint(
            regs=tuple(core.rf_val),
            predictor=PredictorCheckpoint(u.ghr, u.rsb),
            stall_pc=u.pc,
            stall_seq=u.seq,
            entry_cycle=core.cycle,
            tables=None if core.cfg.bp_persist_runahead_updates else bp.tables(),
            scope_state=u.ss_before,
        )
        self.checkpoint = cp
        st = self.status
        st.active = True
        st.stalling_seq = u.seq
        st.stalling_pc = u.pc
        st.stalling_line = u.addr >> core.hier.shift
        st.stall_ready = u.done_cycle
        st.episodes += 1
        st.episode_retired = 0
        core.log("runahead_enter", u, f"line={st.stalling_line << core.hier.shift:#x} ready={u.done_cycle}")
        core.on_runahead_enter(u)
        core.poison_head(u)
        return True

    def pseudo_retire(self, u) -> None:
        """Retire ``u`` into the runahead register file; nothing becomes architectural."""
        core = self.core
        d = u.dest
        if d:
            core.rf_val[d] = u.val
            core.rf_inv[d] = u.inv
            core.rf_taint[d] = u.taint
            if core.rename[d] is u:
                core.rename[d] = None
        if u.is_store and not u.inv and u.addr is not None and not u.fault:
            # stores whose data is INV leave no trace; loads read memory instead
            if not u.sdata_inv:
                self.store_buffer.write(u.addr, u.sdata & MASK64)
        self.status.pseudo_retired += 1
        self.status.episode_retired += 1

    def maybe_exit(self) -> bool:
        core = self.core
        st = self.status
        if not st.active or core.cycle < st.stall_ready:
            return False
        cp = self.checkpoint
        window = st.episode_retired - 1 + len(core.rob)
        core.note_window(window)
        core.log_raw("runahead_exit", cp.stall_seq, cp.stall_pc,
                     f"window={window} pseudo_retired={st.episode_retired}")
        core.on_runahead_exit(cp)
        self.store_buffer.clear()
        st.active = False
        core.flush_pipeline(cp.stall_seq, cp.stall_pc)
        core.rf_val[:] = cp.regs
        core.rf_inv[:] = [False] * len(cp.regs)
        core.rf_taint[:] = [0] * len(cp.regs)
        core.bp.restore(cp.predictor)
        if cp.tables is not None:
            core.bp.load_tables(cp.tables)
        if core.tracker is not None and cp.scope_state is not None:
            core.tracker.restore(cp.scope_state)
        self.checkpoint = None
        return True
