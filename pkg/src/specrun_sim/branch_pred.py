"""Gshare direction predictor, direct-mapped BTB and return stack buffer."""
from __future__ import annotations

import enum
from dataclasses import dataclass


class BranchKind(enum.Enum):
    CONDITIONAL = "conditional"
    DIRECT = "direct"
    INDIRECT = "indirect"
    CALL = "call"
    RETURN = "return"


@dataclass(frozen=True, slots=True)
class Prediction:
    taken: bool
    target: int | None  # None: BTB/RSB miss, fetch must wait for resolution


@dataclass(frozen=True, slots=True)
class PredictorCheckpoint:
    ghr: int
    rsb: tuple[int, ...]

    @property
    def top(self) -> int:
        return len(self.rsb)


class BranchPredictor:
    """Two-level adaptive predictor (PHT indexed by ``ghr ^ pc``) plus BTB and RSB.

    ``predict`` shifts the predicted direction into the global history; the
    caller hands the pre-prediction history back to ``update`` so counters are
    trained at the entry that made the prediction. The RSB is an immutable
    tuple so snapshots are free to take.
    """

    def __init__(self, history_bits: int = 8, btb_entries: int = 256, rsb_depth: int = 16):
        if history_bits <= 0 or btb_entries <= 0 or rsb_depth <= 0:
            raise ValueError("predictor sizes must be positive")
        self.history_bits = history_bits
        self.mask = (1 << history_bits) - 1
        self.pht = [1] * (1 << history_bits)
        self.ghr = 0
        self.btb_entries = btb_entries
        self.btb_tag = [-1] * btb_entries
        self.btb_target = [0] * btb_entries
        self.rsb_depth = rsb_depth
        self.rsb: tuple[int, ...] = ()

    def index(self, pc: int, ghr: int | None = None) -> int:
        return ((self.ghr if ghr is None else ghr) ^ pc) & self.mask

    # -- prediction ------------------------------------------------------
    def predict(self, pc: int, kind: BranchKind, target: int | None = None,
                return_addr: int | None = None) -> Prediction:
        if kind is BranchKind.CONDITIONAL:
            taken = self.pht[(self.ghr ^ pc) & self.mask] >= 2
            self.ghr = ((self.ghr << 1) | taken) & self.mask
            return Prediction(taken, target if taken else pc + 1)
        if kind is BranchKind.DIRECT:
            return Prediction(True, target)
        if kind is BranchKind.CALL:
            self.push(pc + 1 if return_addr is None else return_addr)
            return Prediction(True, target)
        if kind is BranchKind.RETURN:
            return Prediction(True, self.pop())
        return Prediction(True, self.btb_lookup(pc))

    def btb_lookup(self, pc: int) -> int | None:
        i = pc % self.btb_entries
        return self.btb_target[i] if self.btb_tag[i] == pc else None

    def push(self, addr: int) -> None:
        rsb = self.rsb + (addr,)
        self.rsb = rsb[-self.rsb_depth:] if len(rsb) > self.rsb_depth else rsb

    def pop(self) -> int | None:
        if not self.rsb:
            return None
        top = self.rsb[-1]
        self.rsb = self.rsb[:-1]
        return top

    # -- training --------------------------------------------------------
    def update(self, pc: int, actual_taken: bool, actual_target: int | None = None,
               kind: BranchKind = BranchKind.CONDITIONAL, *, ghr: int | None = None,
               predicted_taken: bool | None = None) -> None:
        """Train on a resolved branch.

        ``ghr`` is the history the prediction used (defaults to the current
        one). When ``predicted_taken`` disagrees with the outcome the history is
        repaired to ``ghr`` followed by the actual outcome.
        """
        if kind is BranchKind.CONDITIONAL:
            h = self.ghr if ghr is None else ghr
            i = (h ^ pc) & self.mask
            c = self.pht[i]
            if actual_taken:
                if c < 3:
                    self.pht[i] = c + 1
            elif c > 0:
                self.pht[i] = c - 1
            if predicted_taken is not None and predicted_taken != actual_taken:
                self.ghr = ((h << 1) | actual_taken) & self.mask
        elif kind is BranchKind.INDIRECT and actual_target is not None:
            i = pc % self.btb_entries
            self.btb_tag[i] = pc
            self.btb_target[i] = actual_target

    # -- checkpointing ---------------------------------------------------
    def checkpoint(self) -> PredictorCheckpoint:
        return PredictorCheckpoint(self.ghr, self.rsb)

    def restore(self, cp: PredictorCheckpoint) -> None:
        self.ghr = cp.ghr
        self.rsb = cp.rsb

    def tables(self) -> tuple[list[int], list[int], list[int]]:
        """Copies of the PHT and BTB, which checkpoints deliberately leave out."""
        return list(self.pht), list(self.btb_tag), list(self.btb_target)

    def load_tables(self, tables) -> None:
        pht, tag, tgt = tables
        self.pht, self.btb_tag, self.btb_target = list(pht), list(tag), list(tgt)
