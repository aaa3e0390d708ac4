"""Toy 64-bit ISA: opcodes, instruction records, program images and ALU semantics.

The machine is Harvard-style: the PC is an instruction index and data lives
in a flat byte-addressed memory. CALL/RET keep return addresses on a memory
stack addressed by ``r30`` (the stack pointer), which starts at the top of
memory. Loads and stores move 8-byte little-endian words.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .errors import ScopeError

NUM_REGS = 32
SP = 30
WORD_BYTES = 8
INSN_BYTES = 8
MASK64 = (1 << 64) - 1
SIGN64 = 1 << 63
DEFAULT_MEM_SIZE = 16 * 1024 * 1024


class Op(enum.Enum):
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    DIV = "div"
    AND = "and"
    OR = "or"
    XOR = "xor"
    SLL = "sll"
    SRL = "srl"
    ADDI = "addi"
    ANDI = "andi"
    SLLI = "slli"
    SRLI = "srli"
    LI = "li"
    LD = "ld"
    ST = "st"
    CLFLUSH = "clflush"
    BEQ = "beq"
    BNE = "bne"
    BLT = "blt"
    BGE = "bge"
    JMP = "jmp"
    JALR = "jalr"
    CALL = "call"
    RET = "ret"
    NOP = "nop"
    RDCYCLE = "rdcycle"
    HALT = "halt"


R_TYPE = frozenset({Op.ADD, Op.SUB, Op.MUL, Op.DIV, Op.AND, Op.OR, Op.XOR, Op.SLL, Op.SRL})
I_TYPE = frozenset({Op.ADDI, Op.ANDI, Op.SLLI, Op.SRLI})
COND_BRANCHES = frozenset({Op.BEQ, Op.BNE, Op.BLT, Op.BGE})
CONTROL = COND_BRANCHES | {Op.JMP, Op.JALR, Op.CALL, Op.RET}


def to_signed(v: int) -> int:
    return v - (1 << 64) if v & SIGN64 else v


def alu(op: Op, a: int, b: int) -> int:
    """Result of a register-register or register-immediate ALU op (64-bit wrap)."""
    if op is Op.ADD or op is Op.ADDI:
        return (a + b) & MASK64
    if op is Op.SUB:
        return (a - b) & MASK64
    if op is Op.MUL:
        return (a * b) & MASK64
    if op is Op.DIV:
        if b == 0:
            return MASK64
        sa, sb = to_signed(a), to_signed(b)
        q = abs(sa) // abs(sb)
        if (sa < 0) != (sb < 0):
            q = -q
        return q & MASK64
    if op is Op.AND or op is Op.ANDI:
        return a & b & MASK64
    if op is Op.OR:
        return (a | b) & MASK64
    if op is Op.XOR:
        return (a ^ b) & MASK64
    if op is Op.SLL or op is Op.SLLI:
        return (a << (b & 63)) & MASK64
    if op is Op.SRL or op is Op.SRLI:
        return (a & MASK64) >> (b & 63)
    raise ValueError(f"not an ALU op: {op}")


def branch_taken(op: Op, a: int, b: int) -> bool:
    if op is Op.BEQ:
        return a == b
    if op is Op.BNE:
        return a != b
    if op is Op.BLT:
        return to_signed(a) < to_signed(b)
    if op is Op.BGE:
        return to_signed(a) >= to_signed(b)
    raise ValueError(f"not a conditional branch: {op}")


@dataclass(frozen=True, slots=True)
class Instruction:
    op: Op
    rd: int = 0
    rs1: int = 0
    rs2: int = 0
    imm: int = 0
    target: int | None = None

    def __post_init__(self):
        for r in (self.rd, self.rs1, self.rs2):
            if not 0 <= r < NUM_REGS:
                raise ValueError(f"register index out of range: {r}")

    @property
    def sources(self) -> tuple[int, ...]:
        """Architectural registers read by this instruction, in operand order."""
        op = self.op
        if op in R_TYPE or op in COND_BRANCHES:
            return (self.rs1, self.rs2)
        if op in I_TYPE or op is Op.LD or op is Op.CLFLUSH or op is Op.JALR:
            return (self.rs1,)
        if op is Op.ST:
            return (self.rs1, self.rs2)
        if op is Op.CALL or op is Op.RET:
            return (SP,)
        return ()

    @property
    def dest(self) -> int:
        """Architectural register written, or 0 when nothing is written."""
        op = self.op
        if op in R_TYPE or op in I_TYPE or op in (Op.LI, Op.LD, Op.JALR, Op.RDCYCLE):
            return self.rd
        if op is Op.CALL or op is Op.RET:
            return SP
        return 0


@dataclass(frozen=True, slots=True)
class BranchScope:
    branch_pc: int
    scope_start: int
    scope_end: int


@dataclass(frozen=True)
class ProgramImage:
    instructions: tuple[Instruction, ...] = ()
    data_init: tuple[tuple[int, int], ...] = ()
    scope_table: tuple[BranchScope, ...] = ()
    entry: int = 0
    labels: dict[str, int] = field(default_factory=dict, compare=False)
    symbols: dict[str, int] = field(default_factory=dict, compare=False)

    def __len__(self) -> int:
        return len(self.instructions)

    def scope_for(self, pc: int) -> BranchScope | None:
        return self.scope_map.get(pc)

    @property
    def scope_map(self) -> dict[int, BranchScope]:
        cached = self.__dict__.get("_scope_map")
        if cached is None:
            cached = {s.branch_pc: s for s in self.scope_table}
            object.__setattr__(self, "_scope_map", cached)
        return cached

    def initial_memory(self, mem_size: int = DEFAULT_MEM_SIZE) -> bytearray:
        mem = bytearray(mem_size)
        for addr, val in self.data_init:
            mem[addr] = val
        return mem


@dataclass
class ArchState:
    regs: tuple[int, ...]
    memory: bytearray
    pc: int
    halted: bool
    retired_count: int
    load_trace: tuple[tuple[int, int], ...] = ()

    def same_as(self, other: "ArchState") -> bool:
        """Architectural equality: registers, memory, final pc and halt flag."""
        return (self.regs == other.regs and self.memory == other.memory
                and self.pc == other.pc and self.halted == other.halted
                and self.retired_count == other.retired_count)

    def diff(self, other: "ArchState") -> list[str]:
        out = []
        for i, (a, b) in enumerate(zip(self.regs, other.regs)):
            if a != b:
                out.append(f"r{i}: {a:#x} != {b:#x}")
        if self.memory != other.memory:
            n = min(len(self.memory), len(other.memory))
            bad = [i for i in range(n) if self.memory[i] != other.memory[i]][:8]
            out.append(f"memory differs at {bad}")
        for name in ("pc", "halted", "retired_count"):
            if getattr(self, name) != getattr(other, name):
                out.append(f"{name}: {getattr(self, name)} != {getattr(other, name)}")
        return out


def initial_regs(mem_size: int) -> list[int]:
    regs = [0] * NUM_REGS
    regs[SP] = mem_size
    return regs


def compute_branch_scopes(instructions) -> list[BranchScope]:
    """Guarded region of every forward conditional branch: ``[pc + 1, target)``.

    Raises ScopeError when two regions partially overlap.
    """
    scopes = []
    for pc, ins in enumerate(instructions):
        if ins.op in COND_BRANCHES and ins.target is not None and ins.target > pc:
            scopes.append(BranchScope(pc, pc + 1, ins.target))
    # sorted by start; a stack of open intervals catches partial overlap in O(n)
    stack: list[BranchScope] = []
    for s in scopes:
        while stack and stack[-1].scope_end <= s.scope_start:
            stack.pop()
        if stack and s.scope_end > stack[-1].scope_end:
            outer = stack[-1]
            raise ScopeError(
                f"branch at {s.branch_pc} scope [{s.scope_start},{s.scope_end}) partially "
                f"overlaps branch at {outer.branch_pc} scope [{outer.scope_start},{outer.scope_end})")
        stack.append(s)
    return scopes
