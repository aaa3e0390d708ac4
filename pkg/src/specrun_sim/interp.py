"""In-order functional interpreter: the timing-free reference for the OoO core."""
from __future__ import annotations

from .errors import TrapError
from .isa import (
    COND_BRANCHES, DEFAULT_MEM_SIZE, I_TYPE, MASK64, R_TYPE, SP, WORD_BYTES,
    ArchState, Op, ProgramImage, alu, branch_taken, initial_regs,
)


def interpret(program: ProgramImage, max_steps: int = 1_000_000,
              mem_size: int = DEFAULT_MEM_SIZE, trace_loads: bool = False) -> ArchState:
    """Run ``program`` in program order until HALT or ``max_steps`` retirements.

    RDCYCLE writes 0 and CLFLUSH has no effect on values. With ``trace_loads``
    the result records every ``(pc, address)`` read, RET stack reads included.
    """
    if max_steps <= 0:
        raise ValueError("max_steps must be positive")
    insns = program.instructions
    n = len(insns)
    regs = initial_regs(mem_size)
    mem = program.initial_memory(mem_size)
    trace: list[tuple[int, int]] = []
    pc = program.entry
    retired = 0
    halted = False

    def load(addr):
        if not 0 <= addr <= mem_size - WORD_BYTES:
            raise TrapError(f"load from {addr:#x} outside memory at pc {pc}")
        if trace_loads:
            trace.append((pc, addr))
        return int.from_bytes(mem[addr:addr + WORD_BYTES], "little")

    def store(addr, val):
        if not 0 <= addr <= mem_size - WORD_BYTES:
            raise TrapError(f"store to {addr:#x} outside memory at pc {pc}")
        mem[addr:addr + WORD_BYTES] = val.to_bytes(WORD_BYTES, "little")

    while retired < max_steps:
        if not 0 <= pc < n:
            raise TrapError(f"pc {pc} outside program")
        ins = insns[pc]
        op = ins.op
        nxt = pc + 1
        rd = 0
        val = 0
        if op in R_TYPE:
            rd, val = ins.rd, alu(op, regs[ins.rs1], regs[ins.rs2])
        elif op in I_TYPE:
            rd, val = ins.rd, alu(op, regs[ins.rs1], ins.imm & MASK64)
        elif op is Op.LI:
            rd, val = ins.rd, ins.imm & MASK64
        elif op is Op.LD:
            rd, val = ins.rd, load((regs[ins.rs1] + ins.imm) & MASK64)
        elif op is Op.ST:
            store((regs[ins.rs1] + ins.imm) & MASK64, regs[ins.rs2])
        elif op is Op.CLFLUSH:
            addr = (regs[ins.rs1] + ins.imm) & MASK64
            if addr >= mem_size:
                raise TrapError(f"clflush of {addr:#x} outside memory at pc {pc}")
        elif op in COND_BRANCHES:
            if branch_taken(op, regs[ins.rs1], regs[ins.rs2]):
                nxt = ins.target
        elif op is Op.JMP:
            nxt = ins.target
        elif op is Op.JALR:
            rd, val = ins.rd, pc + 1
            nxt = regs[ins.rs1]
        elif op is Op.CALL:
            sp = (regs[SP] - WORD_BYTES) & MASK64
            store(sp, pc + 1)
            rd, val = SP, sp
            nxt = ins.target
        elif op is Op.RET:
            sp = regs[SP]
            nxt = load(sp)
            rd, val = SP, (sp + WORD_BYTES) & MASK64
        elif op is Op.RDCYCLE:
            rd, val = ins.rd, 0
        elif op is Op.HALT:
            retired += 1
            halted = True
            break
        if rd:
            regs[rd] = val
        retired += 1
        pc = nxt
    return ArchState(tuple(regs), mem, pc, halted, retired, tuple(trace))
