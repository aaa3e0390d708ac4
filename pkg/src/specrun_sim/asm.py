"""Line-based assembler, canonical disassembler and the ProgramImage text format.

Source syntax::

    ; comment
    .data
    .org 0x10000
    table: .word 1, 2, 3
    buf:   .space 64
    .text
    main:  li r1, table
           ld r2, 8(r1)
           bne r2, r0, main
           halt

Immediates accept decimal/hex integers, symbols, and ``sym+int``/``sym-int``.
Text labels evaluate to instruction indices, data labels to byte addresses.
Branch targets may be labels or ``@index``.
"""
from __future__ import annotations

import re

from .errors import AsmError, ScopeError
from .isa import (
    COND_BRANCHES, DEFAULT_MEM_SIZE, I_TYPE, MASK64, NUM_REGS, R_TYPE,
    BranchScope, Instruction, Op, ProgramImage, compute_branch_scopes, to_signed,
)

DATA_BASE = 0x10000

_OPS = {op.value: op for op in Op}
_LABEL_RE = re.compile(r"^([A-Za-z_.$][\w.$]*)\s*:(.*)$")
_NAME_RE = re.compile(r"^[A-Za-z_.$][\w.$]*$")
_MEM_RE = re.compile(r"^(.*)\((\s*\w+\s*)\)$")
_EXPR_RE = re.compile(r"^([A-Za-z_.$][\w.$]*)\s*([+-])\s*(\w+)$")


def _strip(line: str) -> str:
    return line.split(";", 1)[0].strip()


def _split_operands(text: str) -> list[str]:
    text = text.strip()
    return [t.strip() for t in text.split(",")] if text else []


class _Assembler:
    def __init__(self, source: str, mem_size: int):
        self.source = source
        self.mem_size = mem_size
        self.labels: dict[str, int] = {}
        self.symbols: dict[str, int] = {}

    # -- pass 1: locate every label --------------------------------------
    def _pass1(self, lines):
        section = "text"
        pc = 0
        loc = DATA_BASE
        items = []
        for lineno, raw in enumerate(lines, 1):
            line = _strip(raw)
            while True:
                m = _LABEL_RE.match(line)
                if not m or line.startswith("."):
                    break
                name, line = m.group(1), m.group(2).strip()
                if name in self.labels or name in self.symbols:
                    raise AsmError(f"duplicate label '{name}'", lineno)
                if section == "text":
                    self.labels[name] = pc
                else:
                    self.symbols[name] = loc
            if not line:
                continue
            head, _, rest = line.partition(" ")
            head = head.lower()
            if head == ".data":
                section = "data"
                continue
            if head == ".text":
                section = "text"
                continue
            if head.startswith("."):
                if head == ".entry":
                    items.append((lineno, "entry", rest))
                    continue
                if section != "data":
                    raise AsmError(f"directive {head} outside .data", lineno)
                if head == ".org":
                    loc = self._int(rest, lineno)
                elif head == ".align":
                    n = self._int(rest, lineno)
                    if n <= 0:
                        raise AsmError("alignment must be positive", lineno)
                    loc = (loc + n - 1) // n * n
                elif head == ".space":
                    loc += self._int(rest, lineno)
                elif head in (".byte", ".word"):
                    vals = _split_operands(rest)
                    items.append((lineno, head, (loc, vals)))
                    loc += len(vals) * (1 if head == ".byte" else 8)
                else:
                    raise AsmError(f"unknown directive '{head}'", lineno)
                continue
            if section != "text":
                raise AsmError("instruction in .data section", lineno)
            items.append((lineno, "insn", line))
            pc += 1
        return items

    def _int(self, text: str, lineno: int) -> int:
        try:
            return int(text.strip(), 0)
        except ValueError:
            raise AsmError(f"bad integer '{text.strip()}'", lineno) from None

    def _value(self, text: str, lineno: int) -> int:
        text = text.strip()
        try:
            return int(text, 0)
        except ValueError:
            pass
        m = _EXPR_RE.match(text)
        if m:
            base = self._symbol(m.group(1), lineno)
            off = self._int(m.group(3), lineno)
            return base + off if m.group(2) == "+" else base - off
        if _NAME_RE.match(text):
            return self._symbol(text, lineno)
        raise AsmError(f"bad immediate '{text}'", lineno)

    def _symbol(self, name: str, lineno: int) -> int:
        if name in self.labels:
            return self.labels[name]
        if name in self.symbols:
            return self.symbols[name]
        raise AsmError(f"undefined label '{name}'", lineno)

    def _target(self, text: str, lineno: int) -> int:
        text = text.strip()
        if text.startswith("@"):
            return self._int(text[1:], lineno)
        if text in self.labels:
            return self.labels[text]
        raise AsmError(f"undefined label '{text}'", lineno)

    def _reg(self, text: str, lineno: int) -> int:
        text = text.strip().lower()
        if text == "sp":
            return 30
        if not re.fullmatch(r"r\d+", text):
            raise AsmError(f"bad register '{text}'", lineno)
        n = int(text[1:])
        if n >= NUM_REGS:
            raise AsmError(f"register out of range '{text}'", lineno)
        return n

    def _mem(self, text: str, lineno: int) -> tuple[int, int]:
        m = _MEM_RE.match(text.strip())
        if not m:
            raise AsmError(f"bad memory operand '{text}'", lineno)
        imm = self._value(m.group(1), lineno) if m.group(1).strip() else 0
        return imm, self._reg(m.group(2), lineno)

    def _insn(self, text: str, lineno: int) -> Instruction:
        mnem, _, rest = text.partition(" ")
        op = _OPS.get(mnem.lower())
        if op is None:
            raise AsmError(f"unknown opcode '{mnem}'", lineno)
        args = _split_operands(rest)

        def need(n):
            if len(args) != n:
                raise AsmError(f"{op.value} expects {n} operands, got {len(args)}", lineno)

        reg, val = self._reg, self._value
        if op in R_TYPE:
            need(3)
            return Instruction(op, rd=reg(args[0], lineno), rs1=reg(args[1], lineno), rs2=reg(args[2], lineno))
        if op in I_TYPE:
            need(3)
            return Instruction(op, rd=reg(args[0], lineno), rs1=reg(args[1], lineno),
                               imm=to_signed(val(args[2], lineno) & MASK64))
        if op is Op.LI:
            need(2)
            return Instruction(op, rd=reg(args[0], lineno), imm=to_signed(val(args[1], lineno) & MASK64))
        if op is Op.LD:
            need(2)
            imm, base = self._mem(args[1], lineno)
            return Instruction(op, rd=reg(args[0], lineno), rs1=base, imm=imm)
        if op is Op.ST:
            need(2)
            imm, base = self._mem(args[1], lineno)
            return Instruction(op, rs2=reg(args[0], lineno), rs1=base, imm=imm)
        if op is Op.CLFLUSH:
            need(1)
            imm, base = self._mem(args[0], lineno)
            return Instruction(op, rs1=base, imm=imm)
        if op in COND_BRANCHES:
            need(3)
            return Instruction(op, rs1=reg(args[0], lineno), rs2=reg(args[1], lineno),
                               target=self._target(args[2], lineno))
        if op is Op.JMP or op is Op.CALL:
            need(1)
            return Instruction(op, target=self._target(args[0], lineno))
        if op is Op.JALR:
            need(2)
            return Instruction(op, rd=reg(args[0], lineno), rs1=reg(args[1], lineno))
        if op is Op.RDCYCLE:
            need(1)
            return Instruction(op, rd=reg(args[0], lineno))
        need(0)
        return Instruction(op)

    def run(self) -> ProgramImage:
        lines = self.source.splitlines()
        items = self._pass1(lines)
        insns: list[Instruction] = []
        insn_lines: list[int] = []
        data: dict[int, int] = {}
        entry = 0
        for lineno, kind, payload in items:
            if kind == "insn":
                insns.append(self._insn(payload, lineno))
                insn_lines.append(lineno)
            elif kind == "entry":
                entry = self._target(payload, lineno)
            else:
                loc, vals = payload
                width = 1 if kind == ".byte" else 8
                for i, v in enumerate(vals):
                    x = self._value(v, lineno) & ((1 << (8 * width)) - 1)
                    for b in range(width):
                        addr = loc + i * width + b
                        if not 0 <= addr < self.mem_size:
                            raise AsmError(f"data address {addr:#x} outside memory", lineno)
                        data[addr] = (x >> (8 * b)) & 0xFF
        n = len(insns)
        for ins, lineno in zip(insns, insn_lines):
            if ins.target is not None and not 0 <= ins.target < n:
                raise AsmError(f"branch target @{ins.target} outside program", lineno)
        if n and not 0 <= entry < n:
            raise AsmError(f"entry @{entry} outside program")
        scopes = compute_branch_scopes(insns)
        return ProgramImage(tuple(insns), tuple(sorted(data.items())), tuple(scopes), entry,
                            dict(self.labels), dict(self.symbols))


def assemble(source: str, mem_size: int = DEFAULT_MEM_SIZE) -> ProgramImage:
    """Assemble source text into a ProgramImage (AsmError / ScopeError on bad input)."""
    return _Assembler(source, mem_size).run()


def format_instruction(ins: Instruction, target_name=None) -> str:
    op = ins.op
    name = op.value

    def tgt():
        if target_name is not None:
            return target_name(ins.target)
        return f"@{ins.target}"

    if op in R_TYPE:
        return f"{name} r{ins.rd}, r{ins.rs1}, r{ins.rs2}"
    if op in I_TYPE:
        return f"{name} r{ins.rd}, r{ins.rs1}, {ins.imm}"
    if op is Op.LI:
        return f"li r{ins.rd}, {ins.imm}"
    if op is Op.LD:
        return f"ld r{ins.rd}, {ins.imm}(r{ins.rs1})"
    if op is Op.ST:
        return f"st r{ins.rs2}, {ins.imm}(r{ins.rs1})"
    if op is Op.CLFLUSH:
        return f"clflush {ins.imm}(r{ins.rs1})"
    if op in COND_BRANCHES:
        return f"{name} r{ins.rs1}, r{ins.rs2}, {tgt()}"
    if op is Op.JMP or op is Op.CALL:
        return f"{name} {tgt()}"
    if op is Op.JALR:
        return f"jalr r{ins.rd}, r{ins.rs1}"
    if op is Op.RDCYCLE:
        return f"rdcycle r{ins.rd}"
    return name


def disassemble(program: ProgramImage) -> str:
    """Canonical source text; ``assemble(disassemble(p))`` reproduces ``p``."""
    out = ["; canonical listing", f"; {len(program.instructions)} instructions, "
           f"{len(program.data_init)} data bytes, {len(program.scope_table)} scopes"]
    if program.data_init:
        out.append(".data")
        run: list[int] = []
        start = prev = None
        for addr, val in program.data_init:
            if prev is None or addr != prev + 1 or len(run) == 16:
                if run:
                    out.append(f".org {start:#x}")
                    out.append(".byte " + ", ".join(str(v) for v in run))
                run, start = [], addr
            run.append(val)
            prev = addr
        out.append(f".org {start:#x}")
        out.append(".byte " + ", ".join(str(v) for v in run))
    if not program.instructions:
        return "\n".join(out) + "\n"
    names: dict[int, list[str]] = {}
    for lab, idx in sorted(program.labels.items(), key=lambda kv: (kv[1], kv[0])):
        names.setdefault(idx, []).append(lab)

    def name_of(idx):
        return names[idx][0] if idx in names else f"@{idx}"

    out.append(".text")
    if program.entry:
        out.append(f".entry {name_of(program.entry)}")
    for pc, ins in enumerate(program.instructions):
        for lab in names.get(pc, ()):
            out.append(f"{lab}:")
        out.append("    " + format_instruction(ins, name_of))
    return "\n".join(out) + "\n"


def write_image(program: ProgramImage) -> str:
    """Serialize to the record format: ``I``/``D``/``S``/``E`` lines."""
    lines = [f"I {i} {format_instruction(ins)}" for i, ins in enumerate(program.instructions)]
    lines += [f"D {a} {v}" for a, v in program.data_init]
    lines += [f"S {s.branch_pc} {s.scope_start} {s.scope_end}" for s in program.scope_table]
    lines.append(f"E {program.entry}")
    return "\n".join(lines) + "\n"


def read_image(text: str, mem_size: int = DEFAULT_MEM_SIZE) -> ProgramImage:
    insns: dict[int, Instruction] = {}
    data = []
    scopes = []
    entry = 0
    asm = _Assembler("", mem_size)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith(";"):
            continue
        kind, _, rest = line.partition(" ")
        try:
            if kind == "I":
                idx, _, body = rest.partition(" ")
                insns[int(idx)] = asm._insn(body.strip(), lineno)
            elif kind == "D":
                a, v = rest.split()
                data.append((int(a), int(v)))
            elif kind == "S":
                b, s, e = rest.split()
                scopes.append(BranchScope(int(b), int(s), int(e)))
            elif kind == "E":
                entry = int(rest)
            else:
                raise AsmError(f"unknown record '{kind}'", lineno)
        except ValueError as exc:
            raise AsmError(f"malformed record: {exc}", lineno) from None
    if sorted(insns) != list(range(len(insns))):
        raise AsmError("instruction indices are not contiguous")
    ordered = tuple(insns[i] for i in range(len(insns)))
    computed = compute_branch_scopes(ordered)
    if tuple(computed) != tuple(scopes):
        raise ScopeError("scope records do not match the instruction stream")
    return ProgramImage(ordered, tuple(sorted(dict(data).items())), tuple(scopes), entry)
