"""Random structured programs for differential testing of the core against the interpreter.

Generated programs always terminate, never trap and never read the cycle
counter. Control flow is built from nested if/else regions, counted loops,
calls into leaf-first helper functions and computed jumps, so forward branch
scopes nest properly by construction.
"""
from __future__ import annotations

import random

from .asm import DATA_BASE

DATA_BYTES = 4096
BASE_REG = 20
LOOP_REGS = (16, 17, 18, 19)
JUMP_REG = 22
VALUE_REGS = tuple(r for r in range(1, 16))

_R_OPS = ("add", "sub", "mul", "div", "and", "or", "xor", "sll", "srl")
_I_OPS = ("addi", "andi", "slli", "srli")
_CMP = ("beq", "bne", "blt", "bge")


class ProgramGenerator:
    def __init__(self, seed: int, max_depth: int = 3, body_len: tuple[int, int] = (3, 9),
                 functions: int = 2):
        self.rng = random.Random(seed)
        self.max_depth = max_depth
        self.body_len = body_len
        self.n_functions = functions
        self.lines: list[str] = []
        self.label_id = 0
        self.callable: list[str] = []
        self.loop_cap = len(LOOP_REGS)

    def label(self, stem: str) -> str:
        self.label_id += 1
        return f"{stem}{self.label_id}"

    def reg(self) -> int:
        return self.rng.choice(VALUE_REGS)

    def emit(self, text: str) -> None:
        self.lines.append("    " + text)

    def place(self, label: str) -> None:
        self.lines.append(f"{label}:")

    # -- straight-line pieces ----------------------------------------------
    def simple(self) -> None:
        rng = self.rng
        k = rng.random()
        if k < 0.35:
            self.emit(f"{rng.choice(_R_OPS)} r{self.reg()}, r{rng.choice((0,) + VALUE_REGS)}, r{self.reg()}")
        elif k < 0.5:
            op = rng.choice(_I_OPS)
            imm = rng.randrange(64) if op in ("slli", "srli") else rng.randrange(-2048, 2048)
            self.emit(f"{op} r{self.reg()}, r{self.reg()}, {imm}")
        elif k < 0.58:
            self.emit(f"li r{self.reg()}, {rng.randrange(-(1 << 40), 1 << 40)}")
        elif k < 0.72:
            self.emit(f"ld r{self.reg()}, {rng.randrange(DATA_BYTES - 7)}(r{BASE_REG})")
        elif k < 0.80:
            self.indirect_access("ld")
        elif k < 0.88:
            self.emit(f"st r{self.reg()}, {rng.randrange(DATA_BYTES - 7)}(r{BASE_REG})")
        elif k < 0.92:
            self.indirect_access("st")
        elif k < 0.97:
            self.emit(f"clflush {rng.randrange(DATA_BYTES)}(r{BASE_REG})")
        else:
            self.emit("nop")

    def indirect_access(self, op: str) -> None:
        """Data-dependent address kept inside the data region by masking."""
        rng = self.rng
        t = self.reg()
        self.emit(f"andi r{t}, r{self.reg()}, {rng.choice((0xFF8, 0xFF7, 0x7F8, 0x3C0))}")
        self.emit(f"add r{t}, r{t}, r{BASE_REG}")
        if op == "ld":
            self.emit(f"ld r{self.reg()}, 0(r{t})")
        else:
            self.emit(f"st r{self.reg()}, 0(r{t})")

    # -- structured regions ------------------------------------------------
    def block(self, depth: int, loop_level: int) -> None:
        rng = self.rng
        for _ in range(rng.randint(*self.body_len)):
            k = rng.random()
            if depth < self.max_depth and k < 0.14:
                self.if_region(depth, loop_level)
            elif depth < self.max_depth and k < 0.20 and loop_level < self.loop_cap:
                self.loop(depth, loop_level)
            elif k < 0.24 and self.callable:
                self.emit(f"call {rng.choice(self.callable)}")
            elif k < 0.27:
                self.computed_jump()
            else:
                self.simple()

    def if_region(self, depth: int, loop_level: int) -> None:
        rng = self.rng
        cmp = rng.choice(_CMP)
        a, b = rng.choice((0,) + VALUE_REGS), self.reg()
        if rng.random() < 0.5:
            end = self.label("endif")
            self.emit(f"{cmp} r{a}, r{b}, {end}")
            self.block(depth + 1, loop_level)
            self.place(end)
        else:
            other = self.label("else")
            end = self.label("endif")
            self.emit(f"{cmp} r{a}, r{b}, {other}")
            self.block(depth + 1, loop_level)
            self.emit(f"jmp {end}")
            self.place(other)
            self.block(depth + 1, loop_level)
            self.place(end)

    def loop(self, depth: int, loop_level: int) -> None:
        counter = LOOP_REGS[loop_level]
        top = self.label("loop")
        self.emit(f"li r{counter}, {self.rng.randint(1, 6)}")
        self.place(top)
        self.block(depth + 1, loop_level + 1)
        self.emit(f"addi r{counter}, r{counter}, -1")
        self.emit(f"bne r{counter}, r0, {top}")

    def computed_jump(self) -> None:
        dest = self.label("jt")
        self.emit(f"li r{JUMP_REG}, {dest}")
        self.emit(f"jalr r{self.reg()}, r{JUMP_REG}")
        for _ in range(self.rng.randint(0, 2)):
            self.emit(f"addi r{self.reg()}, r{self.reg()}, 1")
        self.place(dest)

    # -- whole program -------------------------------------------------------
    def generate(self) -> str:
        rng = self.rng
        data = [str(rng.randrange(256)) for _ in range(256)]
        head = [
            ".data",
            f".org {DATA_BASE:#x}",
            f"buf: .byte {', '.join(data)}",
            f"    .space {DATA_BYTES - len(data) + 8}",
            ".text",
            "main:",
        ]
        self.lines = []
        funcs: list[list[str]] = []
        # helpers run inside the caller's loops, so they get no counters of their own
        self.loop_cap = 0
        for i in range(self.n_functions):
            name = f"fn{i}"
            self.lines = []
            self.place(name)
            self.block(1, 0)
            self.emit("ret")
            funcs.append(self.lines)
            self.callable.append(name)
        self.loop_cap = len(LOOP_REGS)
        self.lines = []
        self.emit(f"li r{BASE_REG}, buf")
        for r in VALUE_REGS[:6]:
            self.emit(f"li r{r}, {rng.randrange(-100, 1000)}")
        self.block(0, 0)
        self.emit("halt")
        body = self.lines
        for f in funcs:
            body += f
        return "\n".join(head + body) + "\n"


def random_program(seed: int, **kw) -> str:
    return ProgramGenerator(seed, **kw).generate()
