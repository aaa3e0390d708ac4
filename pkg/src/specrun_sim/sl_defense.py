"""SL-cache defense: branch-scope tracking, taint tags and the post-runahead load protocol.

Runahead loads are kept out of the regular hierarchy and parked in a small
side cache. Each parked line remembers which unresolved branch guarded it
(``b_tag``) and whether its address was computed from tainted data
(``is_tag``). After runahead ends, a line is promoted to L1 only once its
guarding branches are known to have been predicted correctly; lines that
belong to a mispredicted branch, or to anything nested inside it, are dropped.
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import ScopeError

# A scope frame is (ordinal, start, end, call_depth). Indirect branches push
# "context" frames with start = end = -1 that stay open until they resolve.
CONTEXT = -1


@dataclass(slots=True)
class SLCacheEntry:
    line_addr: int
    b_tag: tuple[int, int] | None  # (n, m); None when the load was outside every scope
    is_tag: int                    # branch ordinal whose taint reached the address, or 0
    fill_cycle: int
    ready_cycle: int
    data: bytes = b""

    @property
    def ordinal(self) -> int:
        """Branch that decides this entry's fate (guarding scope first, then taint)."""
        return self.b_tag[0] if self.b_tag else self.is_tag

    def describe(self) -> str:
        bt = f"{self.b_tag[0]}.{self.b_tag[1]}" if self.b_tag else "0"
        return f"line={self.line_addr:#x} b_tag={bt} is={self.is_tag}"


class ScopeTracker:
    """Fetch-time stack of open branch scopes.

    Every conditional branch with a scope-table entry and every indirect
    branch gets a fresh ordinal; ``parent`` records the scope that was
    innermost when it was fetched, which is all the nesting information the
    deletion rule needs. The whole tracker state is an immutable pair so uops
    can snapshot it for squash recovery at no cost.
    """

    def __init__(self, scope_map):
        self.scope_map = scope_map
        self.next_ordinal = 1
        self.parent: dict[int, int] = {}
        self.resolved_ctx: set[int] = set()
        self.stack: tuple[tuple[int, int, int, int], ...] = ()
        self.depth = 0

    @property
    def state(self):
        return (self.stack, self.depth)

    def restore(self, state) -> None:
        stack, self.depth = state
        if self.resolved_ctx and any(f[1] == CONTEXT and f[0] in self.resolved_ctx for f in stack):
            stack = tuple(f for f in stack if not (f[1] == CONTEXT and f[0] in self.resolved_ctx))
        self.stack = stack

    def innermost(self) -> int:
        return self.stack[-1][0] if self.stack else 0

    def new_ordinal(self, parent: int) -> int:
        n = self.next_ordinal
        self.next_ordinal += 1
        self.parent[n] = parent
        return n

    def on_fetch(self, pc: int, op_kind: str) -> tuple[int, int]:
        """Account for fetching ``pc``; returns (context ordinal, own ordinal or 0)."""
        stack = self.stack
        if stack:
            depth = self.depth
            kept = tuple(f for f in stack
                         if f[1] == CONTEXT or depth > f[3] or (depth == f[3] and f[1] <= pc < f[2]))
            if len(kept) != len(stack):
                stack = self.stack = kept
        ctx = stack[-1][0] if stack else 0
        own = 0
        if op_kind == "branch":
            scope = self.scope_map.get(pc)
            if scope is not None:
                own = self.new_ordinal(ctx)
                self.stack = stack + ((own, scope.scope_start, scope.scope_end, self.depth),)
        elif op_kind in ("jalr", "ret"):
            own = self.new_ordinal(ctx)
            self.stack = stack + ((own, CONTEXT, CONTEXT, self.depth),)
        if op_kind == "call":
            self.depth += 1
        elif op_kind == "ret":
            self.depth -= 1
        return ctx, own

    def resolve_context(self, ordinal: int) -> None:
        self.resolved_ctx.add(ordinal)
        if any(f[0] == ordinal for f in self.stack):
            self.stack = tuple(f for f in self.stack if f[0] != ordinal)

    def reopen(self, state, old: int) -> tuple[tuple, int]:
        """Replace a resolved branch's frame with a fresh ordinal (the corrected path)."""
        stack, depth = state
        fresh = self.new_ordinal(self.parent.get(old, 0))
        stack = tuple((fresh,) + f[1:] if f[0] == old else f for f in stack)
        return (stack, depth), fresh

    def ancestors(self, ordinal: int):
        """``ordinal`` and every enclosing ordinal, innermost first."""
        seen = 0
        while ordinal:
            yield ordinal
            ordinal = self.parent.get(ordinal, 0)
            seen += 1
            if seen > 1_000_000:  # pragma: no cover - parent links always point backwards
                raise ScopeError("cyclic scope nesting")

    def nested_in(self, ordinal: int, root: int) -> bool:
        return any(a == root for a in self.ancestors(ordinal))


class DefenseState:
    """SL cache contents, counter C, the set S of verified branches, and pending verdicts."""

    def __init__(self, tracker: ScopeTracker, capacity: int = 64, latency: int = 1):
        self.tracker = tracker
        self.capacity = capacity
        self.latency = latency
        self.entries: dict[int, SLCacheEntry] = {}
        self.C = 0
        self.S: set[int] = set()
        # ordinals verified outside runahead (committed or resolved correctly in
        # normal mode); outer scopes opened before an episode count as checked
        self.known_ok: set[int] = set()
        self.bad: set[int] = set()
        self.usl: dict[int, int] = {}
        self.pending: dict[tuple[int, int], tuple[int, bool, int]] = {}
        self.pending_ords: set[int] = set()
        self.bypass = False
        self.refused = 0
        self.promoted = 0
        self.deleted = 0
        self.events: list[tuple[str, str]] = []

    # -- episode bookkeeping ---------------------------------------------
    def begin_episode(self, live_ordinals=()) -> int:
        """Called at runahead entry: leftovers from the last episode are dropped."""
        self.known_ok &= set(live_ordinals)
        dropped = len(self.entries)
        for e in self.entries.values():
            self.events.append(("sl_delete", e.describe() + " reason=stale"))
        self.entries.clear()
        self.C = 0
        self.deleted += dropped
        self.S.clear()
        self.bad.clear()
        self.usl.clear()
        self.pending.clear()
        self.pending_ords.clear()
        self.bypass = False
        return dropped

    def end_episode(self) -> None:
        if self.C == 0:
            self.set_bypass()

    def set_bypass(self) -> None:
        if not self.bypass:
            self.bypass = True
            self.events.append(("sl_bypass", "C=0"))

    # -- runahead side ---------------------------------------------------
    def fill(self, line_addr: int, ctx: int, addr_taint: int, cycle: int, ready: int,
             data: bytes = b"") -> SLCacheEntry | None:
        """Park a runahead load. Returns None when the SL cache is full."""
        e = self.entries.get(line_addr)
        if e is not None:
            return e
        if len(self.entries) >= self.capacity:
            self.refused += 1
            self.events.append(("sl_refuse", f"line={line_addr:#x}"))
            return None
        if ctx:
            if addr_taint:
                m = self.usl.get(ctx, 0) + 1
                self.usl[ctx] = m
            else:
                m = 0
            b_tag = (ctx, m)
        else:
            b_tag = None
        e = SLCacheEntry(line_addr, b_tag, addr_taint, cycle, ready, data)
        self.entries[line_addr] = e
        self.C += 1
        self.events.append(("sl_fill", e.describe()))
        return e

    def mark_ok(self, ordinal: int, runahead: bool) -> None:
        if runahead:
            self.S.add(ordinal)
            self.pending_ords.discard(ordinal)
        else:
            self.known_ok.add(ordinal)

    def verdict(self, ordinal: int, correct: bool) -> int:
        """A branch outcome is known: grow S, or delete everything it guarded."""
        self.pending_ords.discard(ordinal)
        if correct:
            self.S.add(ordinal)
            return 0
        return self.delete_closure(ordinal)

    def defer(self, pc: int, instance: int, ordinal: int, taken: bool, target: int) -> None:
        """Branch left runahead unresolved; judge it when normal execution commits it."""
        self.pending[(pc, instance)] = (ordinal, taken, target)
        self.pending_ords.add(ordinal)

    def judge_commit(self, pc: int, instance: int, taken: bool, target: int) -> int | None:
        rec = self.pending.pop((pc, instance), None)
        if rec is None:
            return None
        ordinal, ptaken, ptarget = rec
        return self.verdict(ordinal, ptaken == taken and ptarget == target)

    def delete_closure(self, root: int) -> int:
        """Drop entries tagged with ``root`` or any scope nested inside it."""
        self.bad.add(root)
        self.pending_ords.discard(root)
        nested = self.tracker.nested_in
        doomed = [line for line, e in self.entries.items()
                  if (e.b_tag and nested(e.b_tag[0], root)) or (e.is_tag and nested(e.is_tag, root))]
        for line in doomed:
            e = self.entries.pop(line)
            self.events.append(("sl_delete", e.describe() + f" root={root}"))
        d = len(doomed)
        self.C -= d
        self.deleted += d
        return d

    # -- post-runahead loads ---------------------------------------------
    def classify(self, line_addr: int) -> tuple[str, SLCacheEntry | None]:
        """``miss``, ``promote`` or ``wait`` for a normal-mode load of this line."""
        if self.C == 0 or self.bypass:
            return "miss", None
        e = self.entries.get(line_addr)
        if e is None:
            return "miss", None
        for n in (e.b_tag[0] if e.b_tag else 0, e.is_tag):
            for a in self.tracker.ancestors(n):
                if a not in self.S and a not in self.known_ok:
                    return "wait", e
        return "promote", e

    def promote(self, line_addr: int) -> SLCacheEntry:
        e = self.entries.pop(line_addr)
        self.C -= 1
        self.promoted += 1
        self.events.append(("sl_promote", e.describe()))
        if self.C == 0:
            self.set_bypass()
        return e

    def give_up(self, e: SLCacheEntry) -> int:
        """A waiting load reached the ROB head with its branch still unjudged."""
        root = e.ordinal
        for a in self.tracker.ancestors(root):
            if a not in self.S and a not in self.known_ok:
                root = a
        d = self.delete_closure(root)
        if self.C == 0:
            self.set_bypass()
        return d

    def invalidate(self, line_addr: int) -> bool:
        """A committed CLFLUSH also removes the line from the SL cache."""
        e = self.entries.pop(line_addr, None)
        if e is None:
            return False
        self.C -= 1
        self.deleted += 1
        self.events.append(("sl_delete", e.describe() + " reason=flush"))
        if self.C == 0:
            self.set_bypass()
        return True

    # -- invariants ------------------------------------------------------
    def check(self) -> None:
        if self.C != len(self.entries):
            raise AssertionError(f"SL counter C={self.C} but {len(self.entries)} entries resident")
        if self.bad:
            nested = self.tracker.nested_in
            for e in self.entries.values():
                for root in self.bad:
                    if (e.b_tag and nested(e.b_tag[0], root)) or (e.is_tag and nested(e.is_tag, root)):
                        raise AssertionError(f"entry {e.describe()} survived deletion of {root}")
