import pytest

from specrun_sim.asm import assemble
from specrun_sim.attacks import ARRAY2, PocParams, gen_microbench, gen_poc, run_poc
from specrun_sim.config import SimConfig
from specrun_sim.core import run
from specrun_sim.isa import BranchScope
from specrun_sim.sl_defense import DefenseState, ScopeTracker

# nested-scope fixture: B1 at pc 2 guards [3, 10), B2 at pc 4 guards [5, 8)
SCOPES = {2: BranchScope(2, 3, 10), 4: BranchScope(4, 5, 8)}


def walk(tracker, pcs):
    out = []
    for pc in pcs:
        out.append(tracker.on_fetch(pc, "branch" if pc in SCOPES else "alu"))
    return out


def test_straight_line_keeps_stack_empty():
    t = ScopeTracker({})
    assert walk(t, range(6)) == [(0, 0)] * 6 and t.stack == ()


def test_nested_scopes_close_inner_first():
    t = ScopeTracker(SCOPES)
    got = walk(t, range(11))
    assert got[2] == (0, 1)          # B1 opens
    assert got[3] == (1, 0)
    assert got[4] == (1, 2)          # B2 opens inside B1
    assert got[5] == got[7] == (2, 0)
    assert got[8] == (1, 0)          # B2 closed at its end, B1 still open
    assert got[10] == (0, 0) and t.stack == ()
    assert list(t.ancestors(2)) == [2, 1]
    assert t.nested_in(2, 1) and not t.nested_in(1, 2)


def _state():
    t = ScopeTracker(SCOPES)
    walk(t, range(6))                 # leaves B1 = 1 and B2 = 2 open
    return DefenseState(t)


def test_fill_tags():
    d = _state()
    e0 = d.fill(0x1000, 0, 0, 1, 5)
    e1 = d.fill(0x2000, 1, 0, 1, 5)
    e2 = d.fill(0x3000, 1, 1, 1, 5)
    e3 = d.fill(0x4000, 2, 1, 1, 5)
    assert e0.b_tag is None and e0.is_tag == 0
    assert e1.b_tag == (1, 0) and e1.is_tag == 0
    assert e2.b_tag == (1, 1) and e2.is_tag == 1
    assert e3.b_tag == (2, 1)
    assert d.C == 4 and d.fill(0x2000, 2, 2, 9, 9) is e1 and d.C == 4
    d.check()


def test_outer_misprediction_deletes_whole_closure():
    d = _state()
    d.fill(0x1000, 0, 0, 1, 5)
    d.fill(0x2000, 1, 0, 1, 5)
    d.fill(0x3000, 1, 1, 1, 5)
    d.fill(0x4000, 2, 2, 1, 5)
    assert d.verdict(1, False) == 3
    assert list(d.entries) == [0x1000] and d.C == 1
    d.check()


def test_inner_misprediction_spares_outer_entries():
    d = _state()
    d.fill(0x2000, 1, 0, 1, 5)
    d.fill(0x3000, 1, 1, 1, 5)
    d.fill(0x4000, 2, 2, 1, 5)
    assert d.verdict(2, False) == 1
    assert sorted(d.entries) == [0x2000, 0x3000] and d.C == 2


def test_is_tag_alone_triggers_deletion():
    d = _state()
    d.fill(0x5000, 0, 2, 1, 5)       # address tainted by B2 outside every scope
    assert d.verdict(1, False) == 1 and d.C == 0


def test_correct_verdict_grows_s_and_allows_promotion():
    d = _state()
    d.fill(0x1000, 0, 0, 1, 5)
    d.fill(0x2000, 1, 0, 1, 5)
    d.fill(0x4000, 2, 0, 1, 5)
    assert d.classify(0x1000)[0] == "promote"
    assert d.classify(0x2000)[0] == "wait"
    assert d.verdict(1, True) == 0 and 1 in d.S
    assert d.classify(0x2000)[0] == "promote"
    assert d.classify(0x4000)[0] == "wait"     # B2 itself is still unjudged
    assert d.classify(0x9000)[0] == "miss"
    d.promote(0x1000)
    d.promote(0x2000)
    assert d.C == 1 and not d.bypass and d.promoted == 2
    d.verdict(2, True)
    d.promote(0x4000)
    assert d.C == 0 and d.bypass and d.classify(0x4000)[0] == "miss"


def test_pending_verdict_matched_by_instance():
    d = _state()
    d.fill(0x2000, 1, 0, 1, 5)
    d.defer(40, 0, 1, False, 41)
    assert d.judge_commit(40, 1, False, 41) is None
    assert d.judge_commit(40, 0, True, 77) == 1 and d.C == 0


def test_capacity_refuses_fill():
    d = DefenseState(ScopeTracker({}), capacity=1)
    assert d.fill(0x1000, 0, 0, 1, 5) is not None
    assert d.fill(0x2000, 0, 0, 1, 5) is None and d.refused == 1 and d.C == 1


def test_invalidate_and_stale_entries():
    d = _state()
    d.fill(0x1000, 0, 0, 1, 5)
    d.fill(0x2000, 0, 0, 1, 5)
    assert d.invalidate(0x1000) and not d.invalidate(0x1000)
    assert d.begin_episode() == 1 and d.C == 0 and d.entries == {}


def test_check_catches_broken_counter():
    d = _state()
    d.fill(0x1000, 0, 0, 1, 5)
    d.C = 2
    with pytest.raises(AssertionError):
        d.check()


def test_poc_gadget_tags_and_deletion():
    cfg = SimConfig(defense_mode="sl_cache", check_invariants=True)
    r = run(assemble(gen_poc(PocParams(86))), cfg)
    secret_line = f"line={ARRAY2 + 86 * 512:#x}"
    fills = [e[4] for e in r.events if e[1] == "sl_fill" and e[4].startswith(secret_line + " ")]
    assert fills
    tag = fills[0].split()[1]
    n = tag.split("=")[1].split(".")[0]
    assert tag == f"b_tag={n}.1" and fills[0].endswith(f"is={n}")
    # the gadget's first load (array1[x]) sits in the same scope with a clean address
    assert any(e[1] == "sl_fill" and e[4].endswith(f"b_tag={n}.0 is=0") for e in r.events)
    assert any(e[1] == "sl_delete" and e[4].startswith(secret_line + " ") for e in r.events)
    assert not any(e[1] == "sl_promote" and e[4].startswith(secret_line + " ") for e in r.events)


def test_poc_under_sl_cache_leaks_nothing():
    out = run_poc(PocParams(86), SimConfig(defense_mode="sl_cache"))
    assert out.report.recovered is None and out.consistent
    assert out.report.latencies[86] >= out.report.threshold


BENIGN = """
.data
.org 0x20000
a: .word 5
.org 0x21000
b: .word 6
.org 0x22000
c: .word 7
.text
    li r1, a
    clflush 0(r1)
    rdcycle r0
    ld r2, 0(r1)
    {pad}
    li r4, b
    ld r5, 0(r4)
    bne r0, r0, skip
    li r6, c
    ld r7, 0(r6)
skip:
    rdcycle r10
    ld r11, 0(r4)
    rdcycle r12
    sub r13, r12, r10
    rdcycle r10
    ld r11, 0(r6)
    rdcycle r12
    sub r14, r12, r10
    halt
"""


def test_benign_loads_promoted_then_hit_l1():
    # b is outside every scope, c sits under a correctly predicted branch
    src = BENIGN.replace("{pad}", "\n    ".join(["nop"] * 300))
    r = run(assemble(src), SimConfig(defense_mode="sl_cache", check_invariants=True))
    promoted = [e[4] for e in r.events if e[1] == "sl_promote"]
    assert any(p.startswith("line=0x21000 b_tag=0") for p in promoted)
    assert any(p.startswith("line=0x22000 b_tag=") and "b_tag=0 " not in p for p in promoted)
    assert r.sl_stats["deleted"] == 0
    regs = r.final_state.regs
    # rdcycle to rdcycle minus its own issue slot is the load latency
    assert regs[13] - 1 == 2 and regs[14] - 1 == 2


def test_skip_mode_jumps_over_gadget():
    out = run_poc(PocParams(86), SimConfig(defense_mode="skip_inv_branch", trace_events="full"))
    assert out.report.recovered is None and out.consistent
    skips = [e for e in out.result.events if e[1] == "skip"]
    assert any(e[4].startswith("redirect=") for e in skips)


def test_skip_mode_keeps_prefetch_outside_scopes():
    p = assemble(gen_microbench(64))
    ipc = {m: run(p, SimConfig(defense_mode=m)).ipc for m in ("none", "skip_inv_branch")}
    off = run(p, SimConfig(runahead_enabled=False)).ipc
    assert off < ipc["skip_inv_branch"] <= ipc["none"]
