from hypothesis import given, settings, strategies as st

from specrun_sim.branch_pred import BranchKind, BranchPredictor

C = BranchKind.CONDITIONAL


def test_cold_counter_predicts_not_taken():
    bp = BranchPredictor()
    p = bp.predict(0x40, C, target=0x80)
    assert not p.taken and p.target == 0x41


def test_three_taken_updates_flip_prediction():
    bp = BranchPredictor()
    for _ in range(3):
        bp.update(0x40, True, ghr=0)
    assert bp.pht[bp.index(0x40, 0)] == 3
    bp.ghr = 0
    assert bp.predict(0x40, C, target=0x80).taken


def test_saturated_counter_steps_down_once():
    bp = BranchPredictor()
    i = bp.index(0x40, 0)
    bp.pht[i] = 3
    bp.update(0x40, False, ghr=0)
    assert bp.pht[i] == 2
    bp.ghr = 0
    assert bp.predict(0x40, C).taken  # still weakly taken


def test_btb_learns_indirect_target():
    bp = BranchPredictor()
    assert bp.predict(7, BranchKind.INDIRECT).target is None
    bp.update(7, True, 40, BranchKind.INDIRECT)
    assert bp.predict(7, BranchKind.INDIRECT).target == 40
    # a conflicting pc evicts the entry (direct-mapped)
    bp.update(7 + bp.btb_entries, True, 99, BranchKind.INDIRECT)
    assert bp.btb_lookup(7) is None


def test_alternating_pattern_is_learned_with_history():
    bp = BranchPredictor()
    pattern = [True, False] * 40
    wrong_tail = 0
    for n, actual in enumerate(pattern):
        h = bp.ghr
        p = bp.predict(0x10, C, target=0x30)
        bp.update(0x10, actual, ghr=h, predicted_taken=p.taken)
        if n >= 60 and p.taken != actual:
            wrong_tail += 1
    assert wrong_tail == 0


def test_call_return_pairing_and_overflow():
    bp = BranchPredictor(rsb_depth=2)
    bp.predict(1, BranchKind.CALL, target=50)
    bp.predict(51, BranchKind.CALL, target=60)
    bp.predict(61, BranchKind.CALL, target=70)  # drops the oldest entry
    assert bp.predict(71, BranchKind.RETURN).target == 62
    assert bp.predict(63, BranchKind.RETURN).target == 52
    assert bp.predict(53, BranchKind.RETURN).target is None


def test_checkpoint_restores_ghr_and_rsb_only():
    bp = BranchPredictor()
    bp.push(5)
    cp = bp.checkpoint()
    bp.predict(3, C)
    bp.push(9)
    bp.update(3, True, ghr=0)
    bp.update(8, True, 77, BranchKind.INDIRECT)
    bp.restore(cp)
    assert bp.ghr == cp.ghr == 0 and bp.rsb == (5,)
    # the PHT and BTB keep their training
    assert bp.pht[bp.index(3, 0)] == 2 and bp.btb_lookup(8) == 77


def test_tables_copy_round_trip():
    bp = BranchPredictor()
    bp.update(3, True, ghr=0)
    saved = bp.tables()
    bp.update(3, False, ghr=0)
    bp.update(3, False, ghr=0)
    bp.load_tables(saved)
    assert bp.pht[bp.index(3, 0)] == 2


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1023), st.booleans()), max_size=200))
def test_counters_stay_in_range(updates):
    bp = BranchPredictor(history_bits=4)
    for pc, taken in updates:
        h = bp.ghr
        p = bp.predict(pc, C)
        bp.update(pc, taken, ghr=h, predicted_taken=p.taken)
        assert 0 <= bp.ghr < 16
    assert all(0 <= c <= 3 for c in bp.pht)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.one_of(st.integers(0, 10**6), st.none()), max_size=60))
def test_rsb_is_bounded_lifo(ops):
    bp = BranchPredictor(rsb_depth=8)
    model = []
    for op in ops:
        if op is None:
            got = bp.pop()
            assert got == (model.pop() if model else None)
        else:
            bp.push(op)
            model = (model + [op])[-8:]
    assert list(bp.rsb) == model
