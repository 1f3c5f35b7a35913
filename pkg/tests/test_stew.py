from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_frame
from oracles import distance_table, mode_table
from stewcodec.codec.bits import BitstreamError
from stewcodec.codec.minicodec import VIRTUAL, Dpb, RefEntry
from stewcodec.frame import Frame, make_tile_grid
from stewcodec.stenet import SteNet
from stewcodec.stew import (
    Kind,
    PfeFlagSection,
    StewWindow,
    Tools,
    assemble,
    buffer_emit,
    decide_flags,
    distance_of,
    insert_virtual,
    mode_of,
    plan_window,
    run_jise,
    run_pfe,
    run_rfs,
    schedule,
    trace_json,
)


def test_mode_and_distance_tables():
    for p in range(64):
        assert {k.value for k in mode_of(p)} == mode_table(p)
        if Kind.S in mode_of(p):
            assert distance_of(p) == distance_table(p)
    with pytest.raises(ValueError):
        distance_of(8)
    with pytest.raises(ValueError):
        mode_of(-1)


def test_full_window_plan():
    assert [str(a) for a in plan_window(0, 8)] == [
        "S(4,d=4)", "S(2,d=2)", "J(1)", "S(3,d=1)", "E(1,3)", "S(6,d=2)", "J(5)", "S(7,d=1)", "E(5,7)"]
    assert [str(a) for a in plan_window(8, 16)] == [
        "S(12,d=4)", "S(10,d=2)", "J(9)", "S(11,d=1)", "E(9,11)", "S(14,d=2)", "J(13)", "S(15,d=1)",
        "E(13,15)"]


def test_plan_without_joint_splits_into_pair():
    plan = [str(a) for a in plan_window(0, 8, Tools(jise=False))]
    assert plan == ["S(4,d=4)", "S(2,d=2)", "E(0,2)", "S(1,d=1)", "S(3,d=1)", "E(1,3)",
                    "S(6,d=2)", "E(4,6)", "S(5,d=1)", "S(7,d=1)", "E(5,7)"]


def test_plan_with_single_tool():
    assert all(a.kind is Kind.S for a in plan_window(0, 8, Tools(True, False, False)))
    assert all(a.kind is Kind.E for a in plan_window(0, 8, Tools(False, True, False)))
    assert plan_window(0, 8, Tools(False, False, False)) == []


def test_truncated_window_drops_unreachable_actions():
    assert [str(a) for a in plan_window(0, 6)] == ["S(2,d=2)", "J(1)", "S(3,d=1)", "E(1,3)", "J(5)"]


def test_single_frame_has_no_actions():
    assert [s.poc for s in schedule(1)] == [0] and plan_window(0, 0) == []
    with pytest.raises(ValueError):
        plan_window(4, 8)


def test_trace_json_shape():
    trace = trace_json(schedule(9))
    assert len(trace) == 9 and trace[0] == {"order": 0, "kind": "S", "target": 4, "inputs": [0, 8], "d": 4}
    assert trace[2] == {"order": 2, "kind": "J", "target": 1, "inputs": [0, 2], "d": 1}


@given(st.integers(1, 60), st.booleans(), st.booleans(), st.booleans())
def test_schedule_invariants(n, rfs, pfe, jise):
    tools = Tools(rfs, pfe, jise)
    coded = set()
    enhanced = Counter()
    for step in schedule(n, tools):
        if step.is_code:
            assert step.poc not in coded
            coded.add(step.poc)
            continue
        a = step.action
        assert set(a.inputs) <= coded                      # only reconstructed inputs
        if a.synthesizes is not None:
            assert a.target not in coded                   # virtual ref precedes coding
        enhanced.update(a.enhances)
    assert coded == set(range(n))
    assert all(c == 1 for c in enhanced.values())
    if pfe:
        for base in range(0, n - 8, 8):
            assert all(enhanced[p] == 1 for p in range(base, base + 8))


def test_flags_bits():
    assert Tools().flags == 7
    assert Tools(True, True, False).flags == 7
    assert Tools(True, False, True).flags == 1
    assert Tools(False, True, True).flags == 2


def test_flag_section_roundtrip_and_padding():
    sec = PfeFlagSection(3, 3, 3, (1, 0, 1, 1, 0, 0, 0, 1, 1))
    data = sec.to_bytes()
    assert data == b"\x03\x00\x03\x00" + bytes([0b10110001, 0b10000000])
    back, used = PfeFlagSection.from_bytes(data, poc=3)
    assert back == sec and used == 6
    with pytest.raises(BitstreamError):
        PfeFlagSection.from_bytes(data[:-1] + b"\x81")
    with pytest.raises(BitstreamError):
        PfeFlagSection.from_bytes(data[:-1])
    with pytest.raises(ValueError):
        PfeFlagSection(0, 2, 2, (1,))


@given(st.lists(st.integers(0, 1), max_size=40), st.integers(0, 2**31))
def test_flag_section_property(bits, seed):
    sec = PfeFlagSection(0, len(bits), 1 if bits else 0, tuple(bits))
    back, used = PfeFlagSection.from_bytes(b"\xff" + sec.to_bytes(), offset=1)
    assert back.flags == sec.flags and used == 4 + -(-len(bits) // 8)


def test_flag_decision_is_strict():
    orig = Frame.constant(32, 16, 100)
    recon = Frame.constant(32, 16, 101)
    grid = make_tile_grid(32, 16, 16, 0)
    assert decide_flags(orig, recon, recon, grid) == (0, 0)        # ties keep the recon
    better = Frame(np.where(np.arange(32) < 16, 100, 101).astype(np.uint8)[None].repeat(16, 0),
                   recon.u, recon.v)
    assert decide_flags(orig, recon, better, grid) == (1, 0)
    mixed = assemble(recon, better, grid, (1, 0))
    assert mixed.same_samples(better)
    with pytest.raises(ValueError):
        assemble(recon, better, grid, (1,))


def test_flags_never_lose_quality():
    orig, recon, filt = (random_frame(64, 32, s) for s in (1, 2, 3))
    grid = make_tile_grid(64, 32, 16, 4)
    out = assemble(recon, filt, grid, decide_flags(orig, recon, filt, grid))
    err = lambda f: int(((f.y.astype(int) - orig.y) ** 2).sum() + ((f.u.astype(int) - orig.u) ** 2).sum()
                        + ((f.v.astype(int) - orig.v) ** 2).sum())
    assert err(out) <= min(err(recon), err(filt))


def test_insert_virtual():
    f = Frame.constant(16, 16)
    v = Frame.constant(16, 16, 1)
    l0, l1 = insert_virtual(([RefEntry(0, f), RefEntry(2, f)], [RefEntry(8, f)]), v)
    assert [e.label for e in l0] == [0, VIRTUAL, 2] and [e.label for e in l1] == [8, VIRTUAL]
    l0, l1 = insert_virtual((l0, []), v)
    assert [e.label for e in l0] == [0, VIRTUAL, 2] and l1 == []


def test_window_buffer():
    w = StewWindow(0, 8, covered={0, 1, 2, 3, 4, 5, 6})
    f = Frame.constant(16, 16)
    w.reconstructed(7, f)                                   # orphan passes straight through
    with pytest.raises(RuntimeError):
        buffer_emit(w)
    for p in range(7):
        w.enhanced(p, Frame.constant(16, 16, p))
    with pytest.raises(RuntimeError):
        w.enhanced(3, f)
    out = buffer_emit(w)
    assert [int(o.y[0, 0]) for o in out] == list(range(7)) + [128] and w.emitted
    with pytest.raises(ValueError):
        StewWindow(3, 8, set())


def test_buffer_rejects_enhanced_frame_used_for_synthesis():
    w = StewWindow(0, 0, covered={0})
    e = Frame.constant(16, 16)
    w.enhanced(0, e)
    w.rfs_inputs.append(e)
    with pytest.raises(RuntimeError):
        buffer_emit(w)


def _dpb(pocs, w=32, h=32):
    dpb = Dpb()
    for p in pocs:
        dpb.store(p, random_frame(w, h, p, poc=p))
    return dpb


def test_joint_action_matches_separate_actions():
    dpb = _dpb([0, 2, 4])
    originals = {p: random_frame(32, 32, 100 + p, poc=p) for p in range(5)}
    net = SteNet()
    a, virt, b, secs, _ = run_jise(1, dpb, originals, net)
    (pa, pb), psecs = run_pfe(1, dpb, originals, net, pair=(0, 2))
    v2, _ = run_rfs(1, 1, dpb, net)
    assert a.same_samples(pa) and b.same_samples(pb) and virt.same_samples(v2)
    assert secs == psecs


def test_decoder_side_uses_sections():
    dpb = _dpb([0, 2])
    originals = {p: random_frame(32, 32, 100 + p, poc=p) for p in range(3)}
    net = SteNet()
    (ea, eb), (sa, sb) = run_pfe(2, dpb, originals, net)
    (da, db), _ = run_pfe(2, dpb, None, net, sections={0: sa, 2: sb})
    assert da.same_samples(ea) and db.same_samples(eb)
    with pytest.raises(BitstreamError):
        run_pfe(2, dpb, None, net, sections={0: sa})
    bad = PfeFlagSection(2, 2, 1, (0, 0))
    with pytest.raises(BitstreamError):
        run_pfe(2, dpb, None, net, sections={0: sa, 2: bad})


def test_rfs_missing_input_leaves_lists():
    dpb = _dpb([0])
    rpls = ([RefEntry(0, dpb[0])], [])
    virt, out = run_rfs(4, 4, dpb, SteNet(), rpls)
    assert virt is None and out is rpls
    virt, out = run_rfs(4, 4, _dpb([0, 8]), SteNet(), rpls)
    assert virt is not None and out[0][1].label == VIRTUAL
    with pytest.raises(KeyError):
        run_pfe(2, dpb, None, SteNet())
