import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import dense_bd_rate, pchip_eval, psnr_of_mse
from stewcodec.evaluate import (
    RDCurve,
    RDPoint,
    bd_rate,
    classify_block,
    read_rd_csv,
    ref_usage,
    report_value,
    sequence_report,
    write_rd_csv,
)
from stewcodec.frame import Frame

ANCHOR = ([100, 180, 330, 700], [30.1, 33.4, 35.9, 39.2])
TEST = ([90, 170, 300, 650], [30.0, 33.5, 36.2, 39.0])


def _curve(rates, psnrs):
    return RDCurve([RDPoint(r, q, q, q) for r, q in zip(rates, psnrs)])


def test_identical_curves_give_zero():
    c = _curve(*ANCHOR)
    assert bd_rate(c, c).bd_rate == {"y": 0.0, "u": 0.0, "v": 0.0}


def test_uniform_rate_scaling():
    a = _curve(*ANCHOR)
    t = _curve([1.1 * r for r in ANCHOR[0]], ANCHOR[1])
    assert bd_rate(a, t).bd_rate["y"] == pytest.approx(10.0, abs=1e-9)
    assert dense_bd_rate(ANCHOR[0], ANCHOR[1], [1.1 * r for r in ANCHOR[0]], ANCHOR[1]) == \
        pytest.approx(10.0, abs=1e-9)


def test_crossing_curves_match_dense_oracle():
    r = bd_rate(_curve(*ANCHOR), _curve(*TEST), components=("y",))
    # frozen from the Simpson oracle over 20001 samples
    assert r.bd_rate["y"] == pytest.approx(-9.864488627409418, abs=1e-6)
    assert r.overlap["y"] == (30.1, 39.0)


def test_pchip_oracle_agrees_with_scipy_nodes():
    q, lr = np.array(ANCHOR[1]), np.log10(ANCHOR[0])
    for qi, li in zip(q, lr):
        assert pchip_eval(q, lr, qi) == pytest.approx(li)


@st.composite
def _curves(draw):
    base = sorted(draw(st.lists(st.floats(10, 5000), min_size=4, max_size=6, unique=True)))
    gaps = draw(st.lists(st.floats(0.3, 4), min_size=len(base), max_size=len(base)))
    q = list(np.cumsum(gaps) + 28)
    return base, q


@given(_curves(), st.floats(0.5, 2.0), st.floats(-0.3, 0.3))
def test_bd_rate_properties(curve, scale, shift):
    rates, q = curve
    if np.any(np.diff(rates) <= 0):
        return
    a = _curve(rates, q)
    t = _curve([scale * r for r in rates], [x + shift for x in q])
    fwd = bd_rate(a, t, ("y",)).bd_rate["y"]
    back = bd_rate(t, a, ("y",)).bd_rate["y"]
    # inverse consistency: (1 + a/100)(1 + b/100) = 1
    assert (1 + fwd / 100) * (1 + back / 100) == pytest.approx(1.0, rel=1e-9)
    assert fwd == pytest.approx(dense_bd_rate(rates, q, [scale * r for r in rates],
                                              [x + shift for x in q]), abs=1e-6)
    if shift == 0:
        assert fwd == pytest.approx((scale - 1) * 100, abs=1e-7)


def test_bd_rate_input_errors():
    with pytest.raises(ValueError, match="4"):
        bd_rate(_curve([1, 2, 3], [30, 31, 32]), _curve(*ANCHOR))
    with pytest.raises(ValueError, match="monotone"):
        bd_rate(_curve([1, 2, 3, 4], [30, 32, 31, 33]), _curve(*ANCHOR))
    with pytest.raises(ValueError, match="lossless"):
        bd_rate(_curve([1, 2, 3, 4], [30, 31, 32, math.inf]), _curve(*ANCHOR))
    with pytest.raises(ValueError, match="positive"):
        bd_rate(_curve([0, 2, 3, 4], [30, 31, 32, 33]), _curve(*ANCHOR))
    with pytest.raises(ValueError, match="overlap"):
        bd_rate(_curve(*ANCHOR), _curve([1, 2, 3, 4], [50, 51, 52, 53]))


def test_sequence_report_mse_average():
    base = Frame.constant(16, 16, 100)
    y1 = base.y.copy()
    y1[:, :] = 101                                          # MSE 1
    y3 = base.y.copy().astype(int)
    y3[0::2, :] += 2                                        # half the samples off by 2 -> MSE 2
    y3[1::4, :] += 2                                        # a quarter more off by 2 -> MSE 3
    f1 = Frame(y1, base.u, base.v)
    f3 = Frame(y3.astype(np.uint8), base.u, base.v)
    point, table = sequence_report([base, base], [f1, f3], total_bits=1000, fps=(30, 1), qp=22)
    assert [r["mse_y"] for r in table] == [1.0, 3.0]
    assert point.psnr_y == pytest.approx(psnr_of_mse(2.0)) == pytest.approx(45.12050365203929)
    assert point.rate == pytest.approx(15.0) and point.qp == 22
    assert math.isinf(point.psnr_u)


def test_lossless_reporting():
    f = Frame.constant(16, 16)
    point, _ = sequence_report([f], [f], 80, 25.0)
    assert point.lossless and report_value(point.psnr_y) == 999.99
    assert "999.99" in write_rd_csv([point])
    with pytest.raises(ValueError):
        sequence_report([f], [], 0, 30)


def test_rd_csv_roundtrip():
    pts = [RDPoint(100.0 + i, 30.0 + i, 31.0 + i, 32.0 + i, qp=22 + 5 * i) for i in range(4)]
    back = read_rd_csv(write_rd_csv(pts))
    assert back.points == pts
    assert write_rd_csv(pts).splitlines()[0] == "qp,rate_kbps,psnr_y,psnr_u,psnr_v"
    with pytest.raises(ValueError):
        read_rd_csv("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_rd_csv("qp,rate_kbps,psnr_y,psnr_u,psnr_v\n1,x,1,1,1\n")


def test_ref_usage_thirds():
    trace = {1: [{"mode": "BI", "refs": ["virtual", "virtual"]},
                 {"mode": "UNI0", "refs": ["virtual"]},
                 {"mode": "BI", "refs": [0, 2]},
                 {"mode": "INTRA_DC", "refs": []}],
             0: [{"mode": "INTRA_DC"}]}
    stats = ref_usage(trace)
    assert stats.fractions == pytest.approx({"both_virtual": 1 / 3, "one_virtual": 1 / 3, "none": 1 / 3})
    assert stats.per_frame[0] is None and stats.inter_blocks == 3
    assert stats.to_csv().splitlines() == ["poc,both_virtual,one_virtual,none", "0,,,",
                                          "1,0.333333,0.333333,0.333333"]


def test_ref_usage_empty_and_errors():
    assert ref_usage({}).fractions is None
    assert classify_block({"mode": "BI", "refs": [0, "virtual"]}) == "one_virtual"
    with pytest.raises(ValueError):
        classify_block({"mode": "BI", "refs": [0]})
    with pytest.raises(ValueError):
        classify_block({"mode": "SKIP", "refs": []})
