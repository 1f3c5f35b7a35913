"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line."""

import hashlib
import math
import time
from collections import Counter

import numpy as np
import pytest

from acceptance_report import criterion
from oracles import dense_bd_rate, distance_table, mode_table
from stewcodec.codec.bits import BitReader, BitstreamError, BitWriter
from stewcodec.codec.minicodec import CodecConfig, Dpb
from stewcodec.evaluate import RDCurve, RDPoint, bd_rate, ref_usage, sequence_report
from stewcodec.frame import Frame, psnr, sse
from stewcodec.pipeline import decode_sequence, encode_sequence
from stewcodec.stenet import Mode, SteNet, run
from stewcodec.stew import (
    Kind,
    PfeFlagSection,
    PurityMonitor,
    Tools,
    distance_of,
    mode_of,
    plan_window,
    schedule,
)
from stewcodec.synth import natural, rotating, translation

QPS = (22, 27, 32, 37, 42)
SHARED_STAGES = ("theta", "phi", "eq4", "eq5", "eq7", "eq8")

# every (originals, result) pair produced here feeds criteria 4 and 9
ENCODES: list[tuple[str, list[Frame], object]] = []


def _digest(frames) -> str:
    return hashlib.sha256(b"".join(f.tobytes() for f in frames)).hexdigest()


# ---------------------------------------------------------------------------
# shared encodes


@pytest.fixture(scope="module")
def closed_loop_runs():
    t0 = time.perf_counter()
    sequences = {
        "translation": translation(num_frames=17, width=64, height=64, speed=4, seed=1),
        "rotating": rotating(num_frames=17, width=64, height=64),
        "natural": natural(num_frames=33, width=96, height=64),
    }
    runs = []
    for name, frames in sequences.items():
        for qp in QPS:
            enc = encode_sequence(frames, CodecConfig(qp=qp))
            dec = decode_sequence(enc.bitstream)
            ENCODES.append((f"{name}@{qp}", frames, enc))
            ENCODES.append((f"{name}@{qp}/dec", frames, dec))
            runs.append((name, qp, frames, enc, dec))
    return t0, runs


@pytest.fixture(scope="module")
def jise_runs():
    t0 = time.perf_counter()
    frames = translation(num_frames=17, width=64, height=32, speed=4, seed=6)
    cfg = CodecConfig(qp=32)
    joint = encode_sequence(frames, cfg, Tools())
    split = encode_sequence(frames, cfg, Tools(jise=False))
    joint_dec = decode_sequence(joint.bitstream)
    split_dec = decode_sequence(split.bitstream, jise=False)
    for tag, r in (("joint", joint), ("split", split), ("joint/dec", joint_dec), ("split/dec", split_dec)):
        ENCODES.append((f"jise-{tag}", frames, r))
    return t0, frames, joint, split, joint_dec, split_dec


@pytest.fixture(scope="module")
def rfs_runs():
    t0 = time.perf_counter()
    frames = translation(num_frames=65, width=128, height=64, speed=8, seed=0)
    curves = {}
    for label, tools in (("off", Tools(False, False, False)), ("rfs", Tools(True, False, False))):
        points, results = [], {}
        for qp in QPS:
            cfg = CodecConfig(qp=qp)
            r = encode_sequence(frames, cfg, tools)
            ENCODES.append((f"rfs-{label}@{qp}", frames, r))
            points.append(sequence_report(frames, r.outputs, r.total_bits, cfg.fps, qp)[0])
            results[qp] = r
        curves[label] = (RDCurve(points), results)
    return t0, curves


# ---------------------------------------------------------------------------
# criteria


def test_criterion_1_scheduler_conformance():
    with criterion(1, "scheduler conformance", 1.0) as notes:
        for p in range(64):
            assert {k.value for k in mode_of(p)} == mode_table(p), f"mode mismatch at POC {p}"
            if Kind.S in mode_of(p):
                assert distance_of(p) == distance_table(p), f"distance mismatch at POC {p}"
        # kind, target, inputs of the nine actions in one full window, relative to its base
        expected = [("S", 4, (0, 8)), ("S", 2, (0, 4)), ("J", 1, (0, 2)), ("S", 3, (2, 4)),
                    ("E", 3, (1, 3)), ("S", 6, (4, 8)), ("J", 5, (4, 6)), ("S", 7, (6, 8)),
                    ("E", 7, (5, 7))]
        for base in (0, 8):
            plan = [(a.kind.value, a.target - base, tuple(i - base for i in a.inputs))
                    for a in plan_window(base, base + 16)]
            assert plan == expected, plan
        enhanced = Counter(p for s in schedule(17) if not s.is_code for p in s.action.enhances)
        for base in (0, 8):
            assert all(enhanced[p] == 1 for p in range(base, base + 8)), enhanced
        notes["pocs"] = 64


def test_criterion_2_closed_loop(closed_loop_runs):
    t0, runs = closed_loop_runs
    with criterion(2, "closed loop", 300.0, started=t0) as notes:
        for name, qp, frames, enc, dec in runs:
            for p, rec in enc.recons.items():
                assert hashlib.sha256(rec.tobytes()).digest() == \
                    hashlib.sha256(dec.recons[p].tobytes()).digest(), f"{name}@{qp} recon {p}"
            assert _digest(enc.outputs) == _digest(dec.outputs), f"{name}@{qp} outputs"
            assert len(dec.outputs) == len(frames)
        notes["encodes"] = len(runs)
        notes["sequences"] = len({r[0] for r in runs})


def test_criterion_3_joint_equivalence(jise_runs):
    t0, frames, joint, split, joint_dec, split_dec = jise_runs
    with criterion(3, "joint inference equivalence", 60.0, started=t0) as notes:
        assert joint.bitstream == split.bitstream
        for a, b in ((joint, split), (joint_dec, split_dec), (joint, joint_dec)):
            assert _digest(a.outputs) == _digest(b.outputs)
            assert all(a.recons[p].same_samples(b.recons[p]) for p in a.recons)
        for j, s in ((joint, split), (joint_dec, split_dec)):
            targets = [a["target"] for a in j.action_trace if a["kind"] == "J"]
            assert targets == [p for p in range(len(frames)) if Kind.J in mode_of(p)
                               and p + 1 < len(frames)]
            for p in targets:
                jc = next(a["calls"] for a in j.action_trace if a["kind"] == "J" and a["target"] == p)
                pair = [a["calls"] for a in s.action_trace
                        if (a["kind"] == "E" and a["inputs"] == [p - 1, p + 1])
                        or (a["kind"] == "S" and a["target"] == p)]
                assert len(pair) == 2
                for stage in SHARED_STAGES:
                    total = sum(c.get(stage, 0) for c in pair)
                    assert 2 * jc.get(stage, 0) == total, (p, stage, jc, pair)
        notes["joint_pocs"] = len(targets)
        notes["theta"] = f"{joint.call_counts['theta']}/{split.call_counts['theta']}"


def test_criterion_5_rfs_benefit(rfs_runs):
    t0, curves = rfs_runs
    with criterion(5, "virtual reference benefit", 600.0, started=t0) as notes:
        anchor, _ = curves["off"]
        test, results = curves["rfs"]
        bd = bd_rate(anchor, test, ("y",)).bd_rate["y"]
        usage = ref_usage(results[37].block_trace).fractions
        share = usage["one_virtual"] + usage["both_virtual"]
        notes["bd_y"] = f"{bd:.3f}%"
        notes["virtual_share_qp37"] = f"{share:.3f}"
        assert bd < 0, f"BD-rate {bd:.3f}% is not negative"
        assert share >= 0.5, f"virtual share {share:.3f} below one half"


def test_criterion_6_synthesis_quality():
    with criterion(6, "synthesis quality", 10.0) as notes:
        still = natural(num_frames=1, width=128, height=96)[0]
        assert run(still, still, Mode.SYN).same_samples(still)
        f0, ft, f1 = translation(num_frames=3, width=128, height=64, speed=4, seed=9)
        out = run(f0, f1, Mode.SYN)
        b = 8
        inner = lambda f: Frame(f.y[b:-b, b:-b], f.u[b // 2:-b // 2, b // 2:-b // 2],
                                f.v[b // 2:-b // 2, b // 2:-b // 2])
        value = psnr(inner(ft), inner(out), "y")
        notes["interior_psnr_y"] = "inf" if math.isinf(value) else f"{value:.2f}"
        assert value >= 40.0, f"interior PSNR {value:.2f} dB"


def test_criterion_7_bd_rate_correctness():
    with criterion(7, "BD-rate correctness", 10.0) as notes:
        rates, q = [100, 180, 330, 700], [30.1, 33.4, 35.9, 39.2]
        curve = lambda r, p: RDCurve([RDPoint(a, b, b, b) for a, b in zip(r, p)])
        assert bd_rate(curve(rates, q), curve(rates, q)).bd_rate == {"y": 0.0, "u": 0.0, "v": 0.0}
        scaled = bd_rate(curve(rates, q), curve([1.1 * r for r in rates], q), ("y",)).bd_rate["y"]
        assert abs(scaled - 10.0) <= 1e-6, scaled
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(100):
            n = int(rng.integers(4, 7))
            ra = np.sort(rng.uniform(20, 4000, n))
            qa = 28 + np.cumsum(rng.uniform(0.4, 4.0, n))
            rb = np.sort(ra * rng.uniform(0.7, 1.3, n))
            qb = np.sort(qa + rng.uniform(-0.8, 0.8, n))
            if np.any(np.diff(rb) <= 0) or np.any(np.diff(qb) <= 0):
                rb, qb = ra * 0.9, qa
            got = bd_rate(curve(ra, qa), curve(rb, qb), ("y",)).bd_rate["y"]
            worst = max(worst, abs(got - dense_bd_rate(ra, qa, rb, qb)))
        notes["max_oracle_gap"] = f"{worst:.2e}"
        assert worst < 0.01, worst


def test_criterion_8_bitstream_robustness():
    with criterion(8, "bitstream robustness", 30.0) as notes:
        rng = np.random.default_rng(8)
        mismatches = 0
        for _ in range(10_000):
            n = int(rng.integers(0, 40))
            bits = tuple(int(b) for b in rng.integers(0, 2, n))
            sec = PfeFlagSection(0, n, 1 if n else 0, bits)
            back, used = PfeFlagSection.from_bytes(sec.to_bytes())
            mismatches += back.flags != bits or used != len(sec.to_bytes())
            vals = rng.integers(-2**20, 2**20, 8)
            w = BitWriter()
            for v in vals:
                w.write_ue(abs(int(v)))
                w.write_se(int(v))
            r = BitReader(w.getvalue(), w.bit_count)
            mismatches += any(r.read_ue() != abs(int(v)) or r.read_se() != int(v) for v in vals)
        assert mismatches == 0, f"{mismatches} roundtrip mismatches"

        frames = translation(num_frames=3, width=16, height=16, speed=2, seed=5)
        stream = encode_sequence(frames, CodecConfig(qp=37, search_range=2)).bitstream
        crashes = structured = 0
        cases = [stream[:n] for n in range(len(stream))]
        for _ in range(2000):
            buf = bytearray(stream)
            for _ in range(int(rng.integers(1, 4))):
                buf[int(rng.integers(0, len(buf)))] = int(rng.integers(0, 256))
            cases.append(bytes(buf))
        cases += [bytes(rng.integers(0, 256, int(rng.integers(0, 64)), dtype=np.uint8)) for _ in range(500)]
        for data in cases:
            try:
                decode_sequence(data, SteNet(search_range=2))
            except BitstreamError:
                structured += 1
            except Exception:                              # noqa: BLE001
                crashes += 1
        notes["fuzzed_streams"] = len(cases)
        notes["structured_errors"] = structured
        assert crashes == 0, f"{crashes} unstructured failures"


def test_criterion_4_pfe_monotonicity(closed_loop_runs, jise_runs, rfs_runs):
    with criterion(4, "enhancement never hurts") as notes:
        frames_checked = 0
        for tag, originals, result in ENCODES:
            for f, out in zip(originals, result.outputs):
                rec = result.recons[out.poc]
                assert sse(f, out, "yuv") <= sse(f, rec, "yuv"), f"{tag} POC {out.poc}"
                frames_checked += 1
        notes["frames"] = frames_checked
        notes["runs"] = len(ENCODES)


def test_criterion_9_buffer_purity(closed_loop_runs, jise_runs, rfs_runs):
    with criterion(9, "buffer purity") as notes:
        monitor = PurityMonitor()
        dpb = Dpb()
        planted = Frame.constant(16, 16, poc=0)
        dpb.store(0, planted)
        monitor.note_enhanced(planted)
        monitor.fetch(dpb, 0, "RFS")
        assert monitor.violations, "monitor failed to flag a planted enhanced frame"
        total = [v for _, _, r in ENCODES for v in r.violations]
        notes["runs"] = len(ENCODES)
        notes["violations"] = len(total)
        assert total == [], total[:3]
