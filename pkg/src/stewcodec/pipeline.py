"""Sequence-level encoder and decoder: minicodec frames driven by the window scheduler."""

from __future__ import annotations

import struct
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

from .codec.bits import BitstreamError
from .codec.container import ContainerHeader, read_container, write_container
from .codec.minicodec import (
    BlockMode,
    CodecConfig,
    Dpb,
    RefEntry,
    decode_frame,
    derive_rpls,
    encode_frame,
    parse_payload,
)
from .frame import Frame, psnr
from .stenet import SteNet
from .stew import (
    WINDOW,
    ActionContext,
    Kind,
    PfeFlagSection,
    Step,
    StewWindow,
    Tools,
    buffer_emit,
    insert_virtual,
    run_jise,
    run_pfe,
    run_rfs,
    schedule,
)


@dataclass
class SequenceResult:
    outputs: list[Frame]                       # final frames, display order
    recons: dict[int, Frame]
    block_trace: dict[int, list[dict]]         # poc -> [{"mode", "refs"}]
    action_trace: list[dict]
    call_counts: dict[str, int]
    violations: list[str]
    sections: dict[int, PfeFlagSection]
    steps: list[Step]
    bitstream: bytes = b""
    frame_bits: dict[int, int] = field(default_factory=dict)

    @property
    def total_bits(self) -> int:
        return 8 * len(self.bitstream)


def _evict(dpb: Dpb, poc: int):
    if poc > 0:
        dpb.evict_below((poc - 1) // WINDOW * WINDOW)


def _ref_lists(poc: int, dpb: Dpb, config: CodecConfig, virtual: Frame | None):
    l0, l1 = derive_rpls(poc, dpb, config)
    rpls = ([RefEntry(p, dpb[p]) for p in l0], [RefEntry(p, dpb[p]) for p in l1])
    if virtual is not None:
        rpls = insert_virtual(rpls, virtual)
    return rpls


def _block_refs(payload, rpls) -> list[dict]:
    out = []
    for b in payload.blocks:
        lists = {BlockMode.INTRA_DC: (), BlockMode.UNI0: (rpls[0],), BlockMode.UNI1: (rpls[1],),
                 BlockMode.BI: rpls}[b.mode]
        refs = [lst[i].label for lst, i in zip(lists, b.ref_idx)]
        out.append({"mode": b.mode.name, "refs": refs})
    return out


def _covered(steps: Sequence[Step]) -> set[int]:
    return {p for s in steps if not s.is_code for p in s.action.enhances}


class _Session:
    """State shared by the encoder and decoder loops."""

    def __init__(self, num_frames: int, tools: Tools, stenet: SteNet | None):
        self.steps = schedule(num_frames, tools)
        self.stenet = stenet or SteNet()
        self.dpb = Dpb()
        last = num_frames - 1
        covered = _covered(self.steps)
        self.windows = {b: StewWindow(b, last, covered) for b in range(0, num_frames, WINDOW)}
        self.ctx = ActionContext(self.dpb, self.stenet, windows=self.windows)
        self.pending_virtual: dict[int, Frame] = {}
        self.outputs: dict[int, Frame] = {}
        self.recons: dict[int, Frame] = {}
        self.block_trace: dict[int, list[dict]] = {}
        self.action_trace: list[dict] = []
        self.sections: dict[int, PfeFlagSection] = {}

    def window(self, poc: int) -> StewWindow:
        return self.windows[poc - poc % WINDOW]

    def store_recon(self, poc: int, recon: Frame):
        self.dpb.store(poc, recon)
        self.recons[poc] = recon
        self.window(poc).reconstructed(poc, recon)

    def store_enhanced(self, frame: Frame, section: PfeFlagSection):
        self.ctx.monitor.note_enhanced(frame)
        self.window(frame.poc).enhanced(frame.poc, frame)
        self.sections[frame.poc] = section

    def run_action(self, step: Step, originals, sections) -> list[PfeFlagSection]:
        a = step.action
        before = self.stenet.log.counts()
        made: list[PfeFlagSection] = []
        if a.kind is Kind.S:
            virtual, _ = run_rfs(a.target, a.d, self.dpb, self.stenet, ctx=self.ctx)
            self.pending_virtual[a.target] = virtual
        elif a.kind is Kind.E:
            outs, secs = run_pfe(a.target, self.dpb, originals, self.stenet, sections,
                                 pair=a.inputs, ctx=self.ctx)
            for o, s in zip(outs, secs):
                self.store_enhanced(o, s)
            made.extend(secs)
        else:
            oa, virtual, ob, secs, _ = run_jise(a.target, self.dpb, originals, self.stenet,
                                                sections, ctx=self.ctx)
            self.pending_virtual[a.target] = virtual
            for o, s in zip((oa, ob), secs):
                self.store_enhanced(o, s)
            made.extend(secs)
        after = self.stenet.log.counts()
        entry = a.to_dict(len(self.action_trace))
        entry["calls"] = {k: after[k] - before[k] for k in after if after[k] != before[k]}
        self.action_trace.append(entry)
        return made

    def flush_windows(self):
        for base, w in self.windows.items():
            if w.complete and not w.emitted:
                for f in buffer_emit(w):
                    self.outputs[f.poc] = f

    def result(self, bitstream: bytes, frame_bits: dict[int, int]) -> SequenceResult:
        self.flush_windows()
        if len(self.outputs) != len(self.recons):
            raise RuntimeError("some windows never completed")
        return SequenceResult(
            [self.outputs[p] for p in sorted(self.outputs)], self.recons, self.block_trace,
            self.action_trace, self.stenet.log.counts(), list(self.ctx.monitor.violations),
            self.sections, self.steps, bitstream, frame_bits)


def _pack_record(payload: bytes, sections: Sequence[PfeFlagSection]) -> bytes:
    parts = [struct.pack("<I", len(payload)), payload, struct.pack("<B", len(sections))]
    for s in sections:
        parts.append(struct.pack("<I", s.poc))
        parts.append(s.to_bytes())
    return b"".join(parts)


def _unpack_record(rec: bytes) -> tuple[bytes, list[PfeFlagSection]]:
    if len(rec) < 5:
        raise BitstreamError("truncated frame record")
    (n,) = struct.unpack_from("<I", rec)
    if 4 + n + 1 > len(rec):
        raise BitstreamError("truncated frame payload")
    payload = rec[4:4 + n]
    count = rec[4 + n]
    pos = 5 + n
    sections = []
    for _ in range(count):
        if pos + 4 > len(rec):
            raise BitstreamError("truncated flag section")
        (poc,) = struct.unpack_from("<I", rec, pos)
        sec, used = PfeFlagSection.from_bytes(rec, pos + 4, poc)
        sections.append(sec)
        pos += 4 + used
    if pos != len(rec):
        raise BitstreamError("trailing bytes in frame record")
    return payload, sections


def encode_sequence(frames: Sequence[Frame], config: CodecConfig, tools: Tools = Tools(),
                    stenet: SteNet | None = None) -> SequenceResult:
    if not frames:
        raise ValueError("nothing to encode")
    frames = [f.with_poc(i) for i, f in enumerate(frames)]
    w, h = frames[0].width, frames[0].height
    if any((f.width, f.height) != (w, h) for f in frames):
        raise ValueError("all frames must share dimensions")
    originals = {f.poc: f for f in frames}
    s = _Session(len(frames), tools, stenet)
    payloads: dict[int, bytes] = {}
    frame_bits: dict[int, int] = {}
    attached: dict[int, list[PfeFlagSection]] = defaultdict(list)
    for step in s.steps:
        p = step.poc
        if step.is_code:
            _evict(s.dpb, p)
            rpls = _ref_lists(p, s.dpb, config, s.pending_virtual.pop(p, None))
            payload, recon = encode_frame(originals[p], rpls, config, p)
            s.store_recon(p, recon)
            s.block_trace[p] = _block_refs(payload, rpls)
            payloads[p] = payload.data
            frame_bits[p] = payload.bits
        else:
            attached[p].extend(s.run_action(step, originals, None))
        s.flush_windows()

    records = [_pack_record(payloads[st.poc], attached[st.poc]) for st in s.steps if st.is_code]
    header = ContainerHeader(w, h, len(frames), config.qp, config.intra_period, tools.flags)
    return s.result(write_container(header, records), frame_bits)


def decode_sequence(data: bytes, stenet: SteNet | None = None,
                    jise: bool | None = None) -> SequenceResult:
    """Decode a container. ``jise`` overrides the execution strategy for joint actions only."""
    header, records = read_container(data)
    if not (header.width and header.height) or header.width % 16 or header.height % 16:
        raise BitstreamError(f"invalid frame size {header.width}x{header.height}")
    payloads = {}
    sections: dict[int, PfeFlagSection] = {}
    for rec in records:
        data_, secs = _unpack_record(rec)
        payload = parse_payload(data_)
        poc = payload.poc
        if poc in payloads:
            raise BitstreamError(f"duplicate frame POC {poc}")
        payloads[poc] = payload
        for sec in secs:
            sections[sec.poc] = sec
    tools = Tools(header.rfs, header.pfe, header.jise if jise is None else jise)
    if header.jise and not (header.rfs and header.pfe):
        raise BitstreamError("joint flag set without both synthesis and enhancement")
    config = CodecConfig(qp=header.qp, intra_period=header.intra_period)
    s = _Session(header.frame_count, tools, stenet)
    frame_bits = {}
    for step in s.steps:
        p = step.poc
        if step.is_code:
            if p not in payloads:
                raise BitstreamError(f"missing frame record for POC {p}")
            _evict(s.dpb, p)
            rpls = _ref_lists(p, s.dpb, config, s.pending_virtual.pop(p, None))
            payload = payloads[p]
            recon = decode_frame(payload, rpls, header.width, header.height)
            s.store_recon(p, recon)
            s.block_trace[p] = _block_refs(payload, rpls)
            frame_bits[p] = payload.bits
        else:
            s.run_action(step, None, sections)
        s.flush_windows()
    return s.result(bytes(data), frame_bits)


def frame_report(originals: Sequence[Frame], result: SequenceResult) -> list[dict]:
    rows = []
    for f in originals:
        p = f.poc if f.poc is not None else len(rows)
        rec, out = result.recons[p], result.outputs[p]
        rows.append({
            "poc": p,
            "bits": result.frame_bits.get(p, 0),
            "recon_psnr": {c: psnr(f, rec, c) for c in ("y", "u", "v")},
            "output_psnr": {c: psnr(f, out, c) for c in ("y", "u", "v")},
            "pfe_flags": list(result.sections[p].flags) if p in result.sections else None,
        })
    return rows
