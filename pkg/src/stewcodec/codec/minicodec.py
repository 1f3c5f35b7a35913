"""A small deterministic hybrid codec with a GOP-8 hierarchical B structure.

Every 16x16 macroblock is coded as INTRA_DC, UNI0/UNI1 (one reference from
RPL0/RPL1) or BI (rounded average of the best UNI0 and UNI1 predictions).
Residuals go through four 8x8 luma and two 8x8 chroma integer DCTs with
dead-zone quantization, and everything is exp-Golomb coded.  The mode is
chosen by trial encoding every candidate and minimising SSD + lambda * bits.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from ..flow import block_vectors
from ..frame import Frame
from .bits import BitReader, BitstreamError, BitWriter, se_bits, ue_bits
from .transform import (
    dequantize,
    forward_dct,
    from_zigzag,
    inverse_dct,
    level_bits,
    quantize,
    read_levels,
    to_zigzag,
    write_levels,
)

MB = 16
VIRTUAL = "virtual"
MAX_REAL_REFS = 2
MAX_MV = 1 << 16          # frame dimensions are u16 in the container


class BlockMode(enum.IntEnum):
    INTRA_DC = 0
    UNI0 = 1
    UNI1 = 2
    BI = 3


# codeword (ue) of each mode inside inter frames; intra frames carry no mode
MODE_CODE = {BlockMode.UNI0: 0, BlockMode.UNI1: 1, BlockMode.BI: 2, BlockMode.INTRA_DC: 3}
CODE_MODE = {v: k for k, v in MODE_CODE.items()}


@dataclass(frozen=True)
class CodecConfig:
    qp: int = 32
    gop: int = 8
    intra_period: int = 32
    search_range: int = 16
    block: int = MB
    lambda_scale: float = 0.85
    fps: tuple[int, int] = (30, 1)

    def __post_init__(self):
        if not 0 <= self.qp <= 51:
            raise ValueError(f"qp {self.qp} outside [0, 51]")
        if self.gop != 8:
            raise ValueError("only GOP 8 is supported")
        if self.intra_period <= 0 or self.intra_period % self.gop:
            raise ValueError("intra period must be a positive multiple of the GOP size")
        if self.block != MB:
            raise ValueError("block size is fixed at 16")
        if self.search_range < 0:
            raise ValueError("search range must be nonnegative")

    @property
    def lam(self) -> float:
        return self.lambda_scale * 2.0 ** ((self.qp - 12) / 3.0)


class RefEntry(NamedTuple):
    label: int | str      # POC of a reconstructed frame, or VIRTUAL
    frame: Frame


RefPicList = list  # list[RefEntry]


@dataclass
class BlockRecord:
    mode: BlockMode
    ref_idx: tuple[int, ...] = ()                    # one per used list (UNI: 1, BI: 2)
    mvs: tuple[tuple[int, int], ...] = ()
    levels: np.ndarray = field(default_factory=lambda: np.zeros((6, 64), np.int64))


@dataclass
class FramePayload:
    poc: int
    frame_type: str          # "I" or "B"
    qp: int
    blocks: list[BlockRecord]
    data: bytes = b""
    bits: int = 0


def is_intra(poc: int, config: CodecConfig) -> bool:
    return poc % config.intra_period == 0


# ---------------------------------------------------------------------------
# coding structure

GOP8_ORDER = (8, 4, 2, 1, 3, 6, 5, 7)


def coding_order(num_frames: int, config: CodecConfig | None = None) -> list[int]:
    """Hierarchical GOP-8 coding order; a trailing partial GOP keeps the same pattern."""
    if num_frames <= 0:
        return []
    order = [0]
    k = 0
    while k + 1 < num_frames:
        order.extend(k + off for off in GOP8_ORDER if k + off < num_frames)
        k += 8
    return order


def hierarchy_step(poc: int) -> int:
    r = poc % 8
    return 8 if r == 0 else r & -r


def derive_rpls(poc: int, dpb, config: CodecConfig) -> tuple[list[int], list[int]]:
    """Nearest-first reference POC lists (two entries max each) from the DPB contents."""
    if is_intra(poc, config):
        return [], []
    available = set(dpb)
    required = poc - hierarchy_step(poc)
    if required not in available:
        raise KeyError(f"reference POC {required} for frame {poc} is not in the DPB")
    lower = sorted((p for p in available if p < poc), reverse=True)[:MAX_REAL_REFS]
    higher = sorted(p for p in available if p > poc)[:MAX_REAL_REFS]
    return lower, higher


class Dpb:
    """POC -> reconstructed frame. Holds the current GOP's anchors and its decoded frames."""

    def __init__(self, capacity: int = 9):
        self.capacity = capacity
        self._frames: dict[int, Frame] = {}

    def __contains__(self, poc):
        return poc in self._frames

    def __getitem__(self, poc) -> Frame:
        return self._frames[poc]

    def __iter__(self):
        return iter(sorted(self._frames))

    def __len__(self):
        return len(self._frames)

    def get(self, poc, default=None):
        return self._frames.get(poc, default)

    def store(self, poc: int, frame: Frame):
        if len(self._frames) >= self.capacity and poc not in self._frames:
            raise RuntimeError(f"DPB full ({self.capacity} frames)")
        self._frames[poc] = frame

    def evict_below(self, poc: int):
        for p in [p for p in self._frames if p < poc]:
            del self._frames[p]


# ---------------------------------------------------------------------------
# block helpers


def _blocks(plane: np.ndarray, b: int) -> np.ndarray:
    h, w = plane.shape
    return plane.reshape(h // b, b, w // b, b).transpose(0, 2, 1, 3).reshape(-1, b, b)


def _unblocks(blocks: np.ndarray, h: int, w: int) -> np.ndarray:
    b = blocks.shape[-1]
    return blocks.reshape(h // b, w // b, b, b).transpose(0, 2, 1, 3).reshape(h, w)


def _split4(y: np.ndarray) -> np.ndarray:
    """(N, 16, 16) -> (N, 4, 8, 8) in raster order of the four quadrants."""
    n = y.shape[0]
    return y.reshape(n, 2, 8, 2, 8).transpose(0, 1, 3, 2, 4).reshape(n, 4, 8, 8)


def _merge4(q: np.ndarray) -> np.ndarray:
    n = q.shape[0]
    return q.reshape(n, 2, 2, 8, 8).transpose(0, 1, 3, 2, 4).reshape(n, 16, 16)


def motion_compensate(ref: Frame, mvs: np.ndarray, nbx: int,
                      index: np.ndarray | None = None) -> tuple[np.ndarray, ...]:
    """Predict macroblocks from ``ref`` with integer luma MVs (N, 2) = (dx, dy).

    ``index`` holds the raster indices of the blocks (all blocks when None).
    Luma is copied with border clamping; chroma uses the halved vector with a
    rounded average for half-sample positions.
    """
    if index is None:
        index = np.arange(mvs.shape[0])
    by, bx = np.divmod(index, nbx)
    h, w = ref.height, ref.width
    r = np.arange(MB)
    ys = np.clip(by[:, None] * MB + r[None] + mvs[:, 1:2], 0, h - 1)
    xs = np.clip(bx[:, None] * MB + r[None] + mvs[:, 0:1], 0, w - 1)
    py = ref.y[ys[:, :, None], xs[:, None, :]]

    c = np.arange(MB // 2)
    ch, cw = h // 2, w // 2
    ix, fx = mvs[:, 0] >> 1, mvs[:, 0] & 1
    iy, fy = mvs[:, 1] >> 1, mvs[:, 1] & 1
    cy0 = by[:, None] * 8 + c[None] + iy[:, None]
    cx0 = bx[:, None] * 8 + c[None] + ix[:, None]
    cy1 = np.clip(cy0 + fy[:, None], 0, ch - 1)
    cx1 = np.clip(cx0 + fx[:, None], 0, cw - 1)
    cy0 = np.clip(cy0, 0, ch - 1)
    cx0 = np.clip(cx0, 0, cw - 1)
    out = [py]
    for plane in (ref.u, ref.v):
        p = plane.astype(np.int32)
        s = (p[cy0[:, :, None], cx0[:, None, :]] + p[cy0[:, :, None], cx1[:, None, :]]
             + p[cy1[:, :, None], cx0[:, None, :]] + p[cy1[:, :, None], cx1[:, None, :]])
        out.append(((s + 2) >> 2).astype(np.uint8))
    return tuple(out)


def residual_from_levels(levels: np.ndarray, qp: int) -> tuple[np.ndarray, ...]:
    """(N, 6, 64) zigzag levels -> integer residual blocks (Y 16x16, U 8x8, V 8x8)."""
    res = inverse_dct(dequantize(from_zigzag(levels), qp))
    return _merge4(res[:, :4]), res[:, 4], res[:, 5]


def _clip_add(pred: np.ndarray, res: np.ndarray) -> np.ndarray:
    return np.clip(pred.astype(np.int64) + res, 0, 255).astype(np.uint8)


@dataclass
class _Trial:
    levels: np.ndarray
    recon: tuple[np.ndarray, np.ndarray, np.ndarray]
    coef_bits: np.ndarray
    ssd: np.ndarray


def _code_residual(orig: Sequence[np.ndarray], pred: Sequence[np.ndarray], qp: int) -> _Trial:
    oy, ou, ov = (o.astype(np.int64) for o in orig)
    py, pu, pv = (p.astype(np.int64) for p in pred)
    res = np.concatenate([_split4(oy - py), (ou - pu)[:, None], (ov - pv)[:, None]], axis=1)
    levels = to_zigzag(quantize(forward_dct(res), qp))
    ry, ru, rv = residual_from_levels(levels, qp)
    recon = (_clip_add(py, ry), _clip_add(pu, ru), _clip_add(pv, rv))
    ssd = sum(((r.astype(np.int64) - o) ** 2).reshape(len(r), -1).sum(axis=1)
              for r, o in zip(recon, (oy, ou, ov)))
    return _Trial(levels, recon, level_bits(levels).sum(axis=1), ssd)


def _intra_dc(recon: Sequence[np.ndarray], by: int, bx: int) -> tuple[np.ndarray, ...]:
    out = []
    for plane, b in zip(recon, (MB, MB // 2, MB // 2)):
        y0, x0 = by * b, bx * b
        parts = []
        if y0 > 0:
            parts.append(plane[y0 - 1, x0:x0 + b])
        if x0 > 0:
            parts.append(plane[y0:y0 + b, x0 - 1])
        if parts:
            s = np.concatenate(parts).astype(np.int64)
            dc = (int(s.sum()) + len(s) // 2) // len(s)
        else:
            dc = 128
        out.append(np.full((1, b, b), dc, np.uint8))
    return tuple(out)


def _mv_bits(mvs: np.ndarray) -> np.ndarray:
    return se_bits(mvs[..., 0]) + se_bits(mvs[..., 1])


# ---------------------------------------------------------------------------
# encoder


@dataclass
class _Candidate:
    mode: BlockMode
    ref_idx: tuple
    mvs: np.ndarray          # (N, k, 2)
    trial: _Trial
    side_bits: np.ndarray
    cost: np.ndarray


def _check_dims(frame: Frame):
    if frame.width % MB or frame.height % MB:
        raise ValueError(f"frame size {frame.width}x{frame.height} is not a multiple of {MB}")


def encode_frame(orig: Frame, rpls: tuple[Sequence[RefEntry], Sequence[RefEntry]],
                 config: CodecConfig, poc: int | None = None) -> tuple[FramePayload, Frame]:
    _check_dims(orig)
    poc = orig.poc if poc is None else poc
    if poc is None:
        raise ValueError("frame needs a POC")
    rpl0, rpl1 = list(rpls[0]), list(rpls[1])
    intra = not rpl0 and not rpl1
    if not intra and not rpl0:
        raise ValueError("inter frames need at least one RPL0 reference")
    h, w = orig.height, orig.width
    nby, nbx = h // MB, w // MB
    n = nby * nbx
    qp, lam = config.qp, config.lam
    orig_blocks = (_blocks(orig.y, MB), _blocks(orig.u, MB // 2), _blocks(orig.v, MB // 2))

    candidates: list[_Candidate] = []
    if not intra:
        me_cache: dict[int, np.ndarray] = {}
        best = {}
        for mode, rpl in ((BlockMode.UNI0, rpl0), (BlockMode.UNI1, rpl1)):
            group = []
            for idx, entry in enumerate(rpl):
                key = id(entry.frame)
                if key not in me_cache:
                    mvs, _ = block_vectors(entry.frame.y, orig.y, config.search_range, MB)
                    me_cache[key] = mvs.reshape(n, 2)
                mvs = me_cache[key]
                trial = _code_residual(orig_blocks, motion_compensate(entry.frame, mvs, nbx), qp)
                side = ue_bits(MODE_CODE[mode]) + ue_bits(idx) + _mv_bits(mvs)
                cand = _Candidate(mode, (idx,), mvs[:, None], trial, side,
                                  trial.ssd + lam * (side + trial.coef_bits))
                candidates.append(cand)
                group.append((cand, entry))
            best[mode] = group
        if best[BlockMode.UNI0] and best[BlockMode.UNI1]:
            candidates.append(_bi_candidate(best, orig_blocks, nbx, qp, lam))

    recon = [np.zeros((h, w), np.uint8), np.zeros((h // 2, w // 2), np.uint8),
             np.zeros((h // 2, w // 2), np.uint8)]
    blocks: list[BlockRecord] = []
    for i in range(n):
        by, bx = divmod(i, nbx)
        pred = _intra_dc(recon, by, bx)
        trial = _code_residual(tuple(o[i:i + 1] for o in orig_blocks), pred, qp)
        side = 0 if intra else ue_bits(MODE_CODE[BlockMode.INTRA_DC])
        costs = [trial.ssd[0] + lam * (side + trial.coef_bits[0])]
        costs += [c.cost[i] for c in candidates]
        choice = int(np.argmin(costs))
        if choice == 0:
            levels, rec = trial.levels[0], tuple(r[0] for r in trial.recon)
            record = BlockRecord(BlockMode.INTRA_DC, (), (), levels)
        else:
            c = candidates[choice - 1]
            levels, rec = c.trial.levels[i], tuple(r[i] for r in c.trial.recon)
            record = BlockRecord(c.mode, tuple(int(x) for x in (c.ref_idx if c.mode != BlockMode.BI
                                                                else c.ref_idx[i])),
                                 tuple((int(dx), int(dy)) for dx, dy in c.mvs[i]), levels)
        for plane, r, b in zip(recon, rec, (MB, MB // 2, MB // 2)):
            plane[by * b:(by + 1) * b, bx * b:(bx + 1) * b] = r
        blocks.append(record)

    payload = FramePayload(poc, "I" if intra else "B", qp, blocks)
    payload.data, payload.bits = serialize_payload(payload)
    return payload, Frame(*recon, poc)


def _bi_candidate(best, orig_blocks, nbx, qp, lam) -> _Candidate:
    """Per block, average the lowest-cost UNI0 and UNI1 predictions."""
    picks = []
    for mode in (BlockMode.UNI0, BlockMode.UNI1):
        group = best[mode]
        costs = np.stack([c.cost for c, _ in group])
        choice = np.argmin(costs, axis=0)
        preds = [motion_compensate(e.frame, c.mvs[:, 0], nbx) for c, e in group]
        mvs = np.stack([c.mvs[:, 0] for c, _ in group])
        n = choice.shape[0]
        sel = tuple(np.stack([p[k] for p in preds])[choice, np.arange(n)] for k in range(3))
        picks.append((choice, mvs[choice, np.arange(n)], sel))
    (i0, mv0, p0), (i1, mv1, p1) = picks
    pred = tuple(((a.astype(np.int32) + b + 1) >> 1).astype(np.uint8) for a, b in zip(p0, p1))
    trial = _code_residual(orig_blocks, pred, qp)
    side = (ue_bits(MODE_CODE[BlockMode.BI]) + ue_bits(i0) + ue_bits(i1)
            + _mv_bits(mv0) + _mv_bits(mv1))
    ref_idx = np.stack([i0, i1], axis=1)
    return _Candidate(BlockMode.BI, ref_idx, np.stack([mv0, mv1], axis=1), trial, side,
                      trial.ssd + lam * (side + trial.coef_bits))


# ---------------------------------------------------------------------------
# payload syntax


def write_block(w: BitWriter, record: BlockRecord, intra_frame: bool):
    if not intra_frame:
        w.write_ue(MODE_CODE[record.mode])
    for idx in record.ref_idx:
        w.write_ue(idx)
    for dx, dy in record.mvs:
        w.write_se(dx)
        w.write_se(dy)
    for scan in record.levels:
        write_levels(w, scan)


def serialize_payload(payload: FramePayload) -> tuple[bytes, int]:
    w = BitWriter()
    w.write_ue(payload.poc)
    w.write_bit(payload.frame_type == "B")
    w.write_ue(payload.qp)
    w.write_ue(len(payload.blocks))
    for record in payload.blocks:
        write_block(w, record, payload.frame_type == "I")
    bits = w.bit_count
    w.align()
    return w.getvalue(), bits


def _mode_refs(mode: BlockMode) -> int:
    return {BlockMode.INTRA_DC: 0, BlockMode.UNI0: 1, BlockMode.UNI1: 1, BlockMode.BI: 2}[mode]


def parse_payload(data: bytes) -> FramePayload:
    r = BitReader(data)
    poc = r.read_ue()
    frame_type = "B" if r.read_bit() else "I"
    qp = r.read_ue()
    if qp > 51:
        raise BitstreamError(f"qp {qp} out of range")
    count = r.read_ue()
    blocks = []
    for _ in range(count):
        if frame_type == "I":
            mode = BlockMode.INTRA_DC
        else:
            code = r.read_ue()
            if code not in CODE_MODE:
                raise BitstreamError(f"unknown block mode code {code}")
            mode = CODE_MODE[code]
        k = _mode_refs(mode)
        ref_idx = tuple(r.read_ue() for _ in range(k))
        mvs = tuple((r.read_se(), r.read_se()) for _ in range(k))
        if any(abs(c) > MAX_MV for mv in mvs for c in mv):
            raise BitstreamError("motion vector out of range")
        levels = np.stack([read_levels(r) for _ in range(6)])
        blocks.append(BlockRecord(mode, ref_idx, mvs, levels))
    return FramePayload(poc, frame_type, qp, blocks, bytes(data), r.position)


# ---------------------------------------------------------------------------
# decoder


def decode_frame(payload: FramePayload | bytes,
                 rpls: tuple[Sequence[RefEntry], Sequence[RefEntry]],
                 width: int, height: int) -> Frame:
    if not isinstance(payload, FramePayload):
        payload = parse_payload(payload)
    if width % MB or height % MB:
        raise ValueError("frame size must be a multiple of 16")
    nby, nbx = height // MB, width // MB
    n = nby * nbx
    if len(payload.blocks) != n:
        raise BitstreamError(f"payload has {len(payload.blocks)} blocks, frame needs {n}")
    rpl0, rpl1 = list(rpls[0]), list(rpls[1])
    levels = np.stack([b.levels for b in payload.blocks])
    ry, ru, rv = residual_from_levels(levels, payload.qp)
    recon = [np.zeros((height, width), np.uint8), np.zeros((height // 2, width // 2), np.uint8),
             np.zeros((height // 2, width // 2), np.uint8)]
    for i, record in enumerate(payload.blocks):
        by, bx = divmod(i, nbx)
        if record.mode == BlockMode.INTRA_DC:
            pred = _intra_dc(recon, by, bx)
        else:
            lists = {BlockMode.UNI0: (rpl0,), BlockMode.UNI1: (rpl1,),
                     BlockMode.BI: (rpl0, rpl1)}[record.mode]
            preds = []
            for rpl, idx, mv in zip(lists, record.ref_idx, record.mvs):
                if idx >= len(rpl):
                    raise BitstreamError(f"reference index {idx} beyond list of {len(rpl)}")
                preds.append(motion_compensate(rpl[idx].frame, np.array([mv], dtype=np.int64),
                                               nbx, np.array([i])))
            if len(preds) == 1:
                pred = preds[0]
            else:
                pred = tuple(((a.astype(np.int32) + b + 1) >> 1).astype(np.uint8)
                             for a, b in zip(*preds))
        rec = (_clip_add(pred[0][0], ry[i]), _clip_add(pred[1][0], ru[i]),
               _clip_add(pred[2][0], rv[i]))
        for plane, r, b in zip(recon, rec, (MB, MB // 2, MB // 2)):
            plane[by * b:(by + 1) * b, bx * b:(bx + 1) * b] = r
    return Frame(*recon, payload.poc)

