"""Space-time enhancement window: scheduling of synthesis (S), enhancement (E)
and joint (J) actions around the GOP-8 coding order, virtual reference
insertion, block-level enhancement flags and the enhanced-frame buffer.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .codec.bits import BitstreamError
from .codec.minicodec import VIRTUAL, Dpb, RefEntry, coding_order
from .frame import Frame, TileGrid, make_tile_grid
from .stenet import Mode, SteNet

WINDOW = 8
SYNTH_RESIDUES = {2, 3, 4, 6, 7}
ENH_RESIDUES = {3, 7}
JOINT_RESIDUES = {1, 5}
PFE_DISTANCE = 2


class Kind(str, enum.Enum):
    S = "S"
    E = "E"
    J = "J"


def mode_of(p: int) -> frozenset[Kind]:
    if p < 0:
        raise ValueError("POC must be nonnegative")
    r = p % WINDOW
    kinds = set()
    if r in SYNTH_RESIDUES:
        kinds.add(Kind.S)
    if r in ENH_RESIDUES:
        kinds.add(Kind.E)
    if r in JOINT_RESIDUES:
        kinds.add(Kind.J)
    return frozenset(kinds)


def distance_of(p: int) -> int:
    r = p % WINDOW
    if r == 4:
        return 4
    if r in (2, 6):
        return 2
    if r in (3, 7):
        return 1
    raise ValueError(f"no synthesis distance for POC {p} (mod 8 = {r})")


@dataclass(frozen=True)
class Action:
    kind: Kind
    target: int
    inputs: tuple[int, int]
    d: int | None = None

    @property
    def enhances(self) -> tuple[int, ...]:
        return self.inputs if self.kind in (Kind.E, Kind.J) else ()

    @property
    def synthesizes(self) -> int | None:
        return self.target if self.kind in (Kind.S, Kind.J) else None

    @property
    def window(self) -> int:
        return self.target - self.target % WINDOW

    def to_dict(self, order: int | None = None) -> dict:
        out = {"kind": self.kind.value, "target": self.target, "inputs": list(self.inputs),
               "d": self.d}
        if order is not None:
            out = {"order": order, **out}
        return out

    def __str__(self):
        if self.kind is Kind.S:
            return f"S({self.target},d={self.d})"
        if self.kind is Kind.E:
            return f"E({self.inputs[0]},{self.inputs[1]})"
        return f"J({self.target})"


def synth_action(p: int, d: int) -> Action:
    return Action(Kind.S, p, (p - d, p + d), d)


def enh_action(p: int, pair: tuple[int, int] | None = None) -> Action:
    return Action(Kind.E, p, pair or (p - PFE_DISTANCE, p))


def joint_action(p: int) -> Action:
    return Action(Kind.J, p, (p - 1, p + 1), 1)


@dataclass(frozen=True)
class Tools:
    rfs: bool = True
    pfe: bool = True
    jise: bool = True

    @property
    def flags(self) -> int:
        return (self.rfs << 0) | (self.pfe << 1) | ((self.rfs and self.pfe) << 2)


def _actions_before(p: int, tools: Tools) -> list[Action]:
    kinds = mode_of(p)
    out = []
    if Kind.J in kinds:
        if tools.rfs and tools.pfe and tools.jise:
            out.append(joint_action(p))
        else:
            if tools.pfe:
                out.append(enh_action(p, (p - 1, p + 1)))
            if tools.rfs:
                out.append(synth_action(p, 1))
    elif Kind.S in kinds and tools.rfs:
        out.append(synth_action(p, distance_of(p)))
    return out


def _actions_after(p: int, tools: Tools) -> list[Action]:
    return [enh_action(p)] if Kind.E in mode_of(p) and tools.pfe else []


@dataclass(frozen=True)
class Step:
    """One scheduler step: code a frame (``action`` None) or run an action."""

    poc: int
    action: Action | None = None

    @property
    def is_code(self) -> bool:
        return self.action is None


def schedule(num_frames: int, tools: Tools = Tools()) -> list[Step]:
    """Coding steps interleaved with the actions; actions needing POCs past the end are dropped."""
    last = num_frames - 1
    steps = []
    for p in coding_order(num_frames):
        for a in _actions_before(p, tools):
            if max(a.inputs) <= last:
                steps.append(Step(p, a))
        steps.append(Step(p))
        for a in _actions_after(p, tools):
            if max(a.inputs) <= last:
                steps.append(Step(p, a))
    return steps


def plan_window(base_poc: int, last_poc: int, tools: Tools = Tools()) -> list[Action]:
    if base_poc % WINDOW:
        raise ValueError("window base must be a multiple of 8")
    return [s.action for s in schedule(last_poc + 1, tools)
            if not s.is_code and s.action.window == base_poc]


def trace_json(steps: Sequence[Step]) -> list[dict]:
    actions = [s.action for s in steps if not s.is_code]
    return [a.to_dict(i) for i, a in enumerate(actions)]


# ---------------------------------------------------------------------------
# flag sections


@dataclass(frozen=True)
class PfeFlagSection:
    poc: int
    cols: int
    rows: int
    flags: tuple[int, ...]
    block_size: int = 0
    pad: int = 0

    def __post_init__(self):
        if len(self.flags) != self.cols * self.rows:
            raise ValueError("flag count must equal cols * rows")
        if not (0 <= self.cols < 1 << 16 and 0 <= self.rows < 1 << 16):
            raise ValueError("tile counts must fit in u16")

    def to_bytes(self) -> bytes:
        packed = np.packbits(np.array(self.flags, dtype=np.uint8)) if self.flags else b""
        return struct.pack("<HH", self.cols, self.rows) + bytes(packed)

    @classmethod
    def from_bytes(cls, data: bytes, offset: int = 0, poc: int = 0) -> tuple["PfeFlagSection", int]:
        """Parse one section at ``offset``; returns the section and the bytes consumed."""
        if len(data) - offset < 4:
            raise BitstreamError("truncated flag section header")
        cols, rows = struct.unpack_from("<HH", data, offset)
        n = cols * rows
        nbytes = -(-n // 8)
        body = data[offset + 4:offset + 4 + nbytes]
        if len(body) != nbytes:
            raise BitstreamError("truncated flag section body")
        bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8)) if nbytes else np.zeros(0, np.uint8)
        if bits[n:].any():
            raise BitstreamError("nonzero padding bits in flag section")
        return cls(poc, cols, rows, tuple(int(b) for b in bits[:n])), 4 + nbytes


def _tile_sse(a: Frame, b: Frame, tile) -> int:
    (ys, xs) = tile.core
    cys, cxs = slice(ys.start // 2, ys.stop // 2), slice(xs.start // 2, xs.stop // 2)
    total = 0
    for pa, pb, rect in ((a.y, b.y, (ys, xs)), (a.u, b.u, (cys, cxs)), (a.v, b.v, (cys, cxs))):
        d = pa[rect].astype(np.int64) - pb[rect].astype(np.int64)
        total += int((d * d).sum())
    return total


def decide_flags(orig: Frame, recon: Frame, filtered: Frame, grid: TileGrid) -> tuple[int, ...]:
    """Flag a tile iff the filtered tile has strictly higher PSNR (over Y, U, V) than the recon."""
    return tuple(int(_tile_sse(orig, filtered, t) < _tile_sse(orig, recon, t)) for t in grid)


def assemble(recon: Frame, filtered: Frame, grid: TileGrid, flags: Sequence[int]) -> Frame:
    if len(flags) != len(grid):
        raise ValueError(f"{len(flags)} flags for {len(grid)} tiles")
    y, u, v = (p.copy() for p in recon.planes)
    for t, f in zip(grid, flags):
        if not f:
            continue
        ys, xs = t.core
        cys, cxs = slice(ys.start // 2, ys.stop // 2), slice(xs.start // 2, xs.stop // 2)
        y[ys, xs] = filtered.y[ys, xs]
        u[cys, cxs] = filtered.u[cys, cxs]
        v[cys, cxs] = filtered.v[cys, cxs]
    return Frame(y, u, v, recon.poc)


def _section_for(poc: int, grid: TileGrid, flags) -> PfeFlagSection:
    return PfeFlagSection(poc, grid.cols, grid.rows, tuple(flags), grid.block_size, grid.pad)


def _apply_or_decide(recon: Frame, filtered: Frame, originals: Mapping[int, Frame] | None,
                     sections: Mapping[int, PfeFlagSection] | None) -> tuple[Frame, PfeFlagSection]:
    grid = make_tile_grid(recon.width, recon.height)
    poc = recon.poc
    if originals is not None:
        flags = decide_flags(originals[poc], recon, filtered, grid)
    else:
        if sections is None or poc not in sections:
            raise BitstreamError(f"missing enhancement flags for POC {poc}")
        sec = sections[poc]
        if (sec.cols, sec.rows) != (grid.cols, grid.rows):
            raise BitstreamError(f"flag grid {sec.cols}x{sec.rows} does not match "
                                 f"{grid.cols}x{grid.rows}")
        flags = sec.flags
    return assemble(recon, filtered, grid, flags), _section_for(poc, grid, flags)


# ---------------------------------------------------------------------------
# buffer and read instrumentation


class PurityMonitor:
    """Records every frame handed to the dataflow and checks it is a DPB reconstruction."""

    def __init__(self):
        self.reads: list[tuple[str, int, int]] = []
        self.violations: list[str] = []
        self._enhanced_ids: set[int] = set()

    def note_enhanced(self, frame: Frame):
        self._enhanced_ids.add(id(frame))

    def fetch(self, dpb: Dpb, poc: int, purpose: str) -> Frame | None:
        frame = dpb.get(poc)
        if frame is None:
            return None
        self.reads.append((purpose, poc, id(frame)))
        if id(frame) in self._enhanced_ids:
            self.violations.append(f"{purpose} read an enhanced frame for POC {poc}")
        return frame


class StewWindow:
    """Eight display-order slots; enhanced frames wait here until the window is complete."""

    def __init__(self, base_poc: int, last_poc: int, covered: set[int]):
        if base_poc % WINDOW:
            raise ValueError("window base must be a multiple of 8")
        self.base_poc = base_poc
        self.pocs = list(range(base_poc, min(base_poc + WINDOW, last_poc + 1)))
        self.status: dict[int, set[str]] = {p: set() for p in self.pocs}
        self.enh_buffer: dict[int, Frame] = {}
        self.orphans = {p for p in self.pocs if p not in covered}
        self.rfs_inputs: list[Frame] = []

    def reconstructed(self, poc: int, recon: Frame):
        self.status[poc].add("reconstructed")
        if poc in self.orphans:
            self.enh_buffer[poc] = recon
            self.status[poc].add("enhanced")

    def enhanced(self, poc: int, frame: Frame):
        if poc in self.enh_buffer:
            raise RuntimeError(f"POC {poc} enhanced twice")
        self.enh_buffer[poc] = frame
        self.status[poc].add("enhanced")

    @property
    def complete(self) -> bool:
        return all("enhanced" in s for s in self.status.values())

    @property
    def emitted(self) -> bool:
        return any("emitted" in s for s in self.status.values())


def buffer_emit(window: StewWindow) -> list[Frame]:
    if not window.complete:
        missing = [p for p, s in window.status.items() if "enhanced" not in s]
        raise RuntimeError(f"window {window.base_poc} emitted before POCs {missing} were enhanced")
    outputs = {id(f) for p, f in window.enh_buffer.items() if p not in window.orphans}
    if any(id(f) in outputs for f in window.rfs_inputs):
        raise RuntimeError("synthesis consumed an enhanced frame")
    for s in window.status.values():
        s.add("emitted")
    return [window.enh_buffer[p] for p in window.pocs]


# ---------------------------------------------------------------------------
# actions


def insert_virtual(rpls: tuple[Sequence[RefEntry], Sequence[RefEntry]],
                   virtual: Frame) -> tuple[list[RefEntry], list[RefEntry]]:
    """Put the virtual reference at index 1 of both lists (lists left empty stay empty)."""
    out = []
    for rpl in rpls:
        rpl = [e for e in rpl if e.label != VIRTUAL]
        if rpl:
            rpl.insert(1, RefEntry(VIRTUAL, virtual))
        out.append(rpl)
    return out[0], out[1]


@dataclass
class ActionContext:
    dpb: Dpb
    stenet: SteNet
    monitor: PurityMonitor = field(default_factory=PurityMonitor)
    windows: dict[int, StewWindow] = field(default_factory=dict)

    def fetch(self, poc: int, purpose: str) -> Frame | None:
        frame = self.monitor.fetch(self.dpb, poc, purpose)
        w = self.windows.get(poc - poc % WINDOW)
        if frame is not None and purpose in ("RFS", "JISE") and w is not None:
            w.rfs_inputs.append(frame)
        return frame


def _ctx(dpb, stenet, ctx: ActionContext | None) -> ActionContext:
    return ctx if ctx is not None else ActionContext(dpb, stenet)


def run_rfs(p: int, d: int, dpb: Dpb, stenet: SteNet, rpls=None,
            ctx: ActionContext | None = None):
    """Synthesize the virtual reference for ``p`` from recon(p-d) and recon(p+d).

    Returns ``(virtual, rpls)``; both are None / unchanged when an input is missing.
    """
    ctx = _ctx(dpb, stenet, ctx)
    a, b = ctx.fetch(p - d, "RFS"), ctx.fetch(p + d, "RFS")
    if a is None or b is None:
        return None, rpls
    virtual = stenet.run(a, b, Mode.SYN)
    if rpls is not None:
        rpls = insert_virtual(rpls, virtual)
    return virtual, rpls


def run_pfe(p: int, dpb: Dpb, originals: Mapping[int, Frame] | None, stenet: SteNet,
            sections: Mapping[int, PfeFlagSection] | None = None,
            pair: tuple[int, int] | None = None, ctx: ActionContext | None = None):
    """Enhance the pair (p-2, p) and choose per-tile flags (encoder) or apply them (decoder).

    Returns ``((out_a, out_b), (section_a, section_b))``.
    """
    ctx = _ctx(dpb, stenet, ctx)
    pa, pb = pair or (p - PFE_DISTANCE, p)
    ra, rb = ctx.fetch(pa, "PFE"), ctx.fetch(pb, "PFE")
    if ra is None or rb is None:
        raise KeyError(f"enhancement inputs {pa}, {pb} not reconstructed")
    fa, fb = stenet.run(ra, rb, Mode.ENH)
    out_a, sec_a = _apply_or_decide(ra, fa, originals, sections)
    out_b, sec_b = _apply_or_decide(rb, fb, originals, sections)
    return (out_a, out_b), (sec_a, sec_b)


def run_jise(p: int, dpb: Dpb, originals: Mapping[int, Frame] | None, stenet: SteNet,
             sections: Mapping[int, PfeFlagSection] | None = None, rpls=None,
             ctx: ActionContext | None = None):
    """One joint run on (p-1, p+1): enhanced neighbours plus the virtual reference for p.

    Returns ``(out_prev, virtual, out_next, (section_prev, section_next), rpls)``.
    """
    ctx = _ctx(dpb, stenet, ctx)
    ra, rb = ctx.fetch(p - 1, "JISE"), ctx.fetch(p + 1, "JISE")
    if ra is None or rb is None:
        raise KeyError(f"joint inputs {p - 1}, {p + 1} not reconstructed")
    fa, virtual, fb = stenet.run(ra, rb, Mode.JOINT)
    out_a, sec_a = _apply_or_decide(ra, fa, originals, sections)
    out_b, sec_b = _apply_or_decide(rb, fb, originals, sections)
    if rpls is not None:
        rpls = insert_virtual(rpls, virtual)
    return out_a, virtual, out_b, (sec_a, sec_b), rpls
