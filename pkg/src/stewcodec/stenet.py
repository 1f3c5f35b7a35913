"""Bidirectional recurrent space-time enhancement dataflow.

Two frames go in; depending on the mode the dataflow returns the two enhanced
frames, the synthesized middle frame, or all three.  Everything after packing
runs at half resolution on 6-channel packed frames.  The learned modules are
replaced by a pluggable :class:`OperatorSet`; :func:`default_operator_set`
is a deterministic motion-compensated fusion.
"""

from __future__ import annotations

import enum
import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .flow import (
    FlowField,
    downsample_flow,
    estimate_intermediate_flows,
    in_bounds,
    reuse_flows,
    warp_array,
)
from .frame import Frame, PackedFrame, TileGrid, crop, make_tile_grid, pack_six_channel, \
    paste_tiles, unpack_six_channel

PACKED_CHANNELS = 6
FLOW_SEARCH_RANGE = 32
# absolute warp residual (8-bit units) at which an incoming feature loses all confidence
RESIDUAL_SCALE = 24.0
# forward-backward cycle error (half-resolution pixels) at which a flow vector is distrusted
CYCLE_TOLERANCE = 2.0

STAGES = ("theta", "phi", "eq4", "eq5", "eq6", "eq7", "eq8", "eq9",
          "reconstruct_0", "reconstruct_t", "reconstruct_1")


class Mode(enum.Enum):
    ENH = "enh"
    SYN = "syn"
    JOINT = "joint"


@dataclass(frozen=True, eq=False)
class FeatureState:
    channels: np.ndarray
    state_id: str

    @property
    def width2(self) -> int:
        return self.channels.shape[2]

    @property
    def height2(self) -> int:
        return self.channels.shape[1]


@dataclass(frozen=True)
class OperatorSet:
    """The four trainable stages of the dataflow.

    ``extract`` and ``refine_f`` receive the channel concatenation as a tuple of
    (C_i, H, W) arrays; ``refine_b`` and ``reconstruct`` receive a single array.
    ``warp(state, flow, reliability)`` motion-compensates a state given a per-pixel
    flow reliability in [0, 1]; plain bilinear warping when None.
    Every function must be pure.
    """

    name: str
    extract: Callable[[tuple[np.ndarray, ...]], np.ndarray]
    refine_b: Callable[[np.ndarray], np.ndarray]
    refine_f: Callable[[tuple[np.ndarray, ...]], np.ndarray]
    reconstruct: Callable[[np.ndarray], np.ndarray]
    state_channels: int
    warp: Callable[[np.ndarray, FlowField, np.ndarray], np.ndarray] | None = None


class CallLog:
    """Thread-safe per-stage execution counters, with an optional stage trace."""

    def __init__(self, trace: bool = False):
        self._lock = threading.Lock()
        self._counts: Counter[str] = Counter()
        self.trace: list[dict] | None = [] if trace else None

    def record(self, mode: Mode, stages: Sequence[str], shapes: dict[str, list[int]]):
        with self._lock:
            self._counts.update(stages)
            if self.trace is not None:
                self.trace.append({"run": len(self.trace), "mode": mode.value,
                                   "stages": list(stages), "shapes": shapes})

    def counts(self) -> dict[str, int]:
        with self._lock:
            return {s: self._counts.get(s, 0) for s in STAGES}

    def reset(self):
        with self._lock:
            self._counts.clear()
            if self.trace is not None:
                self.trace.clear()


def call_counts(log: CallLog) -> dict[str, int]:
    return log.counts()


# ---------------------------------------------------------------------------
# default operators: confidence-weighted motion-compensated fusion


def blend(own: np.ndarray, own_conf: np.ndarray, incoming: Sequence[np.ndarray],
          incoming_conf: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Confidence-weighted blend; each incoming source gets weight c_i / (c_own + sum c_j)."""
    total = own_conf.astype(np.float64)
    for c in incoming_conf:
        total = total + c
    out = own.astype(np.float64)
    safe = np.where(total > 0, total, 1.0)
    for x, c in zip(incoming, incoming_conf):
        out = out + (c / safe) * (x - own)
    conf = own_conf
    for c in incoming_conf:
        conf = np.maximum(conf, c)
    return out, conf


def _lift(packed: np.ndarray) -> np.ndarray:
    return np.concatenate([packed, np.ones((1,) + packed.shape[1:])])


def _fuse(groups: Sequence[np.ndarray]) -> np.ndarray:
    own = groups[0]
    values, confs = [], []
    for g in groups[1:]:
        residual = np.abs(g[:PACKED_CHANNELS] - own[:PACKED_CHANNELS]).mean(axis=0)
        # disagreement only counts against the incoming source where our own value is trusted
        gate = 1.0 - own[PACKED_CHANNELS] * np.clip(residual / RESIDUAL_SCALE, 0.0, 1.0)
        confs.append(g[PACKED_CHANNELS] * gate)
        values.append(g[:PACKED_CHANNELS])
    out, conf = blend(own[:PACKED_CHANNELS], own[PACKED_CHANNELS], values, confs)
    return np.concatenate([out, conf[None]])


def _as_groups(parts: Sequence[np.ndarray], width: int) -> list[np.ndarray]:
    groups = []
    for p in parts:
        if p.shape[0] == PACKED_CHANNELS:
            groups.append(_lift(p))
        elif p.shape[0] % width == 0:
            groups.extend(np.split(p, p.shape[0] // width))
        else:
            raise ValueError(f"cannot split {p.shape[0]} channels into states of {width}")
    return groups


def default_operator_set() -> OperatorSet:
    """``MCFuse``: identity extraction with a confidence channel and residual-gated blending.

    Warped states lose confidence where the source position falls outside the tile
    or the flow fails the forward-backward check.
    """
    width = PACKED_CHANNELS + 1

    def extract(parts):
        return np.concatenate(_as_groups(parts, width))

    def refine_b(state):
        return _fuse(_as_groups((state,), width))

    def refine_f(parts):
        return _fuse(_as_groups(parts, width))

    def reconstruct(state):
        return state[:PACKED_CHANNELS]

    def warp(state, flow, reliability):
        out = warp_array(state, flow)
        # samples from outside the tile or along inconsistent vectors carry no confidence
        out[PACKED_CHANNELS::width] *= in_bounds(flow) * reliability
        return out

    return OperatorSet("MCFuse", extract, refine_b, refine_f, reconstruct, width, warp)


# ---------------------------------------------------------------------------
# dataflow


def flow_reliability(forward: FlowField, backward: FlowField) -> np.ndarray:
    """Per-pixel trust in ``forward`` from the round trip through ``backward``.

    A vector is trusted when following it and then the opposite field lands
    back near the start; trust falls linearly to zero at CYCLE_TOLERANCE.
    """
    bx = warp_array(backward.dx, forward)
    by = warp_array(backward.dy, forward)
    err = np.hypot(forward.dx + bx, forward.dy + by)
    return np.clip(1.0 - err / CYCLE_TOLERANCE, 0.0, 1.0)


def _check_state(a: np.ndarray, ops: OperatorSet, hw: tuple[int, int], name: str) -> FeatureState:
    if a.shape != (ops.state_channels,) + hw:
        raise ValueError(f"operator set {ops.name!r} produced {name} with shape {a.shape}, "
                         f"expected {(ops.state_channels,) + hw}")
    return FeatureState(a, name)


def _check_packed(a: np.ndarray, hw: tuple[int, int]) -> PackedFrame:
    if a.shape != (PACKED_CHANNELS,) + hw:
        raise ValueError(f"reconstruction has shape {a.shape}")
    return PackedFrame(a)


def _dataflow(f0: Frame, f1: Frame, mode: Mode, ops: OperatorSet, search_range: int,
              executed: list[str], shapes: dict[str, list[int]]):
    f_t0, f_t1 = estimate_intermediate_flows(f0, f1, search_range)
    _mark(executed, "theta")
    f_01, f_10 = reuse_flows(f_t0, f_t1)
    _mark(executed, "phi")
    f_t0, f_t1, f_01, f_10 = (downsample_flow(f) for f in (f_t0, f_t1, f_01, f_10))

    p0 = pack_six_channel(f0).channels
    p1 = pack_six_channel(f1).channels
    hw = p0.shape[1:]
    zero = np.zeros((ops.state_channels,) + hw)

    # vectors toward frame 1 live on frame 0's grid and vice versa
    rel_to_1 = flow_reliability(f_01, f_10)
    rel_to_0 = flow_reliability(f_10, f_01)

    def w(state: FeatureState, flow: FlowField, reliability: np.ndarray) -> np.ndarray:
        if ops.warp is None:
            return warp_array(state.channels, flow)
        return ops.warp(state.channels, flow, reliability)

    e1b = _check_state(ops.refine_b(ops.extract((p1, zero))), ops, hw, "E1B")
    _mark(executed, "eq4")
    e0b = _check_state(ops.refine_b(ops.extract((p0, w(e1b, f_01, rel_to_1)))), ops, hw, "E0B")
    _mark(executed, "eq5")
    stb = None
    if mode is not Mode.ENH:
        stb = _check_state(ops.refine_b(w(e1b, f_t1, rel_to_1)), ops, hw, "StB")
        _mark(executed, "eq6")
    e0f = _check_state(ops.refine_f((e0b.channels, p0, zero)), ops, hw, "E0F")
    _mark(executed, "eq7")
    e1f = _check_state(ops.refine_f((e1b.channels, w(e0f, f_10, rel_to_0))), ops, hw, "E1F")
    _mark(executed, "eq8")
    stf = None
    if mode is not Mode.ENH:
        stf = _check_state(ops.refine_f((stb.channels, w(e0f, f_t0, rel_to_0))), ops, hw, "StF")
        _mark(executed, "eq9")
    for s in (e1b, e0b, stb, e0f, e1f, stf):
        if s is not None:
            shapes[s.state_id] = list(s.channels.shape)

    out = {}
    if mode is not Mode.SYN:
        out["e0"] = unpack_six_channel(_check_packed(ops.reconstruct(e0f.channels), hw))
        _mark(executed, "reconstruct_0")
        out["e1"] = unpack_six_channel(_check_packed(ops.reconstruct(e1f.channels), hw))
        _mark(executed, "reconstruct_1")
    if mode is not Mode.ENH:
        out["st"] = unpack_six_channel(_check_packed(ops.reconstruct(stf.channels), hw))
        _mark(executed, "reconstruct_t")
    return out


def _mark(executed: list[str], stage: str):
    if stage not in executed:
        executed.append(stage)


def run(i0: Frame, i1: Frame, mode: Mode | str, ops: OperatorSet | None = None,
        log: CallLog | None = None, grid: TileGrid | None | bool = None,
        search_range: int = FLOW_SEARCH_RANGE):
    """Run the dataflow in ``mode``.

    Returns ``(e0, e1)`` for ENH, the synthesized frame for SYN and
    ``(e0, st, e1)`` for JOINT.  Inference is tiled over ``grid`` (the default
    grid for the frame size when None; a single whole-frame tile when False).
    Stage counters are recorded once per call regardless of the tile count.
    """
    mode = Mode(mode)
    ops = ops or default_operator_set()
    if (i0.width, i0.height) != (i1.width, i1.height):
        raise ValueError("input frames differ in dimensions")
    if grid is None:
        grid = make_tile_grid(i0.width, i0.height)
    elif grid is False:
        grid = make_tile_grid(i0.width, i0.height, block_size=max(i0.width, i0.height), pad=0)
    if (grid.width, grid.height) != (i0.width, i0.height):
        raise ValueError("tile grid does not match frame size")

    executed: list[str] = []
    shapes: dict[str, list[int]] = {}
    per_tile = [_dataflow(crop(i0, t.padded), crop(i1, t.padded), mode, ops, search_range,
                          executed, shapes) for t in grid]
    if log is not None:
        log.record(mode, executed, shapes)

    def assemble(key, poc):
        return paste_tiles(grid, [o[key] for o in per_tile], poc)

    if mode is Mode.ENH:
        return assemble("e0", i0.poc), assemble("e1", i1.poc)
    if mode is Mode.SYN:
        return assemble("st", None)
    return assemble("e0", i0.poc), assemble("st", None), assemble("e1", i1.poc)


@dataclass
class SteNet:
    """Bundles an operator set, flow search range and call log for the scheduler."""

    ops: OperatorSet = field(default_factory=default_operator_set)
    search_range: int = FLOW_SEARCH_RANGE
    log: CallLog = field(default_factory=CallLog)
    tiled: bool = True

    def run(self, i0: Frame, i1: Frame, mode: Mode | str):
        return run(i0, i1, mode, self.ops, self.log, None if self.tiled else False,
                   self.search_range)
