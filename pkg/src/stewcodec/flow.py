"""Block-matching optical flow, intermediate-flow estimation, flow reuse, warping.

Conventions: a flow field holds, for every pixel of the *target* grid, the
displacement to the position sampled in the *source* image.  Warping is
backward: ``out(x, y) = src(x + dx, y + dy)``.  ``block_match(ref, cur)``
therefore returns a field on the grid of ``cur`` pointing into ``ref``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .frame import Frame, to_samples

FLOW_TAGS = ("t->0", "t->1", "0->1", "1->0", None)
MATCH_BLOCK = 16


@dataclass(frozen=True, eq=False)
class FlowField:
    dx: np.ndarray
    dy: np.ndarray
    tag: str | None = None

    def __post_init__(self):
        if self.dx.shape != self.dy.shape or self.dx.ndim != 2:
            raise ValueError("flow components must be 2-D arrays of equal shape")
        if self.tag not in FLOW_TAGS:
            raise ValueError(f"unknown flow tag {self.tag!r}")

    @property
    def width(self) -> int:
        return self.dx.shape[1]

    @property
    def height(self) -> int:
        return self.dx.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.dx.shape

    def scaled(self, k: float, tag: str | None = None) -> "FlowField":
        return FlowField(self.dx * k, self.dy * k, tag)

    @classmethod
    def zeros(cls, height: int, width: int, tag: str | None = None) -> "FlowField":
        return cls(np.zeros((height, width)), np.zeros((height, width)), tag)

    @classmethod
    def constant(cls, height: int, width: int, dx: float, dy: float,
                 tag: str | None = None) -> "FlowField":
        return cls(np.full((height, width), float(dx)), np.full((height, width), float(dy)), tag)

    def to_csv(self) -> str:
        ys, xs = np.mgrid[0:self.height, 0:self.width]
        rows = ["x,y,dx,dy"]
        for x, y, a, b in zip(xs.ravel(), ys.ravel(), self.dx.ravel(), self.dy.ravel()):
            rows.append(f"{x},{y},{a:g},{b:g}")
        return "\n".join(rows) + "\n"


@lru_cache(maxsize=None)
def candidate_order(search_range: int) -> np.ndarray:
    """All (dx, dy) in the square window, sorted by the tie-break key (|dx|+|dy|, dx, dy)."""
    r = range(-search_range, search_range + 1)
    cands = sorted(((dx, dy) for dx in r for dy in r), key=lambda c: (abs(c[0]) + abs(c[1]), c))
    return np.array(cands, dtype=np.int64)


def _block_sums(ad: np.ndarray, block: int) -> np.ndarray:
    """Sum an (h, n, w) array of 8-bit absolute differences over block x block tiles.

    A block sum is at most 255 * block**2, which fits uint16 for blocks up to 16.
    """
    h, n, w = ad.shape
    rows, cols = -(-h // block), -(-w // block)
    if (rows * block, cols * block) != (h, w):
        ad = np.pad(ad, ((0, rows * block - h), (0, 0), (0, cols * block - w)))
    acc = np.uint16 if block <= 16 else np.int64
    tiles = ad.view(np.uint16).reshape(rows, block, n, cols, block)
    return tiles.sum(axis=4, dtype=acc).sum(axis=1, dtype=acc)


def sad_volume(ref: np.ndarray, cur: np.ndarray, search_range: int,
               block: int = MATCH_BLOCK) -> np.ndarray:
    """SAD of every block of ``cur`` against ``ref`` displaced by every candidate.

    Returns an array (2R+1, 2R+1, rows, cols) indexed [dy + R, dx + R].  The
    reference is edge-replicated outside the frame.
    """
    if ref.shape != cur.shape:
        raise ValueError(f"plane shapes differ: {ref.shape} vs {cur.shape}")
    if search_range < 0:
        raise ValueError("search range must be nonnegative")
    R = search_range
    h, w = cur.shape
    padded = np.pad(ref.astype(np.int16), R, mode="edge")
    c = cur.astype(np.int16)
    rows, cols = -(-h // block), -(-w // block)
    out = np.empty((2 * R + 1, 2 * R + 1, rows, cols), dtype=np.int64)
    for j in range(2 * R + 1):
        band = padded[j:j + h]                                  # rows shifted by dy = j - R
        windows = sliding_window_view(band, w, axis=1)          # (h, 2R+1, w): shift dx = i - R
        out[j] = _block_sums(np.abs(windows - c[:, None, :]), block).transpose(1, 0, 2)
    return out


def block_vectors(ref: np.ndarray, cur: np.ndarray, search_range: int,
                  block: int = MATCH_BLOCK) -> tuple[np.ndarray, np.ndarray]:
    """Full-search integer motion vectors per block.

    Returns ``(mvs, sads)`` where ``mvs`` is (rows, cols, 2) holding (dx, dy)
    so that ``cur[block] ~ ref[block shifted by (dx, dy)]``.
    """
    vol = sad_volume(ref, cur, search_range, block)
    order = candidate_order(search_range)
    R = search_range
    ranked = vol[order[:, 1] + R, order[:, 0] + R]             # (ncand, rows, cols) in tie-break order
    best = np.argmin(ranked, axis=0)                            # first minimum wins
    mvs = order[best]
    sads = np.take_along_axis(ranked, best[None], axis=0)[0]
    return mvs, sads


def expand_block_field(mvs: np.ndarray, height: int, width: int, block: int,
                       tag: str | None = None) -> FlowField:
    dx = np.repeat(np.repeat(mvs[..., 0], block, axis=0), block, axis=1)[:height, :width]
    dy = np.repeat(np.repeat(mvs[..., 1], block, axis=0), block, axis=1)[:height, :width]
    return FlowField(dx.astype(np.float64), dy.astype(np.float64), tag)


def block_match(ref: Frame, cur: Frame, search_range: int, block: int = MATCH_BLOCK,
                tag: str | None = None) -> FlowField:
    """Per-block luma SAD full search; ties go to the smallest |dx|+|dy|, then (dx, dy)."""
    if (ref.width, ref.height) != (cur.width, cur.height):
        raise ValueError("frame dimensions differ")
    mvs, _ = block_vectors(ref.y, cur.y, search_range, block)
    return expand_block_field(mvs, cur.height, cur.width, block, tag)


def estimate_intermediate_flows(i0: Frame, i1: Frame, search_range: int,
                                block: int = MATCH_BLOCK) -> tuple[FlowField, FlowField]:
    """Flows from the midpoint t = 0.5 toward each input, under linear motion.

    Returns ``(f_t0, f_t1)``.
    """
    f_10 = block_match(i0, i1, search_range, block)   # on frame-1 grid, into frame 0
    f_01 = block_match(i1, i0, search_range, block)   # on frame-0 grid, into frame 1
    return f_10.scaled(0.5, "t->0"), f_01.scaled(0.5, "t->1")


def reuse_flows(f_t0: FlowField, f_t1: FlowField) -> tuple[FlowField, FlowField]:
    """Endpoint flows from the intermediate ones. Returns ``(f_01, f_10)``."""
    if f_t0.shape != f_t1.shape:
        raise ValueError("flow fields differ in shape")
    return f_t1.scaled(2.0, "0->1"), f_t0.scaled(2.0, "1->0")


def downsample_flow(flow: FlowField) -> FlowField:
    h, w = flow.shape
    if h % 2 or w % 2:
        raise ValueError("flow downsampling needs even dimensions")

    def half(a):
        return a.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3)) * 0.5

    return FlowField(half(flow.dx), half(flow.dy), flow.tag)


def warp_array(data: np.ndarray, flow: FlowField) -> np.ndarray:
    """Bilinear backward warp of a (H, W) or (C, H, W) array; coordinates clamp to the border."""
    squeeze = data.ndim == 2
    src = np.asarray(data, dtype=np.float64)
    if squeeze:
        src = src[None]
    h, w = src.shape[1:]
    if flow.shape != (h, w):
        raise ValueError(f"flow shape {flow.shape} does not match data {(h, w)}")
    ys, xs = np.mgrid[0:h, 0:w]
    sx = np.clip(xs + flow.dx, 0, w - 1)
    sy = np.clip(ys + flow.dy, 0, h - 1)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    fx = sx - x0
    fy = sy - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = src[:, y0, x0] * (1 - fx) + src[:, y0, x1] * fx
    bottom = src[:, y1, x0] * (1 - fx) + src[:, y1, x1] * fx
    out = top * (1 - fy) + bottom * fy
    return out[0] if squeeze else out


def in_bounds(flow: FlowField) -> np.ndarray:
    """True where the backward-warp source position lies inside the field's extent."""
    h, w = flow.shape
    ys, xs = np.mgrid[0:h, 0:w]
    sx, sy = xs + flow.dx, ys + flow.dy
    return (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)


def warp(data, flow: FlowField):
    """Warp an array or a Frame. Frames warp chroma with the half-resolution flow."""
    if isinstance(data, Frame):
        cflow = downsample_flow(flow)
        return Frame(to_samples(warp_array(data.y, flow)),
                     to_samples(warp_array(data.u, cflow)),
                     to_samples(warp_array(data.v, cflow)), data.poc)
    return warp_array(data, flow)
