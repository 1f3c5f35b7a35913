"""YUV 4:2:0 frames, Y4M / raw I/O, PSNR, six-channel packing and tile grids."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

BIT_DEPTH = 8
MAX_SAMPLE = (1 << BIT_DEPTH) - 1

# Reports cannot carry +inf; lossless PSNR is written as this value with a lossless marker.
LOSSLESS_PSNR_REPORT = 999.99

# Class-D sized frames (416x240 and smaller) get the small tile configuration.
SMALL_FRAME_AREA = 416 * 240
SMALL_TILE = (240, 8)
LARGE_TILE = (480, 16)


class Y4MError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.uint8)
    if a.flags.writeable:
        a = a.copy()
        a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Frame:
    """One 8-bit 4:2:0 picture. Planes are read-only uint8 arrays indexed [row, col]."""

    y: np.ndarray
    u: np.ndarray
    v: np.ndarray
    poc: int | None = None

    def __post_init__(self):
        y, u, v = (np.asarray(p) for p in (self.y, self.u, self.v))
        for p in (y, u, v):
            if p.ndim != 2:
                raise ValueError("planes must be 2-D")
            if p.dtype != np.uint8 and p.size and (p.min() < 0 or p.max() > MAX_SAMPLE):
                raise ValueError("sample out of 8-bit range")
        h, w = y.shape
        if h % 2 or w % 2:
            raise ValueError(f"frame dimensions must be even, got {w}x{h}")
        if u.shape != (h // 2, w // 2) or v.shape != (h // 2, w // 2):
            raise ValueError("chroma planes must be half size in each dimension")
        if self.poc is not None and self.poc < 0:
            raise ValueError("poc must be nonnegative")
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "u", _frozen(u))
        object.__setattr__(self, "v", _frozen(v))

    @property
    def width(self) -> int:
        return self.y.shape[1]

    @property
    def height(self) -> int:
        return self.y.shape[0]

    @property
    def bit_depth(self) -> int:
        return BIT_DEPTH

    @property
    def planes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.y, self.u, self.v

    def with_poc(self, poc: int | None) -> "Frame":
        return Frame(self.y, self.u, self.v, poc)

    def same_samples(self, other: "Frame") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.planes, other.planes))

    def tobytes(self) -> bytes:
        return self.y.tobytes() + self.u.tobytes() + self.v.tobytes()

    @classmethod
    def constant(cls, width: int, height: int, y: int = 128, u: int = 128, v: int = 128,
                 poc: int | None = None) -> "Frame":
        return cls(
            np.full((height, width), y, np.uint8),
            np.full((height // 2, width // 2), u, np.uint8),
            np.full((height // 2, width // 2), v, np.uint8),
            poc,
        )


def frame_bytes(width: int, height: int) -> int:
    return width * height + 2 * (width // 2) * (height // 2)


def _frame_from_buffer(buf: bytes | memoryview, width: int, height: int, poc: int | None) -> Frame:
    n_y = width * height
    n_c = (width // 2) * (height // 2)
    a = np.frombuffer(buf, dtype=np.uint8, count=n_y + 2 * n_c)
    return Frame(
        a[:n_y].reshape(height, width),
        a[n_y:n_y + n_c].reshape(height // 2, width // 2),
        a[n_y + n_c:].reshape(height // 2, width // 2),
        poc,
    )


# ---------------------------------------------------------------------------
# Y4M


@dataclass
class Y4MInfo:
    width: int
    height: int
    fps: tuple[int, int] = (30, 1)
    params: dict[str, str] = field(default_factory=dict)


_HEADER_MAGIC = b"YUV4MPEG2"
_ACCEPTED_COLORSPACES = {"420", "420jpeg", "420paldv", "420mpeg2"}


def _parse_header(line: bytes) -> Y4MInfo:
    tokens = line.split(b" ")
    if tokens[0] != _HEADER_MAGIC:
        raise Y4MError("missing YUV4MPEG2 signature")
    params: dict[str, str] = {}
    for tok in tokens[1:]:
        if not tok:
            continue
        params[chr(tok[0])] = tok[1:].decode("ascii", errors="replace")
    try:
        width, height = int(params["W"]), int(params["H"])
    except (KeyError, ValueError) as exc:
        raise Y4MError("header lacks a valid W/H") from exc
    if width < 0 or height < 0 or width % 2 or height % 2:
        raise Y4MError(f"unsupported dimensions {width}x{height}")
    colorspace = params.get("C", "420")
    if colorspace not in _ACCEPTED_COLORSPACES:
        raise Y4MError(f"unsupported colorspace C{colorspace}; only 4:2:0 8-bit is handled")
    fps = (30, 1)
    if "F" in params:
        m = re.fullmatch(r"(\d+):(\d+)", params["F"])
        if not m or int(m.group(2)) == 0:
            raise Y4MError(f"malformed frame rate F{params['F']}")
        fps = (int(m.group(1)), int(m.group(2)))
    return Y4MInfo(width, height, fps, params)


def read_y4m_with_info(data: bytes) -> tuple[list[Frame], Y4MInfo]:
    data = bytes(data)
    end = data.find(b"\n")
    if end < 0:
        raise Y4MError("unterminated header")
    info = _parse_header(data[:end])
    size = frame_bytes(info.width, info.height)
    frames = []
    pos = end + 1
    while pos < len(data):
        nl = data.find(b"\n", pos)
        if nl < 0 or not data.startswith(b"FRAME", pos):
            raise Y4MError(f"bad frame marker at byte {pos}")
        pos = nl + 1
        if pos + size > len(data):
            raise Y4MError(f"truncated payload in frame {len(frames)}")
        frames.append(_frame_from_buffer(memoryview(data)[pos:pos + size], info.width,
                                         info.height, len(frames)))
        pos += size
    return frames, info


def read_y4m(data: bytes) -> list[Frame]:
    return read_y4m_with_info(data)[0]


def write_y4m(frames: Sequence[Frame], fps: tuple[int, int] = (30, 1),
              width: int = 0, height: int = 0) -> bytes:
    if frames:
        width, height = frames[0].width, frames[0].height
        if any((f.width, f.height) != (width, height) for f in frames):
            raise ValueError("all frames must share dimensions")
    out = [f"YUV4MPEG2 W{width} H{height} F{fps[0]}:{fps[1]} Ip A1:1 C420jpeg\n".encode()]
    for f in frames:
        out.append(b"FRAME\n")
        out.append(f.tobytes())
    return b"".join(out)


def read_yuv420(data: bytes, width: int, height: int) -> list[Frame]:
    """Raw planar I420 with dimensions supplied by the caller."""
    size = frame_bytes(width, height)
    if len(data) % size:
        raise Y4MError(f"raw stream length {len(data)} is not a multiple of frame size {size}")
    return [_frame_from_buffer(memoryview(data)[i * size:(i + 1) * size], width, height, i)
            for i in range(len(data) // size)]


# ---------------------------------------------------------------------------
# metrics

PLANES = ("y", "u", "v")


def _plane_arrays(f: Frame, plane: str) -> list[np.ndarray]:
    if plane == "yuv":
        return list(f.planes)
    return [getattr(f, plane)]


def sse(a: Frame, b: Frame, plane: str = "y") -> int:
    if (a.width, a.height) != (b.width, b.height):
        raise ValueError("frame dimensions differ")
    total = 0
    for pa, pb in zip(_plane_arrays(a, plane), _plane_arrays(b, plane)):
        d = pa.astype(np.int64) - pb.astype(np.int64)
        total += int(np.sum(d * d))
    return total


def mse(a: Frame, b: Frame, plane: str = "y") -> float:
    n = sum(p.size for p in _plane_arrays(a, plane))
    return sse(a, b, plane) / n


def psnr_from_mse(m: float) -> float:
    if m == 0:
        return math.inf
    return 10.0 * math.log10(MAX_SAMPLE * MAX_SAMPLE / m)


def psnr(a: Frame, b: Frame, plane: str = "y") -> float:
    """PSNR in dB over one plane ('y', 'u', 'v') or all samples ('yuv'); +inf when identical."""
    return psnr_from_mse(mse(a, b, plane))


# ---------------------------------------------------------------------------
# six-channel packing


@dataclass(frozen=True, eq=False)
class PackedFrame:
    channels: np.ndarray  # (6, height/2, width/2)

    def __post_init__(self):
        if self.channels.ndim != 3 or self.channels.shape[0] != 6:
            raise ValueError(f"packed frame needs 6 channels, got shape {self.channels.shape}")

    @property
    def width2(self) -> int:
        return self.channels.shape[2]

    @property
    def height2(self) -> int:
        return self.channels.shape[1]


def pixel_unshuffle(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    if h % 2 or w % 2:
        raise ValueError("pixel unshuffle needs even dimensions")
    # channel 2*di + dj holds plane[2i+di, 2j+dj]
    return plane.reshape(h // 2, 2, w // 2, 2).transpose(1, 3, 0, 2).reshape(4, h // 2, w // 2)


def pixel_shuffle(channels: np.ndarray) -> np.ndarray:
    _, h2, w2 = channels.shape
    return channels.reshape(2, 2, h2, w2).transpose(2, 0, 3, 1).reshape(2 * h2, 2 * w2)


def pack_six_channel(frame: Frame) -> PackedFrame:
    luma = pixel_unshuffle(frame.y)
    return PackedFrame(np.concatenate([luma, frame.u[None], frame.v[None]]).astype(np.float64))


def to_samples(a: np.ndarray) -> np.ndarray:
    """Round half up and clip to the 8-bit sample range."""
    return np.clip(np.floor(np.asarray(a, dtype=np.float64) + 0.5), 0, MAX_SAMPLE).astype(np.uint8)


def unpack_six_channel(p: PackedFrame, poc: int | None = None) -> Frame:
    ch = to_samples(p.channels)
    return Frame(pixel_shuffle(ch[:4]), ch[4], ch[5], poc)


# ---------------------------------------------------------------------------
# tiling


@dataclass(frozen=True)
class Tile:
    x0: int
    y0: int
    w: int
    h: int
    # padded rectangle, clipped to the frame: [px0, px1) x [py0, py1)
    px0: int
    py0: int
    px1: int
    py1: int

    @property
    def core(self) -> tuple[slice, slice]:
        return slice(self.y0, self.y0 + self.h), slice(self.x0, self.x0 + self.w)

    @property
    def padded(self) -> tuple[slice, slice]:
        return slice(self.py0, self.py1), slice(self.px0, self.px1)

    @property
    def core_in_padded(self) -> tuple[slice, slice]:
        oy, ox = self.y0 - self.py0, self.x0 - self.px0
        return slice(oy, oy + self.h), slice(ox, ox + self.w)


@dataclass(frozen=True)
class TileGrid:
    width: int
    height: int
    block_size: int
    pad: int
    cols: int
    rows: int
    tiles: tuple[Tile, ...]

    def __len__(self):
        return len(self.tiles)

    def __iter__(self):
        return iter(self.tiles)


def tile_config(width: int, height: int) -> tuple[int, int]:
    return SMALL_TILE if width * height <= SMALL_FRAME_AREA else LARGE_TILE


def make_tile_grid(width: int, height: int, block_size: int | None = None,
                   pad: int | None = None) -> TileGrid:
    if width <= 0 or height <= 0 or width % 2 or height % 2:
        raise ValueError(f"tile grid needs positive even dimensions, got {width}x{height}")
    default_block, default_pad = tile_config(width, height)
    block_size = default_block if block_size is None else block_size
    pad = default_pad if pad is None else pad
    if block_size % 2 or pad % 2:
        raise ValueError("block size and pad must be even")
    cols = -(-width // block_size)
    rows = -(-height // block_size)
    tiles = []
    for r in range(rows):
        for c in range(cols):
            x0, y0 = c * block_size, r * block_size
            w, h = min(block_size, width - x0), min(block_size, height - y0)
            tiles.append(Tile(x0, y0, w, h,
                              max(0, x0 - pad), max(0, y0 - pad),
                              min(width, x0 + w + pad), min(height, y0 + h + pad)))
    return TileGrid(width, height, block_size, pad, cols, rows, tuple(tiles))


def crop(frame: Frame, rect: tuple[slice, slice], poc: int | None = None) -> Frame:
    ys, xs = rect
    cys = slice(ys.start // 2, ys.stop // 2)
    cxs = slice(xs.start // 2, xs.stop // 2)
    return Frame(frame.y[ys, xs], frame.u[cys, cxs], frame.v[cys, cxs], poc)


def paste_tiles(grid: TileGrid, parts: Iterable[Frame], poc: int | None = None) -> Frame:
    """Assemble a frame from per-tile frames (each covering its tile's padded rectangle)."""
    y = np.empty((grid.height, grid.width), np.uint8)
    u = np.empty((grid.height // 2, grid.width // 2), np.uint8)
    v = np.empty_like(u)
    for tile, part in zip(grid.tiles, parts, strict=True):
        (ys, xs), (iys, ixs) = tile.core, tile.core_in_padded
        y[ys, xs] = part.y[iys, ixs]
        cy = slice(ys.start // 2, ys.stop // 2), slice(xs.start // 2, xs.stop // 2)
        icy = slice(iys.start // 2, iys.stop // 2), slice(ixs.start // 2, ixs.stop // 2)
        u[cy] = part.u[icy]
        v[cy] = part.v[icy]
    return Frame(y, u, v, poc)
