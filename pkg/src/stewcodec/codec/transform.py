"""8x8 integer DCT, dead-zone quantization and run-level coefficient coding."""

from __future__ import annotations

import numpy as np

from .bits import BitReader, BitstreamError, BitWriter, se_bits, ue_bits

# HEVC 8-point core transform; M @ M.T ~= 2**15 * I
DCT8 = np.array([
    [64, 64, 64, 64, 64, 64, 64, 64],
    [89, 75, 50, 18, -18, -50, -75, -89],
    [83, 36, -36, -83, -83, -36, 36, 83],
    [75, -18, -89, -50, 50, 89, 18, -75],
    [64, -64, -64, 64, 64, -64, -64, 64],
    [50, -89, 18, 75, -75, -18, 89, -50],
    [36, -83, 83, -36, -36, 83, -83, 36],
    [18, -50, 75, -89, 89, -75, 50, -18],
], dtype=np.int64)
_SHIFT = 15
_ROUND = 1 << (_SHIFT - 1)


def _zigzag(n: int = 8) -> np.ndarray:
    order = sorted(((i, j) for i in range(n) for j in range(n)),
                   key=lambda p: (p[0] + p[1], p[1] if (p[0] + p[1]) % 2 == 0 else p[0]))
    return np.array([i * n + j for i, j in order])


ZIGZAG = _zigzag()
INV_ZIGZAG = np.argsort(ZIGZAG)


def forward_dct(x: np.ndarray) -> np.ndarray:
    """Integer 2-D DCT of (..., 8, 8) residuals, scaled to the orthonormal range."""
    x = np.asarray(x, dtype=np.int64)
    return (DCT8 @ x @ DCT8.T + _ROUND) >> _SHIFT


def inverse_dct(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=np.int64)
    return (DCT8.T @ c @ DCT8 + _ROUND) >> _SHIFT


# largest legal |level| is about 3300 (DC of a saturated block at qp 0)
MAX_LEVEL = 1 << 16


def quant_step(qp: int) -> float:
    return 2.0 ** ((qp - 4) / 6.0)


def quantize(coeffs: np.ndarray, qp: int) -> np.ndarray:
    q = quant_step(qp)
    mag = np.floor(np.abs(coeffs) / q + 1.0 / 3.0).astype(np.int64)
    return np.sign(coeffs).astype(np.int64) * mag


def dequantize(levels: np.ndarray, qp: int) -> np.ndarray:
    q = quant_step(qp)
    mag = np.floor(np.abs(levels) * q + 0.5).astype(np.int64)
    return np.sign(levels).astype(np.int64) * mag


def to_zigzag(blocks: np.ndarray) -> np.ndarray:
    """(..., 8, 8) -> (..., 64) in zigzag scan order."""
    return blocks.reshape(blocks.shape[:-2] + (64,))[..., ZIGZAG]


def from_zigzag(scan: np.ndarray) -> np.ndarray:
    return scan[..., INV_ZIGZAG].reshape(scan.shape[:-1] + (8, 8))


def level_bits(scan: np.ndarray) -> np.ndarray:
    """Bits of the run-level code for each (..., 64) zigzag block: ue(nnz), then ue(run) se(level)."""
    scan = np.asarray(scan, dtype=np.int64)
    mask = scan != 0
    idx = np.arange(64)
    last = np.maximum.accumulate(np.where(mask, idx, -1), axis=-1)
    prev = np.concatenate([np.full(scan.shape[:-1] + (1,), -1), last[..., :-1]], axis=-1)
    runs = idx - prev - 1
    per = np.where(mask, ue_bits(runs) + se_bits(scan), 0)
    return ue_bits(mask.sum(axis=-1)) + per.sum(axis=-1)


def write_levels(w: BitWriter, scan: np.ndarray):
    nz = np.flatnonzero(scan)
    w.write_ue(len(nz))
    prev = -1
    for i in nz:
        w.write_ue(int(i) - prev - 1)
        w.write_se(int(scan[i]))
        prev = int(i)


def read_levels(r: BitReader) -> np.ndarray:
    scan = np.zeros(64, dtype=np.int64)
    n = r.read_ue()
    if n > 64:
        raise BitstreamError(f"{n} nonzero coefficients in an 8x8 block")
    pos = -1
    for _ in range(n):
        pos += r.read_ue() + 1
        if pos > 63:
            raise BitstreamError("coefficient run past end of block")
        level = r.read_se()
        if level == 0:
            raise BitstreamError("zero level in run-level pair")
        if abs(level) > MAX_LEVEL:
            raise BitstreamError(f"coefficient level {level} out of range")
        scan[pos] = level
    return scan
