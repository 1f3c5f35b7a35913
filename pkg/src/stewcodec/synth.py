"""Deterministic test sequences: a panning texture, a rotating texture and a natural-image clip."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .frame import Frame


def texture(height: int, width: int, seed: int = 0, lo: int = 16, hi: int = 235) -> np.ndarray:
    """Multi-scale smoothed noise with a few hard edges, scaled to [lo, hi]."""
    rng = np.random.default_rng(seed)
    acc = np.zeros((height, width))
    for sigma, weight in ((8.0, 1.0), (3.0, 0.6), (1.2, 0.35)):
        acc += weight * ndimage.gaussian_filter(rng.normal(size=(height, width)), sigma, mode="wrap")
    for _ in range(max(1, height * width // 4000)):
        y, x = rng.integers(0, height), rng.integers(0, width)
        r = rng.integers(4, 14)
        yy, xx = np.ogrid[:height, :width]
        acc[(yy - y) ** 2 + (xx - x) ** 2 < r * r] += rng.choice([-1.0, 1.0]) * 1.5
    acc = (acc - acc.min()) / (acc.max() - acc.min())
    return np.round(lo + acc * (hi - lo)).astype(np.uint8)


def _frame(y, u, v, poc) -> Frame:
    return Frame(np.ascontiguousarray(y), np.ascontiguousarray(u), np.ascontiguousarray(v), poc)


def translation(num_frames: int = 65, width: int = 128, height: int = 64, speed: int = 8,
                seed: int = 0) -> list[Frame]:
    """A camera panning right over a static texture: content moves ``speed`` px left per frame."""
    if speed % 2:
        raise ValueError("speed must be even to keep chroma aligned")
    margin = 32
    cw = width + speed * max(0, num_frames - 1) + 2 * margin
    ch = height + 2 * margin
    ty = texture(ch, cw, seed)
    tu = texture(ch // 2, cw // 2, seed + 1, 64, 192)
    tv = texture(ch // 2, cw // 2, seed + 2, 64, 192)
    frames = []
    for k in range(num_frames):
        x0 = margin + k * speed
        frames.append(_frame(ty[margin:margin + height, x0:x0 + width],
                             tu[margin // 2:(margin + height) // 2, x0 // 2:(x0 + width) // 2],
                             tv[margin // 2:(margin + height) // 2, x0 // 2:(x0 + width) // 2], k))
    return frames


def _rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    return np.clip(np.round(ndimage.rotate(img.astype(np.float64), degrees, reshape=False,
                                           order=1, mode="reflect")), 0, 255).astype(np.uint8)


def rotating(num_frames: int = 33, width: int = 128, height: int = 64, degrees: float = 1.5,
             seed: int = 3) -> list[Frame]:
    """A texture rotating about the frame centre."""
    side = int(np.ceil(np.hypot(width, height))) + 8
    side += side % 2
    ty = texture(side, side, seed)
    tu = texture(side // 2, side // 2, seed + 1, 64, 192)
    tv = texture(side // 2, side // 2, seed + 2, 64, 192)
    oy, ox = (side - height) // 2, (side - width) // 2
    oy, ox = oy - oy % 2, ox - ox % 2
    frames = []
    for k in range(num_frames):
        a = degrees * k
        y = _rotate(ty, a)[oy:oy + height, ox:ox + width]
        u = _rotate(tu, a)[oy // 2:(oy + height) // 2, ox // 2:(ox + width) // 2]
        v = _rotate(tv, a)[oy // 2:(oy + height) // 2, ox // 2:(ox + width) // 2]
        frames.append(_frame(y, u, v, k))
    return frames


def rgb_to_yuv420(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """BT.601 limited-range conversion with 2x2 chroma averaging."""
    rgb = rgb.astype(np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 16 + (65.481 * r + 128.553 * g + 24.966 * b) / 255
    u = 128 + (-37.797 * r - 74.203 * g + 112.0 * b) / 255
    v = 128 + (112.0 * r - 93.786 * g - 18.214 * b) / 255
    h, w = y.shape

    def sub(c):
        return c.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))

    def q(a):
        return np.clip(np.round(a), 0, 255).astype(np.uint8)

    return q(y), q(sub(u)), q(sub(v))


def natural(num_frames: int = 33, width: int = 128, height: int = 96, seed: int = 7,
            image: str = "astronaut") -> list[Frame]:
    """Hand-held style camera path over a photograph, with mild sensor noise.

    The photograph comes from scikit-image's bundled sample data.
    """
    from skimage import data

    rgb = getattr(data, image)()
    h, w = rgb.shape[:2]
    y, u, v = rgb_to_yuv420(rgb[: h - h % 2, : w - w % 2])
    rng = np.random.default_rng(seed)
    k = np.arange(num_frames)
    # slow drift plus a wobble; offsets kept even so chroma stays aligned
    xs = 2 * np.round((60 + 1.6 * k + 6 * np.sin(k / 3.0)) / 2).astype(int)
    ys = 2 * np.round((120 + 0.8 * k + 4 * np.cos(k / 4.0)) / 2).astype(int)
    frames = []
    for i, (x0, y0) in enumerate(zip(xs, ys)):
        noise = rng.normal(0, 1.5, size=(height, width))
        fy = np.clip(np.round(y[y0:y0 + height, x0:x0 + width] + noise), 0, 255).astype(np.uint8)
        frames.append(_frame(fy, u[y0 // 2:(y0 + height) // 2, x0 // 2:(x0 + width) // 2],
                             v[y0 // 2:(y0 + height) // 2, x0 // 2:(x0 + width) // 2], i))
    return frames
