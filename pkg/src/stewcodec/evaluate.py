"""Rate-distortion bookkeeping: RD points, BD-rate, sequence reports and reference usage."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .frame import LOSSLESS_PSNR_REPORT, Frame, psnr_from_mse, sse
from .codec.minicodec import VIRTUAL

COMPONENTS = ("y", "u", "v")
CSV_FIELDS = ("qp", "rate_kbps", "psnr_y", "psnr_u", "psnr_v")


@dataclass(frozen=True)
class RDPoint:
    rate: float                 # kbps
    psnr_y: float
    psnr_u: float
    psnr_v: float
    qp: int | None = None

    def psnr(self, component: str) -> float:
        return getattr(self, f"psnr_{component}")

    @property
    def lossless(self) -> bool:
        return any(math.isinf(self.psnr(c)) for c in COMPONENTS)


@dataclass
class RDCurve:
    points: list[RDPoint]

    def __post_init__(self):
        self.points = sorted(self.points, key=lambda p: p.rate)

    def arrays(self, component: str) -> tuple[np.ndarray, np.ndarray]:
        """Validated (psnr ascending, log10 rate) arrays for one component."""
        if len(self.points) < 4:
            raise ValueError(f"BD-rate needs at least 4 points, got {len(self.points)}")
        rates = np.array([p.rate for p in self.points], dtype=np.float64)
        q = np.array([p.psnr(component) for p in self.points], dtype=np.float64)
        if np.any(rates <= 0):
            raise ValueError("rates must be positive")
        if not np.all(np.isfinite(q)):
            raise ValueError("lossless points cannot be used for curve fitting")
        if np.any(np.diff(rates) <= 0) or np.any(np.diff(q) <= 0):
            raise ValueError(f"{component}-PSNR curve is not strictly monotone in rate")
        return q, np.log10(rates)


@dataclass
class BDResult:
    bd_rate: dict[str, float]
    overlap: dict[str, tuple[float, float]] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"bd_rate_percent": self.bd_rate,
                "overlap_psnr": {k: list(v) for k, v in self.overlap.items()}}


def bd_rate_arrays(anchor_q: np.ndarray, anchor_logr: np.ndarray, test_q: np.ndarray,
                   test_logr: np.ndarray) -> tuple[float, tuple[float, float]]:
    """BD-rate (%) from ascending-PSNR arrays of log10 rate, via monotone cubic interpolation."""
    lo = max(anchor_q[0], test_q[0])
    hi = min(anchor_q[-1], test_q[-1])
    if not hi > lo:
        raise ValueError("PSNR ranges of the two curves do not overlap")
    ia = PchipInterpolator(anchor_q, anchor_logr).integrate(lo, hi)
    it = PchipInterpolator(test_q, test_logr).integrate(lo, hi)
    mean_diff = (it - ia) / (hi - lo)
    return (10.0 ** mean_diff - 1.0) * 100.0, (float(lo), float(hi))


def bd_rate(anchor: RDCurve, test: RDCurve, components: Sequence[str] = COMPONENTS) -> BDResult:
    result = BDResult({})
    for c in components:
        value, overlap = bd_rate_arrays(*anchor.arrays(c), *test.arrays(c))
        result.bd_rate[c] = float(value)
        result.overlap[c] = overlap
    return result


# ---------------------------------------------------------------------------
# sequence reports


def sequence_report(originals: Sequence[Frame], outputs: Sequence[Frame], total_bits: int,
                    fps: float | tuple[int, int], qp: int | None = None) -> tuple[RDPoint, list[dict]]:
    """Rate from total bits; PSNR per component from the mean of per-frame MSEs."""
    if len(originals) != len(outputs):
        raise ValueError(f"{len(originals)} originals vs {len(outputs)} outputs")
    if not originals:
        raise ValueError("empty sequence")
    if isinstance(fps, tuple):
        fps = fps[0] / fps[1]
    table = []
    mses = {c: [] for c in COMPONENTS}
    for i, (o, d) in enumerate(zip(originals, outputs)):
        row = {"frame": i}
        for c in COMPONENTS:
            m = sse(o, d, c) / getattr(o, c).size
            mses[c].append(m)
            row[f"mse_{c}"] = m
            row[f"psnr_{c}"] = psnr_from_mse(m)
        table.append(row)
    rate = total_bits * fps / len(originals) / 1000.0
    point = RDPoint(rate, *(psnr_from_mse(float(np.mean(mses[c]))) for c in COMPONENTS), qp=qp)
    return point, table


def report_value(x: float) -> float:
    return LOSSLESS_PSNR_REPORT if math.isinf(x) else round(x, 4)


def write_rd_csv(points: Iterable[RDPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for p in points:
        w.writerow([p.qp if p.qp is not None else "", f"{p.rate:.6f}",
                    *(f"{report_value(p.psnr(c)):.4f}" for c in COMPONENTS)])
    return buf.getvalue()


def read_rd_csv(text: str) -> RDCurve:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or any(f not in reader.fieldnames for f in CSV_FIELDS[1:]):
        raise ValueError(f"RD CSV needs columns {','.join(CSV_FIELDS)}")
    points = []
    for row in reader:
        try:
            points.append(RDPoint(float(row["rate_kbps"]), float(row["psnr_y"]),
                                  float(row["psnr_u"]), float(row["psnr_v"]),
                                  int(row["qp"]) if row.get("qp") else None))
        except ValueError as exc:
            raise ValueError(f"bad RD row {row}") from exc
    return RDCurve(points)


# ---------------------------------------------------------------------------
# reference usage


USAGE_CLASSES = ("both_virtual", "one_virtual", "none")


@dataclass
class RefUsageStats:
    per_frame: dict[int, dict[str, float] | None]
    counts: dict[str, int]

    @property
    def inter_blocks(self) -> int:
        return sum(self.counts.values())

    @property
    def fractions(self) -> dict[str, float] | None:
        n = self.inter_blocks
        return {k: v / n for k, v in self.counts.items()} if n else None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("poc",) + USAGE_CLASSES)
        for poc in sorted(self.per_frame):
            f = self.per_frame[poc]
            w.writerow([poc] + (["", "", ""] if f is None else [f"{f[k]:.6f}" for k in USAGE_CLASSES]))
        return buf.getvalue()


def classify_block(block: Mapping) -> str | None:
    """Usage class of one traced block, or None for intra blocks."""
    mode = block["mode"]
    refs = list(block.get("refs", ()))
    if mode == "INTRA_DC":
        return None
    if mode not in ("UNI0", "UNI1", "BI"):
        raise ValueError(f"unknown block mode {mode!r}")
    if len(refs) != (2 if mode == "BI" else 1):
        raise ValueError(f"{mode} block with {len(refs)} references")
    n_virtual = sum(r == VIRTUAL for r in refs)
    if mode == "BI" and n_virtual == 2:
        return "both_virtual"
    return "one_virtual" if n_virtual else "none"


def ref_usage(trace: Mapping[int, Sequence[Mapping]]) -> RefUsageStats:
    totals = {k: 0 for k in USAGE_CLASSES}
    per_frame: dict[int, dict[str, float] | None] = {}
    for poc, blocks in trace.items():
        counts = {k: 0 for k in USAGE_CLASSES}
        for b in blocks:
            cls = classify_block(b)
            if cls is not None:
                counts[cls] += 1
        n = sum(counts.values())
        per_frame[int(poc)] = {k: v / n for k, v in counts.items()} if n else None
        for k in USAGE_CLASSES:
            totals[k] += counts[k]
    return RefUsageStats(per_frame, totals)
