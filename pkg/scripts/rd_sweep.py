"""Compare tool configurations on one clip over a QP sweep.

Encodes the clip once per (configuration, QP), writes one RD CSV per
configuration, and prints BD-rates against the all-off anchor together with
the share of inter blocks that pick the virtual reference.
"""

import argparse
import json
import time
from pathlib import Path

from stewcodec.cli import rd_curve, thread_count
from stewcodec.codec.minicodec import CodecConfig
from stewcodec.evaluate import RDCurve, bd_rate, ref_usage, write_rd_csv
from stewcodec.frame import read_y4m_with_info
from stewcodec.pipeline import encode_sequence
from stewcodec.stew import Tools
from stewcodec.synth import translation

CONFIGS = {
    "off": Tools(False, False, False),
    "rfs": Tools(True, False, False),
    "pfe": Tools(False, True, False),
    "all": Tools(True, True, True),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--input", type=Path, help="Y4M clip; the synthetic 65-frame pan when omitted")
    ap.add_argument("--frames", type=int)
    ap.add_argument("--qps", type=int, nargs="+", default=[22, 27, 32, 37, 42])
    ap.add_argument("--configs", nargs="+", default=["off", "rfs"], choices=sorted(CONFIGS))
    ap.add_argument("--usage-qp", type=int, default=37)
    ap.add_argument("--outdir", type=Path, default=Path("rd_out"))
    args = ap.parse_args()

    if args.input:
        frames, info = read_y4m_with_info(args.input.read_bytes())
        fps = info.fps
    else:
        frames, fps = translation(), (30, 1)
    if args.frames:
        frames = frames[:args.frames]
    args.outdir.mkdir(parents=True, exist_ok=True)

    curves = {}
    for name in args.configs:
        t0 = time.perf_counter()
        points, hashes = rd_curve(frames, fps, args.qps, CONFIGS[name], workers=thread_count())
        curves[name] = RDCurve(points)
        (args.outdir / f"{name}.csv").write_text(write_rd_csv(points))
        print(f"{name}: {len(points)} points in {time.perf_counter() - t0:.1f}s")

    summary = {}
    if "off" in curves:
        for name, curve in curves.items():
            if name != "off":
                summary[name] = bd_rate(curves["off"], curve).to_json()
    for name in args.configs:
        if CONFIGS[name].rfs:
            r = encode_sequence(frames, CodecConfig(qp=args.usage_qp, fps=fps), CONFIGS[name])
            summary.setdefault(name, {})["ref_usage_qp%d" % args.usage_qp] = \
                ref_usage(r.block_trace).fractions
    print(json.dumps(summary, indent=1))
    (args.outdir / "summary.json").write_text(json.dumps(summary, indent=1))


if __name__ == "__main__":
    main()
