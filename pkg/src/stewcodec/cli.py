"""Command-line front end.

Subcommands: encode, decode, rd, bdrate, sched-trace, metrics, ref-usage.
Errors print ``error: ...`` to stderr and exit with status 2.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .codec.bits import BitstreamError
from .codec.minicodec import CodecConfig
from .evaluate import (
    RDCurve,
    bd_rate,
    read_rd_csv,
    ref_usage,
    report_value,
    sequence_report,
    write_rd_csv,
)
from .frame import Frame, Y4MError, psnr, read_y4m_with_info, write_y4m
from .pipeline import decode_sequence, encode_sequence, frame_report
from .stew import Tools, schedule, trace_json

THREADS_ENV = "STEWCODEC_THREADS"
DEFAULT_QPS = (22, 27, 32, 37, 42)


class CliError(Exception):
    pass


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise CliError(f"{THREADS_ENV} must be >= 1")
    return n


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass
class RunManifest:
    input: str
    outputs: dict[str, str]
    qps: list[int]
    frames: int
    tools: dict[str, bool]
    config_hash: str = ""
    output_hashes: dict[str, str] = field(default_factory=dict)

    def seal(self, config: dict) -> "RunManifest":
        blob = json.dumps({"config": config, "qps": self.qps, "frames": self.frames,
                           "tools": self.tools}, sort_keys=True).encode()
        self.config_hash = sha256(blob)
        return self


def _read_frames(path: str, limit: int | None = None) -> tuple[list[Frame], tuple[int, int]]:
    try:
        frames, info = read_y4m_with_info(Path(path).read_bytes())
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None
    if limit is not None:
        if limit < 1:
            raise CliError("--frames must be positive")
        frames = frames[:limit]
    return frames, info.fps


def _write(path: str, data: bytes | str):
    try:
        Path(path).write_bytes(data.encode() if isinstance(data, str) else data)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc.strerror}") from None


def _tools(args) -> Tools:
    return Tools(rfs=not args.no_rfs, pfe=not args.no_pfe, jise=not args.no_jise)


def _psnr_json(d: dict) -> dict:
    return {k: report_value(v) for k, v in d.items()}


def _encode_stats(frames, fps, result, config: CodecConfig) -> dict:
    point, _ = sequence_report(frames, result.outputs, result.total_bits, fps, config.qp)
    usage = ref_usage(result.block_trace)
    per_frame = []
    for row in frame_report(frames, result):
        row["recon_psnr"] = _psnr_json(row["recon_psnr"])
        row["output_psnr"] = _psnr_json(row["output_psnr"])
        row["ref_usage"] = usage.per_frame.get(row["poc"])
        per_frame.append(row)
    return {
        "bits": result.total_bits,
        "rate_kbps": point.rate,
        "psnr": {"y": report_value(point.psnr_y), "u": report_value(point.psnr_u),
                 "v": report_value(point.psnr_v)},
        "ref_usage": {"counts": usage.counts, "fractions": usage.fractions},
        "call_counts": result.call_counts,
        "frames": per_frame,
    }


def cmd_encode(args) -> int:
    frames, fps = _read_frames(args.input, args.frames)
    config = CodecConfig(qp=args.qp, intra_period=args.intra_period, fps=fps)
    tools = _tools(args)
    result = encode_sequence(frames, config, tools)
    _write(args.output, result.bitstream)
    stats = _encode_stats(frames, fps, result, config)
    outputs = {"bitstream": args.output}
    if args.trace:
        trace = {"actions": result.action_trace,
                 "blocks": {str(p): b for p, b in sorted(result.block_trace.items())},
                 "ref_usage": stats["ref_usage"]}
        _write(args.trace, json.dumps(trace, indent=1))
        outputs["trace"] = args.trace
    if args.ref_usage:
        _write(args.ref_usage, ref_usage(result.block_trace).to_csv())
        outputs["ref_usage"] = args.ref_usage
    manifest = RunManifest(args.input, outputs, [config.qp], len(frames), asdict(tools))
    manifest.seal(asdict(config))
    manifest.output_hashes = {
        "bitstream": sha256(result.bitstream),
        "outputs": sha256(b"".join(f.tobytes() for f in result.outputs)),
    }
    stats["manifest"] = asdict(manifest)
    text = json.dumps(stats, indent=1)
    if args.stats:
        _write(args.stats, text)
    else:
        print(text)
    return 0


def cmd_decode(args) -> int:
    try:
        data = Path(args.input).read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read {args.input}: {exc.strerror}") from None
    result = decode_sequence(data)
    _write(args.output, write_y4m(result.outputs))
    return 0


def _rd_point(job):
    frames, fps, qp, intra_period, tools = job
    config = CodecConfig(qp=qp, intra_period=intra_period, fps=fps)
    result = encode_sequence(frames, config, tools)
    point, _ = sequence_report(frames, result.outputs, result.total_bits, fps, qp)
    return point, sha256(result.bitstream)


def rd_curve(frames, fps, qps, tools: Tools, intra_period: int = 32, workers: int = 1):
    """Encode every QP (in parallel processes when ``workers`` > 1); returns points and hashes."""
    jobs = [(frames, fps, qp, intra_period, tools) for qp in qps]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(_rd_point, jobs))
    else:
        done = [_rd_point(j) for j in jobs]
    return [p for p, _ in done], [h for _, h in done]


def cmd_rd(args) -> int:
    frames, fps = _read_frames(args.input, args.frames)
    points, _ = rd_curve(frames, fps, args.qps, _tools(args), args.intra_period, thread_count())
    text = write_rd_csv(points)
    if args.output:
        _write(args.output, text)
    else:
        sys.stdout.write(text)
    return 0


def _read_curve(path: str) -> RDCurve:
    try:
        return read_rd_csv(Path(path).read_text())
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None


def cmd_bdrate(args) -> int:
    result = bd_rate(_read_curve(args.anchor), _read_curve(args.test), args.components)
    print(json.dumps(result.to_json(), indent=1))
    return 0


def cmd_sched_trace(args) -> int:
    if args.frames < 1:
        raise CliError("--frames must be positive")
    tools = _tools(args)
    print(json.dumps({"frames": args.frames, "tools": asdict(tools),
                      "actions": trace_json(schedule(args.frames, tools))}, indent=1))
    return 0


def cmd_metrics(args) -> int:
    a, _ = _read_frames(args.a)
    b, _ = _read_frames(args.b)
    if len(a) != len(b):
        raise CliError(f"frame counts differ: {len(a)} vs {len(b)}")
    if a and (a[0].width, a[0].height) != (b[0].width, b[0].height):
        raise CliError("frame dimensions differ")
    rows = [{"frame": i, **{c: report_value(psnr(x, y, c)) for c in ("y", "u", "v")}}
            for i, (x, y) in enumerate(zip(a, b))]
    point, _ = sequence_report(a, b, 1, 1)
    summary = {c: report_value(point.psnr(c)) for c in ("y", "u", "v")}
    print(json.dumps({"frames": rows, "mean": summary, "lossless": point.lossless}, indent=1))
    return 0


def cmd_ref_usage(args) -> int:
    try:
        trace = json.loads(Path(args.trace).read_text())
    except OSError as exc:
        raise CliError(f"cannot read {args.trace}: {exc.strerror}") from None
    blocks = trace.get("blocks") if isinstance(trace, dict) else None
    if not isinstance(blocks, dict):
        raise CliError("trace has no 'blocks' mapping")
    try:
        stats = ref_usage({int(k): v for k, v in blocks.items()})
    except (KeyError, TypeError) as exc:
        raise CliError(f"malformed trace: {exc}") from None
    sys.stdout.write(stats.to_csv())
    return 0


def _add_tool_flags(p: argparse.ArgumentParser):
    p.add_argument("--no-rfs", action="store_true", help="disable reference frame synthesis")
    p.add_argument("--no-pfe", action="store_true", help="disable post-filter enhancement")
    p.add_argument("--no-jise", action="store_true",
                   help="run joint actions as separate synthesis and enhancement passes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stewcodec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="encode a Y4M file")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--qp", type=int, default=32)
    p.add_argument("--frames", type=int)
    p.add_argument("--intra-period", type=int, default=32)
    p.add_argument("--trace", help="write action and block trace JSON")
    p.add_argument("--ref-usage", help="write per-frame reference usage CSV")
    p.add_argument("--stats", help="write stats JSON here instead of stdout")
    _add_tool_flags(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode a bitstream to Y4M")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("rd", help="encode at several QPs and write an RD CSV")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    p.add_argument("--qps", type=int, nargs="+", default=list(DEFAULT_QPS))
    p.add_argument("--frames", type=int)
    p.add_argument("--intra-period", type=int, default=32)
    _add_tool_flags(p)
    p.set_defaults(func=cmd_rd)

    p = sub.add_parser("bdrate", help="BD-rate of a test RD CSV against an anchor")
    p.add_argument("anchor")
    p.add_argument("test")
    p.add_argument("--components", nargs="+", default=["y", "u", "v"], choices=["y", "u", "v"])
    p.set_defaults(func=cmd_bdrate)

    p = sub.add_parser("sched-trace", help="print the action plan for N frames")
    p.add_argument("--frames", type=int, required=True)
    _add_tool_flags(p)
    p.set_defaults(func=cmd_sched_trace)

    p = sub.add_parser("metrics", help="per-frame PSNR between two Y4M files")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("ref-usage", help="per-frame reference usage CSV from an encode trace")
    p.add_argument("trace")
    p.set_defaults(func=cmd_ref_usage)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, BitstreamError, Y4MError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
