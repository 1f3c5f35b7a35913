"""Write the synthetic test clips as Y4M files for use with the command line tool."""

import argparse
from pathlib import Path

from stewcodec.frame import write_y4m
from stewcodec.synth import natural, rotating, translation


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("outdir", type=Path)
    ap.add_argument("--frames", type=int, default=33)
    args = ap.parse_args()
    args.outdir.mkdir(parents=True, exist_ok=True)
    clips = {
        "pan_128x64.y4m": translation(num_frames=max(args.frames, 65)),
        "rotate_128x64.y4m": rotating(num_frames=args.frames),
        "natural_128x96.y4m": natural(num_frames=args.frames),
    }
    for name, frames in clips.items():
        path = args.outdir / name
        path.write_bytes(write_y4m(frames))
        print(f"{path}: {len(frames)} frames {frames[0].width}x{frames[0].height}")


if __name__ == "__main__":
    main()
