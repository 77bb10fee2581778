#!/usr/bin/env python3
"""Estimate flow on one synthetic clip and dump PGM visualizations.

Writes frame, u, v, and magnitude images for a few frame pairs so the
solver's output can be eyeballed without any training pipeline around it.

Usage:
    python3 scripts/flow_demo.py --out /tmp/flow_demo [--class-id 3] [--seed 0]
"""

import argparse
from pathlib import Path

import numpy as np

from twostream.dataset import ClipSpec, generate_clip
from twostream.flow import estimate_flow
from twostream.pgm import write_pgm


def to_gray(img: np.ndarray) -> np.ndarray:
    lo, hi = float(img.min()), float(img.max())
    span = hi - lo if hi > lo else 1.0
    return ((img - lo) / span * 255.0).round().astype(np.uint8)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--class-id", type=int, default=3,
                    help="dataset class to render (default: oscillating square)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--pairs", type=int, default=4,
                    help="number of consecutive frame pairs to process")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    clip = generate_clip(ClipSpec(class_id=args.class_id, seed=args.seed))

    for t in range(args.pairs):
        flow = estimate_flow(clip.frames[t], clip.frames[t + 1])
        mag = np.hypot(flow.u, flow.v)
        write_pgm(out / f"frame_{t:02d}.pgm", to_gray(clip.frames[t].mean(axis=2)))
        write_pgm(out / f"u_{t:02d}.pgm", to_gray(flow.u))
        write_pgm(out / f"v_{t:02d}.pgm", to_gray(flow.v))
        write_pgm(out / f"mag_{t:02d}.pgm", to_gray(mag))
        print(f"pair {t}->{t + 1}: |flow| mean {mag.mean():.3f} px, "
              f"max {mag.max():.3f} px")
    print(f"wrote {4 * args.pairs} images to {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
