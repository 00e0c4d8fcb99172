#!/usr/bin/env python3
"""Desk-scale latency check: time a full-mode run (2 x 1000 Adam steps) on a
64^3 single-channel phantom and report per-stage wall times."""

import argparse
import sys
import time

from segtta import phantom, pipeline


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dims", type=int, default=64)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--serial", action="store_true",
                    help="refine the two hypotheses sequentially")
    args = ap.parse_args(argv)

    spec = phantom.scenario_spec(
        "under_segmented_matched", seed=args.seed, dims=(args.dims,) * 3
    )
    case, gt, _ = phantom.generate(spec)
    cfg = pipeline.PipelineConfig(parallel_hypotheses=not args.serial)
    start = time.perf_counter()
    report = pipeline.run_case(case, cfg)
    elapsed = time.perf_counter() - start
    voxels = case.logits0.nvox
    print(f"{args.dims}^3 ({voxels} voxels), mode=full, "
          f"{'serial' if args.serial else 'parallel'} hypotheses")
    print(f"flagged={report.gate.flagged}  source={report.mask_source}")
    for stage, seconds in report.timings_s.items():
        print(f"  {stage:<12} {seconds:7.2f} s")
    print(f"wall total   {elapsed:7.2f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
