"""Run the full collect -> pte -> train -> eval -> report pipeline for one seed."""
import argparse
import sys
import time

from hmdiffuser import cli

STAGES = [
    ["collect"],
    ["train", "stitcher"],
    ["train", "invdyn"],
    ["train", "reward"],
    ["pte", "--strategy", "linear", "--rounds", "3", "--aggregate"],
    ["pte", "--strategy", "exponential", "--rounds", "3"],
    ["train", "planner"],
    ["train", "depth"],
    ["train", "flat"],
    ["eval", "--planner", "hmd"],
    ["eval", "--planner", "flat"],
    ["report"],
]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--config")
    ap.add_argument("--skip", action="append", default=[],
                    help="skip stages whose command line starts with this text")
    args = ap.parse_args(argv)
    common = ["--out", args.out, "--seed", str(args.seed)]
    if args.config:
        common += ["--config", args.config]
    for stage in STAGES:
        name = " ".join(stage)
        if any(name.startswith(s) for s in args.skip):
            continue
        t0 = time.time()
        code = cli.main(stage[:1] + common + stage[1:])
        print(f"== {name}: {time.time() - t0:.0f}s", flush=True)
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
