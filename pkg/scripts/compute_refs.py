"""Compute random-policy and expert reference returns for the built-in layouts."""
import argparse
import time

from hmdiffuser.maze import compute_reference_returns, load_layout, save_references
from hmdiffuser.rng import STREAMS, RngStream


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--layouts", nargs="+", default=["mini", "large", "giant", "xxlarge"])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--episodes", type=int, default=200)
    ap.add_argument("--out", default="refs.txt")
    args = ap.parse_args(argv)
    refs = {}
    for name in args.layouts:
        t0 = time.time()
        spec = load_layout(name)
        refs[name] = compute_reference_returns(spec, RngStream(args.seed, STREAMS["refs"]),
                                               args.episodes)
        print(f"{name}: random {refs[name].r_rand:.2f}, expert {refs[name].r_exp:.2f} "
              f"({time.time() - t0:.0f}s)", flush=True)
    save_references(args.out, refs)


if __name__ == "__main__":
    main()
