#!/usr/bin/env python3
"""Compression-ratio sweep on a synthetic 32x27x27 clip.

Prints the derived LLM token budget, the length actually produced, and wall
time for each ratio. Budgets are exact; times depend on the machine.
"""
import argparse
import json

from hicom.harness import SWEEP_RATIOS, ratio_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--frames", type=int, default=32)
    ap.add_argument("--grid", type=int, nargs=2, default=(27, 27), metavar=("H", "W"))
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--heads", type=int, default=2)
    ap.add_argument("--global", dest="num_global", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", action="store_true", help="emit JSON lines instead of a table")
    args = ap.parse_args()

    rows = ratio_sweep(SWEEP_RATIOS, args.frames, tuple(args.grid), args.dim, args.heads, args.num_global, args.seed)
    if args.json:
        for r in rows:
            print(json.dumps({"ratio": list(r.ratio), "budget": r.budget, "tokens": r.tokens, "seconds": r.seconds}))
        return
    print(f"{'ratio':>10}  {'budget':>6}  {'tokens':>6}  {'seconds':>8}")
    for r in rows:
        print(f"{','.join(map(str, r.ratio)):>10}  {r.budget:>6}  {r.tokens:>6}  {r.seconds:>8.3f}")


if __name__ == "__main__":
    main()
