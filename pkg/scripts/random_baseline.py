"""Monte-Carlo score of random filter selection (L sources among P filters)."""

import argparse

from asobo.metrics import random_selection_f1


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenarios", type=int, default=10000)
    ap.add_argument("--filters", type=int, default=8)
    ap.add_argument("--sources", type=int, default=2)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    for mode in ("coin", "k"):
        pos, both = random_selection_f1(args.scenarios, args.filters, args.sources, args.seed, mode=mode)
        print(f"{mode:>4}: two-class F1 {both:.1f}  positive class P/R/F1 "
              f"{pos.precision:.1f}/{pos.recall:.1f}/{pos.f1:.1f}")


if __name__ == "__main__":
    main()
