"""Monitor detection rates for PDBD and PVBD on both families.

For each family this runs ``--trials`` captures with hidden information (PD)
and without (PFA), calibrating on ``--m-s`` simulated passes. Expect roughly
five minutes for LCAC at the defaults.
"""

import argparse

import numpy as np

from anticopy import harness as h
from anticopy.detect import DetectorKind


def rates(family, hidden, args):
    runs = h.detection_trials(family, hidden, args.trials, args.m_s, args.eps, args.seed)
    out = {}
    for kind in DetectorKind:
        out[kind] = (
            float(np.mean([r[kind].decision for r in runs])),
            float(np.mean([r[kind].statistic for r in runs])),
        )
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--family", choices=("2lqr", "lcac"), action="append")
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--m-s", dest="m_s", type=int, default=200)
    ap.add_argument("--eps", type=float, default=0.01)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"{'family':<6}  {'detector':<8}  {'PD':>6}  {'PFA':>6}  {'mean stat H1':>14}  {'mean stat H0':>14}")
    for family in args.family or ("2lqr", "lcac"):
        h1 = rates(family, True, args)
        h0 = rates(family, False, args)
        for kind in DetectorKind:
            print(
                f"{family:<6}  {kind.value:<8}  {h1[kind][0]:6.2f}  {h0[kind][0]:6.2f}  "
                f"{h1[kind][1]:14.6g}  {h0[kind][1]:14.6g}",
                flush=True,
            )


if __name__ == "__main__":
    main()
