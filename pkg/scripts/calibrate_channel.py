"""Sweep a channel parameter and report SPC and DPC acceptance.

The calibrated presets were picked where legitimate single-pass copies pass
and direct double-pass copies fail with margin. Example:

    python3 scripts/calibrate_channel.py --family 2lqr --param noise_sigma \\
        --values 8 11 14 17 --trials 30
"""

import argparse

from anticopy import harness as h
from anticopy.channel import preset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--family", choices=("2lqr", "lcac"), required=True)
    ap.add_argument("--param", required=True, help="channel key, e.g. noise_sigma, contrast, mottle_sigma")
    ap.add_argument("--values", type=float, nargs="+", required=True)
    ap.add_argument("--trials", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    base = preset(args.family)
    print(f"{args.param:>12}  {'SPC accept':>10}  {'DPC accept':>10}  {'SPC score':>10}  {'DPC score':>10}")
    for v in args.values:
        chan = h.channel_from(base, {args.param: v})
        row = []
        for attack in ("none", "direct"):
            cfg = h.ExperimentConfig(args.family, attack, args.trials, args.seed, channel1=chan, channel2=chan)
            rep = h.run_experiment(cfg)
            scores = [r.score for r in rep.counted]
            row.append((rep.ps, sum(scores) / len(scores)))
        print(f"{v:12g}  {row[0][0]:10.2f}  {row[1][0]:10.2f}  {row[0][1]:10.4f}  {row[1][1]:10.4f}", flush=True)


if __name__ == "__main__":
    main()
