"""Success rates of every attack on both barcode families.

Writes a text table and a per-trial CSV. The default of 100 trials per row
takes several minutes; use ``--trials 20`` for a quick look.

    python3 scripts/run_attack_tables.py --out-dir results/
"""

import argparse
import time
from pathlib import Path

from anticopy import harness as h
from anticopy.io import atomic_write

ROWS = [
    ("2lqr", "none", {}),
    ("2lqr", "direct", {}),
    ("2lqr", "synthetic", {}),
    *[("2lqr", "ppd", {"lqr2.L_m": m}) for m in (100, 1000, 10000)],
    *[("2lqr", "upd", {"lqr2.L_m": m}) for m in (100, 1000, 10000)],
    ("lcac", "none", {}),
    ("lcac", "direct", {}),
    ("lcac", "synthetic", {}),
    ("lcac", "lcac-acp", {}),
    ("lcac", "lcac-scp", {}),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", type=Path, default=Path("results"))
    args = ap.parse_args()
    args.out_dir.mkdir(parents=True, exist_ok=True)

    reports = []
    for family, attack, extra in ROWS:
        label = f"{family}/{attack}" + "".join(f" L_m={v}" for v in extra.values())
        values = {"family": family, "attack": attack, "trials": args.trials, "seed": args.seed, "label": label, **extra}
        t0 = time.perf_counter()
        rep = h.run_experiment(h.ExperimentConfig.from_mapping(values))
        print(f"{label:<28} ps={rep.ps:.4f}  ({time.perf_counter() - t0:.0f}s)", flush=True)
        reports.append(rep)

    table = h.table_report(reports)
    csv_text = reports[0].to_csv() + "".join(r.to_csv().split("\n", 1)[1] for r in reports[1:])
    atomic_write(args.out_dir / "attacks.txt", table)
    atomic_write(args.out_dir / "attacks.csv", csv_text)
    print()
    print(table, end="")


if __name__ == "__main__":
    main()
