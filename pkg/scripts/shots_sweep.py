"""Final QFL loss versus measurement shots, averaged over seeds.

    python scripts/shots_sweep.py --seeds 10 --shots 1,10,40,100,inf --out runs/shots.csv
"""
import argparse
import csv
import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from qflnoma.config import parse_shots
from qflnoma.qfl import FedConfig, run_qfl


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--shots", default="1,10,40,100,inf")
    ap.add_argument("--rounds", type=int, default=30)
    ap.add_argument("--out", default="runs/shots_sweep.csv")
    args = ap.parse_args()

    base = FedConfig(rounds=args.rounds)
    rows = []
    for split in ("iid", "non_iid"):
        for h in parse_shots(args.shots):
            recs = [run_qfl(replace(base, shots=h, data_split=split, seed=s)) for s in range(args.seeds)]
            loss = np.array([r.global_loss[-1] for r in recs])
            acc = np.array([r.global_accuracy[-1] for r in recs])
            tag = "inf" if math.isinf(h) else int(h)
            rows.append([split, tag, args.seeds, f"{loss.mean():.6g}", f"{loss.std():.3g}", f"{acc.mean():.4g}"])
            print(*rows[-1], sep="\t", flush=True)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        fh.write("# schema=shots-sweep/v1\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "H", "seeds", "mean_final_loss", "std_final_loss", "mean_final_accuracy"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
