"""Added cold-start delay sweeps for a slow and a fast storage path.

The object-store run uses the slow profile, where fetching 100 MB takes
longer than the cold start; the KVS run uses the fast one. Prints both
curves with least-squares slopes and writes a CSV per sweep.

    python scripts/delay_sweep.py --scale 0.5 --out results/delay
"""

import argparse
import csv
import statistics
from pathlib import Path

from truffle.engine import StorageKind
from truffle.sim import ClusterProfiles, Mode, chain_workflow, deploy
from truffle.sim.backends import OBJECT_STORE_WAN

SWEEPS = {
    "object_store": (StorageKind.OBJECT_STORE, ClusterProfiles(object_store=OBJECT_STORE_WAN)),
    "kvs": (StorageKind.KVS, ClusterProfiles()),
}


def run_sweep(kind, profiles, size_mb, delays, scale, reps):
    cluster = deploy(chain_workflow(kind), nodes=2, scale=scale, profiles=profiles)
    stage = cluster.stage_phases(size_mb, "b", "a")
    rows = []
    for d in delays:
        row = {"added_delay_ms": d}
        for mode in Mode:
            recs = [cluster.invoke_workflow(size_mb, mode, added_delay_ms=d) for _ in range(reps)]
            row[mode.value] = statistics.fmean(r.end_to_end_ms for r in recs if not r.failed)
            row[f"{mode.value}_predicted"] = recs[0].predicted_ms
        rows.append(row)
    return stage, rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size-mb", type=float, default=100)
    ap.add_argument("--delays-s", type=float, nargs="+", default=[0, 2, 4, 6, 8, 10])
    ap.add_argument("--scale", type=float, default=0.5)
    ap.add_argument("--reps", type=int, default=1)
    ap.add_argument("--only", choices=sorted(SWEEPS), default=None)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()
    delays = [s * 1000 for s in args.delays_s]

    for name, (kind, profiles) in SWEEPS.items():
        if args.only and name != args.only:
            continue
        stage, rows = run_sweep(kind, profiles, args.size_mb, delays, args.scale, args.reps)
        print(f"\n{name}: cold start {stage.beta_ms:.0f} ms, fetch {stage.delta_ms:.0f} ms")
        print(f"{'delay_s':>8}{'baseline_s':>12}{'truffle_s':>11}{'saved_%':>9}")
        for r in rows:
            saved = 100 * (1 - r["truffle"] / r["baseline"])
            print(f"{r['added_delay_ms'] / 1000:>8g}{r['baseline'] / 1000:>12.3f}{r['truffle'] / 1000:>11.3f}{saved:>9.1f}")
        for mode in Mode:
            fit = statistics.linear_regression(delays, [r[mode.value] for r in rows])
            print(f"  {mode.value} slope {fit.slope:.3f}")
        # truffle only tracks the delay once the cold start outlasts the fetch
        above = [r for r in rows if stage.beta_ms + r["added_delay_ms"] > stage.delta_ms]
        if 1 < len(above) < len(rows):
            fit = statistics.linear_regression([r["added_delay_ms"] for r in above], [r["truffle"] for r in above])
            print(f"  truffle slope above the knee {fit.slope:.3f}")
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            with open(args.out / f"{name}.csv", "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=list(rows[0]))
                w.writeheader()
                w.writerows(rows)


if __name__ == "__main__":
    main()
