"""Per-storage phase breakdown of the two-function chain at 128 MB.

For each storage kind and mode, runs the chain and splits the receiving
function's timeline into scheduling, cold start, input wait and compute,
next to the model's prediction.

    python scripts/phase_breakdown.py --scale 0.5 --reps 3 --out results/breakdown.json
"""

import argparse
import json
import statistics
from pathlib import Path

from truffle.engine import StorageKind
from truffle.sim import Mode, chain_workflow, deploy


def phases_of(rec):
    p = rec.phases["b"]
    ready = p["data_ready"]
    cold_end = p["cold_start_end"]
    return {
        "scheduling": p["scheduled"],
        "cold_start": cold_end - p["scheduled"],
        # input time left on the critical path after the runtime came up
        "input_wait": max(0.0, ready - cold_end),
        "compute": p["compute_end"] - p["compute_start"],
        "end_to_end": rec.end_to_end_ms,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size-mb", type=float, default=128)
    ap.add_argument("--scale", type=float, default=0.5)
    ap.add_argument("--reps", type=int, default=3)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()

    rows = []
    for kind in StorageKind:
        cluster = deploy(chain_workflow(kind), nodes=2, scale=args.scale)
        for mode in Mode:
            recs = [cluster.invoke_workflow(args.size_mb, mode) for _ in range(args.reps)]
            recs = [r for r in recs if not r.failed]
            if not recs:
                print(f"{kind.value} {mode.value}: every repetition failed")
                continue
            per = [phases_of(r) for r in recs]
            row = {"storage": kind.value, "mode": mode.value, "predicted": recs[0].predicted_ms}
            row.update({k: statistics.fmean(p[k] for p in per) for k in per[0]})
            rows.append(row)

    cols = ["scheduling", "cold_start", "input_wait", "compute", "end_to_end", "predicted"]
    print(f"{'storage':<14}{'mode':<10}" + "".join(f"{c:>12}" for c in cols))
    for r in rows:
        print(f"{r['storage']:<14}{r['mode']:<10}" + "".join(f"{r[c]:>12.1f}" for c in cols))
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(rows, indent=2))


if __name__ == "__main__":
    main()
