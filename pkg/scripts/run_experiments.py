#!/usr/bin/env python3
"""Seed sweep: virtualized and baseline runs of a scenario, one CSV row per seed.

Columns hold the simulated-time means (ms) of HPD, OCD and FND, the
baseline FND, and both overhead percentages.  A final row averages them.
"""

import argparse
import csv
import math
import sys
from pathlib import Path

from vsn.harness.config import ConfigInvalid, load_config
from vsn.harness.metrics import MetricKind, mean, overhead_pct
from vsn.harness.run import run_mode

ROOT = Path(__file__).resolve().parents[1]
COLUMNS = ["seed", "hpd_ms", "ocd_ms", "fnd_ms", "baseline_fnd_ms", "overhead_vs_hpd_pct",
           "overhead_vs_baseline_pct", "violations"]


def sweep_row(cfg, seed: int) -> dict:
    cfg = cfg.with_overrides(seed=seed)
    virt, base = run_mode(cfg, False), run_mode(cfg, True)
    hpd, fnd = virt.mean(MetricKind.HPD), virt.mean(MetricKind.FND)
    bfnd = base.mean(MetricKind.FND)
    bad = sum(len(v) for res in (virt, base) for v in res.violations.values())
    return {
        "seed": seed, "hpd_ms": hpd, "ocd_ms": virt.mean(MetricKind.OCD), "fnd_ms": fnd,
        "baseline_fnd_ms": bfnd,
        "overhead_vs_hpd_pct": overhead_pct(fnd, hpd) if math.isfinite(fnd) else math.nan,
        "overhead_vs_baseline_pct": overhead_pct(fnd, bfnd) if math.isfinite(fnd + bfnd) else math.nan,
        "violations": bad,
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default=str(ROOT / "scenarios" / "fire_city.json"))
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--jitter-ms", type=float, help="override the link jitter bound")
    ap.add_argument("--out", default="sweep.csv")
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.scenario)
        if args.jitter_ms is not None:
            link = dict(cfg.raw.get("link", {}), jitter_max_ms=args.jitter_ms)
            cfg = cfg.with_overrides(link=link)
    except ConfigInvalid as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return 2

    rows = [sweep_row(cfg, s) for s in range(args.seeds)]
    avg = {"seed": "mean", "violations": sum(r["violations"] for r in rows)}
    for c in COLUMNS[1:-1]:
        avg[c] = mean(r[c] for r in rows)
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in [*rows, avg]:
            w.writerow({k: (f"{v:.3f}" if isinstance(v, float) else v) for k, v in r.items()})
    print(f"{args.seeds} seeds -> {args.out}; mean overhead vs baseline "
          f"{avg['overhead_vs_baseline_pct']:.3f}% (simulated time)")
    return 0 if avg["violations"] == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
