"""Command line: ``vsn run | validate | contour``.

Exit codes: 0 all invariants passed, 1 invariant violation (or no contour
data), 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from ..firecontour import FcaError, FcaParams, RateObservation, compute_contour
from .config import ConfigInvalid, load_config
from .run import run_scenario

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG = 0, 1, 2


def contour_from_events(lines, iteration: int | None = None) -> dict:
    """Recompute the latest contour recorded in an event log."""
    rosters, fnds = {}, []
    for line in lines:
        if not line.strip():
            continue
        e = json.loads(line)
        if e.get("type") != "note":
            continue
        it = e.get("iteration", 0)
        if e["kind"] == "roster":
            rosters[it] = e
        elif e["kind"] == "fnd" and (iteration is None or it == iteration):
            fnds.append(e)
    if not fnds:
        raise FcaError("event log holds no completed notification rounds")
    last = fnds[-1]
    it = last.get("iteration", 0)
    roster = rosters.get(it)
    if roster is None:
        raise FcaError(f"no roster note for iteration {it}")
    positions = {n: tuple(v["position"]) for n, v in roster["nodes"].items()}
    params = FcaParams(roster["fca"]["lambda_max"], roster["fca"]["radius_m"])
    obs = [RateObservation.from_json(o) for o in last["observations"]]
    est = compute_contour(obs, positions, params)
    return {"iteration": it, "at_us": last["at"], "reporter": last["reporter"], **est.to_json()}


def _setup_logging() -> None:
    level = os.environ.get("VSN_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vsn", description="Simulated WSN virtualization scenarios")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run a scenario and write metrics, events and contours")
    r.add_argument("--scenario", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--iterations", type=int)
    r.add_argument("--baseline", action="store_true",
                   help="also run the non-virtualized deployment and report the overhead")
    r.add_argument("--out", default="out")
    r.add_argument("--format", choices=["csv", "json"], default="csv")

    v = sub.add_parser("validate", help="check a scenario file against the schema")
    v.add_argument("--scenario", required=True)

    c = sub.add_parser("contour", help="recompute the latest contour from an event log")
    c.add_argument("--in", dest="inp", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--iteration", type=int)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.cmd == "contour":
        try:
            with open(args.inp) as fh:
                doc = contour_from_events(fh, args.iteration)
        except (OSError, ValueError, KeyError, FcaError) as exc:
            print(f"contour: {exc}", file=sys.stderr)
            return EXIT_VIOLATION
        Path(args.out).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        return EXIT_OK

    try:
        cfg = load_config(args.scenario)
        if args.cmd == "run":
            overrides = {}
            if args.seed is not None:
                overrides["seed"] = args.seed
            if args.iterations is not None:
                overrides["iterations"] = args.iterations
            if overrides:
                cfg = cfg.with_overrides(**overrides)
    except ConfigInvalid as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.cmd == "validate":
        print(f"{args.scenario}: ok ({len(cfg.nodes)} nodes, {len(cfg.apps)} applications, "
              f"{sum(len(t.nodes) for t in cfg.tasks)} task placements)")
        return EXIT_OK

    report = run_scenario(cfg, args.out, args.format, compare_baseline=args.baseline)
    print(json.dumps(report.summary, indent=1, sort_keys=True))
    if not report.ok:
        bad = sum(len(v) for v in report.summary["violations"].values())
        print(f"{bad} invariant violation(s)", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
