"""Scenario runner: iterations, metric tables, event logs and the summary."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

from .config import ScenarioConfig
from .invariants import check_all
from .metrics import MetricKind, MetricSample, mean, overhead_pct
from .world import World, run_iteration

log = logging.getLogger(__name__)

CSV_COLUMNS = ["kind", "iteration", "context", "value_ms"]


@dataclass
class ModeResult:
    baseline: bool
    metrics: list[MetricSample] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    violations: dict[str, list[str]] = field(default_factory=dict)
    last_world: World | None = None

    def values(self, kind: MetricKind) -> list[float]:
        return [s.value for s in self.metrics if s.kind is kind]

    def mean(self, kind: MetricKind) -> float:
        return mean(self.values(kind))


@dataclass
class RunReport:
    cfg: ScenarioConfig
    virtualized: ModeResult | None
    baseline: ModeResult | None
    summary: dict

    @property
    def ok(self) -> bool:
        return not any(self.summary["violations"].values())


def run_mode(cfg: ScenarioConfig, baseline: bool, iterations: int | None = None) -> ModeResult:
    res = ModeResult(baseline)
    for it in range(iterations or cfg.iterations):
        world = run_iteration(cfg, it, baseline)
        res.metrics.extend(world.metrics())
        for e in world.sim.log:
            res.events.append({**e, "iteration": it})
        for name, found in check_all(world).items():
            res.violations.setdefault(name, []).extend(f"iteration {it}: {v}" for v in found)
        res.last_world = world
    return res


def metrics_csv(samples) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for s in samples:
        w.writerow([s.kind.value, s.iteration, s.context, f"{s.value:.3f}"])
    return buf.getvalue()


def metrics_json(samples) -> str:
    rows = [{"kind": s.kind.value, "iteration": s.iteration, "context": s.context,
             "value_ms": round(s.value, 3), "at_us": s.at, "log_refs": list(s.refs)} for s in samples]
    return json.dumps({"time_base": "simulated", "samples": rows}, indent=1, sort_keys=True) + "\n"


def events_jsonl(events) -> str:
    return "".join(json.dumps(e, sort_keys=True, separators=(",", ":")) + "\n" for e in events)


def _finite(x):
    return None if x is None or (isinstance(x, float) and not math.isfinite(x)) else round(x, 4)


def summarize(cfg: ScenarioConfig, virt: ModeResult | None, base: ModeResult | None) -> dict:
    out: dict = {
        "scenario": cfg.name,
        "seed": cfg.seed,
        "iterations": cfg.iterations,
        "time_base": "simulated",
        "units": "milliseconds of simulated (virtual) time",
        "violations": {},
    }
    for label, res in (("virtualized", virt), ("baseline", base)):
        if res is None:
            continue
        block = {f"{k.value.lower()}_mean_ms (simulated)": _finite(res.mean(k)) for k in MetricKind}
        block.update({f"{k.value.lower()}_samples": len(res.values(k)) for k in MetricKind})
        out[label] = block
        for name, found in res.violations.items():
            out["violations"].setdefault(name, []).extend(f"{label} {v}" for v in found)
    if virt is not None:
        fnd, hpd = virt.mean(MetricKind.FND), virt.mean(MetricKind.HPD)
        if math.isfinite(fnd) and math.isfinite(hpd):
            out["overhead_pct_vs_hpd"] = _finite(overhead_pct(fnd, hpd))
        if base is not None:
            bfnd = base.mean(MetricKind.FND)
            if math.isfinite(fnd) and math.isfinite(bfnd):
                out["overhead_pct_vs_baseline"] = _finite(overhead_pct(fnd, bfnd))
    return out


def contour_doc(world: World | None) -> dict | None:
    if world is None:
        return None
    contours = world.contours()
    if not contours:
        return None
    at, app_id, est = contours[-1]
    return {"app": app_id, "at_us": at, "iteration": world.iteration, **est.to_json()}


def run_scenario(cfg: ScenarioConfig, out_dir=None, fmt: str = "csv", compare_baseline: bool = False,
                 iterations: int | None = None) -> RunReport:
    """Run every iteration (and optionally the baseline) and write the outputs.

    ``cfg.baseline_mode`` alone runs only the non-virtualized deployment;
    ``compare_baseline`` runs both on the same seed and reports the overhead.
    """
    if fmt not in ("csv", "json"):
        raise ValueError(f"format {fmt!r}")
    virt = None if cfg.baseline_mode else run_mode(cfg, False, iterations)
    base = run_mode(cfg, True, iterations) if (compare_baseline or cfg.baseline_mode) else None
    summary = summarize(cfg, virt, base)
    if iterations:
        summary["iterations"] = iterations
    report = RunReport(cfg, virt, base, summary)
    if out_dir is not None:
        write_outputs(report, Path(out_dir), fmt)
    return report


def write_outputs(report: RunReport, out: Path, fmt: str = "csv") -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name: str, text: str) -> None:
        p = out / name
        p.write_text(text)
        written.append(p)

    for suffix, res in (("", report.virtualized), ("-baseline", report.baseline)):
        if res is None:
            continue
        if fmt == "csv":
            put(f"metrics{suffix}.csv", metrics_csv(res.metrics))
        else:
            put(f"metrics{suffix}.json", metrics_json(res.metrics))
        put(f"events{suffix}.jsonl", events_jsonl(res.events))
    primary = report.virtualized or report.baseline
    doc = contour_doc(primary.last_world)
    if doc is not None:
        put("contour.json", json.dumps(doc, indent=1, sort_keys=True) + "\n")
        est = primary.last_world.contours()[-1][2]
        put("contour.csv", est.to_csv())
    put("summary.json", json.dumps(report.summary, indent=1, sort_keys=True) + "\n")
    return written
