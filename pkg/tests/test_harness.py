import csv
import json

import pytest

from conftest import SCENARIO, run_doc
from differential import isolation_breaks, seeded_doc
from vsn.harness.cli import main
from vsn.harness.config import parse_config
from vsn.harness.invariants import check_all, lifecycle_stamps, overlay_leaks
from vsn.harness.metrics import MetricKind
from vsn.harness.run import CSV_COLUMNS, run_mode, run_scenario
from vsn.harness.world import FreshStateViolation, build_world, derived_seed

SEEDS = range(20)


def test_run_scenario_outputs(tmp_path, city_cfg):
    report = run_scenario(city_cfg, tmp_path, compare_baseline=True)
    assert report.ok
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["contour.csv", "contour.json", "events-baseline.jsonl", "events.jsonl",
                     "metrics-baseline.csv", "metrics.csv", "summary.json"]
    rows = list(csv.reader((tmp_path / "metrics.csv").open()))
    assert rows[0] == CSV_COLUMNS
    assert {r[0] for r in rows[1:]} == {"HPD", "OCD", "FND"}
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["time_base"] == "simulated"
    assert "hpd_mean_ms (simulated)" in summary["virtualized"]


def test_json_format(tmp_path, city_cfg):
    run_scenario(city_cfg.with_overrides(duration_s=40), tmp_path, fmt="json")
    doc = json.loads((tmp_path / "metrics.json").read_text())
    assert doc["time_base"] == "simulated" and doc["samples"][0]["log_refs"]
    with pytest.raises(ValueError):
        run_scenario(city_cfg, None, fmt="xml")


def test_baseline_mode_only(tmp_path, city_cfg):
    report = run_scenario(city_cfg.with_overrides(baseline_mode=True, duration_s=60), tmp_path)
    assert report.virtualized is None and report.baseline is not None
    assert (tmp_path / "metrics-baseline.csv").exists() and not (tmp_path / "metrics.csv").exists()
    assert not report.baseline.values(MetricKind.OCD)


def test_byte_identical_reruns(tmp_path, city_cfg):
    a, b = tmp_path / "a", tmp_path / "b"
    run_scenario(city_cfg, a)
    run_scenario(city_cfg, b)
    for name in ("metrics.csv", "events.jsonl", "summary.json", "contour.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_seed_changes_jittered_trace():
    a = run_doc(seeded_doc(1, 40, jitter_ms=2.0))
    b = run_doc(seeded_doc(2, 40, jitter_ms=2.0))
    assert a.sim.log != b.sim.log
    assert derived_seed(1, 0) != derived_seed(0, 1)


def test_fresh_state_across_50_iterations(city_cfg):
    res = run_mode(city_cfg.with_overrides(duration_s=2), False, iterations=50)
    ocd = [s for s in res.metrics if s.kind is MetricKind.OCD]
    assert len({s.iteration for s in ocd}) == 50 and len(ocd) == 100
    assert not any(res.violations.values())


def test_world_refuses_to_run_twice(city_cfg):
    w = build_world(city_cfg.with_overrides(duration_s=1))
    w.run()
    with pytest.raises(RuntimeError):
        w.run()
    w2 = build_world(city_cfg.with_overrides(duration_s=1))
    w2.sim.note("stale")
    with pytest.raises(FreshStateViolation):
        w2.run()


@pytest.mark.parametrize("seed", SEEDS)
def test_invariants_hold(seed):
    world = run_doc(seeded_doc(seed, 80, jitter_ms=1.5))
    assert check_all(world) == {k: [] for k in check_all(world)}
    assert len(world.ocd_samples()) == 2


def test_lifecycle_stamps_cover_every_member(city_world):
    stamps = lifecycle_stamps(city_world)
    for app in city_world.apps.values():
        for oid, g in app.rendezvous.groups.items():
            for m in g.members:
                st = stamps[(oid, m)]
                assert st["discovery"] < st["join"] < st["task_delivery"] < st["first_data"]


def test_leak_detector_sees_a_planted_leak(city_world):
    log = city_world.sim.log
    victim = next(e for e in log if e["type"] == "msg" and e.get("overlay"))
    planted = dict(victim, dst="sensor-01", i=len(log))
    log.append(planted)
    try:
        assert overlay_leaks(city_world)
    finally:
        log.pop()


@pytest.mark.parametrize("seed", SEEDS)
def test_first_hpd_sample_is_the_spike(seed):
    world = run_doc(seeded_doc(seed, 60))
    for ctx, series in world.hpd_series().items():
        assert series[0].value > max(s.value for s in series[1:50]), ctx


@pytest.mark.parametrize("seed", SEEDS)
def test_isolation_differential(seed):
    assert isolation_breaks(seed, 60) == {"add": [], "remove": [], "retarget": []}


def test_differential_is_sensitive():
    a = run_doc(seeded_doc(1, 60)).emissions()
    b = run_doc(seeded_doc(2, 60)).emissions()
    assert a[("sensor-05", "fire-detect")] != b[("sensor-05", "fire-detect")]


# -- CLI ---------------------------------------------------------------------------

def test_cli_run_and_contour(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--scenario", str(SCENARIO), "--out", str(out), "--baseline", "--seed", "7"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["overhead_pct_vs_baseline"] is not None
    dest = tmp_path / "c.json"
    assert main(["contour", "--in", str(out / "events.jsonl"), "--out", str(dest)]) == 0
    recomputed = json.loads(dest.read_text())
    shipped = json.loads((out / "contour.json").read_text())
    assert recomputed["origin"] == shipped["origin"] and recomputed["sectors"] == shipped["sectors"]


def test_cli_validate(capsys):
    assert main(["validate", "--scenario", str(SCENARIO)]) == 0
    assert "ok (9 nodes, 2 applications, 18 task placements)" in capsys.readouterr().out


def test_cli_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nodes": []}))
    assert main(["validate", "--scenario", str(bad)]) == 2
    assert main(["run", "--scenario", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["run", "--scenario", str(SCENARIO), "--iterations", "0", "--out", str(tmp_path)]) == 2
    assert "invalid scenario" in capsys.readouterr().err


def test_cli_contour_without_rounds(tmp_path):
    log = tmp_path / "e.jsonl"
    log.write_text(json.dumps({"type": "note", "kind": "roster", "at": 0, "i": 0}) + "\n")
    assert main(["contour", "--in", str(log), "--out", str(tmp_path / "c.json")]) == 1


def test_cli_violation_exit_code(tmp_path, monkeypatch):
    import vsn.harness.run as run_mod
    monkeypatch.setitem(run_mod.__dict__, "check_all", lambda w: {"planted": ["boom"]})
    cfg_path = tmp_path / "s.json"
    doc = json.loads(SCENARIO.read_text())
    doc["duration_s"] = 5
    cfg_path.write_text(json.dumps(doc))
    parse_config(doc)
    assert main(["run", "--scenario", str(cfg_path), "--out", str(tmp_path / "o")]) == 1


def test_heterogeneity_flags_missing_kind(city_world):
    from vsn.harness.invariants import heterogeneity
    app = city_world.apps["city-admin"]
    saved = list(app.batches)
    type_b = {"sensor-05", "sensor-06"}
    app.batches[:] = [(at, src, [r for r in recs if r.base_name in type_b]) for at, src, recs in saved]
    try:
        assert heterogeneity(city_world) == ["city-admin: no data from any TypeA node"]
    finally:
        app.batches[:] = saved
    assert heterogeneity(city_world) == []
