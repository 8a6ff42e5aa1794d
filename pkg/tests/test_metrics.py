import csv
import io
import json
from types import SimpleNamespace

import pytest
from hypothesis import given, strategies as st

from twinsim.engine import Simulation
from twinsim.metrics import (
    ReportError,
    compare,
    export_history,
    integrate,
    load_resources,
    mean_replicas,
    percentiles,
    report,
    savings,
    savings_from_series,
    write_run,
)
from twinsim.scenario import WEATHER, ScenarioConfig

from oracles import nearest_rank_ref


def _series(values, step=2.0):
    n = len(values)
    return {"time": [k * step for k in range(n)], "requested_cpu": list(values), "requested_memory": [v * 10 for v in values]}


def test_savings_trivial_cases():
    same = savings_from_series(_series([4, 4]), _series([4, 4]), 4.0)
    assert same == {"cpu": 0.0, "memory": 0.0}
    half = savings_from_series(_series([2, 2]), _series([4, 4]), 4.0)
    assert half == {"cpu": 50.0, "memory": 50.0}


def test_savings_reference_without_resources():
    with pytest.raises(ReportError):
        savings_from_series(_series([1]), _series([0]), 2.0)


def test_savings_rejects_mismatched_durations():
    a = SimpleNamespace(duration=10.0, resources=_series([1]))
    b = SimpleNamespace(duration=20.0, resources=_series([1]))
    with pytest.raises(ReportError):
        savings(a, b)


def test_integrate_step_function():
    # 1 on [0,2), 3 on [2,5): 2 + 9
    assert integrate([0.0, 2.0], [1.0, 3.0], 5.0) == 11.0


def test_mean_replicas_constant():
    r = SimpleNamespace(duration=10.0, resources={"time": [0.0, 2.0, 4.0], "replicas": [13, 13, 13]})
    assert mean_replicas(r) == 13.0


@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=200))
def test_percentiles_match_reference_and_order(values):
    p = percentiles(values)
    ordered = sorted(values)
    for q in (50, 90, 95, 99):
        assert p[f"p{q}"] == nearest_rank_ref(ordered, q)
    assert p["p50"] <= p["p90"] <= p["p95"] <= p["p99"]


@pytest.fixture(scope="module")
def run_dirs(tmp_path_factory):
    out = {}
    for name, cfg in (("auto", ScenarioConfig(duration=120.0)), ("fixed", ScenarioConfig(duration=120.0, mode="fixed"))):
        d = tmp_path_factory.mktemp(name)
        sim = Simulation(cfg, store_path=d / "store")
        result = sim.run()
        sim.store.close()
        write_run(result, d, plan=sim.plan, broker=sim.broker)
        out[name] = (d, result)
    return out


def test_run_dir_layout(run_dirs):
    d, _ = run_dirs["auto"]
    for rel in ("summary.json", "topology.json", "deadletter.log", "metrics/events.csv", "metrics/events_total.csv",
                "metrics/pods.csv", "metrics/resources.csv", "metrics/scaling.csv", "metrics/latency.csv"):
        assert (d / rel).exists(), rel


def test_report_is_reproducible(run_dirs):
    d, _ = run_dirs["auto"]
    first = report(d)
    snap = {p.name: p.read_bytes() for p in (d / "report").iterdir()}
    assert report(d) == first
    assert {p.name: p.read_bytes() for p in (d / "report").iterdir()} == snap


def test_report_recomputable_from_csv(run_dirs):
    d, result = run_dirs["auto"]
    doc = report(d)
    assert doc["events_per_sec"]["max"] == max(result.events_per_sec())
    assert doc["summary_hash"] == result.summary_hash
    assert sum(doc["event_types"].values()) == sum(sum(v) for v in result.broker.events_per_sec.values())


def test_compare_matches_in_memory(run_dirs):
    (da, ra), (db, rb) = run_dirs["auto"], run_dirs["fixed"]
    on_disk = compare(da, db)
    in_memory = savings(ra, rb)
    assert on_disk["cpu"] == pytest.approx(in_memory["cpu"], rel=1e-12)
    assert on_disk["cpu"] > 0
    assert load_resources(db)["replicas"][0] == 160


def test_report_missing_dir(tmp_path):
    with pytest.raises(ReportError):
        report(tmp_path)


def test_export_history(run_dirs):
    d, _ = run_dirs["auto"]
    buf = io.StringIO()
    n = export_history(d, WEATHER, "weather-01-001", buf)
    rows = list(csv.reader(io.StringIO(buf.getvalue())))
    assert rows[0] == ["time", "sequence", "payload"] and len(rows) == n + 1 and n > 0
    assert [int(r[1]) for r in rows[1:]] == list(range(1, n + 1))
    assert "temperature" in json.loads(rows[1][2])
