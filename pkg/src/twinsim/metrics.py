"""Run artifacts, reports and provisioning comparisons.

A run directory holds::

    summary.json        run-level counters, config echo, summary hash
    topology.json       the derived broker plan
    deadletter.log      one line per dead-lettered or failed envelope
    metrics/*.csv       raw series (see ``write_run``)
    store/              event store segments, when persisted

``report`` derives ``report/*.csv`` and ``report/summary.json`` from the
CSV files alone, so a report is a pure function of the run directory.
"""

from __future__ import annotations

import csv
import json
import math
import statistics
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .broker import write_deadletters
from .kernels import nearest_rank, step_integral
from .scenario import STORE_SERVICE

PERCENTILES = (50, 90, 95, 99)


class ReportError(RuntimeError):
    pass


# -- statistics -----------------------------------------------------------


def percentiles(values: Iterable[float], qs: Sequence[float] = PERCENTILES) -> dict[str, float]:
    """Nearest-rank percentiles, keyed ``p50`` etc."""
    ordered = sorted(values)
    return {f"p{q:g}": nearest_rank(ordered, q) for q in qs}


def response_time(result, start: float | None = None, end: float | None = None) -> dict[str, dict[str, float]]:
    """Per-interface latency percentiles for events published in ``[start, end)``.

    Only twin services are reported; the event store is not a twin.
    """
    out = {}
    for name in sorted(result.latency):
        if name == STORE_SERVICE:
            continue
        pub, lat = result.latency[name]
        if start is None and end is None:
            values = list(lat)
        else:
            lo = -math.inf if start is None else start
            hi = math.inf if end is None else end
            values = [l for p, l in zip(pub, lat) if lo <= p < hi]
        if not values:
            continue
        stats = percentiles(values)
        stats["count"] = len(values)
        out[name] = stats
    return out


def integrate(times: Sequence[float], values: Sequence[float], t_end: float) -> float:
    return step_integral(list(times), list(values), float(t_end))


def _savings(auto: float, fixed: float) -> float:
    if fixed <= 0:
        raise ReportError("reference run requested no resources")
    return 100.0 * (1.0 - auto / fixed)


def savings_from_series(auto: Mapping, fixed: Mapping, duration: float) -> dict[str, float]:
    return {
        "cpu": _savings(integrate(auto["time"], auto["requested_cpu"], duration),
                        integrate(fixed["time"], fixed["requested_cpu"], duration)),
        "memory": _savings(integrate(auto["time"], auto["requested_memory"], duration),
                           integrate(fixed["time"], fixed["requested_memory"], duration)),
    }


def savings(auto, fixed) -> dict[str, float]:
    """Percent saved by ``auto`` relative to ``fixed`` in requested CPU and memory."""
    if auto.duration != fixed.duration:
        raise ReportError(f"durations differ: {auto.duration} vs {fixed.duration}")
    return savings_from_series(auto.resources, fixed.resources, auto.duration)


def mean_replicas(result) -> float:
    res = result.resources
    if result.duration <= 0:
        return float(res["replicas"][0]) if res["replicas"] else 0.0
    return integrate(res["time"], res["replicas"], result.duration) / result.duration


# -- writing runs ---------------------------------------------------------


def _f(x: float) -> str:
    return repr(float(x))


def _write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    if hasattr(path, "write"):
        w = csv.writer(path, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_run(result, out: str | Path, plan=None, broker=None) -> Path:
    """Write the run directory layout for a finished :class:`RunResult`."""
    out = Path(out)
    metrics = out / "metrics"
    metrics.mkdir(parents=True, exist_ok=True)

    rows = []
    for type_, series in result.broker.events_per_sec.items():
        rows.extend((t, type_, c) for t, c in enumerate(series) if c)
    rows.sort()
    _write_csv(metrics / "events.csv", ("time", "type", "count"), rows)
    total = result.events_per_sec()
    _write_csv(metrics / "events_total.csv", ("time", "count"), enumerate(total))

    mrows = []
    for family, series in result.broker.mqtt_per_sec.items():
        mrows.extend((t, family, c) for t, c in enumerate(series) if c)
    mrows.sort()
    _write_csv(metrics / "mqtt.csv", ("time", "topic", "count"), mrows)

    res = result.resources
    services = sorted(result.replicas_by_service)
    _write_csv(
        metrics / "pods.csv",
        ("time", "total", *services),
        ((_f(t), res["replicas"][i], *(result.replicas_by_service[s][i] for s in services)) for i, t in enumerate(res["time"])),
    )
    _write_csv(
        metrics / "resources.csv",
        ("time", "replicas", "requested_cpu", "requested_memory", "used_cpu_fraction", "used_memory_fraction"),
        (
            (_f(t), res["replicas"][i], _f(res["requested_cpu"][i]), int(res["requested_memory"][i]),
             _f(res["used_cpu_fraction"][i]), _f(res["used_memory_fraction"][i]))
            for i, t in enumerate(res["time"])
        ),
    )
    _write_csv(
        metrics / "scaling.csv",
        ("time", "service", "ready", "cold_starting", "buffered", "desired"),
        ((_f(t), s, r, c, b, d) for t, s, r, c, b, d in result.scaling),
    )
    lrows = []
    for name in sorted(result.latency):
        pub, lat = result.latency[name]
        lrows.extend((name, _f(p), _f(l)) for p, l in zip(pub, lat))
    _write_csv(metrics / "latency.csv", ("interface", "publish_time", "latency"), lrows)

    summary = {
        "seed": result.seed,
        "duration": result.duration,
        "end_time": result.end_time,
        "topology": result.topology,
        "summary_hash": result.summary_hash,
        "config": result.config,
        "broker": result.broker.to_json(),
        "generated": result.generated,
        "device_received": result.device_received,
        "work": result.work,
        "store": result.store_stats,
        "policies": {k: list(v) for k, v in result.policies.items()},
        "max_replicas": result.max_replicas,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    if plan is not None:
        (out / "topology.json").write_text(json.dumps(plan.to_json(), indent=1) + "\n")
    if broker is not None:
        write_deadletters(broker, out / "deadletter.log")
    return out


# -- reading runs ---------------------------------------------------------


def _read_csv(path: Path) -> list[dict[str, str]]:
    if not path.exists():
        raise ReportError(f"missing {path}")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def load_summary(run_dir: str | Path) -> dict:
    path = Path(run_dir) / "summary.json"
    if not path.exists():
        raise ReportError(f"{run_dir} is not a run directory (no summary.json)")
    try:
        return json.loads(path.read_text())
    except ValueError as exc:
        raise ReportError(f"corrupt {path}: {exc}") from None


def load_resources(run_dir: str | Path) -> dict[str, list[float]]:
    rows = _read_csv(Path(run_dir) / "metrics" / "resources.csv")
    try:
        return {
            "time": [float(r["time"]) for r in rows],
            "replicas": [int(r["replicas"]) for r in rows],
            "requested_cpu": [float(r["requested_cpu"]) for r in rows],
            "requested_memory": [float(r["requested_memory"]) for r in rows],
            "used_cpu_fraction": [float(r["used_cpu_fraction"]) for r in rows],
            "used_memory_fraction": [float(r["used_memory_fraction"]) for r in rows],
        }
    except (KeyError, ValueError) as exc:
        raise ReportError(f"corrupt resources.csv: {exc}") from None


def _stats(values: Sequence[float]) -> dict[str, float]:
    if not values:
        return {"median": 0.0, "mean": 0.0, "max": 0.0}
    return {"median": float(statistics.median(values)), "mean": float(statistics.fmean(values)), "max": float(max(values))}


def report(run_dir: str | Path) -> dict:
    """Derive report CSVs and a JSON summary from a run directory."""
    run_dir = Path(run_dir)
    summary = load_summary(run_dir)
    duration = float(summary["duration"])
    out = run_dir / "report"
    out.mkdir(exist_ok=True)

    totals = [int(r["count"]) for r in _read_csv(run_dir / "metrics" / "events_total.csv")]
    res = load_resources(run_dir)

    by_iface: dict[str, list[float]] = {}
    for r in _read_csv(run_dir / "metrics" / "latency.csv"):
        by_iface.setdefault(r["interface"], []).append(float(r["latency"]))
    lat_rows = []
    latency = {}
    for name in sorted(by_iface):
        if name == STORE_SERVICE:
            continue
        p = percentiles(by_iface[name])
        latency[name] = {**p, "count": len(by_iface[name])}
        lat_rows.append((name, *(_f(p[f"p{q}"]) for q in PERCENTILES), len(by_iface[name])))
    _write_csv(out / "latency_percentiles.csv", ("interface", "p50", "p90", "p95", "p99", "count"), lat_rows)

    type_totals: dict[str, int] = {}
    for r in _read_csv(run_dir / "metrics" / "events.csv"):
        type_totals[r["type"]] = type_totals.get(r["type"], 0) + int(r["count"])
    _write_csv(out / "events_by_type.csv", ("type", "count"), sorted(type_totals.items()))

    req_cpu = integrate(res["time"], res["requested_cpu"], duration)
    req_mem = integrate(res["time"], res["requested_memory"], duration)
    doc = {
        "seed": summary["seed"],
        "duration": duration,
        "summary_hash": summary["summary_hash"],
        "events_per_sec": _stats(totals),
        "pods": _stats(res["replicas"]),
        "requested_cpu": _stats(res["requested_cpu"]),
        "requested_memory": _stats(res["requested_memory"]),
        "used_cpu_fraction": _stats(res["used_cpu_fraction"]),
        "used_memory_fraction": _stats(res["used_memory_fraction"]),
        "cpu_seconds_requested": req_cpu,
        "memory_byte_seconds_requested": req_mem,
        "latency": latency,
        "event_types": type_totals,
    }
    (out / "summary.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return doc


def compare(run_a: str | Path, run_b: str | Path) -> dict[str, float]:
    """Savings of run A relative to run B, from their resource series."""
    sa, sb = load_summary(run_a), load_summary(run_b)
    if float(sa["duration"]) != float(sb["duration"]):
        raise ReportError(f"durations differ: {sa['duration']} vs {sb['duration']}")
    return savings_from_series(load_resources(run_a), load_resources(run_b), float(sa["duration"]))


def export_history(run_dir: str | Path, interface: str, instance: str, path) -> int:
    """Write one twin's stored history as ``time,sequence,payload`` CSV.

    ``path`` may also be an open text stream.
    """
    from .store import EventStore

    store_dir = Path(run_dir) / "store"
    if not store_dir.exists():
        raise ReportError(f"{run_dir} has no persisted event store")
    store = EventStore(store_dir)
    try:
        events = store.history(interface, instance)
    finally:
        store.close()
    _write_csv(path if hasattr(path, "write") else Path(path), ("time", "sequence", "payload"),
               ((_f(e.time), e.sequence, e.payload.decode()) for e in events))
    return len(events)
