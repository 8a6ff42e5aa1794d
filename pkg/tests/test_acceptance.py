"""End-to-end exit criteria.

Every simulation is run once per session and shared between criteria.
A one-line verdict per criterion is printed in the terminal summary.
"""

import gc
import math
import random
import statistics

import pytest

from twinsim.engine import run
from twinsim.metrics import response_time, savings
from twinsim.routing import (
    HEADER_EXCHANGE,
    TOPIC_EXCHANGE,
    EventCategory,
    PrefixMatcher,
    TopicMatcher,
    brute_force_match,
    decode_routing_key,
    derive_topology,
    encode_routing_key,
    event_type_of,
    make_binding,
)
from twinsim.runtime import AqiReading, classify_aqi, dew_point
from twinsim.scenario import PRESETS, STORE_SERVICE, ScenarioConfig, build_city, city_graph

from oracles import FROZEN_BINDINGS, aqi_ref, binding_count, category_ref, magnus_dew_point

pytestmark = pytest.mark.acceptance

SIZES = (1, 5, 10, 20)
SEEDS = (1, 2, 3)
EPS_TARGET = {1: 67, 5: 334, 10: 666, 20: 1301}
REFERENCE_BINDINGS = 57
WINDOW = 240.0


class Runs:
    """Lazily computed, memoized simulation results."""

    def __init__(self):
        self._cache = {}

    def get(self, n=1, seed=1, preset=None, **extra):
        key = (n, seed, preset, tuple(sorted(extra.items())))
        if key not in self._cache:
            cfg = ScenarioConfig(neighborhoods=n, seed=seed, **(PRESETS[preset] if preset else {}), **extra)
            result = run(cfg)
            result.store = None  # payloads are not needed past the run; keep memory flat
            gc.collect()
            self._cache[key] = result
        return self._cache[key]

    def all(self):
        return list(self._cache.values())


@pytest.fixture(scope="session")
def runs():
    return Runs()


def _detail(record_property, text):
    record_property("detail", text)


# -- 1 ---------------------------------------------------------------------


@pytest.mark.criterion(1, "sizing exactness")
def test_c01_sizing(record_property):
    want = {1: 593, 5: 2965, 10: 5930, 20: 11860}
    got = {n: len(build_city(n)[1]) for n in SIZES}
    _detail(record_property, " ".join(f"n={n}:{got[n]}" for n in SIZES))
    assert got == want


# -- 2 ---------------------------------------------------------------------


@pytest.mark.criterion(2, "topology invariance")
def test_c02_topology(record_property):
    plans = [derive_topology(city_graph(n)) for n in SIZES]
    p = plans[0]
    oracle = binding_count(city_graph(1).interfaces.values())
    _detail(record_property, f"exchanges={len(p.exchanges)} queues={len(p.queues)} bindings={len(p.bindings)} "
                             f"(reference {REFERENCE_BINDINGS}, delta {len(p.bindings) - REFERENCE_BINDINGS})")
    assert all(q == p for q in plans[1:])
    assert (len(p.exchanges), len(p.queues)) == (2, 13)
    assert len(p.bindings) == oracle == FROZEN_BINDINGS


# -- 3 ---------------------------------------------------------------------


@pytest.mark.criterion(3, "throughput medians")
def test_c03_throughput(runs, record_property):
    got = {}
    for n in SIZES:
        got[n] = statistics.fmean(statistics.median(runs.get(n, s).events_per_sec()) for s in SEEDS)
    _detail(record_property, " ".join(f"n={n}:{got[n]:.0f}/{EPS_TARGET[n]}" for n in SIZES))
    for n in SIZES:
        assert abs(got[n] - EPS_TARGET[n]) <= 0.25 * EPS_TARGET[n], n


# -- 4 ---------------------------------------------------------------------


@pytest.mark.criterion(4, "linear load scaling")
def test_c04_linear(runs, record_property):
    base = runs.get(1).total_generated()
    ratios = {n: runs.get(n).total_generated() / base for n in SIZES[1:]}
    _detail(record_property, " ".join(f"n={n}:{r:.3f}x" for n, r in ratios.items()))
    for n, r in ratios.items():
        assert abs(r / n - 1) <= 0.05, n


# -- 5 ---------------------------------------------------------------------


@pytest.mark.criterion(5, "provisioning savings")
def test_c05_savings(runs, record_property):
    out = {}
    for n in (1, 5):
        out[n] = savings(runs.get(n), runs.get(n, preset="over"))
    _detail(record_property, " ".join(f"n={n}: cpu {s['cpu']:.1f}% mem {s['memory']:.1f}%" for n, s in out.items()))
    for s in out.values():
        assert 60.0 <= s["cpu"] <= 90.0
        assert 60.0 <= s["memory"] <= 90.0


# -- 6 ---------------------------------------------------------------------


def _idle_violations(result, idle_ticks):
    """Ticks where a service sat idle for the idle window yet held more than its minimum."""
    bad = []
    for name, busy in result.busy_by_service.items():
        floor = result.policies[name][1]
        reps = result.replicas_by_service[name]
        quiet = 0
        for i, b in enumerate(busy):
            quiet = 0 if b else quiet + 1
            if quiet >= idle_ticks and reps[i] != floor:
                bad.append((name, i))
    return bad


@pytest.mark.criterion(6, "scale-to-zero and caps")
def test_c06_scale_to_zero(runs, record_property):
    cfg = ScenarioConfig()
    idle_ticks = math.ceil(cfg.idle_window / cfg.tick)
    tail = runs.get(1, tail=120.0)
    auto = [runs.get(n) for n in SIZES] + [tail]

    finals = {name: s[-1] for name, s in tail.replicas_by_service.items()}
    idle_bad = [v for r in auto for v in _idle_violations(r, idle_ticks)]
    over_cap = [(name, r.max_replicas[name]) for r in auto for name in r.policies
                if max(r.replicas_by_service[name]) > r.policies[name][2] or r.max_replicas[name] > r.policies[name][2]]
    under = set(runs.get(1, preset="under").resources["replicas"])
    over = set(runs.get(1, preset="over").resources["replicas"])
    zeroed = sum(1 for name, v in finals.items() if v == 0)
    _detail(record_property, f"{zeroed} services at 0 after tail, store at {finals[STORE_SERVICE]}; "
                             f"idle violations={len(idle_bad)} cap violations={len(over_cap)}; fixed totals {under}/{over}")
    assert all(v == (1 if name == STORE_SERVICE else 0) for name, v in finals.items())
    assert idle_bad == [] and over_cap == []
    assert (under, over) == ({13}, {160})


# -- 7 ---------------------------------------------------------------------


@pytest.mark.criterion(7, "cold-start signature")
def test_c07_cold_start(runs, record_property):
    first_low, steady_high, disordered = [], [], []
    worst_first, worst_steady = math.inf, 0.0
    for n in SIZES:
        r = runs.get(n)
        first = response_time(r, 0.0, WINDOW)
        steady = response_time(r, WINDOW, None)
        for name, p in first.items():
            worst_first = min(worst_first, p["p99"])
            if p["p99"] < 1.0:
                first_low.append((n, name, p["p99"]))
        for name, p in steady.items():
            worst_steady = max(worst_steady, p["p50"])
            if p["p50"] >= 0.1:
                steady_high.append((n, name, p["p50"]))
    for r in runs.all():
        for p in response_time(r).values():
            if not p["p50"] <= p["p90"] <= p["p95"] <= p["p99"]:
                disordered.append(p)
    _detail(record_property, f"min first-window p99={worst_first:.3f}s max steady p50={worst_steady * 1000:.1f}ms "
                             f"disordered={len(disordered)}")
    assert first_low == [] and steady_high == [] and disordered == []


# -- 8 ---------------------------------------------------------------------


@pytest.mark.criterion(8, "routing oracle equivalence")
def test_c08_routing(record_property):
    rng = random.Random(2024)
    plan = derive_topology(city_graph(1))
    ifaces = sorted(city_graph(1).interfaces) + ["unknown-iface", "ngsi-ld-city"]
    extra = [make_binding(TOPIC_EXCHANGE, "gateway", p, "routing-key")
             for p in ("ktwin.virtual.#", "ktwin.*.ngsi-ld-city-device.*", "#", "ktwin.command.*.*.*")]
    topic_bindings = [b for b in plan.bindings if b.source == TOPIC_EXCHANGE] + extra
    topic = TopicMatcher(topic_bindings)
    header = PrefixMatcher(b for b in plan.bindings if b.source == HEADER_EXCHANGE)
    checked = hits = 0
    for _ in range(10_000):
        cat = rng.choice(list(EventCategory))
        cmd = rng.choice(["updateairqualityindex", "updatevehiclecount", "poke"]) if cat is EventCategory.COMMAND else None
        key = encode_routing_key(cat, rng.choice(ifaces), f"i-{rng.randrange(1000)}", cmd)
        want = brute_force_match(topic_bindings, TOPIC_EXCHANGE, key)
        assert topic.match(key) == want, key
        etype = event_type_of(decode_routing_key(key))
        hwant = brute_force_match(plan.bindings, HEADER_EXCHANGE, etype)
        assert header.match(etype) == hwant, etype
        checked += 2
        hits += bool(want) + bool(hwant)
    _detail(record_property, f"{checked} lookups agree ({hits} with destinations)")


# -- 9 ---------------------------------------------------------------------


@pytest.mark.criterion(9, "conservation")
def test_c09_conservation(runs, record_property):
    results = runs.all() or [runs.get(1)]
    broken = [r.seed for r in results if not r.broker.reconciles()
              or r.store_stats["appended"] != r.store_stats["published_to_store"]]
    _detail(record_property, f"{len(results)} runs checked, {len(broken)} broken")
    assert broken == []


# -- 10 --------------------------------------------------------------------


@pytest.mark.criterion(10, "determinism")
def test_c10_determinism(runs, record_property):
    pairs = [(runs.get(1).summary_hash, run(ScenarioConfig(seed=1)).summary_hash),
             (runs.get(1, preset="under").summary_hash, run(ScenarioConfig(seed=1, **PRESETS["under"])).summary_hash)]
    _detail(record_property, " ".join(a[:12] for a, _ in pairs))
    assert all(a == b for a, b in pairs)


# -- 11 --------------------------------------------------------------------


@pytest.mark.criterion(11, "numerical handlers")
def test_c11_numerics(record_property):
    rng = random.Random(11)
    worst = 0.0
    for _ in range(1000):
        t, rh = rng.uniform(-40, 50), rng.uniform(1, 100)
        worst = max(worst, abs(dew_point(t, rh) - magnus_dew_point(t, rh)))
    assert worst < 1e-9

    for _ in range(2000):
        co2, co, so2 = rng.uniform(0, 6000), rng.uniform(0, 60), rng.uniform(0, 1100)
        res = classify_aqi(AqiReading(co2, co, so2))
        assert res.index == aqi_ref(co2, co, so2)
        assert res.category == category_ref(res.index)

    for _ in range(100):
        a = (rng.uniform(0, 5000), rng.uniform(0, 50), rng.uniform(0, 1000))
        b = tuple(x + rng.uniform(0, 200) * w for x, w in zip(a, (1, 0.01, 0.2)))
        assert classify_aqi(AqiReading(*a)).index <= classify_aqi(AqiReading(*b)).index
    _detail(record_property, f"max dew-point error {worst:.2e}; 2000 AQI oracle matches; 100 monotone pairs")


# -- 12 --------------------------------------------------------------------


@pytest.mark.criterion(12, "graph-size linearity")
def test_c12_graph_bytes(record_property):
    base = city_graph(1).total_subgraph_bytes()
    ratios = {n: city_graph(n).total_subgraph_bytes() / base for n in SIZES[1:]}
    _detail(record_property, " ".join(f"n={n}:{r:.2f}x" for n, r in ratios.items()))
    for n, r in ratios.items():
        assert abs(r / n - 1) <= 0.10, n

