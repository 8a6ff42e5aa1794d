"""Discrete-event simulation of the platform under the Smart City workload.

A single heap orders every event by ``(time, kind rank, sequence)``. Device
publishes enter the topic exchange; the three dispatchers drain their
queues at fixed rates; interface queues hand envelopes straight to the
service's autoscaler (the activator), and handler completions publish the
handler's emissions back into the header exchange.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import math
import random
from array import array
from dataclasses import dataclass, field
from typing import Any

from .autoscaler import (
    ScalerSettings,
    admit,
    complete,
    desired_replicas,
    drain,
    mark_ready,
    new_scaler,
    reconcile,
    resource_series,
    tick,
)
from .broker import CLOUDEVENT, Broker, BrokerMetrics, EventEnvelope
from .definitions import TwinGraph
from .routing import CLOUDEVENT_DISPATCHER, EVENT_STORE_DISPATCHER, MQTT_DISPATCHER, derive_topology, interface_queue
from .runtime import REGISTRY, HandlerError, HandlerParams, TwinEvent, encode_payload, handle
from .scenario import STORE_SERVICE, ScenarioConfig, city_graph, device_streams, stream_seed
from .store import EventStore

# Tie-break ranks for simultaneous events.
READY, COMPLETE, DISPATCH, TICK, PUBLISH = range(5)
KIND_NAMES = ("replica-ready", "handler-complete", "dispatcher-drain", "scaler-tick", "device-publish")

DEVICE_GATEWAY = "device-gateway"


class _Service:
    __slots__ = ("name", "interface", "scaler", "is_store", "mu", "sigma", "rng",
                 "arrived", "completed", "failed", "pub", "lat", "tick_arrivals")

    def __init__(self, name, interface, scaler, is_store, median, sigma, rng):
        self.name = name
        self.interface = interface
        self.scaler = scaler
        self.is_store = is_store
        self.mu = math.log(median)
        self.sigma = sigma
        self.rng = rng
        self.arrived = 0
        self.completed = 0
        self.failed = 0
        self.pub = array("d")
        self.lat = array("d")
        self.tick_arrivals = 0

    def service_time(self) -> float:
        if self.sigma == 0:
            return math.exp(self.mu)
        return self.rng.lognormvariate(self.mu, self.sigma)


@dataclass
class RunResult:
    config: dict
    seed: int
    duration: float
    end_time: float
    topology: str
    broker: BrokerMetrics
    generated: dict[str, int]
    device_received: int
    latency: dict[str, tuple[array, array]]
    work: dict[str, dict[str, int]]
    store_stats: dict[str, int]
    scaling: list[tuple]
    resources: dict[str, list]
    replicas_by_service: dict[str, list[int]]
    busy_by_service: dict[str, list[bool]]
    max_replicas: dict[str, int]
    policies: dict[str, tuple[int, int, int]]
    store: EventStore | None = field(default=None, repr=False, compare=False)
    summary_hash: str = ""

    def events_per_sec(self) -> list[int]:
        """Header-exchange CloudEvents per virtual second over ``[0, duration)``."""
        total = self.broker.total_per_sec()
        width = int(math.ceil(self.duration))
        total = total[:width] + [0] * max(0, width - len(total))
        return total

    def total_generated(self) -> int:
        return sum(self.generated.values())

    def digest_payload(self) -> dict:
        return {
            "config": self.config,
            "duration": self.duration,
            "end_time": repr(self.end_time),
            "topology": self.topology,
            "broker": self.broker.to_json(),
            "events_per_sec": {k: list(v) for k, v in self.broker.events_per_sec.items()},
            "mqtt_per_sec": {k: list(v) for k, v in self.broker.mqtt_per_sec.items()},
            "generated": self.generated,
            "device_received": self.device_received,
            "work": self.work,
            "store": self.store_stats,
            "scaling": [list(map(repr, row)) for row in self.scaling],
            "resources": {k: [repr(x) for x in v] for k, v in self.resources.items()},
        }

    def compute_hash(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.digest_payload(), sort_keys=True).encode())
        for name in sorted(self.latency):
            pub, lat = self.latency[name]
            h.update(name.encode())
            h.update(pub.tobytes())
            h.update(lat.tobytes())
        return h.hexdigest()


class Simulation:
    def __init__(self, config: ScenarioConfig, graph: TwinGraph | None = None, store_path=None, registry=REGISTRY):
        self.config = config
        self.graph = graph if graph is not None else city_graph(config.neighborhoods)
        self.plan = derive_topology(self.graph)
        self.broker = Broker(self.plan)
        self.gateway = self.broker.subscribe("ktwin.virtual.#", DEVICE_GATEWAY) if config.device_subscriptions else None
        self.store = EventStore(store_path, known_instances=frozenset(self.graph.instances))
        self.registry = registry
        self.params = HandlerParams(battery_threshold=config.battery_threshold)
        self.streams = device_streams(config, self.graph)
        self.generated = {s.interface: 0 for s in self.streams}
        self.device_received = 0

        settings = ScalerSettings(config.stable_window, config.tick, config.idle_window, tuple(config.cold_start))
        self.services: dict[str, _Service] = {}
        self.queue_service: dict[str, _Service] = {}
        self.policies: dict[str, tuple[int, int, int]] = {}
        seed = config.seed

        def make(name, interface, policy, cpu, memory, st, is_store):
            capacity = config.store_container_concurrency if is_store else config.container_concurrency
            scaler = new_scaler(
                name, policy, capacity=capacity, cpu=cpu, memory=memory,
                settings=settings, rng=random.Random(stream_seed(seed, "scale:" + name)),
            )
            svc = _Service(name, interface, scaler, is_store, st.median, st.sigma,
                           random.Random(stream_seed(seed, "svc:" + name)))
            self.services[name] = svc
            self.policies[name] = (policy.target, policy.min_replicas, policy.max_replicas)
            return svc

        for name in sorted(self.graph.interfaces):
            iface = self.graph.interfaces[name]
            if iface.service is None:
                continue
            st = config.handler_service_times.get(name, config.service_time)
            svc = make(name, name, config.policy_for(iface.service.autoscale), iface.service.cpu,
                       iface.service.memory, st, False)
            self.queue_service[interface_queue(name)] = svc
        self.store_service = make(STORE_SERVICE, None, config.store_policy(), 0.1, 64 * 1024**2,
                                  config.store_service_time, True)

        self.rates = {
            MQTT_DISPATCHER: 1.0 / config.dispatcher_rates[MQTT_DISPATCHER],
            CLOUDEVENT_DISPATCHER: 1.0 / config.dispatcher_rates[CLOUDEVENT_DISPATCHER],
            EVENT_STORE_DISPATCHER: 1.0 / config.dispatcher_rates[EVENT_STORE_DISPATCHER],
        }
        self.heap: list = []
        self.seq = 0
        self.live = 0
        self.now = 0.0
        self.snapshots: list[dict] = []
        self.scaling: list[tuple] = []
        self.replicas_by_service = {n: [] for n in self.services}
        self.busy_by_service = {n: [] for n in self.services}

    # -- scheduling ------------------------------------------------------

    def push(self, at: float, kind: int, a: Any = None, b: Any = None) -> None:
        self.seq += 1
        if kind != TICK:
            self.live += 1
        heapq.heappush(self.heap, (at, kind, self.seq, a, b))

    def wake(self, queues, now: float) -> None:
        for q in queues:
            svc = self.queue_service.get(q.name)
            if svc is not None:
                self.admit(svc, q.take(), now)
            elif q.name in self.rates:
                if not q.busy:
                    q.busy = True
                    self.push(now + self.rates[q.name], DISPATCH, q)
            else:
                q.take()
                self.device_received += 1

    def admit(self, svc: _Service, envelope: EventEnvelope, now: float) -> None:
        svc.arrived += 1
        svc.tick_arrivals += 1
        replica = admit(svc.scaler, envelope, now)
        if replica is not None:
            self.push(now + svc.service_time(), COMPLETE, svc, (replica, envelope))
        else:
            self.apply(svc, reconcile(svc.scaler, now, scale_down=False), now)

    def apply(self, svc: _Service, actions, now: float) -> None:
        for action, replica in actions:
            if action == "create":
                self.push(replica.ready_at, READY, svc, replica)

    def place(self, svc: _Service, now: float) -> None:
        for envelope, replica in drain(svc.scaler, now):
            self.push(now + svc.service_time(), COMPLETE, svc, (replica, envelope))

    # -- event handlers --------------------------------------------------

    def on_complete(self, svc: _Service, replica, envelope: EventEnvelope, now: float) -> None:
        complete(svc.scaler, replica, now)
        if svc.is_store:
            t = envelope.type
            start = t.index(".", 6) + 1
            end = t.find(".", start)
            iface = t[start:] if end < 0 else t[start:end]
            payload = envelope.payload
            if type(payload) is not bytes:
                payload = encode_payload(payload)
            self.store.append(iface, envelope.source, now, payload)
            svc.completed += 1
            svc.pub.append(envelope.time)
            svc.lat.append(now - envelope.time)
        else:
            try:
                event = TwinEvent.from_cloudevent(envelope.type, envelope.source, envelope.payload, envelope.time)
                emissions = handle(self.graph, svc.interface, event, now, self.store.latest, self.registry, self.params)
            except HandlerError as exc:
                svc.failed += 1
                self.broker.dead_letter(envelope, f"handler failed: {exc}", now)
            else:
                svc.completed += 1
                svc.pub.append(envelope.time)
                svc.lat.append(now - envelope.time)
                broker = self.broker
                for em in emissions:
                    ce = EventEnvelope(broker.new_id(), now, CLOUDEVENT, em.payload, type=em.type, source=em.instance)
                    self.wake(broker.publish_cloudevent(ce, now), now)
        self.place(svc, now)

    def on_dispatch(self, q, now: float) -> None:
        envelope = q.take()
        name = q.name
        if name == MQTT_DISPATCHER:
            self.wake(self.broker.mqtt_dispatch(envelope, now), now)
        elif name == CLOUDEVENT_DISPATCHER:
            self.wake(self.broker.cloudevent_dispatch(envelope, now), now)
        else:
            self.admit(self.store_service, envelope, now)
        if q.backlog:
            self.push(now + self.rates[name], DISPATCH, q)
        else:
            q.busy = False

    def on_tick(self, now: float) -> None:
        services = {}
        for name, svc in self.services.items():
            scaler = svc.scaler
            stats = tick(scaler, now)
            busy = svc.tick_arrivals > 0 or stats["avg_concurrency"] > 0 or scaler.concurrency > 0
            svc.tick_arrivals = 0
            want = desired_replicas(scaler, now)
            self.apply(svc, reconcile(scaler, now), now)
            self.place(svc, now)
            ready, cold = scaler.counts()
            self.scaling.append((now, name, ready, cold, len(scaler.buffer), want))
            self.replicas_by_service[name].append(ready + cold)
            self.busy_by_service[name].append(busy)
            services[name] = {
                "replicas": ready + cold, "ready": ready, "cpu": scaler.cpu, "memory": scaler.memory,
                "avg_in_flight": stats["avg_in_flight"], "capacity": scaler.capacity,
            }
        self.snapshots.append({"time": now, "services": services})

    def on_publish(self, stream, now: float) -> None:
        payload = stream.payload(now)
        self.generated[stream.interface] += 1
        self.wake(self.broker.publish_mqtt(stream.topic, payload, now), now)
        nxt = stream.next_time(now, self.window_length)
        if nxt < self.config.duration:
            self.push(nxt, PUBLISH, stream)

    # -- main loop -------------------------------------------------------

    def run(self) -> RunResult:
        cfg = self.config
        self.window_length = cfg.window_length
        for stream in self.streams:
            t = stream.first_time(cfg.startup_burst)
            if t < cfg.duration:
                self.push(t, PUBLISH, stream)
        self.push(0.0, TICK)
        hard_stop = cfg.duration + cfg.drain_limit
        heap = self.heap
        pop = heapq.heappop
        last = 0.0
        quiet_since = None
        while heap:
            now, kind, _, a, b = pop(heap)
            if now < last:
                raise AssertionError("event loop went back in time")
            last = self.now = now
            if kind == TICK:
                self.on_tick(now)
                if now >= cfg.duration and self.live == 0:
                    quiet_since = now if quiet_since is None else quiet_since
                    if now - quiet_since >= cfg.tail:
                        break
                else:
                    quiet_since = None
                if now >= hard_stop:
                    break
                self.push(now + cfg.tick, TICK)
                continue
            self.live -= 1
            if kind == PUBLISH:
                self.on_publish(a, now)
            elif kind == DISPATCH:
                self.on_dispatch(a, now)
            elif kind == COMPLETE:
                self.on_complete(a, b[0], b[1], now)
            else:
                if mark_ready(a.scaler, b, now):
                    self.place(a, now)
        return self.result()

    def result(self) -> RunResult:
        metrics = self.broker.metrics()
        work = {}
        for name, svc in self.services.items():
            unfinished = svc.arrived - svc.completed - svc.failed
            work[name] = {"arrived": svc.arrived, "completed": svc.completed, "failed": svc.failed, "unfinished": unfinished}
        backlog = sum(len(q) for q in self.broker.queues.values())
        store_q = self.broker.queues[EVENT_STORE_DISPATCHER]
        result = RunResult(
            config=self.config.to_dict(),
            seed=self.config.seed,
            duration=self.config.duration,
            end_time=self.now,
            topology=self.plan.summary(),
            broker=metrics,
            generated=dict(sorted(self.generated.items())),
            device_received=self.device_received,
            latency={n: (s.pub, s.lat) for n, s in self.services.items()},
            work=work,
            store_stats={
                "appended": self.store.count,
                "published_to_store": store_q.enqueued,
                "keys": len(self.store.keys()),
                "queued_at_end": backlog,
            },
            scaling=self.scaling,
            resources=resource_series(self.snapshots),
            replicas_by_service=self.replicas_by_service,
            busy_by_service=self.busy_by_service,
            max_replicas={n: s.scaler.max_seen for n, s in self.services.items()},
            policies=self.policies,
            store=self.store,
        )
        result.summary_hash = result.compute_hash()
        return result


def run(config: ScenarioConfig, *, graph: TwinGraph | None = None, store_path=None, registry=REGISTRY) -> RunResult:
    """Run one scenario to completion (deterministic for a fixed seed)."""
    sim = Simulation(config, graph, store_path, registry)
    try:
        return sim.run()
    finally:
        if store_path is not None:
            sim.store.close()
