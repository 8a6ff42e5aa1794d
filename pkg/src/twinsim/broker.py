"""In-process broker executing a :class:`TopologyPlan`.

Two routing stages mirror the platform: a topic exchange matching MQTT
routing keys against ``*``/``#`` patterns, and a header exchange matching
the CloudEvent ``type`` attribute by segment prefix. The broker only
routes and counts; the simulation loop decides when queue consumers run.
"""

from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path

from .routing import (
    CLOUDEVENT_DISPATCHER,
    EVENT_STORE_DISPATCHER,
    HEADER_EXCHANGE,
    MQTT_DISPATCHER,
    TOPIC_EXCHANGE,
    EventCategory,
    PrefixMatcher,
    RoutingError,
    TopicMatcher,
    TopologyPlan,
    decode_routing_key,
    event_type_of,
    split_event_type,
)

MQTT = "mqtt"
CLOUDEVENT = "cloudevent"


class DeadLetter(Exception):
    """An envelope cannot be converted or routed and is set aside."""


class EventEnvelope:
    """One message. MQTT envelopes carry ``topic``; CloudEvents ``type``/``source``.

    ``time`` is the publish time at the broker edge and is kept across
    dispatcher conversions, so end-to-end latency can be measured.
    """

    __slots__ = ("id", "time", "kind", "topic", "type", "source", "payload")

    def __init__(self, id: int, time: float, kind: str, payload: bytes, topic: str = "", type: str = "", source: str = ""):
        self.id = id
        self.time = time
        self.kind = kind
        self.payload = payload
        self.topic = topic
        self.type = type
        self.source = source

    @classmethod
    def mqtt(cls, id: int, time: float, topic: str, payload: bytes) -> "EventEnvelope":
        return cls(id, time, MQTT, payload, topic=topic)

    @classmethod
    def cloudevent(cls, id: int, time: float, type: str, source: str, payload: bytes) -> "EventEnvelope":
        if not type or not source:
            raise ValueError("cloudevents need non-empty type and source")
        return cls(id, time, CLOUDEVENT, payload, type=type, source=source)

    def describe(self) -> str:
        what = self.topic if self.kind == MQTT else f"{self.type} source={self.source}"
        return f"#{self.id} t={self.time:.6f} {self.kind} {what}"

    def __repr__(self) -> str:
        return f"EventEnvelope({self.describe()})"


def run_mqtt_dispatcher(envelope: EventEnvelope, new_id: int) -> EventEnvelope:
    """Convert a device message into a CloudEvent with an interface-level type."""
    try:
        key = decode_routing_key(envelope.topic)
    except RoutingError as exc:
        raise DeadLetter(str(exc)) from None
    return EventEnvelope(new_id, envelope.time, CLOUDEVENT, envelope.payload, type=event_type_of(key), source=key.instance)


def run_cloudevent_dispatcher(envelope: EventEnvelope, new_id: int) -> EventEnvelope:
    """Convert a virtual CloudEvent back into the device's MQTT topic."""
    try:
        category, interface, _ = split_event_type(envelope.type)
    except RoutingError as exc:
        raise DeadLetter(str(exc)) from None
    if category is not EventCategory.VIRTUAL:
        raise DeadLetter(f"cloudevent dispatcher only converts virtual events, got {envelope.type!r}")
    if not envelope.source or "." in envelope.source:
        raise DeadLetter(f"invalid source {envelope.source!r}")
    topic = f"ktwin.virtual.{interface}.{envelope.source}"
    return EventEnvelope(new_id, envelope.time, MQTT, envelope.payload, topic=topic)


class Queue:
    __slots__ = ("name", "backlog", "enqueued", "delivered", "max_depth", "busy", "last_seq")

    def __init__(self, name: str):
        self.name = name
        self.backlog: deque = deque()
        self.enqueued = 0
        self.delivered = 0
        self.max_depth = 0
        self.busy = False
        self.last_seq = 0

    def put(self, envelope: EventEnvelope) -> None:
        self.enqueued += 1
        self.backlog.append((self.enqueued, envelope))
        if len(self.backlog) > self.max_depth:
            self.max_depth = len(self.backlog)

    def take(self) -> EventEnvelope:
        seq, envelope = self.backlog.popleft()
        if seq <= self.last_seq:
            raise AssertionError(f"queue {self.name} delivered out of order")
        self.last_seq = seq
        self.delivered += 1
        return envelope

    def __len__(self) -> int:
        return len(self.backlog)


@dataclass(frozen=True)
class BrokerMetrics:
    """Immutable snapshot of the broker counters."""

    events_per_sec: dict[str, tuple[int, ...]]
    mqtt_per_sec: dict[str, tuple[int, ...]]
    type_totals: dict[str, int]
    published: int
    published_mqtt: int
    published_cloudevent: int
    delivered: int
    dropped: int
    dead_lettered: int
    dispatcher_dead_lettered: int
    queues: dict[str, dict[str, int]]

    def reconciles(self) -> bool:
        return self.published == self.delivered + self.dropped + self.dead_lettered

    def total_per_sec(self) -> list[int]:
        """CloudEvents published to the header exchange, per virtual second."""
        width = max((len(v) for v in self.events_per_sec.values()), default=0)
        out = [0] * width
        for series in self.events_per_sec.values():
            for i, c in enumerate(series):
                out[i] += c
        return out

    def to_json(self) -> dict:
        return {
            "published": self.published,
            "published_mqtt": self.published_mqtt,
            "published_cloudevent": self.published_cloudevent,
            "delivered": self.delivered,
            "dropped": self.dropped,
            "dead_lettered": self.dead_lettered,
            "dispatcher_dead_lettered": self.dispatcher_dead_lettered,
            "type_totals": dict(sorted(self.type_totals.items())),
            "queues": {k: dict(v) for k, v in sorted(self.queues.items())},
        }


class Broker:
    """Routes envelopes through the plan's two exchanges into queues.

    ``publish_*`` return the queues that received the envelope so the
    caller can wake idle consumers.
    """

    def __init__(self, plan: TopologyPlan):
        plan.validate()
        self.plan = plan
        self.queues: dict[str, Queue] = {q.name: Queue(q.name) for q in plan.queues}
        self._topic = TopicMatcher(b for b in plan.bindings if b.source == TOPIC_EXCHANGE)
        self._header = PrefixMatcher(b for b in plan.bindings if b.source == HEADER_EXCHANGE)
        self._topic_cache: dict[str, tuple[tuple[Queue, ...], str]] = {}
        self._header_cache: dict[str, tuple[Queue, ...]] = {}
        self._converted: dict[str, tuple[str, str]] = {}
        self._next_id = 0
        self.published_mqtt = 0
        self.published_cloudevent = 0
        self.delivered = 0
        self.dropped = 0
        self.dead_lettered = 0
        self.dispatcher_dead_lettered = 0
        self.deadletters: list[str] = []
        self._per_sec: dict[str, list[int]] = {}
        self._mqtt_per_sec: dict[str, list[int]] = {}

    def new_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def subscribe(self, pattern: str, queue: str) -> Queue:
        """Attach a device-side subscription queue to the topic exchange."""
        q = self.queues.get(queue)
        if q is None:
            q = self.queues[queue] = Queue(queue)
        self._topic.add(pattern, queue)
        self._topic_cache.clear()
        return q

    @staticmethod
    def _bump(table: dict[str, list[int]], key: str, at: float) -> None:
        series = table.get(key)
        if series is None:
            series = table[key] = []
        i = int(at)
        if i >= len(series):
            series.extend([0] * (i + 1 - len(series)))
        series[i] += 1

    def dead_letter(self, envelope: EventEnvelope, reason: str, at: float) -> None:
        self.deadletters.append(f"{at:.6f}\t{reason}\t{envelope.describe()}")

    def publish_mqtt(self, topic: str, payload: bytes, at: float, envelope: EventEnvelope | None = None) -> tuple[Queue, ...]:
        if envelope is None:
            envelope = EventEnvelope(self.new_id(), at, MQTT, payload, topic=topic)
        self.published_mqtt += 1
        hit = self._topic_cache.get(topic)
        if hit is None:
            try:
                key = decode_routing_key(topic)
            except RoutingError as exc:
                self.dead_lettered += 1
                self.dead_letter(envelope, f"malformed topic: {exc}", at)
                return ()
            queues = tuple(self.queues[name] for name in sorted(self._topic.match(topic)))
            hit = self._topic_cache[topic] = (queues, f"ktwin.{key.category.value}.{key.interface}")
        queues, family = hit
        self._bump(self._mqtt_per_sec, family, at)
        if not queues:
            self.dropped += 1
            return ()
        self.delivered += 1
        for q in queues:
            q.put(envelope)
        return queues

    def publish_cloudevent(self, envelope: EventEnvelope, at: float) -> tuple[Queue, ...]:
        if envelope.kind != CLOUDEVENT:
            raise ValueError("publish_cloudevent needs a cloudevent envelope")
        self.published_cloudevent += 1
        t = envelope.type
        series = self._per_sec.get(t)
        i = int(at)
        if series is not None and i < len(series):
            series[i] += 1
        else:
            self._bump(self._per_sec, t, at)
        queues = self._header_cache.get(t)
        if queues is None:
            queues = tuple(self.queues[name] for name in sorted(self._header.match(t)))
            self._header_cache[t] = queues
        if not queues:
            self.dropped += 1
            return ()
        self.delivered += 1
        for q in queues:
            q.put(envelope)
        return queues

    def mqtt_dispatch(self, envelope: EventEnvelope, at: float) -> tuple[Queue, ...]:
        """Run the MQTT dispatcher on one envelope and republish the result."""
        attrs = self._converted.get(envelope.topic)
        if attrs is None:
            try:
                event = run_mqtt_dispatcher(envelope, 0)
            except DeadLetter as exc:
                self.dispatcher_dead_lettered += 1
                self.dead_letter(envelope, str(exc), at)
                return ()
            attrs = self._converted[envelope.topic] = (event.type, event.source)
        self._next_id += 1
        event = EventEnvelope(self._next_id, envelope.time, CLOUDEVENT, envelope.payload, type=attrs[0], source=attrs[1])
        return self.publish_cloudevent(event, at)

    def cloudevent_dispatch(self, envelope: EventEnvelope, at: float) -> tuple[Queue, ...]:
        try:
            message = run_cloudevent_dispatcher(envelope, self.new_id())
        except DeadLetter as exc:
            self.dispatcher_dead_lettered += 1
            self.dead_letter(envelope, str(exc), at)
            return ()
        return self.publish_mqtt(message.topic, message.payload, at, message)

    @property
    def published(self) -> int:
        return self.published_mqtt + self.published_cloudevent

    def metrics(self) -> BrokerMetrics:
        per = {k: tuple(v) for k, v in sorted(self._per_sec.items())}
        return BrokerMetrics(
            events_per_sec=per,
            mqtt_per_sec={k: tuple(v) for k, v in sorted(self._mqtt_per_sec.items())},
            type_totals={k: sum(v) for k, v in per.items()},
            published=self.published,
            published_mqtt=self.published_mqtt,
            published_cloudevent=self.published_cloudevent,
            delivered=self.delivered,
            dropped=self.dropped,
            dead_lettered=self.dead_lettered,
            dispatcher_dead_lettered=self.dispatcher_dead_lettered,
            queues={
                name: {"enqueued": q.enqueued, "delivered": q.delivered, "depth": len(q), "max_depth": q.max_depth}
                for name, q in self.queues.items()
            },
        )


def broker_metrics(broker: Broker) -> BrokerMetrics:
    return broker.metrics()


def write_events_csv(metrics: BrokerMetrics, path: str | Path) -> None:
    """``time,type,count`` rows, one per (second, type) with a non-zero count."""
    rows = []
    for type_, series in metrics.events_per_sec.items():
        rows.extend((t, type_, c) for t, c in enumerate(series) if c)
    rows.sort()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "type", "count"])
        w.writerows(rows)


def write_metrics_json(metrics: BrokerMetrics, path: str | Path) -> None:
    Path(path).write_text(json.dumps(metrics.to_json(), indent=1, sort_keys=True))


def write_deadletters(broker: Broker, path: str | Path) -> None:
    Path(path).write_text("".join(line + "\n" for line in broker.deadletters))


__all__ = [
    "Broker", "BrokerMetrics", "DeadLetter", "EventEnvelope", "Queue",
    "broker_metrics", "run_cloudevent_dispatcher", "run_mqtt_dispatcher",
    "write_deadletters", "write_events_csv", "write_metrics_json",
    "MQTT_DISPATCHER", "CLOUDEVENT_DISPATCHER", "EVENT_STORE_DISPATCHER",
]
