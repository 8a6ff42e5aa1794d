"""Routing identifiers and broker topology derivation.

Routing keys look like ``ktwin.<category>.<interface>.<instance>`` with an
extra ``.<command>`` segment for commands. CloudEvent types drop the
instance: routing inside the broker happens per interface.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import Iterable

from .definitions import GraphError, TwinGraph, TwinInterface
from .kernels import prefix_match, topic_match

PREFIX = "ktwin"

TOPIC_EXCHANGE = "mqtt"
HEADER_EXCHANGE = "broker"

MQTT_DISPATCHER = "mqtt-dispatcher"
CLOUDEVENT_DISPATCHER = "cloudevent-dispatcher"
EVENT_STORE_DISPATCHER = "event-store-dispatcher"
DISPATCHER_QUEUES = (MQTT_DISPATCHER, CLOUDEVENT_DISPATCHER, EVENT_STORE_DISPATCHER)


class RoutingError(ValueError):
    pass


class EventCategory(enum.Enum):
    REAL = "real"
    VIRTUAL = "virtual"
    COMMAND = "command"
    STORE = "store"

    @classmethod
    def parse(cls, token: str) -> "EventCategory":
        try:
            return cls(token)
        except ValueError:
            raise RoutingError(f"unknown event category {token!r}") from None


@dataclass(frozen=True)
class RoutingKey:
    category: EventCategory
    interface: str
    instance: str
    command: str | None = None

    def __post_init__(self):
        for seg in (self.interface, self.instance):
            _check_segment(seg)
        if self.category is EventCategory.COMMAND:
            if self.command is None:
                raise RoutingError("command keys need a command name")
            _check_segment(self.command)
        elif self.command is not None:
            raise RoutingError("only command keys carry a command name")

    def __str__(self) -> str:
        return encode_routing_key(self.category, self.interface, self.instance, self.command)


def _check_segment(seg: str) -> None:
    if not isinstance(seg, str) or not seg or "." in seg or seg in ("*", "#"):
        raise RoutingError(f"invalid routing segment {seg!r}")


def encode_routing_key(category: EventCategory, interface: str, instance: str, command: str | None = None) -> str:
    category = EventCategory(category)
    _check_segment(interface)
    _check_segment(instance)
    if category is EventCategory.COMMAND:
        if command is None:
            raise RoutingError("command keys need a command name")
        _check_segment(command)
        return f"{PREFIX}.command.{interface}.{instance}.{command}"
    if command is not None:
        raise RoutingError("only command keys carry a command name")
    return f"{PREFIX}.{category.value}.{interface}.{instance}"


def decode_routing_key(key: str) -> RoutingKey:
    parts = key.split(".")
    if len(parts) < 2 or parts[0] != PREFIX:
        raise RoutingError(f"routing key {key!r} lacks the {PREFIX!r} prefix")
    category = EventCategory.parse(parts[1])
    expected = 5 if category is EventCategory.COMMAND else 4
    if len(parts) != expected:
        raise RoutingError(f"routing key {key!r} needs {expected} segments for {category.value} events")
    return RoutingKey(category, parts[2], parts[3], parts[4] if expected == 5 else None)


def event_type_of(key: RoutingKey) -> str:
    if key.category is EventCategory.COMMAND:
        return f"{PREFIX}.command.{key.interface}.{key.command}"
    return f"{PREFIX}.{key.category.value}.{key.interface}"


def event_type(category: EventCategory, interface: str, command: str | None = None) -> str:
    if category is EventCategory.COMMAND:
        return f"{PREFIX}.command.{interface}.{command}"
    return f"{PREFIX}.{category.value}.{interface}"


def split_event_type(type_: str) -> tuple[EventCategory, str, str | None]:
    """Inverse of :func:`event_type`."""
    parts = type_.split(".")
    if len(parts) < 3 or parts[0] != PREFIX:
        raise RoutingError(f"event type {type_!r} lacks the {PREFIX!r} prefix")
    category = EventCategory.parse(parts[1])
    expected = 4 if category is EventCategory.COMMAND else 3
    if len(parts) != expected:
        raise RoutingError(f"event type {type_!r} has the wrong number of segments")
    return category, parts[2], parts[3] if expected == 4 else None


# -- topology -------------------------------------------------------------


@dataclass(frozen=True)
class Exchange:
    name: str
    kind: str  # "topic" | "header"


@dataclass(frozen=True)
class QueueSpec:
    name: str
    owner: str


@dataclass(frozen=True)
class Binding:
    name: str
    source: str
    destination: str
    rule: str
    rule_kind: str  # "routing-key" | "header-prefix"

    def matches(self, value: str) -> bool:
        if self.rule_kind == "routing-key":
            return topic_match(self.rule, value)
        return prefix_match(self.rule, value)


def make_binding(source: str, destination: str, rule: str, rule_kind: str) -> Binding:
    digest = hashlib.sha1(f"{source}|{rule_kind}|{rule}".encode()).hexdigest()[:10]
    return Binding(f"{destination}--{digest}", source, destination, rule, rule_kind)


@dataclass(frozen=True)
class TopologyPlan:
    exchanges: tuple[Exchange, ...]
    queues: tuple[QueueSpec, ...]
    bindings: tuple[Binding, ...]

    def summary(self) -> str:
        return f"exchanges={len(self.exchanges)} queues={len(self.queues)} bindings={len(self.bindings)}"

    def to_json(self) -> dict:
        return {
            "exchanges": [{"name": e.name, "kind": e.kind} for e in self.exchanges],
            "queues": [{"name": q.name, "owner": q.owner} for q in self.queues],
            "bindings": [
                {"name": b.name, "source": b.source, "destination": b.destination, "rule": b.rule, "ruleKind": b.rule_kind}
                for b in self.bindings
            ],
        }

    def validate(self) -> None:
        queues = [q.name for q in self.queues]
        if len(queues) != len(set(queues)):
            raise RoutingError("queue names must be unique")
        exchanges = {e.name: e.kind for e in self.exchanges}
        if sorted(exchanges.values()) != ["header", "topic"]:
            raise RoutingError("plan needs exactly one topic and one header exchange")
        for b in self.bindings:
            if b.source not in exchanges or b.destination not in queues:
                raise RoutingError(f"binding {b.name} references unknown resources")


def interface_queue(interface: str) -> str:
    return interface


def derive_topology(graph: TwinGraph | Iterable[TwinInterface]) -> TopologyPlan:
    """Derive exchanges, queues and bindings from interface definitions.

    Only interfaces matter, so plans are identical for any instance count.
    """
    if isinstance(graph, TwinGraph):
        interfaces = list(graph.interfaces.values())
    else:
        interfaces = list(graph)
    interfaces.sort(key=lambda i: i.name)

    exchanges = (Exchange(TOPIC_EXCHANGE, "topic"), Exchange(HEADER_EXCHANGE, "header"))
    queues = [QueueSpec(q, q) for q in DISPATCHER_QUEUES]
    bindings: list[Binding] = []

    def topic(rule: str, dest: str):
        bindings.append(make_binding(TOPIC_EXCHANGE, dest, rule, "routing-key"))

    def header(rule: str, dest: str):
        bindings.append(make_binding(HEADER_EXCHANGE, dest, rule, "header-prefix"))

    for iface in interfaces:
        name = iface.name
        if iface.service is not None:
            qname = interface_queue(name)
            if qname in DISPATCHER_QUEUES:
                raise RoutingError(f"interface name {name!r} collides with a dispatcher queue")
            queues.append(QueueSpec(qname, name))
            topic(f"{PREFIX}.real.{name}.*", MQTT_DISPATCHER)
            if iface.routing.persist_real_directly:
                header(f"{PREFIX}.real.{name}", EVENT_STORE_DISPATCHER)
            else:
                header(f"{PREFIX}.real.{name}", qname)
            header(f"{PREFIX}.virtual.{name}", CLOUDEVENT_DISPATCHER)
            if iface.routing.persist_store_events:
                header(f"{PREFIX}.store.{name}", EVENT_STORE_DISPATCHER)
            for cmd in iface.commands:
                header(f"{PREFIX}.command.{name}.{cmd.name}", qname)
        else:
            if iface.commands:
                raise GraphError(f"interface {name!r} declares commands but has no service to execute them")
            if iface.routing.persist_real_directly:
                topic(f"{PREFIX}.real.{name}.*", MQTT_DISPATCHER)
                header(f"{PREFIX}.real.{name}", EVENT_STORE_DISPATCHER)

    plan = TopologyPlan(exchanges, tuple(queues), tuple(bindings))
    plan.validate()
    return plan


# -- matchers -------------------------------------------------------------


@dataclass
class _TrieNode:
    children: dict = field(default_factory=dict)
    destinations: set = field(default_factory=set)


class TopicMatcher:
    """Segment trie for ``*``/``#`` routing-key bindings."""

    def __init__(self, bindings: Iterable[Binding] = ()):
        self._root = _TrieNode()
        for b in bindings:
            self.add(b.rule, b.destination)

    def add(self, pattern: str, destination: str) -> None:
        node = self._root
        for seg in pattern.split("."):
            node = node.children.setdefault(seg, _TrieNode())
        node.destinations.add(destination)

    def match(self, key: str) -> set[str]:
        words = key.split(".")
        out: set[str] = set()
        self._walk(self._root, words, 0, out)
        return out

    def _walk(self, node: _TrieNode, words: list[str], j: int, out: set[str]) -> None:
        hash_node = node.children.get("#")
        if hash_node is not None:
            for k in range(j, len(words) + 1):
                self._walk(hash_node, words, k, out)
        if j == len(words):
            out.update(node.destinations)
            return
        child = node.children.get(words[j])
        if child is not None:
            self._walk(child, words, j + 1, out)
        star = node.children.get("*")
        if star is not None:
            self._walk(star, words, j + 1, out)


class PrefixMatcher:
    """Segment-prefix index for header bindings on the ``type`` attribute."""

    def __init__(self, bindings: Iterable[Binding] = ()):
        self._rules: dict[str, set[str]] = {}
        for b in bindings:
            self.add(b.rule, b.destination)

    def add(self, prefix: str, destination: str) -> None:
        self._rules.setdefault(prefix, set()).add(destination)

    def match(self, value: str) -> set[str]:
        out: set[str] = set()
        rules = self._rules
        end = value.find(".")
        while True:
            head = value if end < 0 else value[:end]
            hit = rules.get(head)
            if hit:
                out |= hit
            if end < 0:
                return out
            end = value.find(".", end + 1)


def brute_force_match(bindings: Iterable[Binding], source: str, value: str) -> set[str]:
    """Reference matcher: test every binding of ``source``."""
    return {b.destination for b in bindings if b.source == source and b.matches(value)}
