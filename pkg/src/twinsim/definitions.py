"""Twin Interface / Twin Instance resources and the resolved twin graph.

Resource documents use a Kubernetes-style ``kind``/``metadata``/``spec``
layout, one resource per YAML document::

    kind: TwinInterface
    metadata:
      name: ngsi-ld-city-parkingspot
    spec:
      properties:
        - name: status
          schema: {enum: [free, occupied, closed]}
      relationships:
        - name: refParentParking
          target: ngsi-ld-city-offstreetparking
          multiplicity: one
      service:
        handler: parking-spot
        cpu: 0.1
        memory: 64Mi
        autoscale: {target: 5, minReplicas: 0, maxReplicas: 18}
      routing:
        persistStoreEvents: false

Instances reference their interface and list relationship targets by
instance name. Referential checks are deferred to :func:`resolve_graph`.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Any, Iterable, Mapping

import yaml

PRIMITIVES = ("string", "integer", "float", "boolean")

_MEMORY_UNITS = {
    "": 1,
    "k": 1000,
    "M": 1000**2,
    "G": 1000**3,
    "Ki": 1024,
    "Mi": 1024**2,
    "Gi": 1024**3,
}


class DefinitionError(ValueError):
    """A resource document is malformed or violates the resource schema.

    ``line`` is 1-based when known.
    """

    def __init__(self, message: str, *, source: str | None = None, line: int | None = None):
        self.message = message
        self.source = source
        self.line = line
        super().__init__(self.format())

    def format(self) -> str:
        where = self.source or "<input>"
        if self.line is not None:
            where = f"{where}:{self.line}"
        return f"{where}: {self.message}"


class GraphError(ValueError):
    """Referential or structural problem found while resolving the graph."""


# -- resource types -------------------------------------------------------


@dataclass(frozen=True)
class Schema:
    """A property schema: one of the primitives or an enumeration."""

    kind: str
    values: tuple[str, ...] = ()

    def accepts(self, value: Any) -> bool:
        if self.kind == "enum":
            return isinstance(value, str) and value in self.values
        if self.kind == "boolean":
            return isinstance(value, bool)
        if self.kind == "integer":
            return isinstance(value, int) and not isinstance(value, bool)
        if self.kind == "float":
            return isinstance(value, (int, float)) and not isinstance(value, bool)
        return isinstance(value, str)

    def to_json(self) -> Any:
        return {"enum": list(self.values)} if self.kind == "enum" else self.kind


@dataclass(frozen=True)
class Property:
    name: str
    schema: Schema
    description: str = ""


@dataclass(frozen=True)
class RelationshipDef:
    name: str
    target: str
    multiplicity: str = "many"
    description: str = ""


@dataclass(frozen=True)
class CommandDef:
    name: str
    payload: Mapping[str, str] = field(default_factory=dict)
    description: str = ""


@dataclass(frozen=True)
class AutoscalePolicy:
    target: int = 5
    min_replicas: int = 0
    max_replicas: int = 18
    metric: str = "concurrency"

    def __post_init__(self):
        if self.metric != "concurrency":
            raise ValueError(f"unsupported autoscale metric {self.metric!r}")
        if self.target < 1:
            raise ValueError("autoscale target must be >= 1")
        if self.min_replicas < 0 or self.max_replicas < 1:
            raise ValueError("replica bounds must be min >= 0 and max >= 1")
        if self.min_replicas > self.max_replicas:
            raise ValueError("autoscale min replicas exceeds max replicas")


@dataclass(frozen=True)
class ServiceSettings:
    handler: str
    cpu: float = 0.1
    memory: int = 64 * 1024**2
    autoscale: AutoscalePolicy = field(default_factory=AutoscalePolicy)

    def __post_init__(self):
        if self.cpu <= 0 or self.memory <= 0:
            raise ValueError("cpu and memory requests must be positive")


@dataclass(frozen=True)
class RoutingSettings:
    persist_real_directly: bool = False
    persist_store_events: bool = True


@dataclass(frozen=True)
class TwinInterface:
    name: str
    properties: tuple[Property, ...] = ()
    relationships: tuple[RelationshipDef, ...] = ()
    commands: tuple[CommandDef, ...] = ()
    parent: str | None = None
    service: ServiceSettings | None = None
    routing: RoutingSettings = field(default_factory=RoutingSettings)
    description: str = ""

    # Declared before ``property()`` below shadows the builtin in this body.
    @property
    def serviced(self) -> bool:
        return self.service is not None

    def property(self, name: str) -> Property | None:
        for p in self.properties:
            if p.name == name:
                return p
        return None

    def relationship(self, name: str) -> RelationshipDef | None:
        for r in self.relationships:
            if r.name == name:
                return r
        return None

    def command(self, name: str) -> CommandDef | None:
        for c in self.commands:
            if c.name == name:
                return c
        return None



@dataclass(frozen=True)
class RelationshipRef:
    name: str
    interface: str
    targets: tuple[str, ...]


@dataclass(frozen=True)
class TwinInstance:
    name: str
    interface: str
    properties: Mapping[str, Any] = field(default_factory=dict)
    relationships: tuple[RelationshipRef, ...] = ()


# -- parsing --------------------------------------------------------------


class _Node(dict):
    """A mapping that remembers the source line of each key."""

    line: int | None = None
    key_lines: dict

    def line_of(self, key: str) -> int | None:
        return self.key_lines.get(key, self.line)


class _Seq(list):
    line: int | None = None
    item_lines: list


def _convert(node: yaml.Node, loader: yaml.SafeLoader) -> Any:
    if isinstance(node, yaml.MappingNode):
        out = _Node()
        out.line = node.start_mark.line + 1
        out.key_lines = {}
        for key_node, value_node in node.value:
            key = _convert(key_node, loader)
            out[key] = _convert(value_node, loader)
            out.key_lines[key] = key_node.start_mark.line + 1
        return out
    if isinstance(node, yaml.SequenceNode):
        seq = _Seq(_convert(v, loader) for v in node.value)
        seq.line = node.start_mark.line + 1
        seq.item_lines = [v.start_mark.line + 1 for v in node.value]
        return seq
    return loader.construct_object(node, deep=True)


class _Reader:
    """Field-level access to a converted document with line-aware errors."""

    def __init__(self, node: Any, source: str | None, path: str):
        self.node = node
        self.source = source
        self.path = path

    def fail(self, message: str, key: str | None = None):
        line = None
        if isinstance(self.node, _Node):
            line = self.node.line_of(key) if key else self.node.line
        elif isinstance(self.node, _Seq):
            line = self.node.line
        raise DefinitionError(f"{self.path}: {message}", source=self.source, line=line)

    def mapping(self, allowed: Iterable[str], required: Iterable[str] = ()) -> None:
        if not isinstance(self.node, dict):
            self.fail("expected a mapping")
        allowed = set(allowed)
        for key in self.node:
            if key not in allowed:
                self.fail(f"unknown field {key!r}", key)
        for key in required:
            if key not in self.node:
                self.fail(f"missing required field {key!r}")

    def child(self, key: str) -> "_Reader":
        return _Reader(self.node.get(key), self.source, f"{self.path}.{key}")

    def items(self, key: str) -> list["_Reader"]:
        value = self.node.get(key)
        if value is None:
            return []
        if not isinstance(value, list):
            self.fail(f"{key} must be a list", key)
        return [_Reader(item, self.source, f"{self.path}.{key}[{i}]") for i, item in enumerate(value)]

    def string(self, key: str, default: str | None = None, required: bool = False) -> str | None:
        value = self.node.get(key, default)
        if value is None:
            if required:
                self.fail(f"missing required field {key!r}")
            return None
        if not isinstance(value, str) or (required and not value):
            self.fail(f"{key} must be a non-empty string", key)
        return value

    def boolean(self, key: str, default: bool) -> bool:
        value = self.node.get(key, default)
        if not isinstance(value, bool):
            self.fail(f"{key} must be a boolean", key)
        return value

    def integer(self, key: str, default: int) -> int:
        value = self.node.get(key, default)
        if not isinstance(value, int) or isinstance(value, bool):
            self.fail(f"{key} must be an integer", key)
        return value


def parse_quantity_cpu(value: Any) -> float:
    """``0.1``, ``"0.1"`` and ``"100m"`` all mean a tenth of a core."""
    if isinstance(value, bool):
        raise ValueError(f"invalid cpu quantity {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip()
    if text.endswith("m"):
        return float(text[:-1]) / 1000.0
    return float(text)


def parse_quantity_memory(value: Any) -> int:
    if isinstance(value, bool):
        raise ValueError(f"invalid memory quantity {value!r}")
    if isinstance(value, int):
        return value
    match = re.fullmatch(r"\s*([0-9]+(?:\.[0-9]+)?)\s*([kMG]i?)?\s*", str(value))
    if not match:
        raise ValueError(f"invalid memory quantity {value!r}")
    return int(float(match.group(1)) * _MEMORY_UNITS[match.group(2) or ""])


def _parse_schema(reader: _Reader, key: str) -> Schema:
    value = reader.node.get(key)
    if isinstance(value, str):
        if value not in PRIMITIVES:
            reader.fail(f"unsupported schema {value!r}", key)
        return Schema(value)
    if isinstance(value, dict) and set(value) == {"enum"} and isinstance(value["enum"], list):
        values = value["enum"]
        if not values or not all(isinstance(v, str) for v in values) or len(set(values)) != len(values):
            reader.fail("enum must be a non-empty list of unique strings", key)
        return Schema("enum", tuple(values))
    reader.fail("schema must be a primitive name or {enum: [...]}", key)
    raise AssertionError("unreachable")


def _parse_interface(doc: _Reader, name: str) -> TwinInterface:
    spec = doc.child("spec")
    if spec.node is None:
        spec.node = _Node()
        spec.node.line, spec.node.key_lines = doc.node.line, {}
    spec.mapping(["description", "parent", "properties", "relationships", "commands", "service", "routing"])

    properties = []
    for r in spec.items("properties"):
        r.mapping(["name", "description", "schema"], ["name", "schema"])
        properties.append(Property(r.string("name", required=True), _parse_schema(r, "schema"), r.string("description", "")))

    relationships = []
    for r in spec.items("relationships"):
        r.mapping(["name", "description", "target", "multiplicity"], ["name", "target"])
        multiplicity = r.string("multiplicity", "many")
        if multiplicity not in ("one", "many"):
            r.fail("multiplicity must be 'one' or 'many'", "multiplicity")
        relationships.append(
            RelationshipDef(r.string("name", required=True), r.string("target", required=True), multiplicity, r.string("description", ""))
        )

    commands = []
    for r in spec.items("commands"):
        r.mapping(["name", "description", "schema"], ["name"])
        payload = r.node.get("schema") or {}
        if not isinstance(payload, dict) or not all(v in PRIMITIVES for v in payload.values()):
            r.fail("command schema must map field names to primitive types", "schema")
        commands.append(CommandDef(r.string("name", required=True), MappingProxyType(dict(payload)), r.string("description", "")))

    service = None
    if spec.node.get("service") is not None:
        s = spec.child("service")
        s.mapping(["handler", "container", "cpu", "memory", "autoscale"])
        handler = s.string("handler") or s.string("container")
        if not handler:
            s.fail("service needs a handler (container reference)")
        policy = AutoscalePolicy()
        if s.node.get("autoscale") is not None:
            a = s.child("autoscale")
            a.mapping(["metric", "target", "minReplicas", "maxReplicas"])
            try:
                policy = AutoscalePolicy(
                    target=a.integer("target", 5),
                    min_replicas=a.integer("minReplicas", 0),
                    max_replicas=a.integer("maxReplicas", 18),
                    metric=a.string("metric", "concurrency"),
                )
            except ValueError as exc:
                a.fail(str(exc))
        try:
            service = ServiceSettings(
                handler=handler,
                cpu=parse_quantity_cpu(s.node.get("cpu", 0.1)),
                memory=parse_quantity_memory(s.node.get("memory", "64Mi")),
                autoscale=policy,
            )
        except ValueError as exc:
            s.fail(str(exc))

    routing = RoutingSettings()
    if spec.node.get("routing") is not None:
        rr = spec.child("routing")
        rr.mapping(["persistRealDirectly", "persistStoreEvents"])
        routing = RoutingSettings(rr.boolean("persistRealDirectly", False), rr.boolean("persistStoreEvents", True))

    return TwinInterface(
        name=name,
        properties=tuple(properties),
        relationships=tuple(relationships),
        commands=tuple(commands),
        parent=spec.string("parent"),
        service=service,
        routing=routing,
        description=spec.string("description", "") or "",
    )


def _parse_instance(doc: _Reader, name: str) -> TwinInstance:
    spec = doc.child("spec")
    spec.mapping(["interface", "properties", "relationships"], ["interface"])
    props = spec.node.get("properties") or {}
    if not isinstance(props, dict):
        spec.fail("properties must be a mapping", "properties")
    relationships = []
    for r in spec.items("relationships"):
        r.mapping(["name", "interface", "instances", "instance"], ["name", "interface"])
        targets = r.node.get("instances")
        if targets is None and r.node.get("instance") is not None:
            targets = [r.node["instance"]]
        if not isinstance(targets, list) or not all(isinstance(t, str) and t for t in targets):
            r.fail("relationship targets must be a list of instance names", "instances")
        relationships.append(RelationshipRef(r.string("name", required=True), r.string("interface", required=True), tuple(targets)))
    return TwinInstance(
        name=name,
        interface=spec.string("interface", required=True),
        properties=MappingProxyType(dict(props)),
        relationships=tuple(relationships),
    )


def parse_documents(text: str, source: str | None = None) -> list[TwinInterface | TwinInstance]:
    """Parse a (possibly multi-document) YAML string into resources, in order."""
    try:
        nodes = list(yaml.compose_all(text, Loader=yaml.SafeLoader))
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise DefinitionError(f"syntax error: {exc.problem}", source=source, line=mark.line + 1 if mark else None) from None
    resources: list[TwinInterface | TwinInstance] = []
    loader = yaml.SafeLoader("")
    for index, node in enumerate(nodes):
        if node is None:
            continue
        doc = _Reader(_convert(node, loader), source, f"document[{index}]")
        if doc.node is None:
            continue
        doc.mapping(["apiVersion", "kind", "metadata", "spec"], ["kind", "metadata"])
        meta = doc.child("metadata")
        meta.mapping(["name", "labels", "annotations", "namespace"], ["name"])
        name = meta.string("name", required=True)
        kind = doc.node["kind"]
        if kind == "TwinInterface":
            resources.append(_parse_interface(doc, name))
        elif kind == "TwinInstance":
            if doc.node.get("spec") is None:
                doc.fail("missing required field 'spec'")
            resources.append(_parse_instance(doc, name))
        else:
            doc.fail(f"unknown resource kind {kind!r}", "kind")
    return resources


def parse_definitions(documents: Iterable[str | tuple[str, str]]) -> list[TwinInterface | TwinInstance]:
    """Parse several resource texts; items may be ``(source, text)`` pairs."""
    out: list[TwinInterface | TwinInstance] = []
    for item in documents:
        source, text = item if isinstance(item, tuple) else (None, item)
        out.extend(parse_documents(text, source))
    return out


def load_files(paths: Iterable[str]) -> list[TwinInterface | TwinInstance]:
    items = []
    for path in paths:
        with open(path, encoding="utf-8") as fh:
            items.append((str(path), fh.read()))
    return parse_definitions(items)


def split_resources(resources: Iterable[TwinInterface | TwinInstance]) -> tuple[list[TwinInterface], list[TwinInstance]]:
    interfaces = [r for r in resources if isinstance(r, TwinInterface)]
    instances = [r for r in resources if isinstance(r, TwinInstance)]
    return interfaces, instances


# -- serialization back to documents -------------------------------------


def _fmt_memory(nbytes: int) -> str | int:
    for unit in ("Gi", "Mi", "Ki"):
        if nbytes % _MEMORY_UNITS[unit] == 0:
            return f"{nbytes // _MEMORY_UNITS[unit]}{unit}"
    return nbytes


def interface_document(iface: TwinInterface) -> dict:
    spec: dict[str, Any] = {}
    if iface.description:
        spec["description"] = iface.description
    if iface.parent:
        spec["parent"] = iface.parent
    if iface.properties:
        spec["properties"] = [
            {"name": p.name, **({"description": p.description} if p.description else {}), "schema": p.schema.to_json()}
            for p in iface.properties
        ]
    if iface.relationships:
        spec["relationships"] = [
            {"name": r.name, "target": r.target, "multiplicity": r.multiplicity} for r in iface.relationships
        ]
    if iface.commands:
        spec["commands"] = [{"name": c.name, **({"schema": dict(c.payload)} if c.payload else {})} for c in iface.commands]
    if iface.service:
        s = iface.service
        spec["service"] = {
            "handler": s.handler,
            "cpu": s.cpu,
            "memory": _fmt_memory(s.memory),
            "autoscale": {
                "metric": s.autoscale.metric,
                "target": s.autoscale.target,
                "minReplicas": s.autoscale.min_replicas,
                "maxReplicas": s.autoscale.max_replicas,
            },
        }
    if iface.routing != RoutingSettings():
        spec["routing"] = {
            "persistRealDirectly": iface.routing.persist_real_directly,
            "persistStoreEvents": iface.routing.persist_store_events,
        }
    return {"apiVersion": "twinsim/v1", "kind": "TwinInterface", "metadata": {"name": iface.name}, "spec": spec}


def instance_document(inst: TwinInstance) -> dict:
    spec: dict[str, Any] = {"interface": inst.interface}
    if inst.properties:
        spec["properties"] = dict(inst.properties)
    if inst.relationships:
        spec["relationships"] = [
            {"name": r.name, "interface": r.interface, "instances": list(r.targets)} for r in inst.relationships
        ]
    return {"apiVersion": "twinsim/v1", "kind": "TwinInstance", "metadata": {"name": inst.name}, "spec": spec}


def dump_documents(resources: Iterable[TwinInterface | TwinInstance]) -> str:
    docs = [interface_document(r) if isinstance(r, TwinInterface) else instance_document(r) for r in resources]
    return yaml.safe_dump_all(docs, sort_keys=False)


# -- DTDL import ----------------------------------------------------------

_DTDL_PRIMITIVES = {
    "string": "string",
    "boolean": "boolean",
    "integer": "integer",
    "long": "integer",
    "double": "float",
    "float": "float",
    "date": "string",
    "dateTime": "string",
    "time": "string",
    "duration": "string",
}


class DTDLError(ValueError):
    pass


def dtdl_name(dtmi: str) -> str:
    """``dtmi:org:example:city:Pole;1`` -> ``city-pole``-style interface name."""
    body = dtmi.split(";", 1)[0]
    if body.startswith("dtmi:"):
        body = body[5:]
    parts = [p for p in body.split(":") if p]
    if not parts:
        raise DTDLError(f"cannot derive a name from id {dtmi!r}")
    tail = parts[-2:] if len(parts) >= 2 else parts
    return "-".join(p.lower() for p in tail)


def _dtdl_schema(schema: Any, where: str) -> Schema:
    if isinstance(schema, str):
        if schema in _DTDL_PRIMITIVES:
            return Schema(_DTDL_PRIMITIVES[schema])
        raise DTDLError(f"{where}: unsupported schema {schema!r}")
    if isinstance(schema, dict) and schema.get("@type") == "Enum":
        values = []
        for v in schema.get("enumValues", []):
            values.append(str(v.get("enumValue", v.get("name"))))
        return Schema("enum", tuple(values))
    raise DTDLError(f"{where}: unsupported schema {schema!r}")


def import_dtdl(documents: Iterable[Any], *, permissive: bool = False, warnings: list[str] | None = None) -> list[TwinInterface]:
    """Map DTDL v2 interfaces onto :class:`TwinInterface` resources.

    ``documents`` may contain single interface objects or lists of them.
    Unsupported content kinds raise unless ``permissive`` is set, in which
    case they are skipped and reported through ``warnings``.
    """
    flat: list[dict] = []
    for doc in documents:
        if isinstance(doc, list):
            flat.extend(doc)
        else:
            flat.append(doc)

    ids: dict[str, str] = {}
    for doc in flat:
        if not isinstance(doc, dict) or "@id" not in doc:
            raise DTDLError("DTDL interface is missing @id")
        if doc["@id"] in ids:
            raise DTDLError(f"duplicate DTDL id {doc['@id']!r}")
        ids[doc["@id"]] = dtdl_name(doc["@id"])

    out = []
    for doc in flat:
        dtmi = doc["@id"]
        props, rels, cmds = [], [], []
        for item in doc.get("contents", []):
            kinds = item.get("@type", "")
            kinds = kinds if isinstance(kinds, list) else [kinds]
            kind = next((k for k in kinds if k in ("Property", "Relationship", "Command", "Telemetry", "Component")), kinds[0] if kinds else "")
            where = f"{dtmi}/{item.get('name', '?')}"
            if kind == "Property":
                props.append(Property(item["name"], _dtdl_schema(item.get("schema"), where), _text(item.get("description"))))
            elif kind == "Relationship":
                target = item.get("target")
                rels.append(
                    RelationshipDef(
                        item["name"],
                        ids.get(target, dtdl_name(target)) if target else "",
                        "one" if item.get("maxMultiplicity") == 1 else "many",
                        _text(item.get("description")),
                    )
                )
            elif kind == "Command":
                payload = {}
                request = item.get("request")
                if isinstance(request, dict) and request.get("name"):
                    try:
                        payload[request["name"]] = _dtdl_schema(request.get("schema"), where).kind
                    except DTDLError:
                        payload[request["name"]] = "string"
                cmds.append(CommandDef(item["name"], MappingProxyType(payload), _text(item.get("description"))))
            else:
                message = f"{where}: unsupported DTDL content kind {kind!r}"
                if not permissive:
                    raise DTDLError(message)
                if warnings is not None:
                    warnings.append(message)
        extends = doc.get("extends")
        if isinstance(extends, list):
            if len(extends) > 1:
                raise DTDLError(f"{dtmi}: multiple inheritance is not supported")
            extends = extends[0] if extends else None
        parent = ids.get(extends, dtdl_name(extends)) if extends else None
        for rel in rels:
            if not rel.target:
                raise DTDLError(f"{dtmi}/{rel.name}: relationship without target")
        out.append(
            TwinInterface(
                name=ids[dtmi],
                properties=tuple(props),
                relationships=tuple(rels),
                commands=tuple(cmds),
                parent=parent,
                description=_text(doc.get("description") or doc.get("displayName")),
            )
        )
    return out


def _text(value: Any) -> str:
    if isinstance(value, dict):
        return str(value.get("en", next(iter(value.values()), "")))
    return str(value) if value else ""


# -- graph ----------------------------------------------------------------


def flatten_interfaces(interfaces: Iterable[TwinInterface]) -> dict[str, TwinInterface]:
    """Resolve inheritance; children override parent members by name."""
    by_name: dict[str, TwinInterface] = {}
    for iface in interfaces:
        if iface.name in by_name:
            raise GraphError(f"duplicate interface name {iface.name!r}")
        by_name[iface.name] = iface

    flat: dict[str, TwinInterface] = {}

    def resolve(name: str, chain: tuple[str, ...]) -> TwinInterface:
        if name in flat:
            return flat[name]
        if name in chain:
            raise GraphError("inheritance cycle: " + " -> ".join(chain + (name,)))
        iface = by_name[name]
        if iface.parent is None:
            result = iface
        else:
            if iface.parent not in by_name:
                raise GraphError(f"interface {name!r} extends unknown interface {iface.parent!r}")
            base = resolve(iface.parent, chain + (name,))
            result = replace(
                iface,
                properties=_merge(base.properties, iface.properties),
                relationships=_merge(base.relationships, iface.relationships),
                commands=_merge(base.commands, iface.commands),
                service=iface.service if iface.service is not None else base.service,
            )
        for group in (result.properties, result.relationships, result.commands):
            names = [m.name for m in group]
            if len(names) != len(set(names)):
                raise GraphError(f"interface {name!r} declares duplicate member names")
        flat[name] = result
        return result

    for name in by_name:
        resolve(name, ())
    return {name: flat[name] for name in by_name}


def _merge(base: tuple, own: tuple) -> tuple:
    own_names = {m.name for m in own}
    return tuple(m for m in base if m.name not in own_names) + tuple(own)


@dataclass(frozen=True)
class Subgraph:
    interface: str
    instances: Mapping[str, tuple[RelationshipRef, ...]]
    encoded: bytes

    @property
    def size_bytes(self) -> int:
        return len(self.encoded)

    def __len__(self) -> int:
        return len(self.instances)

    def targets(self, instance: str, relationship: str | None = None) -> list[tuple[str, str]]:
        """``(target interface, target instance)`` pairs for an instance."""
        out = []
        for ref in self.instances.get(instance, ()):
            if relationship is None or ref.name == relationship:
                out.extend((ref.interface, t) for t in ref.targets)
        return out


class TwinGraph:
    """Resolved, immutable instance graph with per-interface subgraph cache."""

    def __init__(self, interfaces: Mapping[str, TwinInterface], instances: Mapping[str, TwinInstance]):
        self._interfaces = MappingProxyType(dict(interfaces))
        self._instances = MappingProxyType(dict(instances))
        self._adjacency = MappingProxyType({name: inst.relationships for name, inst in instances.items()})
        by_iface: dict[str, list[str]] = {name: [] for name in interfaces}
        for inst in instances.values():
            by_iface[inst.interface].append(inst.name)
        self._by_interface = MappingProxyType({k: tuple(v) for k, v in by_iface.items()})
        self._subgraphs: dict[str, Subgraph] = {}
        for name in interfaces:
            members = {i: self._adjacency[i] for i in self._by_interface[name]}
            self._subgraphs[name] = Subgraph(name, MappingProxyType(members), _encode_subgraph(name, members))

    @property
    def interfaces(self) -> Mapping[str, TwinInterface]:
        return self._interfaces

    @property
    def instances(self) -> Mapping[str, TwinInstance]:
        return self._instances

    @property
    def adjacency(self) -> Mapping[str, tuple[RelationshipRef, ...]]:
        return self._adjacency

    def instances_of(self, interface: str) -> tuple[str, ...]:
        return self._by_interface[interface]

    def subgraph(self, interface: str) -> Subgraph:
        try:
            return self._subgraphs[interface]
        except KeyError:
            raise GraphError(f"unknown interface {interface!r}") from None

    def total_subgraph_bytes(self) -> int:
        return sum(s.size_bytes for s in self._subgraphs.values())


def _encode_subgraph(interface: str, members: Mapping[str, tuple[RelationshipRef, ...]]) -> bytes:
    body = {
        "interface": interface,
        "instances": {
            name: [{"name": r.name, "interface": r.interface, "targets": list(r.targets)} for r in refs]
            for name, refs in members.items()
        },
    }
    return json.dumps(body, sort_keys=True, separators=(",", ":")).encode()


def resolve_graph(interfaces: Iterable[TwinInterface], instances: Iterable[TwinInstance]) -> TwinGraph:
    flat = flatten_interfaces(interfaces)
    for iface in flat.values():
        for rel in iface.relationships:
            if rel.target not in flat:
                raise GraphError(f"interface {iface.name!r} relationship {rel.name!r} targets unknown interface {rel.target!r}")

    by_name: dict[str, TwinInstance] = {}
    for inst in instances:
        if inst.name in by_name:
            raise GraphError(f"duplicate instance name {inst.name!r}")
        if inst.interface not in flat:
            raise GraphError(f"instance {inst.name!r} references unknown interface {inst.interface!r}")
        by_name[inst.name] = inst

    for inst in by_name.values():
        iface = flat[inst.interface]
        for key, value in inst.properties.items():
            prop = iface.property(key)
            if prop is None:
                raise GraphError(f"instance {inst.name!r}: unknown property {key!r}")
            if not prop.schema.accepts(value):
                raise GraphError(f"instance {inst.name!r}: value {value!r} does not match schema of {key!r}")
        seen = set()
        for ref in inst.relationships:
            rel = iface.relationship(ref.name)
            if rel is None:
                raise GraphError(f"instance {inst.name!r}: unknown relationship {ref.name!r}")
            if ref.name in seen:
                raise GraphError(f"instance {inst.name!r}: relationship {ref.name!r} listed twice")
            seen.add(ref.name)
            if ref.interface != rel.target:
                raise GraphError(f"instance {inst.name!r}: relationship {ref.name!r} must target {rel.target!r}")
            if rel.multiplicity == "one" and len(ref.targets) != 1:
                raise GraphError(f"instance {inst.name!r}: relationship {ref.name!r} has multiplicity one")
            for target in ref.targets:
                other = by_name.get(target)
                if other is None:
                    raise GraphError(f"instance {inst.name!r}: dangling relationship target {target!r}")
                if other.interface != rel.target:
                    raise GraphError(f"instance {inst.name!r}: target {target!r} is not a {rel.target!r}")
    return TwinGraph(flat, by_name)
