import json
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from twinsim.definitions import (
    DefinitionError,
    DTDLError,
    GraphError,
    Property,
    RelationshipDef,
    RelationshipRef,
    Schema,
    TwinInstance,
    TwinInterface,
    dump_documents,
    flatten_interfaces,
    import_dtdl,
    parse_definitions,
    parse_documents,
    resolve_graph,
    split_resources,
)
from twinsim.scenario import build_city, city_graph

from conftest import PARKING, yaml_docs


def test_parkingspot_status_enumeration(parking_text):
    resources = parse_documents(parking_text)
    spot = next(r for r in resources if r.name == "ngsi-ld-city-parkingspot")
    status = spot.property("status")
    assert status.schema.kind == "enum"
    assert status.schema.values == ("free", "occupied", "closed")
    assert spot.routing.persist_store_events is False


def test_empty_document_list():
    assert parse_definitions([]) == []
    assert parse_documents("") == []


def test_quantities_parse(parking_text):
    parking = parse_documents(parking_text)[0]
    assert parking.service.cpu == pytest.approx(0.1)
    assert parking.service.memory == 64 * 1024**2


def test_undeclared_interface_deferred_to_graph_build():
    inst = yaml_docs("""
    apiVersion: twinsim/v1
    kind: TwinInstance
    metadata:
      name: ghost-1
    spec:
      interface: no-such-interface
    """)
    resources = parse_documents(inst)
    assert isinstance(resources[0], TwinInstance)
    with pytest.raises(GraphError, match="no-such-interface"):
        resolve_graph(*split_resources(resources))


def test_unknown_field_reports_line():
    text = yaml_docs(PARKING.replace("  properties:", "  colour: red\n  properties:"))
    with pytest.raises(DefinitionError) as info:
        parse_documents(text, source="parking.yaml")
    assert info.value.line is not None
    assert "colour" in str(info.value)
    assert str(info.value).startswith("parking.yaml:")


def test_unknown_kind_rejected():
    with pytest.raises(DefinitionError, match="kind"):
        parse_documents("apiVersion: twinsim/v1\nkind: Gadget\nmetadata: {name: x}\nspec: {}\n")


def test_syntax_error_has_position():
    with pytest.raises(DefinitionError) as info:
        parse_documents("kind: [unclosed\n", source="bad.yaml")
    assert info.value.line is not None


def _iface(name, props=(), rels=(), parent=None):
    return TwinInterface(
        name=name,
        properties=tuple(Property(p, Schema("float")) for p in props),
        relationships=tuple(rels),
        parent=parent,
    )


def test_inheritance_union_and_override():
    a = _iface("a", ["p1", "shared"])
    b = TwinInterface(name="b", properties=(Property("p2", Schema("float")), Property("shared", Schema("string"))), parent="a")
    flat = flatten_interfaces([a, b])
    assert {p.name for p in flat["b"].properties} == {"p1", "p2", "shared"}
    assert flat["b"].property("shared").schema.kind == "string"


def test_flattening_idempotent():
    interfaces, _ = build_city(1)
    once = flatten_interfaces(interfaces)
    twice = flatten_interfaces(once.values())
    assert {k: (v.properties, v.relationships, v.commands) for k, v in once.items()} == {
        k: (v.properties, v.relationships, v.commands) for k, v in twice.items()
    }


def test_self_extension_is_cycle():
    with pytest.raises(GraphError, match="cycle"):
        flatten_interfaces([_iface("loop", parent="loop")])


def test_two_step_cycle():
    with pytest.raises(GraphError, match="cycle"):
        flatten_interfaces([_iface("a", parent="b"), _iface("b", parent="a")])


def test_multiplicity_one_violation():
    hood = _iface("hood")
    pole = _iface("pole", rels=[RelationshipDef("refHood", "hood", "one")])
    insts = [
        TwinInstance("h1", "hood"),
        TwinInstance("h2", "hood"),
        TwinInstance("p1", "pole", relationships=(RelationshipRef("refHood", "hood", ("h1", "h2")),)),
    ]
    with pytest.raises(GraphError, match="one"):
        resolve_graph([hood, pole], insts)


def test_dangling_target_and_wrong_interface():
    hood = _iface("hood")
    other = _iface("other")
    pole = _iface("pole", rels=[RelationshipDef("refHood", "hood", "one")])
    with pytest.raises(GraphError):
        resolve_graph([hood, pole], [TwinInstance("p1", "pole", relationships=(RelationshipRef("refHood", "hood", ("nope",)),))])
    with pytest.raises(GraphError):
        resolve_graph(
            [hood, pole, other],
            [TwinInstance("o1", "other"),
             TwinInstance("p1", "pole", relationships=(RelationshipRef("refHood", "hood", ("o1",)),))],
        )


def test_duplicate_instance_name():
    hood = _iface("hood")
    with pytest.raises(GraphError, match="duplicate"):
        resolve_graph([hood], [TwinInstance("h1", "hood"), TwinInstance("h1", "hood")])


def test_property_schema_checked():
    hood = TwinInterface("hood", properties=(Property("n", Schema("integer")),))
    with pytest.raises(GraphError):
        resolve_graph([hood], [TwinInstance("h1", "hood", properties={"n": "many"})])


def test_pole_chain_adjacency():
    g = city_graph(1)
    [ref] = g.adjacency["airquality-01-001"]
    assert (ref.interface, ref.targets) == ("city-pole", ("pole-01-001",))
    [hop] = g.adjacency["pole-01-001"]
    assert (hop.interface, hop.targets) == ("s4city-city-neighborhood", ("neighborhood-01",))


def test_adjacency_targets_consistent():
    g = city_graph(1)
    for inst, refs in g.adjacency.items():
        assert refs == g.instances[inst].relationships
        for ref in refs:
            for t in ref.targets:
                assert g.instances[t].interface == ref.interface


def test_subgraph_parkingspots():
    g = city_graph(1)
    sub = g.subgraph("ngsi-ld-city-parkingspot")
    assert len(sub) == 20
    for inst in g.instances_of("ngsi-ld-city-parkingspot"):
        assert sub.targets(inst, "refParentParking") == [("ngsi-ld-city-offstreetparking", "parking-01")]


def test_subgraph_empty_and_unknown():
    g = resolve_graph([_iface("lonely")], [])
    assert len(g.subgraph("lonely")) == 0
    with pytest.raises(GraphError):
        g.subgraph("missing")


def test_subgraph_union_is_instance_set():
    g = city_graph(1)
    seen = Counter()
    for name in g.interfaces:
        seen.update(g.instances_of(name))
    assert seen == Counter(list(g.instances))


def test_subgraph_encoding_is_sorted_compact_json():
    g = city_graph(1)
    sub = g.subgraph("ngsi-ld-city-parkingspot")
    doc = json.loads(sub.encoded)
    assert json.dumps(doc, sort_keys=True, separators=(",", ":")).encode() == sub.encoded
    assert sub.size_bytes == len(sub.encoded)


def test_dump_roundtrip():
    interfaces, instances = build_city(1)
    text = dump_documents(interfaces + instances[:40])
    again = parse_documents(text)
    assert [r.name for r in again] == [r.name for r in interfaces + instances[:40]]
    a = resolve_graph(*split_resources(again))
    assert set(a.interfaces) == {i.name for i in interfaces}


# -- DTDL ------------------------------------------------------------------

THERMO = {
    "@id": "dtmi:example:thermostat;1",
    "@type": "Interface",
    "contents": [{"@type": "Property", "name": "temperature", "schema": "double"}],
}


def test_dtdl_property_maps_to_numeric():
    [iface] = import_dtdl([THERMO])
    assert iface.name == "example-thermostat"
    assert iface.property("temperature").schema.kind == "float"
    assert iface.service is None


def test_dtdl_extends_sets_parent():
    child = {"@id": "dtmi:example:smartthermostat;1", "@type": "Interface", "extends": THERMO["@id"], "contents": []}
    out = {i.name: i for i in import_dtdl([THERMO, child])}
    assert out["example-smartthermostat"].parent == "example-thermostat"
    assert out["example-smartthermostat"].properties == ()


def test_dtdl_missing_id():
    with pytest.raises(DTDLError):
        import_dtdl([{"@type": "Interface", "contents": []}])


def test_dtdl_duplicate_id():
    with pytest.raises(DTDLError, match="duplicate"):
        import_dtdl([THERMO, THERMO])


def test_dtdl_telemetry_strict_and_permissive():
    doc = {**THERMO, "contents": THERMO["contents"] + [{"@type": "Telemetry", "name": "t", "schema": "double"}]}
    with pytest.raises(DTDLError):
        import_dtdl([doc])
    warnings = []
    [iface] = import_dtdl([doc], permissive=True, warnings=warnings)
    assert len(warnings) == 1 and len(iface.properties) == 1


@given(st.lists(st.sampled_from(["string", "integer", "float", "boolean"]), min_size=1, max_size=6))
def test_dump_parse_roundtrip_schemas(kinds):
    iface = TwinInterface("gen", properties=tuple(Property(f"p{i}", Schema(k)) for i, k in enumerate(kinds)))
    [back] = parse_documents(dump_documents([iface]))
    assert back.properties == iface.properties
