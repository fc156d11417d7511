from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from toscaorch.errors import CyclicDerivation, IncompatibleOperand, InvalidScalar, UnknownReference, AttributeUnavailable
from toscaorch.model import (
    AttributeStore,
    ConstraintClause,
    FunctionExpr,
    ScalarSize,
    TypeMismatch,
    check_constraints,
    coerce_value,
    evaluate_function,
    flatten_type,
    parse_value,
    resolve_value,
)
from toscaorch.parser import load_types, normative_registry, parse_service_template, resolve_imports, ImportResolver

from conftest import fixture_text, graph_of

UNITS = {"B": 1, "kB": 1000, "KiB": 1024, "MB": 10**6, "MiB": 2**20, "GB": 10**9, "GiB": 2**30, "TB": 10**12, "TiB": 2**40}


# -- scalar sizes --------------------------------------------------------------


@pytest.mark.parametrize("text,expected", [
    ("512 MB", 512 * 10**6),
    ("10 GB", 10 * 10**9),
    ("1 KiB", 1024),
    ("1 kB", 1000),
    ("2 gib", 2 * 2**30),
    ("0.5 GB", 5 * 10**8),
])
def test_scalar_units(text, expected):
    assert ScalarSize.parse(text).bytes == expected


@pytest.mark.parametrize("bad", ["12", "ten GB", "5 parsecs", "0.5 B"])
def test_scalar_rejects(bad):
    with pytest.raises(InvalidScalar):
        ScalarSize.parse(bad)


@given(st.integers(min_value=0, max_value=10**6), st.sampled_from(sorted(UNITS)))
def test_scalar_round_trip(n, unit):
    size = ScalarSize.parse(f"{n} {unit}")
    assert size.bytes == n * UNITS[unit]
    assert ScalarSize.parse(size.format()) == size
    assert ScalarSize.parse(ScalarSize(size.bytes).format()).bytes == size.bytes


@given(st.integers(min_value=0, max_value=10**15), st.integers(min_value=0, max_value=10**15))
def test_scalar_order_follows_bytes(a, b):
    assert (ScalarSize(a) < ScalarSize(b)) == (a < b)
    assert ScalarSize(a, "x") == ScalarSize(a, "y")


def test_fixture_sizes_round_trip():
    for name in ("my_server.yaml", "powerfit.yaml"):
        graph = graph_of(fixture_text(name))
        for compute in graph.compute_nodes():
            for value in graph.nodes[compute].capability("host").values():
                if isinstance(value, ScalarSize):
                    assert ScalarSize.parse(ScalarSize.parse(value.format()).format()) == value


# -- coercion and constraints -------------------------------------------------


def test_coerce_value():
    assert coerce_value("1 GB", "scalar-unit.size") == ScalarSize(10**9)
    assert coerce_value(6.5, "version") == "6.5"
    assert coerce_value(3, "float") == 3.0
    with pytest.raises(TypeMismatch):
        coerce_value(True, "integer")
    with pytest.raises(TypeMismatch):
        coerce_value("x", "integer")


VALID = ConstraintClause.from_yaml({"valid_values": ["disvis", "powerfit"]})


def test_constraint_examples():
    assert check_constraints("powerfit", [VALID]).satisfied
    report = check_constraints("gromacs", [VALID])
    assert report.violations == (VALID,)
    assert check_constraints("powerfit", [ConstraintClause.from_yaml({"equal": "powerfit"})]).satisfied


def test_ordered_constraints_on_sizes():
    clause = ConstraintClause.from_yaml({"in_range": ["1 GB", "4 GB"]})
    assert check_constraints(ScalarSize.parse("2 GB"), [clause]).satisfied
    assert not check_constraints(ScalarSize.parse("512 MB"), [clause]).satisfied
    with pytest.raises(IncompatibleOperand):
        check_constraints("text", [ConstraintClause.from_yaml({"greater_or_equal": 1})])


@given(st.integers(-100, 100), st.integers(-100, 100), st.integers(-100, 100))
def test_in_range_matches_both_bounds(value, lo, hi):
    in_range = check_constraints(value, [ConstraintClause("in_range", (lo, hi))]).satisfied
    both = check_constraints(value, [ConstraintClause("greater_or_equal", (lo,)), ConstraintClause("less_or_equal", (hi,))])
    assert in_range == both.satisfied


@given(st.one_of(st.text(max_size=5), st.integers()), st.lists(st.text(max_size=5), max_size=4))
def test_membership_is_total(value, options):
    report = check_constraints(value, [ConstraintClause("valid_values", tuple(options))])
    assert report.satisfied == (value in options)


def test_malformed_clause():
    with pytest.raises(IncompatibleOperand):
        ConstraintClause.from_yaml({"matches": "x"})
    with pytest.raises(IncompatibleOperand):
        ConstraintClause.from_yaml({"in_range": [1]})


# -- flattening -----------------------------------------------------------------


@pytest.fixture(scope="module")
def registry():
    return resolve_imports(parse_service_template(fixture_text("powerfit.yaml")), ImportResolver.default())


def test_flatten_powerfit(registry):
    flat = flatten_type("tosca.nodes.indigo.Powerfit", registry)
    assert flat.artifacts["galaxy_role"].file == "indigo-dc.disvis-powerfit"
    prop = flat.properties["haddock_app_name"]
    assert prop.default == "powerfit"
    assert [c.to_yaml() for c in prop.constraints] == [{"equal": "powerfit"}]
    assert "configure" in flat.interfaces["Standard"].operations


def test_flatten_root_is_identity():
    reg = normative_registry()
    root = reg.node_types["tosca.nodes.Root"]
    assert flatten_type("tosca.nodes.Root", reg).properties == root.properties


def test_flatten_idempotent(registry):
    for name in registry.node_types:
        once = flatten_type(name, registry)
        assert flatten_type(name, registry) == once


def test_cyclic_derivation():
    text = """tosca_definitions_version: tosca_simple_yaml_1_0
node_types:
  A: {derived_from: B}
  B: {derived_from: A}
"""
    reg = load_types(text)
    with pytest.raises(CyclicDerivation):
        flatten_type("A", reg)


def test_narrowing_accepts_subset(registry):
    """Every value a derived type accepts is accepted by its parent (enumerable domains)."""
    domain = ["disvis", "powerfit", "gromacs", ""]
    for name in registry.node_types:
        flat = flatten_type(name, registry)
        parent_name = registry.node_types[name].derived_from
        if not parent_name:
            continue
        parent = flatten_type(parent_name, registry)
        for pname, pdef in flat.properties.items():
            if pname not in parent.properties or pdef.type != "string":
                continue
            for v in domain:
                if check_constraints(v, pdef.constraints).satisfied:
                    assert check_constraints(v, parent.properties[pname].constraints).satisfied


# -- functions ------------------------------------------------------------------


def test_parse_value_functions():
    expr = parse_value({"get_attribute": ["master_server", "public_address"]})
    assert expr == FunctionExpr("get_attribute", ("master_server", "public_address"))
    assert expr.referenced_node() == "master_server"
    assert parse_value({"get_input": "x"}).to_yaml() == {"get_input": "x"}


def test_evaluate_examples(mesos_text):
    topo = parse_service_template(mesos_text).topology
    store = AttributeStore({"master_server": {"public_address": ["10.0.0.5"]}})
    get_attr = FunctionExpr("get_attribute", ("master_server", "public_address"))
    assert evaluate_function(get_attr, topo, runtime=store) == ["10.0.0.5"]
    nested = FunctionExpr("get_property", ("mesos_slave", "master_ips"))
    assert evaluate_function(nested, topo, runtime=store) == ["10.0.0.5"]
    with pytest.raises(AttributeUnavailable):
        evaluate_function(nested, topo)


def test_get_input():
    text = """tosca_definitions_version: tosca_simple_yaml_1_0
topology_template:
  inputs:
    cpus: {type: integer, default: 1}
  node_templates:
    s:
      type: tosca.nodes.Compute
      capabilities:
        host:
          properties: {num_cpus: {get_input: cpus}}
"""
    topo = parse_service_template(text).topology
    expr = FunctionExpr("get_input", ("cpus",))
    assert evaluate_function(expr, topo, {"cpus": 5}) == 5
    assert evaluate_function(expr, topo) == 1
    with pytest.raises(UnknownReference):
        evaluate_function(FunctionExpr("get_input", ("nope",)), topo)
    # pure: repeated evaluation gives the same answer
    assert resolve_value([expr, {"k": expr}], topo, {"cpus": 2}) == [2, {"k": 2}]
    assert resolve_value([expr, {"k": expr}], topo, {"cpus": 2}) == [2, {"k": 2}]


def test_attribute_store_lists_per_instance():
    store = AttributeStore()
    store.set("slave", "private_address", ["10.0.0.3", "10.0.0.4"])
    assert store.get("slave", "private_address") == ["10.0.0.3", "10.0.0.4"]
    assert "slave" in store and "other" not in store
