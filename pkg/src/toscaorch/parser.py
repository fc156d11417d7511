"""Read TOSCA Simple Profile YAML, resolve imports, build and validate node graphs."""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping

import yaml

from .errors import (
    CyclicTopology,
    DanglingRequirement,
    DuplicateTypeConflict,
    IncompatibleOperand,
    ToscaError,
    ToscaSyntaxError,
    UnresolvedImport,
    UnsupportedVersion,
)
from .model import (
    COMPUTE,
    DEFINITIONS_VERSION,
    ENDPOINT,
    SCALABLE,
    ArtifactDefinition,
    CapabilityAssignment,
    CapabilityDefinition,
    CapabilityTypeDefinition,
    ConstraintClause,
    FunctionExpr,
    InputDefinition,
    InterfaceDefinition,
    NodeTemplate,
    NodeTypeDefinition,
    OperationDefinition,
    OutputDefinition,
    PropertyDefinition,
    RequirementDefinition,
    ServiceTemplate,
    TopologyTemplate,
    TypeMismatch,
    TypeRegistry,
    check_constraints,
    coerce_value,
    flatten_capability_type,
    flatten_type,
    iter_functions,
    parse_value,
    resolve_value,
)

log = logging.getLogger(__name__)

DATA_DIR = Path(str(resources.files("toscaorch") / "data"))

HOSTED_ON = "HostedOn"
DEPENDS_ON = "DependsOn"

# Placeholder node name for findings about the document as a whole.
TEMPLATE = "-"

_TOP_KEYS = {
    "tosca_definitions_version", "description", "metadata", "imports",
    "node_types", "capability_types", "topology_template",
}
_TOPOLOGY_KEYS = {"description", "inputs", "node_templates", "outputs"}
_NODE_KEYS = {"type", "description", "properties", "capabilities", "requirements", "artifacts", "interfaces"}
_NODE_TYPE_KEYS = {
    "derived_from", "description", "version", "metadata", "properties", "attributes",
    "capabilities", "requirements", "artifacts", "interfaces",
}
_PROPERTY_KEYS = {"type", "description", "required", "default", "constraints", "status", "entry_schema"}


# -- YAML loading with positions ---------------------------------------------


class MarkedDict(dict):
    """dict that remembers the 1-based (line, column) of itself and of each key."""

    mark: tuple[int, int] | None = None

    def __init__(self, *args, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.marks: dict[Any, tuple[int, int]] = {}


class _Loader(yaml.SafeLoader):
    pass


def _construct_mapping(loader: _Loader, node: yaml.MappingNode, deep: bool = False) -> MarkedDict:
    loader.flatten_mapping(node)
    mapping = MarkedDict()
    mapping.mark = (node.start_mark.line + 1, node.start_mark.column + 1)
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        pos = (key_node.start_mark.line + 1, key_node.start_mark.column + 1)
        try:
            hash(key)
        except TypeError:
            raise ToscaSyntaxError("unhashable mapping key", *pos) from None
        if key in mapping:
            raise ToscaSyntaxError(f"duplicate key {key!r}", *pos, node=str(key))
        mapping[key] = loader.construct_object(value_node, deep=True)
        mapping.marks[key] = pos
    return mapping


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


def load_yaml(text: str) -> Any:
    """Safe-load YAML, rejecting duplicate keys; errors carry line/column."""
    try:
        return yaml.load(text, Loader=_Loader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark else None
        col = mark.column + 1 if mark else None
        raise ToscaSyntaxError(f"malformed YAML: {exc.problem or exc}", line, col) from None
    except yaml.YAMLError as exc:
        raise ToscaSyntaxError(f"malformed YAML: {exc}") from None


def _pos(mapping: Any, key: Any = None) -> tuple[int | None, int | None]:
    if isinstance(mapping, MarkedDict):
        if key is not None and key in mapping.marks:
            return mapping.marks[key]
        if mapping.mark:
            return mapping.mark
    return None, None


def _expect_map(value: Any, what: str, parent: Any = None, key: Any = None, node: str | None = None) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ToscaSyntaxError(f"{what} must be a mapping", *_pos(parent, key), node=node)
    return value


def _expect_list(value: Any, what: str, parent: Any = None, key: Any = None, node: str | None = None) -> list:
    if value is None:
        return []
    if not isinstance(value, list):
        raise ToscaSyntaxError(f"{what} must be a list", *_pos(parent, key), node=node)
    return value


def _strict(mapping: dict, allowed: set[str], what: str, node: str | None = None) -> None:
    for key in mapping:
        if key not in allowed:
            raise ToscaSyntaxError(f"unknown key {key!r} in {what}", *_pos(mapping, key), node=node)


# -- definitions -------------------------------------------------------------


def _constraints(raw: Any, where: str, node: str | None = None) -> tuple[ConstraintClause, ...]:
    clauses = []
    for item in _expect_list(raw, f"constraints of {where}", node=node):
        try:
            clauses.append(ConstraintClause.from_yaml(item))
        except IncompatibleOperand as exc:
            raise ToscaSyntaxError(f"{where}: {exc}", *_pos(item), node=node) from None
    return tuple(clauses)


def _property_definitions(raw: Any, owner: str) -> dict[str, PropertyDefinition]:
    defs = {}
    for name, spec in _expect_map(raw, f"properties of {owner}").items():
        spec = _expect_map(spec, f"property {name} of {owner}")
        _strict(spec, _PROPERTY_KEYS, f"property {name} of {owner}")
        ptype = spec.get("type", "string")
        constraints = _constraints(spec.get("constraints"), f"{owner}.{name}")
        constraints = tuple(_coerce_clause(c, ptype) for c in constraints)
        default = spec.get("default")
        if default is not None:
            try:
                default = coerce_value(parse_value(default), ptype)
            except TypeMismatch as exc:
                raise ToscaSyntaxError(f"default of {owner}.{name}: {exc}", *_pos(spec, "default")) from None
        defs[name] = PropertyDefinition(
            name=name,
            type=ptype,
            required=bool(spec.get("required", True)),
            default=default,
            constraints=constraints,
            description=str(spec.get("description", "") or ""),
        )
    return defs


def _coerce_clause(clause: ConstraintClause, ptype: str) -> ConstraintClause:
    if ptype not in ("scalar-unit.size", "version"):
        return clause
    try:
        return ConstraintClause(clause.kind, tuple(coerce_value(op, ptype) for op in clause.operands))
    except TypeMismatch as exc:
        raise ToscaSyntaxError(f"constraint {clause}: {exc}") from None


def _interfaces(raw: Any, owner: str, node: str | None = None) -> dict[str, InterfaceDefinition]:
    out = {}
    for iname, body in _expect_map(raw, f"interfaces of {owner}", node=node).items():
        ops = {}
        for opname, op in _expect_map(body, f"interface {iname} of {owner}", node=node).items():
            if opname in ("type", "description", "inputs"):
                continue
            if isinstance(op, str):
                ops[opname] = OperationDefinition(opname, op, {})
            else:
                op = _expect_map(op, f"operation {iname}.{opname} of {owner}", node=node)
                _strict(op, {"implementation", "inputs", "description"}, f"operation {opname} of {owner}", node)
                inputs = {k: parse_value(v) for k, v in _expect_map(op.get("inputs"), "inputs", node=node).items()}
                ops[opname] = OperationDefinition(opname, str(op.get("implementation", "")), inputs)
        out[iname] = InterfaceDefinition(iname, ops)
    return out


def _artifacts(raw: Any, owner: str, node: str | None = None) -> dict[str, ArtifactDefinition]:
    out = {}
    for name, spec in _expect_map(raw, f"artifacts of {owner}", node=node).items():
        if isinstance(spec, str):
            out[name] = ArtifactDefinition(name, spec, "tosca.artifacts.File")
        else:
            spec = _expect_map(spec, f"artifact {name} of {owner}", node=node)
            _strict(spec, {"file", "type", "description", "repository"}, f"artifact {name} of {owner}", node)
            out[name] = ArtifactDefinition(name, str(spec.get("file", "")), str(spec.get("type", "")))
    return out


def _node_type(name: str, spec: Any) -> NodeTypeDefinition:
    spec = _expect_map(spec, f"node type {name}")
    _strict(spec, _NODE_TYPE_KEYS, f"node type {name}")
    caps = {}
    for cname, cspec in _expect_map(spec.get("capabilities"), f"capabilities of {name}").items():
        ctype = cspec if isinstance(cspec, str) else _expect_map(cspec, f"capability {cname}").get("type")
        if not ctype:
            raise ToscaSyntaxError(f"capability {cname} of {name} has no type", *_pos(spec, "capabilities"))
        caps[cname] = CapabilityDefinition(cname, str(ctype))
    reqs = {}
    for item in _expect_list(spec.get("requirements"), f"requirements of {name}"):
        if not isinstance(item, dict) or len(item) != 1:
            raise ToscaSyntaxError(f"malformed requirement definition in {name}", *_pos(spec, "requirements"))
        (rname, rspec), = item.items()
        if isinstance(rspec, str):
            reqs[rname] = RequirementDefinition(rname, capability=rspec)
        else:
            rspec = _expect_map(rspec, f"requirement {rname} of {name}")
            reqs[rname] = RequirementDefinition(
                rname, rspec.get("capability"), rspec.get("node"), rspec.get("relationship")
            )
    attrs = spec.get("attributes") or {}
    return NodeTypeDefinition(
        name=name,
        derived_from=spec.get("derived_from"),
        properties=_property_definitions(spec.get("properties"), name),
        attributes=tuple(attrs),
        capabilities=caps,
        requirements=reqs,
        artifacts=_artifacts(spec.get("artifacts"), name),
        interfaces=_interfaces(spec.get("interfaces"), name),
        description=str(spec.get("description", "") or ""),
    )


def _capability_type(name: str, spec: Any) -> CapabilityTypeDefinition:
    spec = _expect_map(spec, f"capability type {name}")
    _strict(spec, {"derived_from", "description", "properties", "attributes", "version"}, f"capability type {name}")
    return CapabilityTypeDefinition(
        name=name,
        derived_from=spec.get("derived_from"),
        properties=_property_definitions(spec.get("properties"), name),
        description=str(spec.get("description", "") or ""),
    )


# -- templates ---------------------------------------------------------------


def _node_template(name: str, spec: Any) -> NodeTemplate:
    spec = _expect_map(spec, f"node template {name}", node=name)
    _strict(spec, _NODE_KEYS, f"node template {name}", node=name)
    if "type" not in spec:
        raise ToscaSyntaxError(f"node template {name} has no type", *_pos(spec), node=name)
    props = {k: parse_value(v) for k, v in _expect_map(spec.get("properties"), "properties", spec, "properties", name).items()}
    caps = {}
    for cname, cspec in _expect_map(spec.get("capabilities"), "capabilities", spec, "capabilities", name).items():
        cspec = _expect_map(cspec, f"capability {cname}", node=name)
        _strict(cspec, {"properties", "attributes"}, f"capability {cname} of {name}", node=name)
        cprops = _expect_map(cspec.get("properties"), f"properties of capability {cname}", cspec, "properties", name)
        caps[cname] = CapabilityAssignment({k: parse_value(v) for k, v in cprops.items()})
    reqs = []
    for item in _expect_list(spec.get("requirements"), "requirements", spec, "requirements", name):
        if not isinstance(item, dict) or len(item) != 1:
            raise ToscaSyntaxError(f"malformed requirement in {name}", *_pos(spec, "requirements"), node=name)
        (rname, target), = item.items()
        if isinstance(target, dict):
            target = target.get("node")
        if not isinstance(target, str):
            raise ToscaSyntaxError(f"requirement {rname} of {name} names no node", *_pos(item, rname), node=name)
        reqs.append((str(rname), target))
    return NodeTemplate(
        name=name,
        type_name=str(spec["type"]),
        properties=props,
        capabilities=caps,
        requirements=tuple(reqs),
        artifacts=_artifacts(spec.get("artifacts"), name, node=name),
        interfaces=_interfaces(spec.get("interfaces"), name, node=name),
        description=str(spec.get("description", "") or ""),
    )


def _topology(raw: Any) -> TopologyTemplate:
    raw = _expect_map(raw, "topology_template")
    _strict(raw, _TOPOLOGY_KEYS, "topology_template")
    inputs = {}
    for name, spec in _expect_map(raw.get("inputs"), "inputs", raw, "inputs").items():
        spec = _expect_map(spec, f"input {name}")
        _strict(spec, _PROPERTY_KEYS, f"input {name}")
        inputs[name] = InputDefinition(
            name=name,
            type=spec.get("type", "string"),
            default=spec.get("default"),
            required=bool(spec.get("required", True)),
            constraints=_constraints(spec.get("constraints"), f"input {name}"),
            description=str(spec.get("description", "") or ""),
        )
    nodes = {
        name: _node_template(name, spec)
        for name, spec in _expect_map(raw.get("node_templates"), "node_templates", raw, "node_templates").items()
    }
    outputs = {}
    for name, spec in _expect_map(raw.get("outputs"), "outputs", raw, "outputs").items():
        spec = _expect_map(spec, f"output {name}")
        _strict(spec, {"value", "description"}, f"output {name}")
        if "value" not in spec:
            raise ToscaSyntaxError(f"output {name} has no value", *_pos(spec))
        outputs[name] = OutputDefinition(name, parse_value(spec["value"]), str(spec.get("description", "") or ""))
    return TopologyTemplate(inputs, nodes, outputs)


def _import_refs(raw: Any, doc: Any) -> tuple[str, ...]:
    refs = []
    for item in _expect_list(raw, "imports", doc, "imports"):
        if isinstance(item, str):
            refs.append(item)
        elif isinstance(item, dict) and len(item) == 1:
            (_, ref), = item.items()
            if isinstance(ref, dict):
                ref = ref.get("file")
            if not isinstance(ref, str):
                raise ToscaSyntaxError("import has no file reference", *_pos(item))
            refs.append(ref)
        else:
            raise ToscaSyntaxError("malformed import entry", *_pos(doc, "imports"))
    return tuple(refs)


def parse_service_template(text: str) -> ServiceTemplate:
    """Parse a TOSCA YAML document; only syntax and version are checked."""
    doc = load_yaml(text)
    if doc is None:
        raise ToscaSyntaxError("empty document", 1, 1)
    if not isinstance(doc, dict):
        raise ToscaSyntaxError("document root must be a mapping", 1, 1)
    version = doc.get("tosca_definitions_version")
    if version is None:
        raise UnsupportedVersion("missing tosca_definitions_version", node=TEMPLATE)
    if version != DEFINITIONS_VERSION:
        raise UnsupportedVersion(f"unsupported tosca_definitions_version {version!r}", node=TEMPLATE)
    _strict(doc, _TOP_KEYS, "service template")
    node_types = {n: _node_type(n, s) for n, s in _expect_map(doc.get("node_types"), "node_types").items()}
    cap_types = {
        n: _capability_type(n, s) for n, s in _expect_map(doc.get("capability_types"), "capability_types").items()
    }
    return ServiceTemplate(
        definitions_version=version,
        imports=_import_refs(doc.get("imports"), doc),
        node_types=node_types,
        capability_types=cap_types,
        topology=_topology(doc.get("topology_template")),
        description=str(doc.get("description", "") or "").strip(),
    )


# -- imports -----------------------------------------------------------------

INDIGO_TYPES_REFS = (
    "indigo-dc/tosca-types/master/custom_types.yaml",
    "https://raw.githubusercontent.com/indigo-dc/tosca-types/master/custom_types.yaml",
    "custom_types.yaml",
)


class ImportResolver:
    """Map import references to local files. Never touches the network.

    ``table`` maps exact references to paths; plain relative references are
    also looked up under each of ``search_paths``.
    """

    def __init__(self, table: Mapping[str, str | Path] | None = None, search_paths: Iterable[str | Path] = ()) -> None:
        self.table = {k: Path(v) for k, v in (table or {}).items()}
        self.search_paths = [Path(p) for p in search_paths]

    @classmethod
    def default(cls, *search_paths: str | Path) -> ImportResolver:
        custom = DATA_DIR / "types" / "custom_types.yaml"
        return cls({ref: custom for ref in INDIGO_TYPES_REFS}, search_paths)

    def locate(self, ref: str) -> Path:
        if ref in self.table:
            return self.table[ref]
        if "://" not in ref:
            for base in self.search_paths:
                candidate = base / ref
                if candidate.is_file():
                    return candidate
        raise UnresolvedImport(f"cannot resolve import {ref!r}", node=TEMPLATE)

    def resolve(self, ref: str) -> str:
        path = self.locate(ref)
        try:
            return path.read_text(encoding="utf-8")
        except OSError as exc:
            raise UnresolvedImport(f"import {ref!r} -> {path}: {exc}", node=TEMPLATE) from None


@lru_cache(maxsize=1)
def _normative() -> ServiceTemplate:
    return parse_service_template((DATA_DIR / "types" / "normative_types.yaml").read_text(encoding="utf-8"))


def normative_registry() -> TypeRegistry:
    base = _normative()
    return TypeRegistry(dict(base.node_types), dict(base.capability_types))


def _merge_types(registry: TypeRegistry, kind: str, incoming: Mapping[str, Any], origin: str) -> None:
    table = registry.node_types if kind == "node" else registry.capability_types
    builtin = _normative().node_types if kind == "node" else _normative().capability_types
    for name, defn in incoming.items():
        existing = table.get(name)
        if existing is None or existing == defn:
            table[name] = defn
            continue
        if name in builtin and builtin[name] == existing:
            raise DuplicateTypeConflict(f"{origin} redefines normative type {name!r} differently", node=TEMPLATE)
        msg = f"{origin} overrides earlier definition of {name!r}"
        log.warning(msg)
        registry.warnings.append(msg)
        table[name] = defn


def resolve_imports(template: ServiceTemplate, resolver: ImportResolver | None = None) -> TypeRegistry:
    """Build the type registry: normative types, then imports in order, then local types."""
    resolver = resolver or ImportResolver.default()
    registry = normative_registry()
    seen: set[str] = set()

    def visit(tpl: ServiceTemplate) -> None:
        for ref in tpl.imports:
            if ref in seen:
                continue
            seen.add(ref)
            imported = parse_service_template(resolver.resolve(ref))
            visit(imported)
            _merge_types(registry, "capability", imported.capability_types, f"import {ref!r}")
            _merge_types(registry, "node", imported.node_types, f"import {ref!r}")

    visit(template)
    _merge_types(registry, "capability", template.capability_types, "template")
    _merge_types(registry, "node", template.node_types, "template")
    return registry


# -- graph -------------------------------------------------------------------


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    kind: str
    requirement: str | None = None


@dataclass(frozen=True)
class ScalingSpec:
    """Instance bounds of a Compute node: ``initial`` instances at deploy time."""

    initial: int
    min_instances: int | None = None
    max_instances: int | None = None
    owner: str | None = None  # node carrying the bounds (may be a hosted software node)

    @property
    def bounded(self) -> bool:
        return self.min_instances is not None or self.max_instances is not None


@dataclass(frozen=True)
class ResolvedNode:
    """A node template merged with its flattened type, defaults substituted."""

    name: str
    template: NodeTemplate
    type: NodeTypeDefinition
    index: int
    # values that failed coercion, kept for the validator: (where, name, message)
    type_errors: tuple[tuple[str, str, str], ...] = ()

    @property
    def type_name(self) -> str:
        return self.template.type_name

    @property
    def properties(self) -> Mapping[str, Any]:
        return self.template.properties

    def capability(self, name: str) -> Mapping[str, Any]:
        cap = self.template.capabilities.get(name)
        return cap.properties if cap is not None else {}

    @property
    def interfaces(self) -> Mapping[str, InterfaceDefinition]:
        return self.template.interfaces

    @property
    def artifacts(self) -> Mapping[str, ArtifactDefinition]:
        return self.template.artifacts

    def derives_from(self, type_name: str) -> bool:
        return type_name in self.type.lineage


@dataclass
class TopologyGraph:
    nodes: dict[str, ResolvedNode]
    edges: list[Edge]
    inputs: Mapping[str, InputDefinition]
    outputs: Mapping[str, OutputDefinition]
    topology: TopologyTemplate
    registry: TypeRegistry
    input_values: dict[str, Any] = field(default_factory=dict)

    def host_of(self, name: str) -> str | None:
        for e in self.edges:
            if e.source == name and e.kind == HOSTED_ON:
                return e.target
        return None

    def is_compute(self, name: str) -> bool:
        return self.nodes[name].derives_from(COMPUTE)

    def compute_nodes(self) -> list[str]:
        return [n for n in self.nodes if self.is_compute(n)]

    def compute_host(self, name: str) -> str | None:
        """The Compute node at the bottom of ``name``'s HostedOn chain."""
        current: str | None = name
        while current is not None:
            if self.is_compute(current):
                return current
            current = self.host_of(current)
        return None

    def hosted_software(self, compute: str) -> list[str]:
        return [
            n for n in self.topological_order()
            if n != compute and not self.is_compute(n) and self.compute_host(n) == compute
        ]

    def dependencies(self, name: str) -> list[str]:
        return [e.target for e in self.edges if e.source == name]

    def topological_order(self) -> list[str]:
        """Dependencies first; ties broken by template order."""
        return _toposort(list(self.nodes), self.edges, {n: r.index for n, r in self.nodes.items()})

    def scaling(self, compute: str) -> ScalingSpec:
        owners = [compute] + self.hosted_software(compute)
        for owner in owners:
            node = self.nodes[owner]
            for cname, cdef in node.type.capabilities.items():
                if not self.registry.capability_is(cdef.type, SCALABLE):
                    continue
                props = node.capability(cname)
                if not props:
                    continue
                lo, hi, count = props.get("min_instances"), props.get("max_instances"), props.get("count")
                if count is None:
                    count = lo if lo is not None else 1
                return ScalingSpec(int(count), lo, hi, owner)
        return ScalingSpec(1)

    def public_endpoint(self, compute: str) -> bool:
        node = self.nodes[compute]
        for cname, cdef in node.type.capabilities.items():
            if self.registry.capability_is(cdef.type, ENDPOINT):
                if node.capability(cname).get("network_name") == "PUBLIC":
                    return True
        return False


def _toposort(names: list[str], edges: Iterable[Edge], rank: Mapping[str, int]) -> list[str]:
    indeg = {n: 0 for n in names}
    users: dict[str, list[str]] = {n: [] for n in names}
    for e in edges:
        indeg[e.source] += 1
        users[e.target].append(e.source)
    ready = [(rank[n], n) for n in names if indeg[n] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        _, n = heapq.heappop(ready)
        order.append(n)
        for u in users[n]:
            indeg[u] -= 1
            if indeg[u] == 0:
                heapq.heappush(ready, (rank[u], u))
    if len(order) != len(names):
        stuck = sorted((n for n in names if n not in order), key=rank.__getitem__)
        raise CyclicTopology(f"dependency cycle among {stuck}", node=stuck[0])
    return order


def _defaulted(values: Mapping[str, Any], defs: Mapping[str, PropertyDefinition], where: str, errors: list) -> dict:
    out = {}
    for name, value in values.items():
        pdef = defs.get(name)
        if pdef is None:
            out[name] = value
            continue
        try:
            out[name] = coerce_value(value, pdef.type)
        except TypeMismatch as exc:
            errors.append((where, name, str(exc)))
            out[name] = value
    for name, pdef in defs.items():
        if name not in out and pdef.has_default:
            out[name] = pdef.default
    return out


def _resolve_node(tpl: NodeTemplate, index: int, registry: TypeRegistry) -> ResolvedNode:
    try:
        ntype = flatten_type(tpl.type_name, registry)
    except ToscaError as exc:
        exc.node = tpl.name
        raise
    errors: list[tuple[str, str, str]] = []
    props = _defaulted(tpl.properties, ntype.properties, "properties", errors)
    caps = {}
    for cname, cdef in ntype.capabilities.items():
        ctype = flatten_capability_type(cdef.type, registry)
        given = tpl.capabilities.get(cname, CapabilityAssignment()).properties
        cprops = _defaulted(given, ctype.properties, f"capability {cname}", errors)
        if cprops or cname in tpl.capabilities:
            caps[cname] = CapabilityAssignment(cprops)
    for cname, cap in tpl.capabilities.items():
        caps.setdefault(cname, cap)
    interfaces = dict(ntype.interfaces)
    for iname, iface in tpl.interfaces.items():
        ops = dict(interfaces[iname].operations) if iname in interfaces else {}
        ops.update(iface.operations)
        interfaces[iname] = InterfaceDefinition(iname, ops)
    merged = replace(
        tpl,
        properties=props,
        capabilities=caps,
        artifacts={**ntype.artifacts, **tpl.artifacts},
        interfaces=interfaces,
    )
    return ResolvedNode(tpl.name, merged, ntype, index, tuple(errors))


def build_graph(
    template: ServiceTemplate, registry: TypeRegistry, inputs: Mapping[str, Any] | None = None
) -> TopologyGraph:
    """Resolve every node against the registry and derive HostedOn/DependsOn edges."""
    topo = template.topology
    nodes = {name: _resolve_node(tpl, i, registry) for i, (name, tpl) in enumerate(topo.node_templates.items())}
    edges: list[Edge] = []
    seen: set[tuple[str, str, str]] = set()

    def add(edge: Edge) -> None:
        key = (edge.source, edge.target, edge.kind)
        if key not in seen:
            seen.add(key)
            edges.append(edge)

    for name, node in nodes.items():
        hosts = 0
        for req, target in node.template.requirements:
            if target not in nodes:
                raise DanglingRequirement(f"requirement {req!r} of {name!r} names missing node {target!r}", node=name)
            if req == "host":
                hosts += 1
                if hosts > 1:
                    raise ToscaError(f"node {name!r} declares more than one host", node=name)
                add(Edge(name, target, HOSTED_ON, req))
            else:
                add(Edge(name, target, DEPENDS_ON, req))
        values = list(node.template.properties.values())
        values += [c.properties for c in node.template.capabilities.values()]
        for expr in iter_functions(values):
            ref = expr.referenced_node()
            if ref is None or ref in ("SELF", name):
                continue
            if ref not in nodes:
                raise DanglingRequirement(f"{name!r} references missing node {ref!r} via {expr.function}", node=name)
            add(Edge(name, ref, DEPENDS_ON))

    _toposort(list(nodes), edges, {n: r.index for n, r in nodes.items()})
    resolved_topo = TopologyTemplate(
        inputs=topo.inputs,
        node_templates={n: r.template for n, r in nodes.items()},
        outputs=topo.outputs,
    )
    return TopologyGraph(nodes, edges, topo.inputs, topo.outputs, resolved_topo, registry, dict(inputs or {}))


# -- validation --------------------------------------------------------------


@dataclass(frozen=True)
class Finding:
    node: str
    rule: str
    message: str


@dataclass
class ValidationReport:
    errors: list[Finding] = field(default_factory=list)
    warnings: list[Finding] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def error(self, node: str, rule: str, message: str) -> None:
        self.errors.append(Finding(node, rule, message))

    def warn(self, node: str, rule: str, message: str) -> None:
        self.warnings.append(Finding(node, rule, message))

    def lines(self) -> list[str]:
        return [f"ERROR {f.node} {f.rule} {f.message}" for f in self.errors] + [
            f"WARNING {f.node} {f.rule} {f.message}" for f in self.warnings
        ]

    def nodes_with_errors(self) -> set[str]:
        return {f.node for f in self.errors}


def _check_values(
    report: ValidationReport,
    graph: TopologyGraph,
    node: str,
    values: Mapping[str, Any],
    defs: Mapping[str, PropertyDefinition],
    where: str,
) -> None:
    for name in values:
        if name not in defs:
            report.error(node, "unknown-property", f"{where} has no property {name!r}")
    mistyped = {prop for w, prop, _ in graph.nodes[node].type_errors if w == where}
    for name, pdef in defs.items():
        value = values.get(name)
        if name in mistyped:
            continue  # already reported as property-type
        if value is None:
            if pdef.required:
                report.error(node, "required-property", f"{where}: required property {name!r} is missing")
            continue
        if isinstance(value, FunctionExpr):
            if value.function != "get_input":
                continue
            try:
                value = coerce_value(resolve_value(value, graph.topology, graph.input_values), pdef.type)
            except (ToscaError, TypeMismatch):
                continue  # reported by the function/input checks
        try:
            report_c = check_constraints(value, pdef.constraints)
        except IncompatibleOperand as exc:
            report.error(node, "type-definition", f"{where}.{name}: {exc}")
            continue
        for clause in report_c.violations:
            report.error(node, "constraint", f"{where}.{name}={value!s} violates {clause}")


def _check_function(report: ValidationReport, graph: TopologyGraph, node: str, expr: FunctionExpr) -> None:
    if expr.function == "get_input":
        if expr.args[0] not in graph.inputs:
            report.error(node, "function-reference", f"get_input of undeclared input {expr.args[0]!r}")
        return
    target = node if expr.args[0] == "SELF" else expr.args[0]
    if target not in graph.nodes:
        report.error(node, "function-reference", f"{expr.function} names unknown node {target!r}")
        return
    tnode = graph.nodes[target]
    if expr.function == "get_attribute":
        if len(expr.args) != 2 or expr.args[1] not in tnode.type.attributes:
            report.error(node, "function-reference", f"{target!r} has no attribute {list(expr.args[1:])}")
    elif expr.function == "get_property":
        if len(expr.args) == 2:
            ok = expr.args[1] in tnode.type.properties
        elif len(expr.args) == 3:
            cdef = tnode.type.capabilities.get(expr.args[1])
            ok = cdef is not None and expr.args[2] in flatten_capability_type(cdef.type, graph.registry).properties
        else:
            ok = False
        if not ok:
            report.error(node, "function-reference", f"{target!r} has no property {list(expr.args[1:])}")


def validate(graph: TopologyGraph) -> ValidationReport:
    """Run every model rule over a built graph; never raises for template faults."""
    report = ValidationReport()
    for msg in graph.registry.warnings:
        report.warn(TEMPLATE, "import-override", msg)

    for name, decl in graph.inputs.items():
        if decl.required and decl.default is None and name not in graph.input_values:
            report.error(TEMPLATE, "input-missing", f"input {name!r} has no value")

    for name, node in graph.nodes.items():
        ntype = node.type
        for where, prop, message in node.type_errors:
            report.error(name, "property-type", f"{where}.{prop}: {message}")
        _check_values(report, graph, name, node.properties, ntype.properties, "properties")

        for cname, cap in node.template.capabilities.items():
            cdef = ntype.capabilities.get(cname)
            if cdef is None:
                report.error(name, "unknown-capability", f"type {ntype.name} has no capability {cname!r}")
                continue
            ctype = flatten_capability_type(cdef.type, graph.registry)
            _check_values(report, graph, name, cap.properties, ctype.properties, f"capability {cname}")
            if SCALABLE in ctype.lineage:
                _check_bounds(report, name, cname, cap.properties)
            if ENDPOINT in ctype.lineage:
                net = cap.properties.get("network_name")
                if net is not None and net not in ("PUBLIC", "PRIVATE"):
                    report.error(name, "endpoint-network", f"network_name {net!r} is not PUBLIC or PRIVATE")

        for req, target in node.template.requirements:
            rdef = ntype.requirements.get(req)
            if rdef is None:
                report.error(name, "unknown-requirement", f"type {ntype.name} has no requirement {req!r}")
            elif rdef.node and not graph.nodes[target].derives_from(rdef.node):
                report.error(
                    name, "requirement-target",
                    f"requirement {req!r} needs a {rdef.node}, {target!r} is a {graph.nodes[target].type_name}",
                )

        values = list(node.properties.values()) + [c.properties for c in node.template.capabilities.values()]
        for expr in iter_functions(values):
            _check_function(report, graph, name, expr)

    for name, out in graph.outputs.items():
        for expr in iter_functions(out.value):
            _check_function(report, graph, f"output:{name}", expr)
    return report


def _check_bounds(report: ValidationReport, node: str, cap: str, props: Mapping[str, Any]) -> None:
    lo, hi, count = props.get("min_instances"), props.get("max_instances"), props.get("count")
    if not all(v is None or isinstance(v, int) for v in (lo, hi, count)):
        return
    if lo is not None and hi is not None and lo > hi:
        report.error(node, "scalable-bounds", f"{cap}: min_instances {lo} > max_instances {hi}")
    if count is not None:
        if lo is not None and count < lo:
            report.error(node, "scalable-bounds", f"{cap}: count {count} < min_instances {lo}")
        if hi is not None and count > hi:
            report.error(node, "scalable-bounds", f"{cap}: count {count} > max_instances {hi}")


def check_template(
    text: str, resolver: ImportResolver | None = None, inputs: Mapping[str, Any] | None = None
) -> tuple[TopologyGraph | None, ValidationReport]:
    """Parse, resolve, build and validate; structural failures become report entries."""
    try:
        template = parse_service_template(text)
        registry = resolve_imports(template, resolver)
        graph = build_graph(template, registry, inputs)
    except ToscaError as exc:
        report = ValidationReport()
        report.error(exc.node or TEMPLATE, _rule_for(exc), str(exc))
        return None, report
    return graph, validate(graph)


def _rule_for(exc: ToscaError) -> str:
    return {
        "ToscaSyntaxError": "syntax",
        "UnsupportedVersion": "version",
        "UnresolvedImport": "import",
        "DuplicateTypeConflict": "import",
        "UnknownType": "type",
        "CyclicDerivation": "type",
        "InvalidDerivation": "type",
        "DanglingRequirement": "dangling-requirement",
        "CyclicTopology": "acyclic",
    }.get(type(exc).__name__, "structure")


def validate_types(registry: TypeRegistry) -> ValidationReport:
    """Check a registry on its own: every type flattens and defaults obey constraints."""
    report = ValidationReport()
    for name in sorted(registry.node_types):
        try:
            flat = flatten_type(name, registry)
            for cdef in flat.capabilities.values():
                flatten_capability_type(cdef.type, registry)
        except ToscaError as exc:
            report.error(name, "type", str(exc))
            continue
        for pname, pdef in flat.properties.items():
            if pdef.has_default and not check_constraints(pdef.default, pdef.constraints).satisfied:
                report.error(name, "constraint", f"default of {pname!r} violates its own constraints")
    for name in sorted(registry.capability_types):
        try:
            flatten_capability_type(name, registry)
        except ToscaError as exc:
            report.error(name, "type", str(exc))
    return report


def load_types(text: str, resolver: ImportResolver | None = None) -> TypeRegistry:
    """Registry for a standalone type-definition document (e.g. custom_types.yaml)."""
    return resolve_imports(parse_service_template(text), resolver)

