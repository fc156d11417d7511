"""TOSCA domain model: values, types, constraints and intrinsic functions.

Nothing here touches YAML or the filesystem; :mod:`toscaorch.parser` builds
these objects from documents.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from decimal import Decimal, InvalidOperation
from typing import Any, Iterable, Mapping

from .errors import (
    AttributeUnavailable,
    CyclicDerivation,
    IncompatibleOperand,
    InvalidDerivation,
    InvalidScalar,
    UnknownReference,
    UnknownType,
)

DEFINITIONS_VERSION = "tosca_simple_yaml_1_0"

COMPUTE = "tosca.nodes.Compute"
SOFTWARE_COMPONENT = "tosca.nodes.SoftwareComponent"
SCALABLE = "tosca.capabilities.Scalable"
ENDPOINT = "tosca.capabilities.Endpoint"


# -- scalar sizes ------------------------------------------------------------

_SIZE_UNITS = {
    "b": 1,
    "kb": 10**3,
    "kib": 2**10,
    "mb": 10**6,
    "mib": 2**20,
    "gb": 10**9,
    "gib": 2**30,
    "tb": 10**12,
    "tib": 2**40,
}
_CANONICAL_UNITS = ["TB", "GB", "MB", "kB", "TiB", "GiB", "MiB", "KiB"]
_SIZE_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([A-Za-z]+)\s*$")


@dataclass(frozen=True, order=True)
class ScalarSize:
    """A ``scalar-unit.size`` value, compared by its byte count only."""

    bytes: int
    original: str = field(default="", compare=False)

    @classmethod
    def parse(cls, text: str) -> ScalarSize:
        m = _SIZE_RE.match(str(text))
        if not m:
            raise InvalidScalar(f"not a scalar size: {text!r}")
        number, unit = m.groups()
        mult = _SIZE_UNITS.get(unit.lower())
        if mult is None:
            raise InvalidScalar(f"unknown size unit {unit!r} in {text!r}")
        try:
            total = Decimal(number) * mult
        except InvalidOperation as exc:  # pragma: no cover - regex guards this
            raise InvalidScalar(str(exc)) from exc
        if total != total.to_integral_value():
            raise InvalidScalar(f"{text!r} is not a whole number of bytes")
        return cls(int(total), str(text).strip())

    def format(self) -> str:
        if self.original:
            return self.original
        for unit in _CANONICAL_UNITS:
            mult = _SIZE_UNITS[unit.lower()]
            if self.bytes and self.bytes % mult == 0:
                return f"{self.bytes // mult} {unit}"
        return f"{self.bytes} B"

    def __str__(self) -> str:
        return self.format()


# -- intrinsic functions -----------------------------------------------------

FUNCTIONS = ("get_input", "get_property", "get_attribute")


@dataclass(frozen=True)
class FunctionExpr:
    function: str
    args: tuple

    def to_yaml(self) -> dict:
        if self.function == "get_input" and len(self.args) == 1:
            return {self.function: self.args[0]}
        return {self.function: list(self.args)}

    def referenced_node(self) -> str | None:
        if self.function == "get_input" or not self.args:
            return None
        return self.args[0]


def parse_value(raw: Any) -> Any:
    """Turn raw YAML data into model values (function maps become FunctionExpr)."""
    if isinstance(raw, dict):
        if len(raw) == 1:
            (key, arg), = raw.items()
            if key in FUNCTIONS:
                args = tuple(arg) if isinstance(arg, list) else (arg,)
                return FunctionExpr(key, args)
        return {k: parse_value(v) for k, v in raw.items()}
    if isinstance(raw, list):
        return [parse_value(v) for v in raw]
    return raw


def iter_functions(value: Any) -> Iterable[FunctionExpr]:
    if isinstance(value, FunctionExpr):
        yield value
    elif isinstance(value, dict):
        for v in value.values():
            yield from iter_functions(v)
    elif isinstance(value, list):
        for v in value:
            yield from iter_functions(v)


def to_plain(value: Any) -> Any:
    """Render a model value as plain YAML/JSON-able data."""
    if isinstance(value, ScalarSize):
        return value.format()
    if isinstance(value, FunctionExpr):
        return value.to_yaml()
    if isinstance(value, dict):
        return {k: to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    return value


# -- value typing ------------------------------------------------------------


class TypeMismatch(ValueError):
    pass


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def coerce_value(value: Any, type_name: str) -> Any:
    """Coerce ``value`` to the semantic ``type_name`` or raise TypeMismatch.

    Function expressions are left untouched; they are typed once evaluated.
    """
    if isinstance(value, FunctionExpr):
        return value
    if type_name == "string":
        if isinstance(value, str):
            return value
    elif type_name == "integer":
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif type_name == "float":
        if _is_number(value):
            return float(value)
    elif type_name == "boolean":
        if isinstance(value, bool):
            return value
    elif type_name == "scalar-unit.size":
        if isinstance(value, ScalarSize):
            return value
        if isinstance(value, str):
            try:
                return ScalarSize.parse(value)
            except InvalidScalar as exc:
                raise TypeMismatch(str(exc)) from exc
    elif type_name == "version":
        if isinstance(value, str) or _is_number(value):
            return str(value)
    elif type_name == "list":
        if isinstance(value, list):
            return value
    elif type_name == "map":
        if isinstance(value, dict):
            return value
    elif type_name == "any":
        return value
    else:
        raise TypeMismatch(f"unknown property type {type_name!r}")
    raise TypeMismatch(f"{value!r} is not a valid {type_name}")


# -- constraints -------------------------------------------------------------

CONSTRAINT_KINDS = ("valid_values", "equal", "greater_or_equal", "less_or_equal", "in_range")


@dataclass(frozen=True)
class ConstraintClause:
    kind: str
    operands: tuple

    @classmethod
    def from_yaml(cls, raw: Mapping) -> ConstraintClause:
        if not isinstance(raw, Mapping) or len(raw) != 1:
            raise IncompatibleOperand(f"malformed constraint clause {raw!r}")
        (kind, operand), = raw.items()
        if kind not in CONSTRAINT_KINDS:
            raise IncompatibleOperand(f"unsupported constraint {kind!r}")
        if kind in ("valid_values", "in_range"):
            if not isinstance(operand, list):
                raise IncompatibleOperand(f"{kind} needs a list operand")
            if kind == "in_range" and len(operand) != 2:
                raise IncompatibleOperand("in_range needs exactly two bounds")
            return cls(kind, tuple(operand))
        return cls(kind, (operand,))

    def to_yaml(self) -> dict:
        if self.kind in ("valid_values", "in_range"):
            return {self.kind: list(self.operands)}
        return {self.kind: self.operands[0]}

    def __str__(self) -> str:
        ops = ", ".join(map(str, self.operands))
        return f"{self.kind} [{ops}]" if self.kind in ("valid_values", "in_range") else f"{self.kind} {ops}"


@dataclass(frozen=True)
class ConstraintReport:
    violations: tuple[ConstraintClause, ...] = ()

    @property
    def satisfied(self) -> bool:
        return not self.violations


def _align(value: Any, operand: Any) -> Any:
    if isinstance(value, ScalarSize) and isinstance(operand, str):
        try:
            return ScalarSize.parse(operand)
        except InvalidScalar as exc:
            raise IncompatibleOperand(str(exc)) from exc
    return operand


def _ordered(value: Any, operand: Any) -> Any:
    operand = _align(value, operand)
    if _is_number(value) and _is_number(operand):
        return operand
    if isinstance(value, ScalarSize) and isinstance(operand, ScalarSize):
        return operand
    raise IncompatibleOperand(f"cannot order-compare {value!r} with {operand!r}")


def _holds(value: Any, clause: ConstraintClause) -> bool:
    ops = clause.operands
    if clause.kind == "equal":
        return value == _align(value, ops[0])
    if clause.kind == "valid_values":
        return any(value == _align(value, op) for op in ops)
    if clause.kind == "greater_or_equal":
        return value >= _ordered(value, ops[0])
    if clause.kind == "less_or_equal":
        return value <= _ordered(value, ops[0])
    if clause.kind == "in_range":
        lo, hi = (_ordered(value, op) for op in ops)
        return lo <= value <= hi
    raise IncompatibleOperand(f"unsupported constraint {clause.kind!r}")


def check_constraints(value: Any, clauses: Iterable[ConstraintClause]) -> ConstraintReport:
    """Evaluate clauses in declaration order and collect the violated ones."""
    return ConstraintReport(tuple(c for c in clauses if not _holds(value, c)))


# -- type definitions --------------------------------------------------------


@dataclass(frozen=True)
class PropertyDefinition:
    name: str
    type: str = "string"
    required: bool = True
    default: Any = None
    constraints: tuple[ConstraintClause, ...] = ()
    description: str = ""

    @property
    def has_default(self) -> bool:
        return self.default is not None


@dataclass(frozen=True)
class CapabilityDefinition:
    name: str
    type: str


@dataclass(frozen=True)
class RequirementDefinition:
    name: str
    capability: str | None = None
    node: str | None = None
    relationship: str | None = None


@dataclass(frozen=True)
class ArtifactDefinition:
    name: str
    file: str
    type: str


@dataclass(frozen=True)
class OperationDefinition:
    name: str
    implementation: str
    inputs: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class InterfaceDefinition:
    name: str
    operations: Mapping[str, OperationDefinition] = field(default_factory=dict)


@dataclass(frozen=True)
class NodeTypeDefinition:
    name: str
    derived_from: str | None = None
    properties: Mapping[str, PropertyDefinition] = field(default_factory=dict)
    attributes: tuple[str, ...] = ()
    capabilities: Mapping[str, CapabilityDefinition] = field(default_factory=dict)
    requirements: Mapping[str, RequirementDefinition] = field(default_factory=dict)
    artifacts: Mapping[str, ArtifactDefinition] = field(default_factory=dict)
    interfaces: Mapping[str, InterfaceDefinition] = field(default_factory=dict)
    description: str = ""
    # filled in by flatten_type: the type itself followed by its ancestors
    lineage: tuple[str, ...] = ()


@dataclass(frozen=True)
class CapabilityTypeDefinition:
    name: str
    derived_from: str | None = None
    properties: Mapping[str, PropertyDefinition] = field(default_factory=dict)
    description: str = ""
    lineage: tuple[str, ...] = ()


@dataclass
class TypeRegistry:
    """Node and capability types visible to a template, plus merge warnings."""

    node_types: dict[str, NodeTypeDefinition] = field(default_factory=dict)
    capability_types: dict[str, CapabilityTypeDefinition] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    _flat: dict[str, Any] = field(default_factory=dict, repr=False, compare=False)

    def copy(self) -> TypeRegistry:
        return TypeRegistry(dict(self.node_types), dict(self.capability_types), list(self.warnings))

    def is_derived_from(self, type_name: str, ancestor: str) -> bool:
        return ancestor in flatten_type(type_name, self).lineage

    def capability_is(self, cap_type: str, ancestor: str) -> bool:
        return ancestor in flatten_capability_type(cap_type, self).lineage


def _lineage(name: str, table: Mapping[str, Any]) -> list[Any]:
    chain, seen = [], []
    current: str | None = name
    while current is not None:
        if current in seen:
            raise CyclicDerivation(f"derived_from cycle: {' -> '.join(seen + [current])}")
        defn = table.get(current)
        if defn is None:
            if not chain:
                raise UnknownType(f"unknown type {current!r}")
            raise UnknownType(f"{chain[-1].name!r} derives from unknown type {current!r}")
        seen.append(current)
        chain.append(defn)
        current = defn.derived_from
    return chain


def _merge_properties(
    owner: str, parent: Mapping[str, PropertyDefinition], child: Mapping[str, PropertyDefinition]
) -> dict[str, PropertyDefinition]:
    merged = dict(parent)
    for name, prop in child.items():
        base = parent.get(name)
        if base is not None:
            if base.required and not prop.required:
                raise InvalidDerivation(f"{owner} may not make required property {name!r} optional")
            if not prop.description and base.description:
                prop = replace(prop, description=base.description)
        merged[name] = prop
    return merged


def _merge_interfaces(
    parent: Mapping[str, InterfaceDefinition], child: Mapping[str, InterfaceDefinition]
) -> dict[str, InterfaceDefinition]:
    merged = dict(parent)
    for name, iface in child.items():
        ops = dict(parent[name].operations) if name in parent else {}
        ops.update(iface.operations)
        merged[name] = InterfaceDefinition(name, ops)
    return merged


def flatten_type(type_name: str, registry: TypeRegistry) -> NodeTypeDefinition:
    """Merge a node type with all of its ancestors, child entries winning."""
    key = ("node", type_name)
    cached = registry._flat.get(key)
    if cached is not None:
        return cached
    chain = _lineage(type_name, registry.node_types)
    flat = NodeTypeDefinition(name=chain[-1].name)
    for defn in reversed(chain):
        flat = NodeTypeDefinition(
            name=defn.name,
            derived_from=defn.derived_from,
            properties=_merge_properties(defn.name, flat.properties, defn.properties),
            attributes=tuple(dict.fromkeys(flat.attributes + defn.attributes)),
            capabilities={**flat.capabilities, **defn.capabilities},
            requirements={**flat.requirements, **defn.requirements},
            artifacts={**flat.artifacts, **defn.artifacts},
            interfaces=_merge_interfaces(flat.interfaces, defn.interfaces),
            description=defn.description or flat.description,
        )
    flat = replace(flat, lineage=tuple(d.name for d in chain))
    registry._flat[key] = flat
    return flat


def flatten_capability_type(type_name: str, registry: TypeRegistry) -> CapabilityTypeDefinition:
    key = ("capability", type_name)
    cached = registry._flat.get(key)
    if cached is not None:
        return cached
    chain = _lineage(type_name, registry.capability_types)
    props: dict[str, PropertyDefinition] = {}
    for defn in reversed(chain):
        props = _merge_properties(defn.name, props, defn.properties)
    flat = CapabilityTypeDefinition(
        name=type_name,
        derived_from=chain[0].derived_from,
        properties=props,
        description=chain[0].description,
        lineage=tuple(d.name for d in chain),
    )
    registry._flat[key] = flat
    return flat


# -- topology ----------------------------------------------------------------


@dataclass(frozen=True)
class InputDefinition:
    name: str
    type: str = "string"
    default: Any = None
    required: bool = True
    constraints: tuple[ConstraintClause, ...] = ()
    description: str = ""


@dataclass(frozen=True)
class OutputDefinition:
    name: str
    value: Any
    description: str = ""


@dataclass(frozen=True)
class CapabilityAssignment:
    properties: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class NodeTemplate:
    name: str
    type_name: str
    properties: Mapping[str, Any] = field(default_factory=dict)
    capabilities: Mapping[str, CapabilityAssignment] = field(default_factory=dict)
    requirements: tuple[tuple[str, str], ...] = ()
    artifacts: Mapping[str, ArtifactDefinition] = field(default_factory=dict)
    interfaces: Mapping[str, InterfaceDefinition] = field(default_factory=dict)
    description: str = ""


@dataclass(frozen=True)
class TopologyTemplate:
    inputs: Mapping[str, InputDefinition] = field(default_factory=dict)
    node_templates: Mapping[str, NodeTemplate] = field(default_factory=dict)
    outputs: Mapping[str, OutputDefinition] = field(default_factory=dict)


@dataclass(frozen=True)
class ServiceTemplate:
    definitions_version: str = DEFINITIONS_VERSION
    imports: tuple[str, ...] = ()
    node_types: Mapping[str, NodeTypeDefinition] = field(default_factory=dict)
    capability_types: Mapping[str, CapabilityTypeDefinition] = field(default_factory=dict)
    topology: TopologyTemplate = field(default_factory=TopologyTemplate)
    description: str = ""


# -- function evaluation -----------------------------------------------------


class AttributeStore:
    """Runtime attributes of deployed nodes: node -> attribute -> per-instance values."""

    def __init__(self, data: Mapping[str, Mapping[str, list]] | None = None) -> None:
        self._data: dict[str, dict[str, list]] = {
            node: {k: list(v) for k, v in attrs.items()} for node, attrs in (data or {}).items()
        }

    def set(self, node: str, attribute: str, values: list) -> None:
        self._data.setdefault(node, {})[attribute] = list(values)

    def get(self, node: str, attribute: str) -> list:
        try:
            return list(self._data[node][attribute])
        except KeyError:
            raise AttributeUnavailable(
                f"attribute {attribute!r} of {node!r} is not available yet", node=node
            ) from None

    def __contains__(self, node: str) -> bool:
        return node in self._data


def _target(name: str, self_node: str | None, topology: TopologyTemplate) -> str:
    if name == "SELF":
        if self_node is None:
            raise UnknownReference("SELF used outside of a node context")
        name = self_node
    if name not in topology.node_templates:
        raise UnknownReference(f"unknown node {name!r}", node=self_node)
    return name


def evaluate_function(
    expr: FunctionExpr,
    topology: TopologyTemplate,
    inputs: Mapping[str, Any] | None = None,
    runtime: AttributeStore | None = None,
    self_node: str | None = None,
) -> Any:
    """Evaluate an intrinsic function against a topology (and runtime store)."""
    inputs = inputs or {}
    args = expr.args
    if expr.function == "get_input":
        name = args[0]
        if name in inputs:
            return inputs[name]
        decl = topology.inputs.get(name)
        if decl is None:
            raise UnknownReference(f"unknown input {name!r}", node=self_node)
        if decl.default is None:
            raise UnknownReference(f"input {name!r} has no value and no default", node=self_node)
        return decl.default

    if expr.function == "get_property":
        if len(args) not in (2, 3):
            raise UnknownReference(f"get_property expects 2 or 3 arguments, got {list(args)}")
        node = _target(args[0], self_node, topology)
        tpl = topology.node_templates[node]
        if len(args) == 3:
            cap = tpl.capabilities.get(args[1])
            props = cap.properties if cap is not None else {}
        else:
            props = tpl.properties
        if args[-1] not in props:
            raise UnknownReference(f"node {node!r} has no property {args[-1]!r}", node=self_node)
        return resolve_value(props[args[-1]], topology, inputs, runtime, node)

    if expr.function == "get_attribute":
        if len(args) != 2:
            raise UnknownReference(f"get_attribute expects 2 arguments, got {list(args)}")
        node = _target(args[0], self_node, topology)
        if runtime is None:
            raise AttributeUnavailable(f"{node!r} is not running; no runtime attributes", node=node)
        return runtime.get(node, args[1])

    raise UnknownReference(f"unsupported function {expr.function!r}")


def resolve_value(
    value: Any,
    topology: TopologyTemplate,
    inputs: Mapping[str, Any] | None = None,
    runtime: AttributeStore | None = None,
    self_node: str | None = None,
) -> Any:
    """Recursively evaluate every function expression nested in ``value``."""
    if isinstance(value, FunctionExpr):
        return evaluate_function(value, topology, inputs, runtime, self_node)
    if isinstance(value, dict):
        return {k: resolve_value(v, topology, inputs, runtime, self_node) for k, v in value.items()}
    if isinstance(value, list):
        return [resolve_value(v, topology, inputs, runtime, self_node) for v in value]
    return value
