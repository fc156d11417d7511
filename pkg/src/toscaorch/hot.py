"""Translate topology graphs into Heat Orchestration Templates (HOT)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Collection, Mapping, Sequence

import datetime

import yaml

from .catalogs import DEFAULT_FLAVORS, FlavorCatalog, ImageCatalog, load_image_catalog, map_flavor, map_image
from .errors import AttributeUnavailable, ToscaError, ToscaSyntaxError, UntranslatableNode
from .model import FunctionExpr, ScalarSize, resolve_value, to_plain
from .parser import DATA_DIR, HOSTED_ON, TopologyGraph, ValidationReport

HEAT_TEMPLATE_VERSION = "2013-05-23"
NOVA_SERVER = "OS::Nova::Server"
SOFTWARE_CONFIG = "SOFTWARE_CONFIG"

# TOSCA Compute attribute -> Nova server attribute
_HOT_ATTRIBUTES = {
    "public_address": "first_address",
    "private_address": "first_address",
    "networks": "networks",
}


def default_image_catalog() -> ImageCatalog:
    return load_image_catalog(DATA_DIR / "catalogs" / "images_base.yaml")


# -- per-node requests and configuration tasks -------------------------------


@dataclass(frozen=True)
class ConfigTask:
    """One lifecycle operation run on a vanilla host (an Ansible role in practice)."""

    node: str
    operation: str
    implementation: str
    inputs: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "node": self.node,
            "operation": self.operation,
            "implementation": self.implementation,
            "inputs": dict(self.inputs),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> ConfigTask:
        return cls(data["node"], data["operation"], data["implementation"], dict(data.get("inputs") or {}))


def _static(value: Any, graph: TopologyGraph, node: str) -> Any:
    """Evaluate what can be evaluated before deployment; keep runtime bindings symbolic."""
    if isinstance(value, FunctionExpr):
        try:
            return _static(resolve_value(value, graph.topology, graph.input_values, None, node), graph, node)
        except AttributeUnavailable:
            return _symbolic(value, graph, node).to_yaml()
    if isinstance(value, dict):
        return {k: _static(v, graph, node) for k, v in value.items()}
    if isinstance(value, list):
        return [_static(v, graph, node) for v in value]
    return to_plain(value)


def _symbolic(expr: FunctionExpr, graph: TopologyGraph, node: str) -> FunctionExpr:
    """Follow get_property indirections down to the runtime get_attribute."""
    while expr.function == "get_property" and len(expr.args) == 2:
        target = node if expr.args[0] == "SELF" else expr.args[0]
        inner = graph.nodes[target].properties.get(expr.args[1])
        if not isinstance(inner, FunctionExpr):
            break
        expr, node = inner, target
    if expr.args and expr.args[0] == "SELF":
        expr = FunctionExpr(expr.function, (node,) + tuple(expr.args[1:]))
    return expr


def lifecycle_tasks(graph: TopologyGraph, node: str) -> list[ConfigTask]:
    iface = graph.nodes[node].interfaces.get("Standard")
    if iface is None:
        return []
    tasks = []
    for opname in ("create", "configure", "start"):
        op = iface.operations.get(opname)
        if op is None or not op.implementation:
            continue
        inputs = {k: _static(v, graph, node) for k, v in op.inputs.items()}
        tasks.append(ConfigTask(node, opname, op.implementation, inputs))
    return tasks


def configuration_tasks(graph: TopologyGraph, compute: str) -> list[ConfigTask]:
    """Ordered tasks of every software node hosted (transitively) on ``compute``."""
    tasks = lifecycle_tasks(graph, compute)
    for node in graph.hosted_software(compute):
        tasks.extend(lifecycle_tasks(graph, node))
    return tasks


def host_request(graph: TopologyGraph, compute: str) -> tuple[int | None, ScalarSize | None, ScalarSize | None]:
    host = graph.nodes[compute].capability("host")
    return host.get("num_cpus"), host.get("mem_size"), host.get("disk_size")


def os_request(graph: TopologyGraph, compute: str) -> dict[str, Any]:
    return dict(graph.nodes[compute].capability("os"))


def resource_names(graph: TopologyGraph, compute: str, count: int) -> list[str]:
    """Bare node name for a plain single server, ``name_<i>`` for scaled ones."""
    if count == 1 and not graph.scaling(compute).bounded:
        return [compute]
    return [f"{compute}_{i}" for i in range(count)]


def check_translatable(graph: TopologyGraph) -> None:
    """Unhosted non-Compute nodes may only carry bindings, never operations."""
    for name in graph.nodes:
        if graph.compute_host(name) is None and lifecycle_tasks(graph, name):
            raise UntranslatableNode(f"{name!r} ({graph.nodes[name].type_name}) is not hosted on a Compute node", node=name)


# -- documents ---------------------------------------------------------------


@dataclass
class HotResource:
    type: str
    properties: dict[str, Any] = field(default_factory=dict)
    depends_on: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"type": self.type, "properties": self.properties}
        if self.depends_on:
            out["depends_on"] = list(self.depends_on)
        return out


@dataclass
class HotDocument:
    heat_template_version: str = HEAT_TEMPLATE_VERSION
    parameters: dict[str, Any] = field(default_factory=dict)
    resources: dict[str, HotResource] = field(default_factory=dict)
    outputs: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "heat_template_version": self.heat_template_version,
            "parameters": self.parameters,
            "resources": {n: r.to_dict() for n, r in self.resources.items()},
            "outputs": self.outputs,
        }

    def servers(self) -> dict[str, HotResource]:
        return {n: r for n, r in self.resources.items() if r.type == NOVA_SERVER}


def translate(
    graph: TopologyGraph,
    flavors: FlavorCatalog | None = None,
    images: ImageCatalog | None = None,
    *,
    instances: Mapping[str, Sequence[str]] | None = None,
    image_for: Mapping[str, str] | None = None,
    preconfigured: Collection[str] = (),
) -> HotDocument:
    """Build the HOT equivalent of ``graph``.

    ``instances`` pins the resource names per Compute node (nodes left out get
    no resources); by default each node gets its initial instance count.
    ``image_for`` overrides the image mapping per Compute node, and nodes in
    ``preconfigured`` boot an application image so carry no configuration tasks.
    """
    flavors = flavors or DEFAULT_FLAVORS
    images = images if images is not None else default_image_catalog()
    image_for = image_for or {}
    check_translatable(graph)

    names: dict[str, list[str]] = {}
    for compute in graph.compute_nodes():
        if instances is not None:
            names[compute] = list(instances.get(compute, ()))
        else:
            names[compute] = resource_names(graph, compute, graph.scaling(compute).initial)

    doc = HotDocument()
    for compute in graph.compute_nodes():
        if not names[compute]:
            continue
        try:
            flavor = map_flavor(*host_request(graph, compute), flavors)
            image = image_for.get(compute) or map_image(os_request(graph, compute), images)
        except ToscaError as exc:
            exc.node = compute
            raise
        props: dict[str, Any] = {"flavor": flavor, "image": image, "user_data_format": SOFTWARE_CONFIG}
        if compute not in preconfigured:
            tasks = configuration_tasks(graph, compute)
            if tasks:
                props["user_data"] = [t.to_dict() for t in tasks]
        if graph.public_endpoint(compute):
            props["networks"] = [{"network": "PUBLIC"}]
        deps = _compute_dependencies(graph, compute)
        depends_on = sorted(r for d in deps for r in names.get(d, ()))
        for res in names[compute]:
            doc.resources[res] = HotResource(NOVA_SERVER, dict(props), list(depends_on))

    for name, out in graph.outputs.items():
        entry = {"value": _hot_value(out.value, graph, names)}
        if out.description:
            entry["description"] = out.description
        doc.outputs[name] = entry
    return doc


def _compute_dependencies(graph: TopologyGraph, compute: str) -> list[str]:
    deps = []
    for e in graph.edges:
        if e.kind == HOSTED_ON:
            continue
        if graph.compute_host(e.source) != compute:
            continue
        target = graph.compute_host(e.target)
        if target is not None and target != compute and target not in deps:
            deps.append(target)
    return deps


def _hot_value(value: Any, graph: TopologyGraph, names: Mapping[str, list[str]]) -> Any:
    if isinstance(value, FunctionExpr):
        if value.function == "get_attribute":
            node, attr = value.args[0], value.args[1]
            compute = graph.compute_host(node) or node
            hot_attr = _HOT_ATTRIBUTES.get(attr, attr)
            refs = [{"get_attr": [r, hot_attr]} for r in names.get(compute, ())]
            return refs[0] if len(refs) == 1 else refs
        return to_plain(resolve_value(value, graph.topology, graph.input_values))
    if isinstance(value, dict):
        return {k: _hot_value(v, graph, names) for k, v in value.items()}
    if isinstance(value, list):
        return [_hot_value(v, graph, names) for v in value]
    return to_plain(value)


# -- serialization -----------------------------------------------------------


def _dump(key: str, value: Any) -> str:
    return yaml.safe_dump({key: value}, default_flow_style=False, sort_keys=True, indent=2, allow_unicode=True)


def serialize_hot(doc: HotDocument) -> str:
    """Canonical, byte-stable rendering with a fixed top-level key order."""
    data = doc.to_dict()
    parts = [f"heat_template_version: {doc.heat_template_version}\n"]
    for key in ("parameters", "resources", "outputs"):
        parts.append(_dump(key, data[key]))
    return "".join(parts)


def parse_hot(text: str) -> HotDocument:
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        raise ToscaSyntaxError(f"malformed HOT: {exc.problem}", mark.line + 1 if mark else None,
                               mark.column + 1 if mark else None) from None
    if not isinstance(data, dict):
        raise ToscaSyntaxError("HOT document root must be a mapping", 1, 1)
    version = data.get("heat_template_version")
    if isinstance(version, datetime.date):
        version = version.isoformat()
    unknown = set(data) - {"heat_template_version", "description", "parameters", "resources", "outputs"}
    if unknown:
        raise ToscaSyntaxError(f"unknown HOT sections {sorted(unknown)}")
    resources = {}
    for name, res in (data.get("resources") or {}).items():
        resources[name] = HotResource(
            type=res.get("type", ""),
            properties=dict(res.get("properties") or {}),
            depends_on=list(res.get("depends_on") or []),
        )
    return HotDocument(
        heat_template_version=str(version),
        parameters=dict(data.get("parameters") or {}),
        resources=resources,
        outputs=dict(data.get("outputs") or {}),
    )


def validate_hot(doc: HotDocument) -> ValidationReport:
    """Check a HOT document against what the Heat-like simulator accepts."""
    report = ValidationReport()
    if doc.heat_template_version != HEAT_TEMPLATE_VERSION:
        report.error("-", "version", f"heat_template_version {doc.heat_template_version!r} is not {HEAT_TEMPLATE_VERSION}")
    for name, res in doc.resources.items():
        if res.type != NOVA_SERVER:
            report.error(name, "resource-type", f"unsupported resource type {res.type!r}")
            continue
        for key in ("flavor", "image"):
            if not res.properties.get(key):
                report.error(name, "resource-property", f"missing {key}")
        for dep in res.depends_on:
            if dep not in doc.resources:
                report.error(name, "depends-on", f"depends on unknown resource {dep!r}")
    return report
