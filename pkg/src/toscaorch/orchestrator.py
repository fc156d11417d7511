"""PaaS orchestrator: provider selection, two-procedure planning, execution and scaling."""

from __future__ import annotations

import hmac
import json
import logging
import os
import tempfile
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .catalogs import ImageCatalog, map_flavor, map_image
from .cloudsim import (
    CONTEXTUALIZING,
    HEAT_LIKE,
    RUNNING as INSTANCE_RUNNING,
    Cloud,
    ProviderDescriptor,
)
from .errors import (
    AttributeUnavailable,
    AuthFailed,
    BackendError,
    InvalidTransition,
    NoCapableProvider,
    NoMatchingFlavor,
    OutOfBounds,
    StoreUnavailable,
    ToscaError,
    ToscaOrchError,
    UnknownDeployment,
    ValidationFailed,
)
from .hot import ConfigTask, configuration_tasks, host_request, os_request, resource_names, translate
from .model import AttributeStore, ScalarSize, resolve_value, to_plain
from .parser import ImportResolver, TopologyGraph, check_template

log = logging.getLogger(__name__)

SUBMITTED = "SUBMITTED"
PLANNING = "PLANNING"
PROVISIONING = "PROVISIONING"
CONFIGURING = "CONFIGURING"
RUNNING = "RUNNING"
SCALING = "SCALING"
FAILED = "FAILED"
DELETED = "DELETED"

_LEGAL = {
    (SUBMITTED, PLANNING), (PLANNING, PROVISIONING), (PROVISIONING, CONFIGURING),
    (CONFIGURING, RUNNING), (RUNNING, SCALING), (SCALING, RUNNING),
    (RUNNING, DELETED), (FAILED, DELETED),
}

PRECONFIGURED = "preconfigured"
VANILLA = "vanilla"

ELASTIC_CLUSTER = "tosca.nodes.indigo.ElasticCluster"


# -- plans -------------------------------------------------------------------


@dataclass(frozen=True)
class ComputeAssignment:
    """Placement of one Compute node; every one of its instances shares it."""

    node: str
    provider: str
    flavor: str
    image: str
    procedure: str  # PRECONFIGURED or VANILLA
    requested_image: str | None
    tasks: tuple[ConfigTask, ...]
    count: int
    min_instances: int | None = None
    max_instances: int | None = None


@dataclass(frozen=True)
class ElasticBinding:
    """What the elasticity manager needs to know about an ElasticCluster node."""

    cluster_node: str
    front_end: str
    worker: str
    worker_compute: str
    min_instances: int
    max_instances: int
    slots_per_slave: int
    idle_threshold: int


@dataclass(frozen=True)
class DeploymentPlan:
    deployment_id: str
    provider: str
    assignments: tuple[ComputeAssignment, ...]
    task_order: tuple[str, ...]
    elastic: tuple[ElasticBinding, ...] = ()

    @property
    def config_tasks(self) -> list[ConfigTask]:
        return [t for a in self.assignments for t in a.tasks]

    def assignment(self, node: str) -> ComputeAssignment:
        for a in self.assignments:
            if a.node == node:
                return a
        raise KeyError(node)

    def initial_counts(self) -> dict[str, int]:
        return {a.node: a.count for a in self.assignments}

    def to_dict(self) -> dict:
        return to_plain(asdict(self))


@dataclass(frozen=True)
class ResourceRequest:
    """Host requirements, one ``(num_cpus, mem_size, disk_size)`` entry per instance."""

    instances: tuple[tuple[int | None, ScalarSize | None, ScalarSize | None], ...]

    @classmethod
    def for_graph(cls, graph: TopologyGraph, counts: Mapping[str, int] | None = None) -> ResourceRequest:
        out = []
        for compute in graph.compute_nodes():
            n = counts[compute] if counts is not None else graph.scaling(compute).initial
            out.extend([host_request(graph, compute)] * n)
        return cls(tuple(out))


@dataclass(frozen=True)
class ProviderStatus:
    """A provider as seen at selection time: free quota and registered images."""

    descriptor: ProviderDescriptor
    free_vms: int
    free_vcpus: int
    free_mem: int
    images: frozenset[str]

    def flavors_for(self, request: ResourceRequest) -> list[str] | None:
        try:
            return [map_flavor(c, m, d, self.descriptor.flavors) for c, m, d in request.instances]
        except NoMatchingFlavor:
            return None

    def fits(self, request: ResourceRequest) -> bool:
        names = self.flavors_for(request)
        if names is None:
            return False
        flavors = [self.descriptor.flavors.get(n) for n in names]
        return (
            len(flavors) <= self.free_vms
            and sum(f.vcpus for f in flavors) <= self.free_vcpus
            and sum(f.mem.bytes for f in flavors) <= self.free_mem
        )

    def minus(self, request: ResourceRequest) -> ProviderStatus:
        flavors = [self.descriptor.flavors.get(n) for n in self.flavors_for(request) or []]
        return ProviderStatus(
            self.descriptor,
            self.free_vms - len(flavors),
            self.free_vcpus - sum(f.vcpus for f in flavors),
            self.free_mem - sum(f.mem.bytes for f in flavors),
            self.images,
        )


def select_provider(
    request: ResourceRequest, providers: Sequence[ProviderStatus], needed_image: str | None = None
) -> ProviderDescriptor:
    """Among providers whose free quota fits, prefer image locality, then SLA rank, then id."""
    capable = [p for p in providers if p.fits(request)]
    if not capable:
        raise NoCapableProvider(
            f"no provider can host {len(request.instances)} instance(s) "
            f"(checked {[p.descriptor.id for p in providers]})"
        )
    best = min(
        capable,
        key=lambda p: (0 if needed_image and needed_image in p.images else 1, p.descriptor.sla_rank, p.descriptor.id),
    )
    return best.descriptor


def requested_images(graph: TopologyGraph) -> list[str]:
    return sorted({str(os_request(graph, c)["image"]) for c in graph.compute_nodes() if os_request(graph, c).get("image")})


def decide_image(graph: TopologyGraph, compute: str, images: ImageCatalog) -> tuple[str, str, str | None]:
    """Return ``(procedure, image, requested image)`` for a Compute node at one site."""
    os_props = os_request(graph, compute)
    requested = os_props.pop("image", None)
    if requested and requested in images:
        return PRECONFIGURED, str(requested), str(requested)
    return VANILLA, map_image(os_props, images), requested


def elastic_bindings(graph: TopologyGraph) -> list[ElasticBinding]:
    out = []
    for name, node in graph.nodes.items():
        if not node.derives_from(ELASTIC_CLUSTER):
            continue
        reqs = dict(node.template.requirements)
        front, worker = reqs.get("lrms"), reqs.get("wn")
        if front is None or worker is None:
            continue
        compute = graph.compute_host(worker)
        if compute is None:
            continue
        spec = graph.scaling(compute)
        out.append(ElasticBinding(
            cluster_node=name,
            front_end=front,
            worker=worker,
            worker_compute=compute,
            min_instances=spec.min_instances or 0,
            max_instances=spec.max_instances if spec.max_instances is not None else spec.initial,
            slots_per_slave=int(node.properties.get("slots_per_slave", 1)),
            idle_threshold=int(node.properties.get("idle_threshold", 5)),
        ))
    return out


def make_plan(deployment_id: str, graph: TopologyGraph, provider: ProviderDescriptor, images: ImageCatalog) -> DeploymentPlan:
    """Pure planning step: flavors, the image procedure and tasks per Compute node."""
    assignments = []
    for compute in graph.compute_nodes():
        try:
            flavor = map_flavor(*host_request(graph, compute), provider.flavors)
            procedure, image, requested = decide_image(graph, compute, images)
        except ToscaError as exc:
            exc.node = compute
            raise
        tasks = () if procedure == PRECONFIGURED else tuple(configuration_tasks(graph, compute))
        spec = graph.scaling(compute)
        assignments.append(ComputeAssignment(
            node=compute,
            provider=provider.id,
            flavor=flavor,
            image=image,
            procedure=procedure,
            requested_image=requested,
            tasks=tasks,
            count=spec.initial,
            min_instances=spec.min_instances,
            max_instances=spec.max_instances,
        ))
    return DeploymentPlan(
        deployment_id=deployment_id,
        provider=provider.id,
        assignments=tuple(assignments),
        task_order=tuple(graph.topological_order()),
        elastic=tuple(elastic_bindings(graph)),
    )


# -- deployment records ------------------------------------------------------


@dataclass(frozen=True)
class LogEntry:
    seq: int
    tick: int
    old: str
    new: str
    note: str = ""


@dataclass
class Deployment:
    id: str
    template: str
    inputs: dict[str, Any]
    state: str = SUBMITTED
    graph: TopologyGraph | None = None
    plan: DeploymentPlan | None = None
    members: dict[str, list[str]] = field(default_factory=dict)  # compute node -> instance ids
    groups: list[str] = field(default_factory=list)
    master: str | None = None
    overlay: str = ""
    outputs: dict[str, Any] = field(default_factory=dict)
    events: list[LogEntry] = field(default_factory=list)
    cause: str | None = None
    ready_tick: int | None = None
    submitted_tick: int = 0
    next_index: dict[str, int] = field(default_factory=dict)

    def record(self, cloud: Cloud) -> dict:
        return {
            "id": self.id,
            "state": self.state,
            "inputs": to_plain(self.inputs),
            "template": self.template,
            "provider": self.plan.provider if self.plan else None,
            "plan": self.plan.to_dict() if self.plan else None,
            "instances": {
                node: [cloud.instances[i].view() for i in ids] for node, ids in self.members.items()
            },
            "groups": list(self.groups),
            "master": self.master,
            "outputs": to_plain(self.outputs),
            "cause": self.cause,
            "submitted_tick": self.submitted_tick,
            "ready_tick": self.ready_tick,
            "events": [asdict(e) for e in self.events],
        }


class DeploymentStore:
    """One JSON record per deployment under ``root``, replaced atomically.

    With ``root=None`` records live in memory only.
    """

    def __init__(self, root: str | Path | None = None) -> None:
        self.root = Path(root) if root is not None else None
        self._memory: dict[str, str] = {}
        self._write_lock = threading.Lock()
        if self.root is not None:
            try:
                self.root.mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise StoreUnavailable(f"cannot use state directory {self.root}: {exc}") from None

    def save(self, record: Mapping[str, Any]) -> None:
        text = json.dumps(record, sort_keys=True, indent=2) + "\n"
        with self._write_lock:
            if self.root is None:
                self._memory[record["id"]] = text
                return
            try:
                fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".tmp-", suffix=".json")
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    fh.write(text)
                os.replace(tmp, self.root / f"{record['id']}.json")
            except OSError as exc:
                raise StoreUnavailable(f"cannot write deployment record: {exc}") from None

    def load(self, deployment_id: str) -> dict:
        if self.root is None:
            text = self._memory.get(deployment_id)
        else:
            path = self.root / f"{deployment_id}.json"
            text = path.read_text(encoding="utf-8") if path.is_file() else None
        if text is None:
            raise UnknownDeployment(f"unknown deployment {deployment_id!r}")
        return json.loads(text)

    def ids(self) -> list[str]:
        if self.root is None:
            return sorted(self._memory)
        return sorted(p.stem for p in self.root.glob("*.json"))


@dataclass(frozen=True)
class DeploymentView:
    id: str
    state: str
    provider: str | None
    instances: dict[str, list[dict]]
    events: tuple[LogEntry, ...]
    cause: str | None
    ready_tick: int | None
    plan: DeploymentPlan | None

    def count(self, node: str) -> int:
        return sum(1 for i in self.instances.get(node, []) if i["state"] != "TERMINATED")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "state": self.state,
            "provider": self.provider,
            "instances": self.instances,
            "cause": self.cause,
            "ready_tick": self.ready_tick,
            "events": [asdict(e) for e in self.events],
        }


# -- orchestrator ------------------------------------------------------------


class Orchestrator:
    """Accepts TOSCA submissions and drives them to RUNNING on the simulated cloud.

    ``submit`` only records the deployment; planning and provisioning happen
    on :meth:`tick`, which also advances the cloud clock by one step.
    """

    def __init__(
        self,
        cloud: Cloud,
        *,
        token: str | None = None,
        store: DeploymentStore | None = None,
        resolver: ImportResolver | None = None,
    ) -> None:
        self.cloud = cloud
        self.token = token
        self.store = store or DeploymentStore()
        self.resolver = resolver or ImportResolver.default()
        self.deployments: dict[str, Deployment] = {}
        self._seq = 0
        self._ids = 0
        self._lock = threading.RLock()
        self._dep_locks: dict[str, threading.RLock] = {}
        self._hooks: list[Callable[[int], None]] = []

    # -- helpers ---------------------------------------------------------

    @property
    def now(self) -> int:
        return self.cloud.now

    def add_tick_hook(self, hook: Callable[[int], None]) -> None:
        self._hooks.append(hook)

    def _get(self, deployment_id: str) -> Deployment:
        dep = self.deployments.get(deployment_id)
        if dep is None or dep.state == DELETED:
            raise UnknownDeployment(f"unknown deployment {deployment_id!r}")
        return dep

    def _transition(self, dep: Deployment, new: str, note: str = "") -> None:
        if new != FAILED and (dep.state, new) not in _LEGAL:
            raise InvalidTransition(f"{dep.id}: {dep.state} -> {new} is not allowed")
        with self._lock:
            self._seq += 1
            seq = self._seq
        dep.events.append(LogEntry(seq, self.now, dep.state, new, note))
        self.cloud.record("orchestrator", dep.id, dep.state, new)
        dep.state = new
        self._persist(dep)

    def _persist(self, dep: Deployment) -> None:
        self.store.save(dep.record(self.cloud))

    def _fail(self, dep: Deployment, exc: Exception) -> None:
        dep.cause = f"{type(exc).__name__}: {exc}"
        log.warning("deployment %s failed: %s", dep.id, dep.cause)
        self._transition(dep, FAILED, dep.cause)

    def provider_status(self, provider_id: str, extra: ResourceRequest | None = None) -> ProviderStatus:
        desc = self.cloud.provider(provider_id)
        vms, cpus, mem = self.cloud.free_quota(provider_id)
        status = ProviderStatus(desc, vms, cpus, mem, frozenset(self.cloud.images(provider_id).names()))
        return status.minus(extra) if extra else status

    def active_members(self, dep: Deployment, node: str) -> list[str]:
        return [i for i in dep.members.get(node, []) if self.cloud.instances[i].active]

    # -- API -------------------------------------------------------------

    def submit(self, tosca_text: str, inputs: Mapping[str, Any] | None = None, auth: str | None = None) -> str:
        """Validate and record a deployment; returns its id without provisioning."""
        if self.token is not None and not hmac.compare_digest(str(auth or ""), self.token):
            raise AuthFailed("invalid token")
        graph, report = check_template(tosca_text, self.resolver, inputs)
        if not report.ok:
            raise ValidationFailed(f"template has {len(report.errors)} error(s)", report)
        with self._lock:
            self._ids += 1
            dep_id = f"dep-{self._ids:04d}"
            dep = Deployment(dep_id, tosca_text, dict(inputs or {}), graph=graph, submitted_tick=self.now)
            dep.overlay = f"overlay-{dep_id}"
            self._dep_locks[dep_id] = threading.RLock()
            self.deployments[dep_id] = dep
        self._persist(dep)
        self.cloud.record("orchestrator", dep_id, "NONE", SUBMITTED)
        return dep_id

    def choose_provider(self, dep: Deployment) -> ProviderDescriptor:
        graph = dep.graph
        statuses = [self.provider_status(p) for p in self.cloud.provider_ids()]
        wanted = requested_images(graph)
        return select_provider(ResourceRequest.for_graph(graph), statuses, wanted[0] if wanted else None)

    def plan(self, deployment_id: str, provider_id: str | None = None) -> DeploymentPlan:
        """Select a provider (unless given) and compute the plan; no side effects on the cloud."""
        dep = self.deployments[deployment_id] if deployment_id in self.deployments else self._get(deployment_id)
        provider = self.cloud.provider(provider_id) if provider_id else self.choose_provider(dep)
        return make_plan(dep.id, dep.graph, provider, self.cloud.images(provider.id))

    def execute(self, deployment_id: str) -> None:
        """Hand the planned deployment to its provider's backend."""
        dep = self._get(deployment_id)
        with self._dep_locks[dep.id]:
            if dep.state == PLANNING:
                self._transition(dep, PROVISIONING)
            try:
                self._launch(dep, dep.plan.provider, dep.plan.initial_counts())
            except (BackendError, ToscaError) as exc:
                self._fail(dep, exc)

    def _names(self, dep: Deployment, compute: str, count: int) -> list[str]:
        graph = dep.graph
        if compute not in dep.next_index:
            names = resource_names(graph, compute, count)
            dep.next_index[compute] = count
            return names
        start = dep.next_index[compute]
        dep.next_index[compute] = start + count
        return [f"{compute}_{i}" for i in range(start, start + count)]

    def _launch(self, dep: Deployment, provider_id: str, counts: Mapping[str, int]) -> list[str]:
        graph, plan = dep.graph, dep.plan
        desc = self.cloud.provider(provider_id)
        images = self.cloud.images(provider_id)
        names: dict[str, list[str]] = {}
        image_for: dict[str, str] = {}
        preconfigured: set[str] = set()
        for compute, count in counts.items():
            a = plan.assignment(compute)
            if provider_id == plan.provider:
                procedure, image = a.procedure, a.image
            else:
                procedure, image, _ = decide_image(graph, compute, images)
            image_for[compute] = image
            if procedure == PRECONFIGURED:
                preconfigured.add(compute)
            names[compute] = self._names(dep, compute, count) if count else []
        if desc.backend_kind == HEAT_LIKE:
            hot = translate(graph, desc.flavors, images, instances=names, image_for=image_for, preconfigured=preconfigured)
            owners = {n: c for c, ns in names.items() for n in ns}
            gid = self.cloud.create_stack(provider_id, hot, nodes=owners)
        else:
            master = dep.master if dep.master and dep.groups else None
            gid = self.cloud.deploy_graph(
                provider_id, graph, instances=names, image_for=image_for, preconfigured=preconfigured, master=master
            )
        dep.groups.append(gid)
        created = list(self.cloud.groups[gid].instances)
        for iid in created:
            inst = self.cloud.instances[iid]
            dep.members.setdefault(inst.node, []).append(iid)
            self.cloud.attach_overlay(iid, dep.overlay)
        for compute in counts:
            dep.members.setdefault(compute, [])
        self._persist(dep)
        return created

    def tick(self, n: int = 1) -> None:
        """Advance the whole system ``n`` logical ticks."""
        for _ in range(n):
            self._process_pending()
            self.cloud.tick(1)
            for dep in list(self.deployments.values()):
                with self._dep_locks[dep.id]:
                    self._reconcile(dep)
            for hook in self._hooks:
                hook(self.now)

    def run_until(self, predicate: Callable[[], bool], limit: int = 1000) -> int:
        """Tick until ``predicate()`` holds; returns the ticks spent."""
        spent = 0
        while not predicate():
            if spent >= limit:
                raise TimeoutError(f"condition not reached within {limit} ticks")
            self.tick()
            spent += 1
        return spent

    def settle(self, deployment_id: str, limit: int = 1000) -> str:
        """Tick until the deployment is RUNNING or FAILED; returns the state."""
        self.run_until(lambda: self.deployments[deployment_id].state in (RUNNING, FAILED, DELETED), limit)
        return self.deployments[deployment_id].state

    def _process_pending(self) -> None:
        for dep in list(self.deployments.values()):
            if dep.state != SUBMITTED:
                continue
            with self._dep_locks[dep.id]:
                self._transition(dep, PLANNING)
                try:
                    dep.plan = self.plan(dep.id)
                except (BackendError, ToscaError) as exc:
                    self._fail(dep, exc)
                    continue
                dep.master = None
                self.execute(dep.id)

    def _reconcile(self, dep: Deployment) -> None:
        if dep.state not in (PROVISIONING, CONFIGURING, SCALING):
            return
        insts = [self.cloud.instances[i] for ids in dep.members.values() for i in ids]
        live = [i for i in insts if i.active]
        if dep.master is None:
            dep.master = next((i.id for i in live if i.master), None)
        all_running = all(i.state == INSTANCE_RUNNING for i in live)
        if dep.state == PROVISIONING and (all_running or any(i.state == CONTEXTUALIZING for i in live)):
            self._transition(dep, CONFIGURING)
        if dep.state == CONFIGURING and all_running:
            dep.ready_tick = self.now
            self._transition(dep, RUNNING)
            dep.outputs = self._outputs(dep)
            self._persist(dep)
        elif dep.state == SCALING and all_running:
            self._transition(dep, RUNNING)

    def runtime_attributes(self, dep: Deployment) -> AttributeStore:
        store = AttributeStore()
        for node, ids in dep.members.items():
            running = [self.cloud.instances[i] for i in ids if self.cloud.instances[i].state == INSTANCE_RUNNING]
            if len(running) != len(self.active_members(dep, node)):
                continue  # some instance still booting: attributes unavailable
            store.set(node, "public_address", [i.public_address for i in running if i.public_address])
            store.set(node, "private_address", [i.private_address for i in running])
            store.set(node, "tosca_id", [i.id for i in running])
            store.set(node, "state", [i.state for i in running])
        return store

    def _outputs(self, dep: Deployment) -> dict[str, Any]:
        runtime = self.runtime_attributes(dep)
        graph = dep.graph
        return {
            name: resolve_value(out.value, graph.topology, graph.input_values, runtime)
            for name, out in graph.outputs.items()
        }

    def resolve_outputs(self, deployment_id: str) -> dict[str, Any]:
        dep = self._get(deployment_id)
        if dep.state not in (RUNNING, SCALING):
            raise AttributeUnavailable(f"deployment {dep.id} is {dep.state}; outputs need RUNNING")
        with self._dep_locks[dep.id]:
            dep.outputs = self._outputs(dep)
            return dict(dep.outputs)

    def status(self, deployment_id: str) -> DeploymentView:
        dep = self.deployments.get(deployment_id)
        if dep is None:
            raise UnknownDeployment(f"unknown deployment {deployment_id!r}")
        return DeploymentView(
            id=dep.id,
            state=dep.state,
            provider=dep.plan.provider if dep.plan else None,
            instances={n: [self.cloud.instances[i].view() for i in ids] for n, ids in dep.members.items()},
            events=tuple(dep.events),
            cause=dep.cause,
            ready_tick=dep.ready_tick,
            plan=dep.plan,
        )

    def scalable_compute(self, dep: Deployment, node: str) -> str:
        graph = dep.graph
        if node not in graph.nodes:
            raise OutOfBounds(f"{dep.id} has no node {node!r}")
        compute = graph.compute_host(node)
        if compute is None or not graph.scaling(compute).bounded:
            raise OutOfBounds(f"node {node!r} of {dep.id} has no scaling bounds")
        return compute

    def scale(self, deployment_id: str, node: str, target: int, victims: Sequence[str] | None = None) -> None:
        """Grow or shrink the instances behind ``node`` to ``target``.

        Added instances prefer the deployment's original provider and fall
        back to the next capable one (hybrid scale-out); all instances of a
        deployment share its overlay network.
        """
        dep = self._get(deployment_id)
        with self._dep_locks[dep.id]:
            if dep.state != RUNNING:
                raise InvalidTransition(f"{dep.id} is {dep.state}; scaling needs RUNNING")
            compute = self.scalable_compute(dep, node)
            spec = dep.graph.scaling(compute)
            lo = spec.min_instances or 0
            hi = spec.max_instances
            if target < lo or (hi is not None and target > hi):
                raise OutOfBounds(f"target {target} outside [{lo}, {hi}] for {node!r}")
            current = self.active_members(dep, compute)
            if target == len(current):
                return
            if target > len(current):
                placements = self._place(dep, compute, target - len(current))
                self._transition(dep, SCALING, f"{compute} {len(current)}->{target}")
                try:
                    for provider_id, count in placements:
                        self._launch(dep, provider_id, {compute: count})
                except (BackendError, ToscaError) as exc:
                    self._fail(dep, exc)
                    raise
            else:
                chosen = list(victims) if victims is not None else list(reversed(current))
                chosen = chosen[: len(current) - target]
                unknown = [v for v in chosen if v not in current]
                if unknown or len(chosen) != len(current) - target:
                    raise OutOfBounds(f"victims {chosen} do not select {len(current) - target} live {compute} instances")
                self._transition(dep, SCALING, f"{compute} {len(current)}->{target}")
                for iid in chosen:
                    self.cloud.terminate(iid)
                self._transition(dep, RUNNING)

    def _place(self, dep: Deployment, compute: str, count: int) -> list[tuple[str, int]]:
        """Provider per added instance; all-or-nothing."""
        graph = dep.graph
        one = ResourceRequest((host_request(graph, compute),))
        wanted = dep.plan.assignment(compute).requested_image
        statuses = {p: self.provider_status(p) for p in self.cloud.provider_ids()}
        placed: list[str] = []
        for _ in range(count):
            original = statuses[dep.plan.provider]
            if original.fits(one):
                choice = dep.plan.provider
            else:
                others = [s for p, s in statuses.items() if p != dep.plan.provider]
                try:
                    choice = select_provider(one, others, wanted).id
                except NoCapableProvider:
                    self.cloud.record("orchestrator", dep.id, "RUNNING", "SCALE_REJECTED")
                    raise NoCapableProvider(
                        f"{dep.id}: no capacity for {count} more {compute} instance(s); staying at current size"
                    ) from None
            statuses[choice] = statuses[choice].minus(one)
            placed.append(choice)
        out: list[tuple[str, int]] = []
        for p in placed:
            if out and out[-1][0] == p:
                out[-1] = (p, out[-1][1] + 1)
            else:
                out.append((p, 1))
        return out

    def delete(self, deployment_id: str, missing_ok: bool = False) -> None:
        """Terminate every instance on every provider and mark the deployment DELETED."""
        try:
            dep = self._get(deployment_id)
        except UnknownDeployment:
            if missing_ok:
                return
            raise
        with self._dep_locks[dep.id]:
            if dep.state not in (RUNNING, FAILED):
                raise InvalidTransition(f"{dep.id} is {dep.state}; only RUNNING or FAILED deployments can be deleted")
            for ids in dep.members.values():
                for iid in ids:
                    self.cloud.terminate(iid)
            self._transition(dep, DELETED)

    def list_deployments(self) -> list[str]:
        return list(self.deployments)


__all__ = [
    "ComputeAssignment", "Deployment", "DeploymentPlan", "DeploymentStore", "DeploymentView",
    "ElasticBinding", "LogEntry", "Orchestrator", "ProviderStatus", "ResourceRequest",
    "make_plan", "select_provider", "ToscaOrchError",
]
