"""Deterministic simulated cloud providers driven by a logical clock.

Two backend kinds exist: ``heat_like`` consumes HOT documents
(:meth:`Cloud.create_stack`) and ``im_like`` consumes topology graphs
(:meth:`Cloud.deploy_graph`) and contextualizes them from a master node.
Nothing here reads the wall clock or a random source.
"""

from __future__ import annotations

import ipaddress
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Collection, Iterable, Mapping, Sequence

import yaml

from .catalogs import (
    DEFAULT_FLAVORS,
    FlavorCatalog,
    ImageCatalog,
    ImageEntry,
    load_flavor_catalog,
    load_image_catalog,
    map_flavor,
    map_image,
)
from .errors import (
    BackendRejected,
    NoMatchingFlavor,
    NoPublicAddressAvailable,
    NoSuchFlavor,
    NoSuchImage,
    QuotaExceeded,
    ToscaError,
    UnknownInstance,
)
from .hot import NOVA_SERVER, ConfigTask, HotDocument, configuration_tasks, host_request, os_request, resource_names
from .model import ScalarSize
from .parser import DATA_DIR, TopologyGraph

HEAT_LIKE = "heat_like"
IM_LIKE = "im_like"

BOOTING = "BOOTING"
CONTEXTUALIZING = "CONTEXTUALIZING"
RUNNING = "RUNNING"
TERMINATED = "TERMINATED"
CREATED = "NONE"  # pseudo old-state of creation events


class LogicalClock:
    """Monotone tick counter; time only moves through :meth:`advance`."""

    def __init__(self, start: int = 0) -> None:
        if start < 0:
            raise ValueError("start must be non-negative")
        self.tick = start

    def advance(self, n: int = 1) -> int:
        if n < 0:
            raise ValueError("cannot move the clock backwards")
        self.tick += n
        return self.tick


# -- provider configuration --------------------------------------------------


@dataclass(frozen=True)
class Quotas:
    max_vms: int
    max_vcpus: int
    max_mem: ScalarSize

    def __post_init__(self) -> None:
        if self.max_vms < 0 or self.max_vcpus < 0 or self.max_mem.bytes < 0:
            raise ValueError("quotas must be non-negative")


@dataclass(frozen=True)
class Durations:
    boot: int = 3
    agent_install: int = 2
    per_task: int = 2


@dataclass(frozen=True)
class ProviderDescriptor:
    id: str
    backend_kind: str
    sla_rank: int
    quotas: Quotas
    flavors: FlavorCatalog = DEFAULT_FLAVORS
    images: ImageCatalog = field(default_factory=ImageCatalog, compare=False)
    public_pool: str = "203.0.113.0/28"
    private_subnet: str = "10.0.0.0/24"
    durations: Durations = Durations()
    runtime: str = "vm"

    def __post_init__(self) -> None:
        if self.backend_kind not in (HEAT_LIKE, IM_LIKE):
            raise ValueError(f"unknown backend_kind {self.backend_kind!r}")
        if self.runtime not in ("vm", "container"):
            raise ValueError(f"unknown runtime {self.runtime!r}")


_NAMED_IMAGE_CATALOGS = {
    "base": DATA_DIR / "catalogs" / "images_base.yaml",
    "with_powerfit": DATA_DIR / "catalogs" / "images_with_powerfit.yaml",
}


def _catalog_ref(ref: Any, base: Path, named: Mapping[str, Path], loader, from_records):
    if ref is None:
        ref = "base" if "base" in named else "default"
    if isinstance(ref, list):
        return from_records(ref)
    if ref in named:
        return loader(named[ref])
    path = Path(ref)
    return loader(path if path.is_absolute() else base / path)


def providers_from_records(records: Iterable[Mapping], base: str | Path = ".") -> list[ProviderDescriptor]:
    base = Path(base)
    out = []
    for rec in records:
        q = rec.get("quotas") or {}
        d = rec.get("durations") or {}
        net = rec.get("network") or {}
        out.append(ProviderDescriptor(
            id=str(rec["id"]),
            backend_kind=str(rec["backend_kind"]),
            sla_rank=int(rec["sla_rank"]),
            quotas=Quotas(int(q.get("max_vms", 0)), int(q.get("max_vcpus", 0)), ScalarSize.parse(str(q.get("max_mem", "0 B")))),
            flavors=_catalog_ref(
                rec.get("flavor_catalog"), base, {"default": DATA_DIR / "catalogs" / "flavors_default.yaml"},
                load_flavor_catalog, FlavorCatalog.from_records,
            ),
            images=_catalog_ref(rec.get("image_catalog"), base, _NAMED_IMAGE_CATALOGS, load_image_catalog, ImageCatalog.from_records),
            public_pool=str(net.get("public_pool", "203.0.113.0/28")),
            private_subnet=str(net.get("private_subnet", "10.0.0.0/24")),
            durations=Durations(int(d.get("boot", 3)), int(d.get("agent_install", 2)), int(d.get("per_task", 2))),
            runtime=str(rec.get("runtime", "vm")),
        ))
    ranks = [p.sla_rank for p in out]
    if len(set(ranks)) != len(ranks):
        raise ValueError(f"sla_rank values must be unique, got {ranks}")
    ids = [p.id for p in out]
    if len(set(ids)) != len(ids):
        raise ValueError(f"provider ids must be unique, got {ids}")
    return out


def load_providers(path: str | Path) -> list[ProviderDescriptor]:
    path = Path(path)
    data = yaml.safe_load(path.read_text(encoding="utf-8"))
    records = data.get("providers", []) if isinstance(data, dict) else data
    return providers_from_records(records or [], path.parent)


# -- simulation state --------------------------------------------------------


@dataclass
class SimInstance:
    id: str
    name: str
    node: str
    provider: str
    group: str
    flavor: str
    image: str
    vcpus: int
    mem: int
    tasks: tuple[ConfigTask, ...] = ()
    runtime: str = "vm"
    state: str = BOOTING
    public_address: str | None = None
    private_address: str | None = None
    boot_ticks: int = 0
    config_ticks: int = 0
    agent_ticks: int = 0
    created_tick: int = 0
    master: bool = False

    @property
    def active(self) -> bool:
        return self.state != TERMINATED

    @property
    def booted(self) -> bool:
        return self.state == BOOTING and self.boot_ticks == 0

    def view(self) -> dict:
        return {
            "id": self.id,
            "node": self.node,
            "provider": self.provider,
            "flavor": self.flavor,
            "image": self.image,
            "state": self.state,
            "public_address": self.public_address,
            "private_address": self.private_address,
            "runtime": self.runtime,
            "tasks": len(self.tasks),
            "master": self.master,
        }


@dataclass
class Group:
    """A Heat stack or an IM infrastructure."""

    id: str
    provider: str
    kind: str
    instances: list[str] = field(default_factory=list)
    master: str | None = None  # IM: chosen master (maybe in another group)
    master_candidate: str | None = None
    master_selected: bool = False
    agent_ready_tick: int | None = None


@dataclass(frozen=True)
class Event:
    tick: int
    provider: str
    instance: str
    old: str
    new: str

    def line(self) -> str:
        return f"{self.tick} {self.provider} {self.instance} {self.old} {self.new}"


class _AddressPool:
    def __init__(self, cidr: str) -> None:
        net = ipaddress.ip_network(cidr, strict=False)
        self._free = [str(a) for a in net.hosts()]
        self._used: set[str] = set()

    def available(self) -> int:
        return len(self._free) - len(self._used)

    def take(self) -> str | None:
        for addr in self._free:
            if addr not in self._used:
                self._used.add(addr)
                return addr
        return None

    def release(self, addr: str | None) -> None:
        self._used.discard(addr)


class _Site:
    def __init__(self, desc: ProviderDescriptor) -> None:
        self.desc = desc
        self.images = desc.images.copy()
        self.public = _AddressPool(desc.public_pool)
        self.private = _AddressPool(desc.private_subnet)


@dataclass(frozen=True)
class _Request:
    name: str
    node: str
    flavor: str
    image: str
    tasks: tuple[ConfigTask, ...]
    public: bool


class Cloud:
    """All simulated providers sharing one logical clock."""

    def __init__(self, providers: Iterable[ProviderDescriptor], clock: LogicalClock | None = None) -> None:
        self.clock = clock or LogicalClock()
        self._sites = {p.id: _Site(p) for p in providers}
        self.instances: dict[str, SimInstance] = {}
        self.groups: dict[str, Group] = {}
        self.overlays: dict[str, set[str]] = {}
        self.events: list[Event] = []
        self._lock = threading.RLock()
        self._seq = {"stack": 0, "infra": 0}

    # -- introspection ---------------------------------------------------

    @property
    def now(self) -> int:
        return self.clock.tick

    def provider(self, provider_id: str) -> ProviderDescriptor:
        return self._site(provider_id).desc

    def provider_ids(self) -> list[str]:
        return list(self._sites)

    def images(self, provider_id: str) -> ImageCatalog:
        return self._site(provider_id).images

    def _site(self, provider_id: str) -> _Site:
        try:
            return self._sites[provider_id]
        except KeyError:
            raise BackendRejected(f"unknown provider {provider_id!r}") from None

    def usage(self, provider_id: str) -> tuple[int, int, int]:
        """(vms, vcpus, memory bytes) held by active instances on a provider."""
        live = [i for i in self.instances.values() if i.provider == provider_id and i.active]
        return len(live), sum(i.vcpus for i in live), sum(i.mem for i in live)

    def free_quota(self, provider_id: str) -> tuple[int, int, int]:
        q = self.provider(provider_id).quotas
        vms, cpus, mem = self.usage(provider_id)
        return q.max_vms - vms, q.max_vcpus - cpus, q.max_mem.bytes - mem

    def fits(self, provider_id: str, flavor_names: Sequence[str], extra: tuple[int, int, int] = (0, 0, 0)) -> bool:
        """Would ``flavor_names`` (on top of ``extra`` already-promised usage) fit the quota?"""
        site = self._site(provider_id)
        vms, cpus, mem = (f - e for f, e in zip(self.free_quota(provider_id), extra))
        need_cpus = need_mem = 0
        for name in flavor_names:
            flavor = site.desc.flavors.get(name)
            if flavor is None:
                return False
            need_cpus += flavor.vcpus
            need_mem += flavor.mem.bytes
        return len(flavor_names) <= vms and need_cpus <= cpus and need_mem <= mem

    def group_ready(self, group_id: str) -> bool:
        group = self.groups[group_id]
        return all(self.instances[i].state == RUNNING for i in group.instances if self.instances[i].active)

    def instance(self, instance_id: str) -> SimInstance:
        try:
            return self.instances[instance_id]
        except KeyError:
            raise UnknownInstance(f"unknown instance {instance_id!r}") from None

    # -- provisioning ----------------------------------------------------

    def _new_group(self, provider_id: str, kind: str) -> Group:
        key = "stack" if kind == HEAT_LIKE else "infra"
        self._seq[key] += 1
        gid = f"{key}-{self._seq[key]}"
        group = Group(gid, provider_id, kind)
        self.groups[gid] = group
        return group

    def _admit(self, site: _Site, requests: Sequence[_Request], extra_public: int = 0) -> None:
        """All-or-nothing checks: catalog, quota, public addresses."""
        for req in requests:
            if site.desc.flavors.get(req.flavor) is None:
                raise NoSuchFlavor(f"{site.desc.id}: no flavor {req.flavor!r} for {req.name}")
            if req.image not in site.images:
                raise NoSuchImage(f"{site.desc.id}: image {req.image!r} for {req.name} is not registered")
        if not self.fits(site.desc.id, [r.flavor for r in requests]):
            vms, cpus, mem = self.free_quota(site.desc.id)
            raise QuotaExceeded(
                f"{site.desc.id}: {len(requests)} servers exceed free quota "
                f"(vms={vms}, vcpus={cpus}, mem={ScalarSize(mem)})"
            )
        need_public = sum(1 for r in requests if r.public) + extra_public
        if need_public > site.public.available():
            raise NoPublicAddressAvailable(f"{site.desc.id}: public address pool exhausted")
        if len(requests) > site.private.available():
            raise QuotaExceeded(f"{site.desc.id}: private subnet exhausted")

    def _spawn(self, site: _Site, group: Group, req: _Request, public: bool) -> SimInstance:
        flavor = site.desc.flavors.get(req.flavor)
        inst = SimInstance(
            id=f"{group.id}/{req.name}",
            name=req.name,
            node=req.node,
            provider=site.desc.id,
            group=group.id,
            flavor=req.flavor,
            image=req.image,
            vcpus=flavor.vcpus,
            mem=flavor.mem.bytes,
            tasks=req.tasks,
            runtime=site.desc.runtime,
            boot_ticks=site.desc.durations.boot,
            created_tick=self.now,
            private_address=site.private.take(),
            public_address=site.public.take() if public else None,
        )
        self.events.append(Event(self.now, site.desc.id, inst.id, CREATED, BOOTING))
        self.instances[inst.id] = inst
        group.instances.append(inst.id)
        return inst

    def create_stack(self, provider_id: str, hot: HotDocument, nodes: Mapping[str, str] | None = None) -> str:
        """Create every OS::Nova::Server of ``hot`` or nothing at all.

        ``nodes`` maps resource names to TOSCA node names for bookkeeping.
        """
        with self._lock:
            site = self._site(provider_id)
            if site.desc.backend_kind != HEAT_LIKE:
                raise BackendRejected(f"{provider_id} does not accept HOT documents")
            requests = []
            for name in sorted(hot.resources):
                res = hot.resources[name]
                if res.type != NOVA_SERVER:
                    raise BackendRejected(f"unsupported resource type {res.type!r} ({name})")
                props = res.properties
                public = any(n.get("network") == "PUBLIC" for n in props.get("networks") or [])
                tasks = tuple(ConfigTask.from_dict(t) for t in props.get("user_data") or [])
                requests.append(_Request(name, (nodes or {}).get(name, name), str(props.get("flavor")),
                                         str(props.get("image")), tasks, public))
            self._admit(site, requests)
            group = self._new_group(provider_id, HEAT_LIKE)
            for req in requests:
                self._spawn(site, group, req, req.public)
            return group.id

    def deploy_graph(
        self,
        provider_id: str,
        graph: TopologyGraph,
        *,
        instances: Mapping[str, Sequence[str]] | None = None,
        image_for: Mapping[str, str] | None = None,
        preconfigured: Collection[str] = (),
        master: str | None = None,
    ) -> str:
        """Provision the Compute nodes of ``graph`` IM-style.

        With ``master`` (an existing instance id) the new nodes are
        contextualized from that master instead of electing their own.
        """
        with self._lock:
            site = self._site(provider_id)
            if site.desc.backend_kind != IM_LIKE:
                raise BackendRejected(f"{provider_id} does not accept topology graphs")
            if master is not None:
                self.instance(master)
            image_for = image_for or {}
            requests = []
            for compute in graph.compute_nodes():
                names = (
                    list(instances.get(compute, ())) if instances is not None
                    else resource_names(graph, compute, graph.scaling(compute).initial)
                )
                if not names:
                    continue
                try:
                    flavor = map_flavor(*host_request(graph, compute), site.desc.flavors)
                    image = image_for.get(compute) or map_image(os_request(graph, compute), site.images)
                except NoMatchingFlavor as exc:
                    raise NoSuchFlavor(f"{provider_id}: {exc}") from None
                except ToscaError as exc:
                    raise NoSuchImage(f"{provider_id}: {exc}") from None
                tasks = () if compute in preconfigured else tuple(configuration_tasks(graph, compute))
                public = graph.public_endpoint(compute)
                requests.extend(_Request(n, compute, flavor, image, tasks, public) for n in names)
            requests.sort(key=lambda r: r.name)

            candidate = None
            if master is None and any(r.tasks for r in requests):
                publics = [r for r in requests if r.public]
                candidate = (publics or requests)[0]
            extra = 1 if candidate is not None and not candidate.public else 0
            if candidate is not None and extra and site.public.available() < 1 + sum(r.public for r in requests):
                raise NoPublicAddressAvailable(f"{provider_id}: no public address for the contextualization master")
            self._admit(site, requests, extra)
            group = self._new_group(provider_id, IM_LIKE)
            for req in requests:
                inst = self._spawn(site, group, req, req.public or req is candidate)
                if req is candidate:
                    group.master_candidate = inst.id
            if master is not None:
                group.master = master
                group.master_selected = True
            return group.id

    def register_image(self, provider_id: str, entry: ImageEntry) -> None:
        with self._lock:
            self._site(provider_id).images.add(entry)

    def terminate(self, instance_id: str) -> None:
        with self._lock:
            inst = self.instance(instance_id)
            if not inst.active:
                return
            site = self._site(inst.provider)
            self._transition(inst, TERMINATED)
            site.public.release(inst.public_address)
            site.private.release(inst.private_address)

    def attach_overlay(self, instance_id: str, overlay_id: str) -> None:
        with self._lock:
            self.instance(instance_id)
            self.overlays.setdefault(overlay_id, set()).add(instance_id)

    def reachable(self, a: str, b: str) -> bool:
        """Same-provider instances share a private subnet; others need a common overlay."""
        ia, ib = self.instance(a), self.instance(b)
        if not (ia.active and ib.active):
            return False
        if ia.provider == ib.provider:
            return True
        return any(a in members and b in members for members in self.overlays.values())

    # -- time ------------------------------------------------------------

    def _transition(self, inst: SimInstance, new: str) -> None:
        self.events.append(Event(self.now, inst.provider, inst.id, inst.state, new))
        inst.state = new

    def _start_config(self, inst: SimInstance) -> None:
        inst.config_ticks = len(inst.tasks) * self._site(inst.provider).desc.durations.per_task
        if inst.config_ticks:
            if inst.state != CONTEXTUALIZING:
                self._transition(inst, CONTEXTUALIZING)
        else:
            self._transition(inst, RUNNING)

    def tick(self, n: int = 1) -> list[Event]:
        """Advance ``n`` ticks; returns the events emitted meanwhile."""
        with self._lock:
            start = len(self.events)
            for _ in range(n):
                self.clock.advance(1)
                self._step()
            return self.events[start:]

    def _step(self) -> None:
        for inst in self.instances.values():
            if inst.state == BOOTING and inst.boot_ticks > 0:
                inst.boot_ticks -= 1
            elif inst.state == CONTEXTUALIZING:
                if inst.agent_ticks > 0:
                    inst.agent_ticks -= 1
                elif inst.config_ticks > 0:
                    inst.config_ticks -= 1
                    if inst.config_ticks == 0:
                        self._transition(inst, RUNNING)
        for group in self.groups.values():
            members = [self.instances[i] for i in group.instances if self.instances[i].active]
            if group.kind == HEAT_LIKE:
                for inst in members:
                    if inst.booted:
                        self._start_config(inst)
            else:
                self._step_infrastructure(group, members)

    def _step_infrastructure(self, group: Group, members: list[SimInstance]) -> None:
        if not group.master_selected:
            if not members or not all(i.booted for i in members):
                return
            group.master_selected = True
            if group.master_candidate is None:
                for inst in members:
                    self._transition(inst, RUNNING)
                return
            master = self.instances[group.master_candidate]
            master.master = True
            group.master = master.id
            master.agent_ticks = self._site(master.provider).desc.durations.agent_install
            self._transition(master, CONTEXTUALIZING)
            for inst in members:
                if inst is not master and not inst.tasks:
                    self._transition(inst, RUNNING)
        if group.master is None:
            return
        master = self.instances[group.master]
        if group.agent_ready_tick is None:
            if master.group != group.id:
                group.agent_ready_tick = self.groups[master.group].agent_ready_tick or self.now
            elif master.state == CONTEXTUALIZING and master.agent_ticks == 0 and master.config_ticks == 0:
                group.agent_ready_tick = self.now
                self._start_config(master)
            else:
                return
        for inst in members:
            if inst.booted:
                self._start_config(inst)

    def record(self, source: str, subject: str, old: str, new: str) -> None:
        """Append an event from outside the simulator (orchestrator, elasticity) to the shared stream."""
        with self._lock:
            self.events.append(Event(self.now, source, subject, old, new))

    def event_lines(self, since: int = 0) -> list[str]:
        return [e.line() for e in self.events[since:]]
