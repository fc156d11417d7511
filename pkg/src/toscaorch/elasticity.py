"""CLUES-like elasticity: a simulated job queue per cluster driving worker scale-out and scale-in."""

from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, field

from .errors import NoCapableProvider, SlotsExceedSlaveCapacity, UnknownCluster
from .orchestrator import RUNNING as DEP_RUNNING, SCALING as DEP_SCALING, Orchestrator
from .cloudsim import RUNNING as INSTANCE_RUNNING

log = logging.getLogger(__name__)

PENDING = "PENDING"
RUNNING = "RUNNING"
DONE = "DONE"

GROW = "grow"
SHRINK = "shrink"
NONE = "none"


@dataclass(frozen=True)
class ClusterBinding:
    deployment_id: str
    worker: str
    front_end: str
    worker_compute: str
    min_instances: int
    max_instances: int
    slots_per_slave: int = 1
    idle_threshold: int = 5

    def __post_init__(self) -> None:
        if self.min_instances > self.max_instances:
            raise ValueError(f"min_instances {self.min_instances} > max_instances {self.max_instances}")
        if self.slots_per_slave < 1:
            raise ValueError("slots_per_slave must be >= 1")


@dataclass
class SimJob:
    id: str
    slots: int = 1
    duration: int = 1
    state: str = PENDING
    slave: str | None = None
    submitted_tick: int = 0
    started_tick: int | None = None
    finished_tick: int | None = None

    def view(self) -> dict:
        return {
            "id": self.id,
            "slots": self.slots,
            "duration": self.duration,
            "state": self.state,
            "slave": self.slave,
            "submitted_tick": self.submitted_tick,
            "started_tick": self.started_tick,
            "finished_tick": self.finished_tick,
        }


@dataclass(frozen=True)
class ScalingDecision:
    kind: str
    target: int | None = None
    victims: tuple[str, ...] = ()
    reason: str = ""


@dataclass
class Cluster:
    binding: ClusterBinding
    jobs: dict[str, SimJob] = field(default_factory=dict)
    idle_since: dict[str, int] = field(default_factory=dict)
    watch: list[tuple[int, int, int, int]] = field(default_factory=list)
    decisions: list[tuple[int, ScalingDecision]] = field(default_factory=list)
    lock: threading.RLock = field(default_factory=threading.RLock, repr=False)

    @property
    def id(self) -> str:
        return self.binding.deployment_id

    def count(self, state: str) -> int:
        return sum(1 for j in self.jobs.values() if j.state == state)


def _index(instance_id: str) -> int:
    tail = instance_id.rsplit("_", 1)[-1]
    return int(tail) if tail.isdigit() else 0


class ElasticityManager:
    """Watches job queues and asks the orchestrator to resize worker nodes.

    Registers itself as a tick hook, so every orchestrator tick runs one
    scheduling and decision round per cluster.
    """

    def __init__(self, orch: Orchestrator) -> None:
        self.orch = orch
        self.clusters: dict[str, Cluster] = {}
        self._jobs = 0
        self._lock = threading.Lock()
        orch.add_tick_hook(self.on_tick)

    # -- clusters --------------------------------------------------------

    def attach(self, deployment_id: str) -> Cluster:
        if deployment_id in self.clusters:
            return self.clusters[deployment_id]
        dep = self.orch.deployments.get(deployment_id)
        if dep is None or dep.plan is None or not dep.plan.elastic or dep.state not in (DEP_RUNNING, DEP_SCALING):
            raise UnknownCluster(f"no running elastic cluster for deployment {deployment_id!r}")
        e = dep.plan.elastic[0]
        cluster = Cluster(ClusterBinding(
            deployment_id=deployment_id,
            worker=e.worker,
            front_end=e.front_end,
            worker_compute=e.worker_compute,
            min_instances=e.min_instances,
            max_instances=e.max_instances,
            slots_per_slave=e.slots_per_slave,
            idle_threshold=e.idle_threshold,
        ))
        self.clusters[deployment_id] = cluster
        return cluster

    def cluster(self, deployment_id: str) -> Cluster:
        if deployment_id not in self.clusters:
            return self.attach(deployment_id)
        return self.clusters[deployment_id]

    def _live(self, deployment_id: str) -> bool:
        dep = self.orch.deployments.get(deployment_id)
        return dep is not None and dep.state in (DEP_RUNNING, DEP_SCALING)

    def slaves(self, cluster: Cluster) -> list[str]:
        """Active worker instances, booting ones included."""
        dep = self.orch.deployments[cluster.id]
        return self.orch.active_members(dep, cluster.binding.worker_compute)

    def ready_slaves(self, cluster: Cluster) -> list[str]:
        return [i for i in self.slaves(cluster) if self.orch.cloud.instances[i].state == INSTANCE_RUNNING]

    def _used(self, cluster: Cluster, slave: str) -> int:
        return sum(j.slots for j in cluster.jobs.values() if j.state == RUNNING and j.slave == slave)

    # -- jobs ------------------------------------------------------------

    def submit_job(self, deployment_id: str, slots: int = 1, duration: int = 1) -> str:
        if not self._live(deployment_id):
            raise UnknownCluster(f"no running elastic cluster for deployment {deployment_id!r}")
        cluster = self.cluster(deployment_id)
        if slots < 1 or duration < 1:
            raise ValueError("slots and duration must be positive")
        if slots > cluster.binding.slots_per_slave:
            raise SlotsExceedSlaveCapacity(
                f"job needs {slots} slots, a slave offers {cluster.binding.slots_per_slave}"
            )
        with self._lock:
            self._jobs += 1
            job_id = f"job-{self._jobs:04d}"
        with cluster.lock:
            cluster.jobs[job_id] = SimJob(job_id, slots, duration, submitted_tick=self.orch.now)
            self._schedule(cluster)
        return job_id

    def jobs(self, deployment_id: str) -> list[SimJob]:
        return list(self.cluster(deployment_id).jobs.values())

    def _schedule(self, cluster: Cluster) -> None:
        now = self.orch.now
        ready = sorted(self.ready_slaves(cluster), key=_index)
        for job in cluster.jobs.values():
            if job.state != PENDING:
                continue
            for slave in ready:
                if self._used(cluster, slave) + job.slots <= cluster.binding.slots_per_slave:
                    job.state, job.slave, job.started_tick = RUNNING, slave, now
                    cluster.idle_since.pop(slave, None)
                    break

    def _progress(self, cluster: Cluster) -> None:
        now = self.orch.now
        for job in cluster.jobs.values():
            if job.state == RUNNING and now - job.started_tick >= job.duration:
                job.state, job.finished_tick = DONE, now

    def _track_idle(self, cluster: Cluster) -> None:
        now = self.orch.now
        ready = set(self.ready_slaves(cluster))
        for slave in list(cluster.idle_since):
            if slave not in ready:
                del cluster.idle_since[slave]
        for slave in ready:
            if self._used(cluster, slave):
                cluster.idle_since.pop(slave, None)
            else:
                cluster.idle_since.setdefault(slave, now)

    # -- decisions -------------------------------------------------------

    def clues_tick(self, cluster: Cluster) -> ScalingDecision:
        """Decide, without acting, how the worker count should change."""
        b = cluster.binding
        if self.orch.deployments[cluster.id].state != DEP_RUNNING:
            return ScalingDecision(NONE, reason="scaling in progress")
        slaves = self.slaves(cluster)
        current = len(slaves)
        pending = sum(j.slots for j in cluster.jobs.values() if j.state == PENDING)
        needed = math.ceil(pending / b.slots_per_slave)
        if needed > 0:
            if current >= b.max_instances:
                return ScalingDecision(NONE, reason="at max_instances")
            target = min(current + needed, b.max_instances)
            return ScalingDecision(GROW, target, reason=f"{pending} pending slot(s)")
        now = self.orch.now
        busy = sum(1 for s in slaves if self._used(cluster, s))
        floor = max(b.min_instances, busy)
        idle = [s for s in slaves if s in cluster.idle_since and now - cluster.idle_since[s] >= b.idle_threshold]
        removable = min(len(idle), current - floor)
        if removable <= 0:
            return ScalingDecision(NONE, reason="steady")
        victims = sorted(idle, key=lambda s: (cluster.idle_since[s], -_index(s)))[:removable]
        return ScalingDecision(SHRINK, current - removable, tuple(victims), reason=f"{removable} idle slave(s)")

    def apply(self, decision: ScalingDecision, cluster: Cluster) -> None:
        """Carry out a decision; a capacity shortage is logged and retried later."""
        if decision.kind == NONE:
            return
        b = cluster.binding
        cloud = self.orch.cloud
        current = len(self.slaves(cluster))
        cloud.record("clues", cluster.id, str(current), f"{decision.kind}:{decision.target}")
        if decision.kind == SHRINK:
            self.orch.scale(cluster.id, b.worker, decision.target, victims=decision.victims)
            for v in decision.victims:
                cluster.idle_since.pop(v, None)
            return
        # Try the full target first, then settle for whatever capacity exists.
        for target in range(decision.target, current, -1):
            try:
                self.orch.scale(cluster.id, b.worker, target)
                return
            except NoCapableProvider as exc:
                log.info("cluster %s cannot grow to %d: %s", cluster.id, target, exc)
        cloud.record("clues", cluster.id, str(current), "retry")

    def on_tick(self, now: int) -> None:
        for dep_id, dep in list(self.orch.deployments.items()):
            if dep_id not in self.clusters and dep.state == DEP_RUNNING and dep.plan and dep.plan.elastic:
                self.attach(dep_id)
        for cluster in list(self.clusters.values()):
            if not self._live(cluster.id):
                continue
            with cluster.lock:
                self._progress(cluster)
                self._schedule(cluster)
                self._track_idle(cluster)
                decision = self.clues_tick(cluster)
                if decision.kind != NONE:
                    cluster.decisions.append((now, decision))
                    self.apply(decision, cluster)
                cluster.watch.append((now, len(self.slaves(cluster)), cluster.count(PENDING), cluster.count(RUNNING)))

    def watch_lines(self, deployment_id: str) -> list[str]:
        return [f"{t} {s} {p} {r}" for t, s, p, r in self.cluster(deployment_id).watch]
