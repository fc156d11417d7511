"""Simulated worlds and the line-oriented scenario scripts replayed against them.

A scenario is plain text with one step per line (``#`` starts a comment)::

    providers hybrid
    submit m mesos_elastic_cluster.yaml
    settle m
    jobs submit m --count 8 --duration 6
    tick 30
    assert m.max_slaves == 5
"""

from __future__ import annotations

import argparse
import operator
import re
import shlex
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .catalogs import ImageEntry
from .cloudsim import Cloud, ProviderDescriptor, load_providers
from .elasticity import DONE, PENDING, RUNNING as JOB_RUNNING, ElasticityManager
from .errors import AssertFailed, ScenarioError
from .orchestrator import DeploymentStore, Orchestrator
from .parser import DATA_DIR, ImportResolver

PROVIDERS_DIR = DATA_DIR / "providers"
TEMPLATES_DIR = DATA_DIR / "templates"
SCENARIOS_DIR = DATA_DIR / "scenarios"
DEFAULT_PROVIDERS = PROVIDERS_DIR / "default.yaml"


def find_file(ref: str, base: Path | None, shipped: Path, suffix: str) -> Path:
    """Resolve ``ref`` as a path (relative to ``base``) or as the name of a shipped fixture."""
    candidates = [Path(ref)]
    if base is not None:
        candidates.append(base / ref)
    candidates += [shipped / ref, shipped / f"{ref}{suffix}"]
    for path in candidates:
        if path.is_file():
            return path
    raise FileNotFoundError(f"cannot find {ref!r}")


class World:
    """One cloud, its orchestrator and the elasticity manager, sharing a clock."""

    def __init__(
        self,
        providers: list[ProviderDescriptor],
        *,
        token: str | None = None,
        store: DeploymentStore | None = None,
        resolver: ImportResolver | None = None,
    ) -> None:
        self.providers = providers
        self.cloud = Cloud(providers)
        self.orch = Orchestrator(self.cloud, token=token, store=store, resolver=resolver)
        self.elastic = ElasticityManager(self.orch)

    @classmethod
    def from_file(cls, path: str | Path = DEFAULT_PROVIDERS, **kwargs) -> World:
        return cls(load_providers(path), **kwargs)

    def stream(self) -> list[str]:
        return self.cloud.event_lines()


# -- metrics -----------------------------------------------------------------


def _dep_metrics(world: World, dep_id: str, metric: str, arg: str | None) -> Any:
    orch = world.orch
    dep = orch.deployments[dep_id]
    cloud = world.cloud
    live = [cloud.instances[i] for ids in dep.members.values() for i in ids if cloud.instances[i].active]
    if metric == "state":
        return dep.state
    if metric == "provider":
        return dep.plan.provider if dep.plan else "none"
    if metric == "ready_tick":
        return dep.ready_tick if dep.ready_tick is not None else -1
    if metric == "tasks":
        return len(dep.plan.config_tasks) if dep.plan else 0
    if metric == "procedure":
        return dep.plan.assignment(arg).procedure
    if metric == "count":
        compute = dep.graph.compute_host(arg) or arg
        return len(orch.active_members(dep, compute))
    if metric == "instances":
        return len(live)
    if metric == "placement":
        return sum(1 for i in live if i.provider == arg)
    if metric == "masters":
        return sum(1 for i in live if i.master)
    if metric == "reachable":
        return str(all(cloud.reachable(a.id, b.id) for a in live for b in live)).lower()
    if metric == "output":
        return str(orch.resolve_outputs(dep_id).get(arg))
    cluster = world.elastic.cluster(dep_id)
    if metric == "slaves":
        return len(world.elastic.slaves(cluster))
    if metric == "max_slaves":
        return max((w[1] for w in cluster.watch), default=0)
    if metric in ("pending", "running", "done"):
        return cluster.count({"pending": PENDING, "running": JOB_RUNNING, "done": DONE}[metric])
    if metric == "jobs":
        return len(cluster.jobs)
    raise KeyError(metric)


def _world_metrics(world: World, metric: str, arg: str | None) -> Any:
    cloud = world.cloud
    if metric == "now":
        return cloud.now
    if metric in ("free_vms", "free_vcpus", "free_mem"):
        return cloud.free_quota(arg)[("free_vms", "free_vcpus", "free_mem").index(metric)]
    if metric == "used_vms":
        return cloud.usage(arg)[0]
    if metric == "events":
        return len(cloud.events)
    raise KeyError(metric)


_ASSERT = re.compile(
    r"^(?:(?P<alias>[A-Za-z_][\w-]*)\.)?(?P<metric>\w+)(?:\[(?P<arg>[^\]]+)\])?\s*"
    r"(?P<op>==|!=|<=|>=|<|>)\s*(?P<value>\S+)$"
)
_OPS: dict[str, Callable[[Any, Any], bool]] = {
    "==": operator.eq, "!=": operator.ne, "<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge,
}


def _literal(text: str) -> Any:
    try:
        return int(text)
    except ValueError:
        return text


# -- scripts -----------------------------------------------------------------


@dataclass(frozen=True)
class Step:
    line: int
    verb: str
    args: tuple[str, ...]
    text: str


@dataclass
class ScenarioResult:
    stream: list[str]
    checks: list[tuple[int, str, Any, bool]] = field(default_factory=list)
    aliases: dict[str, str] = field(default_factory=dict)

    @property
    def text(self) -> str:
        return "".join(f"{line}\n" for line in self.stream)


_VERBS = {"providers", "submit", "tick", "settle", "jobs", "scale", "register-image", "delete", "assert"}


def parse_scenario(text: str) -> list[Step]:
    steps = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if body.startswith("assert "):
            verb, args = "assert", (body[len("assert "):].strip(),)
        else:
            try:
                words = shlex.split(body)
            except ValueError as exc:
                raise ScenarioError(str(exc), lineno) from None
            verb, args = words[0], tuple(words[1:])
        if verb not in _VERBS:
            raise ScenarioError(f"unknown step {verb!r}", lineno)
        steps.append(Step(lineno, verb, args, body))
    return steps


def _kv(words: tuple[str, ...], step: Step) -> dict[str, str]:
    out = {}
    for w in words:
        if "=" not in w:
            raise ScenarioError(f"expected key=value, got {w!r}", step.line)
        k, v = w.split("=", 1)
        out[k] = v
    return out


def _jobs_args(words: tuple[str, ...], step: Step) -> argparse.Namespace:
    p = argparse.ArgumentParser(prog="jobs submit", add_help=False, exit_on_error=False)
    p.add_argument("alias")
    p.add_argument("--slots", type=int, default=1)
    p.add_argument("--duration", type=int, default=1)
    p.add_argument("--count", type=int, default=1)
    try:
        return p.parse_args(list(words))
    except (argparse.ArgumentError, SystemExit) as exc:
        raise ScenarioError(f"bad jobs step: {exc}", step.line) from None


class ScenarioRunner:
    """Executes steps against a fresh world, created lazily at the first non-``providers`` step."""

    def __init__(self, providers: str | Path = DEFAULT_PROVIDERS, base: Path | None = None) -> None:
        self.providers_path = Path(providers)
        self.base = base
        self.world: World | None = None
        self.result = ScenarioResult([])

    def _world(self) -> World:
        if self.world is None:
            self.world = World.from_file(self.providers_path)
        return self.world

    def _dep(self, alias: str, step: Step) -> str:
        if alias not in self.result.aliases:
            raise ScenarioError(f"unknown deployment alias {alias!r}", step.line)
        return self.result.aliases[alias]

    def evaluate(self, expr: str, step: Step) -> tuple[Any, bool]:
        m = _ASSERT.match(expr)
        if not m:
            raise ScenarioError(f"cannot parse assertion {expr!r}", step.line)
        world = self._world()
        try:
            if m["alias"]:
                actual = _dep_metrics(world, self._dep(m["alias"], step), m["metric"], m["arg"])
            else:
                actual = _world_metrics(world, m["metric"], m["arg"])
        except KeyError as exc:
            raise ScenarioError(f"unknown metric or argument {exc}", step.line) from None
        expected = _literal(m["value"])
        try:
            ok = _OPS[m["op"]](actual, expected)
        except TypeError:
            ok = False
        return actual, ok

    def step(self, step: Step) -> None:
        verb, args = step.verb, step.args
        if verb == "providers":
            if self.world is not None:
                raise ScenarioError("providers must come before any other step", step.line)
            self.providers_path = find_file(args[0], self.base, PROVIDERS_DIR, ".yaml")
            return
        world = self._world()
        orch = world.orch
        if verb == "submit":
            alias, template = args[0], find_file(args[1], self.base, TEMPLATES_DIR, ".yaml")
            inputs = _kv(args[2:], step)
            self.result.aliases[alias] = orch.submit(template.read_text(encoding="utf-8"), inputs)
        elif verb == "tick":
            orch.tick(int(args[0]) if args else 1)
        elif verb == "settle":
            orch.settle(self._dep(args[0], step), int(args[1]) if len(args) > 1 else 1000)
        elif verb == "jobs":
            if not args or args[0] != "submit":
                raise ScenarioError("only 'jobs submit' is a scenario step", step.line)
            ns = _jobs_args(args[1:], step)
            dep = self._dep(ns.alias, step)
            for _ in range(ns.count):
                world.elastic.submit_job(dep, ns.slots, ns.duration)
        elif verb == "scale":
            orch.scale(self._dep(args[0], step), args[1], int(args[2]))
        elif verb == "register-image":
            meta = _kv(args[2:], step)
            world.cloud.register_image(args[0], ImageEntry(name=args[1], **meta))
        elif verb == "delete":
            orch.delete(self._dep(args[0], step))
        elif verb == "assert":
            actual, ok = self.evaluate(args[0], step)
            self.result.checks.append((step.line, args[0], actual, ok))
            if not ok:
                raise AssertFailed(f"assert {args[0]} failed (actual {actual!r})", step.line)

    def run(self, steps: list[Step]) -> ScenarioResult:
        try:
            for step in steps:
                try:
                    self.step(step)
                except IndexError:
                    raise ScenarioError(f"missing argument in {step.text!r}", step.line) from None
        finally:
            self.result.stream = self.world.stream() if self.world else []
        return self.result


def run_script(text: str, providers: str | Path = DEFAULT_PROVIDERS, base: Path | None = None) -> ScenarioResult:
    """Replay scenario text against a fresh world."""
    return ScenarioRunner(providers, base=base).run(parse_scenario(text))


def run_scenario(path: str | Path, providers: str | Path = DEFAULT_PROVIDERS) -> ScenarioResult:
    """Replay a scenario file, given as a path or the name of a shipped scenario."""
    path = find_file(str(path), None, SCENARIOS_DIR, ".scn")
    return run_script(path.read_text(encoding="utf-8"), providers, base=path.parent)
