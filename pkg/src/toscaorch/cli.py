"""Command-line entry point: ``toscaorch <command> ...``.

Commands that change the simulated world are appended to a journal in the
state directory; every invocation rebuilds the world by replaying it, which
keeps the simulator deterministic across processes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from .catalogs import ImageEntry, load_flavor_catalog, load_image_catalog
from .errors import (
    BackendError,
    StoreUnavailable,
    ToscaOrchError,
    UnknownCluster,
    UnknownDeployment,
    UnknownInstance,
    ValidationFailed,
)
from .hot import serialize_hot, translate
from .model import to_plain
from .orchestrator import DeploymentStore
from .parser import ImportResolver, check_template
from .scenario import DEFAULT_PROVIDERS, PROVIDERS_DIR, World, find_file, run_scenario

ENV_TOKEN = "TOSCAORCH_TOKEN"
ENV_STATE_DIR = "TOSCAORCH_STATE_DIR"
ENV_PROVIDERS = "TOSCAORCH_PROVIDERS"

EXIT_OK, EXIT_USER, EXIT_BACKEND, EXIT_UNKNOWN = 0, 2, 3, 4


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, (UnknownDeployment, UnknownCluster, UnknownInstance, FileNotFoundError)):
        return EXIT_UNKNOWN
    if isinstance(exc, (BackendError, StoreUnavailable)):
        return EXIT_BACKEND
    return EXIT_USER


def _inputs(pairs: Sequence[str] | None) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep:
            raise ValueError(f"--input expects key=value, got {pair!r}")
        out[key] = value
    return out


def _emit(args: argparse.Namespace, data: Any, human: str | list[str]) -> None:
    if args.porcelain:
        print(json.dumps(to_plain(data), sort_keys=True))
    else:
        print(human if isinstance(human, str) else "\n".join(human))


# -- persistent state ----------------------------------------------------------


class State:
    """The journal-backed world living in a state directory."""

    def __init__(self, root: Path, providers: str | None) -> None:
        self.root = root
        self.journal = root / "journal.jsonl"
        self.meta = root / "world.json"
        chosen = find_file(providers, None, PROVIDERS_DIR, ".yaml").resolve() if providers else None
        bound = None
        if self.meta.is_file():
            bound = Path(json.loads(self.meta.read_text(encoding="utf-8"))["providers"])
            if chosen is not None and chosen != bound:
                raise ValueError(f"state directory {root} already uses providers {bound}")
        self.providers = bound or chosen or DEFAULT_PROVIDERS
        self.world = World.from_file(self.providers, store=DeploymentStore(root / "deployments"))
        for entry in self._entries():
            self._apply(entry)
        self.world.orch.token = os.environ.get(ENV_TOKEN)

    def _entries(self) -> list[dict]:
        if not self.journal.is_file():
            return []
        return [json.loads(line) for line in self.journal.read_text(encoding="utf-8").splitlines() if line.strip()]

    def _apply(self, e: dict) -> Any:
        w = self.world
        op = e["op"]
        if op == "submit":
            return w.orch.submit(e["template"], e["inputs"], e.get("auth"))
        if op == "tick":
            return w.orch.tick(e["n"])
        if op == "scale":
            return w.orch.scale(e["deployment"], e["node"], e["target"])
        if op == "delete":
            return w.orch.delete(e["deployment"], e.get("missing_ok", False))
        if op == "register":
            return w.cloud.register_image(e["provider"], ImageEntry(**e["entry"]))
        if op == "job":
            return w.elastic.submit_job(e["deployment"], e["slots"], e["duration"])
        raise ValueError(f"corrupt journal entry {e!r}")

    def do(self, entry: dict) -> Any:
        """Apply a mutation and journal it only if it succeeded."""
        result = self._apply(entry)
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            if not self.meta.is_file():
                self.meta.write_text(json.dumps({"providers": str(self.providers)}) + "\n", encoding="utf-8")
        except OSError as exc:
            raise StoreUnavailable(f"cannot use state directory {self.root}: {exc}") from None
        recorded = {k: v for k, v in entry.items() if k != "auth"}
        try:
            with self.journal.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(recorded, sort_keys=True) + "\n")
        except OSError as exc:
            raise StoreUnavailable(f"cannot append to {self.journal}: {exc}") from None
        return result


def _state(args: argparse.Namespace) -> State:
    root = os.environ.get(ENV_STATE_DIR) or args.state_dir
    providers = os.environ.get(ENV_PROVIDERS) or args.providers
    return State(Path(root), providers)


# -- commands ------------------------------------------------------------------


def cmd_validate(args: argparse.Namespace) -> int:
    text = Path(args.template).read_text(encoding="utf-8")
    _, report = check_template(text, ImportResolver.default(), _inputs(args.input))
    data = {
        "ok": report.ok,
        "errors": [f.__dict__ for f in report.errors],
        "warnings": [f.__dict__ for f in report.warnings],
    }
    _emit(args, data, report.lines() or ["ok"])
    return EXIT_OK if report.ok else EXIT_USER


def cmd_translate(args: argparse.Namespace) -> int:
    text = Path(args.template).read_text(encoding="utf-8")
    graph, report = check_template(text, ImportResolver.default(), _inputs(args.input))
    if not report.ok:
        raise ValidationFailed(f"template has {len(report.errors)} error(s)", report)
    flavors = load_flavor_catalog(args.flavor_catalog) if args.flavor_catalog else None
    images = load_image_catalog(args.image_catalog) if args.image_catalog else None
    doc = translate(graph, flavors, images)
    if args.porcelain:
        print(json.dumps(doc.to_dict(), sort_keys=True))
    else:
        sys.stdout.write(serialize_hot(doc))
    return EXIT_OK


def cmd_submit(args: argparse.Namespace) -> int:
    state = _state(args)
    text = Path(args.template).read_text(encoding="utf-8")
    auth = os.environ.get(ENV_TOKEN) if args.token is None else args.token
    dep_id = state.do({"op": "submit", "template": text, "inputs": _inputs(args.input), "auth": auth})
    if args.wait:
        orch = state.world.orch
        while orch.deployments[dep_id].state not in ("RUNNING", "FAILED"):
            state.do({"op": "tick", "n": 1})
    dep = state.world.orch.deployments[dep_id]
    _emit(args, {"id": dep_id, "state": dep.state}, f"{dep_id} {dep.state}")
    return EXIT_BACKEND if dep.state == "FAILED" else EXIT_OK


def cmd_tick(args: argparse.Namespace) -> int:
    state = _state(args)
    start = len(state.world.cloud.events)
    state.do({"op": "tick", "n": args.n})
    lines = state.world.cloud.event_lines(start)
    _emit(args, {"now": state.world.cloud.now, "events": lines}, lines + [f"now {state.world.cloud.now}"])
    return EXIT_OK


def cmd_status(args: argparse.Namespace) -> int:
    view = _state(args).world.orch.status(args.deployment)
    human = [f"{view.id} {view.state} provider={view.provider}"]
    if view.cause:
        human.append(f"cause: {view.cause}")
    for node, insts in view.instances.items():
        for i in insts:
            human.append(f"  {node} {i['id']} {i['state']} public={i['public_address']} private={i['private_address']}")
    _emit(args, view.to_dict(), human)
    return EXIT_OK


def cmd_outputs(args: argparse.Namespace) -> int:
    outputs = _state(args).world.orch.resolve_outputs(args.deployment)
    _emit(args, outputs, [f"{k}: {json.dumps(to_plain(v))}" for k, v in sorted(outputs.items())])
    return EXIT_OK


def cmd_scale(args: argparse.Namespace) -> int:
    state = _state(args)
    state.do({"op": "scale", "deployment": args.deployment, "node": args.node, "target": args.target})
    dep = state.world.orch.deployments[args.deployment]
    _emit(args, {"id": dep.id, "state": dep.state}, f"{dep.id} {dep.state}")
    return EXIT_OK


def cmd_delete(args: argparse.Namespace) -> int:
    state = _state(args)
    state.do({"op": "delete", "deployment": args.deployment, "missing_ok": args.missing_ok})
    _emit(args, {"id": args.deployment, "state": "DELETED"}, f"{args.deployment} DELETED")
    return EXIT_OK


def cmd_providers_list(args: argparse.Namespace) -> int:
    cloud = _state(args).world.cloud
    rows = []
    for pid in cloud.provider_ids():
        p = cloud.provider(pid)
        vms, cpus, mem = cloud.free_quota(pid)
        rows.append({
            "id": pid, "backend_kind": p.backend_kind, "sla_rank": p.sla_rank, "runtime": p.runtime,
            "free_vms": vms, "free_vcpus": cpus, "free_mem": mem, "images": cloud.images(pid).names(),
        })
    human = [f"{r['id']} {r['backend_kind']} rank={r['sla_rank']} free_vms={r['free_vms']} "
             f"free_vcpus={r['free_vcpus']} images={','.join(r['images'])}" for r in rows]
    _emit(args, rows, human)
    return EXIT_OK


def cmd_images_register(args: argparse.Namespace) -> int:
    entry = {
        "name": args.name, "distribution": args.distribution, "version": args.version,
        "architecture": args.architecture, "type": args.type, "application": args.application,
    }
    _state(args).do({"op": "register", "provider": args.provider, "entry": entry})
    _emit(args, {"provider": args.provider, "image": args.name}, f"registered {args.name} on {args.provider}")
    return EXIT_OK


def cmd_jobs_submit(args: argparse.Namespace) -> int:
    state = _state(args)
    ids = [
        state.do({"op": "job", "deployment": args.deployment, "slots": args.slots, "duration": args.duration})
        for _ in range(args.count)
    ]
    _emit(args, ids, ids)
    return EXIT_OK


def cmd_jobs_list(args: argparse.Namespace) -> int:
    jobs = _state(args).world.elastic.jobs(args.deployment)
    human = [f"{j.id} {j.state} slots={j.slots} duration={j.duration} slave={j.slave or '-'}" for j in jobs]
    _emit(args, [j.view() for j in jobs], human)
    return EXIT_OK


def cmd_cluster_watch(args: argparse.Namespace) -> int:
    state = _state(args)
    elastic = state.world.elastic
    elastic.cluster(args.deployment)
    start = len(elastic.clusters[args.deployment].watch)
    for _ in range(args.ticks):
        state.do({"op": "tick", "n": 1})
    watch = elastic.clusters[args.deployment].watch[start:]
    _emit(args, [dict(zip(("tick", "slaves", "pending", "running"), w)) for w in watch],
          [f"{t} {s} {p} {r}" for t, s, p, r in watch])
    return EXIT_OK


def cmd_scenario_run(args: argparse.Namespace) -> int:
    providers = os.environ.get(ENV_PROVIDERS) or args.providers or DEFAULT_PROVIDERS
    providers = find_file(str(providers), None, PROVIDERS_DIR, ".yaml")
    result = run_scenario(args.file, providers)
    if args.porcelain:
        print(json.dumps({"events": result.stream, "asserts": len(result.checks)}, sort_keys=True))
    else:
        sys.stdout.write(result.text)
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--providers", help="provider configuration file (or shipped name)")
    common.add_argument("--state-dir", default=".toscaorch", help="where the journal and records live")
    common.add_argument("--flavor-catalog", help="flavor catalog used by translate")
    common.add_argument("--image-catalog", help="image catalog used by translate")
    common.add_argument("--porcelain", action="store_true", help="stable JSON output")

    p = argparse.ArgumentParser(prog="toscaorch", description="TOSCA orchestration over simulated clouds.")
    sub = p.add_subparsers(dest="command", required=True)

    def cmd(name: str, fn, parent=sub, **kw) -> argparse.ArgumentParser:
        sp = parent.add_parser(name, parents=[common], **kw)
        sp.set_defaults(fn=fn)
        return sp

    for name, fn in (("validate", cmd_validate), ("translate", cmd_translate)):
        sp = cmd(name, fn, help=f"{name} a TOSCA template")
        sp.add_argument("template")
        sp.add_argument("--input", action="append", metavar="KEY=VALUE")

    sp = cmd("submit", cmd_submit, help="submit a template for deployment")
    sp.add_argument("template")
    sp.add_argument("--input", action="append", metavar="KEY=VALUE")
    sp.add_argument("--token", help=f"auth token (default: ${ENV_TOKEN})")
    sp.add_argument("--wait", action="store_true", help="tick until RUNNING or FAILED")

    sp = cmd("tick", cmd_tick, help="advance the logical clock")
    sp.add_argument("n", type=int, nargs="?", default=1)

    for name, fn in (("status", cmd_status), ("outputs", cmd_outputs)):
        cmd(name, fn, help=f"show deployment {name}").add_argument("deployment")

    sp = cmd("scale", cmd_scale, help="resize a scalable node")
    sp.add_argument("deployment")
    sp.add_argument("node")
    sp.add_argument("target", type=int)

    sp = cmd("delete", cmd_delete, help="tear a deployment down")
    sp.add_argument("deployment")
    sp.add_argument("--missing-ok", action="store_true")

    prov = sub.add_parser("providers", help="provider commands").add_subparsers(dest="sub", required=True)
    cmd("list", cmd_providers_list, prov)

    img = sub.add_parser("images", help="image catalog commands").add_subparsers(dest="sub", required=True)
    sp = cmd("register", cmd_images_register, img)
    sp.add_argument("provider")
    sp.add_argument("name")
    sp.add_argument("--distribution", default="")
    sp.add_argument("--version", default="")
    sp.add_argument("--architecture", default="")
    sp.add_argument("--type", default="")
    sp.add_argument("--application")

    jobs = sub.add_parser("jobs", help="elastic cluster jobs").add_subparsers(dest="sub", required=True)
    sp = cmd("submit", cmd_jobs_submit, jobs)
    sp.add_argument("deployment")
    sp.add_argument("--slots", type=int, default=1)
    sp.add_argument("--duration", type=int, default=1)
    sp.add_argument("--count", type=int, default=1)
    cmd("list", cmd_jobs_list, jobs).add_argument("deployment")

    cluster = sub.add_parser("cluster", help="elastic cluster views").add_subparsers(dest="sub", required=True)
    sp = cmd("watch", cmd_cluster_watch, cluster)
    sp.add_argument("deployment")
    sp.add_argument("--ticks", type=int, default=10)

    scen = sub.add_parser("scenario", help="scenario scripts").add_subparsers(dest="sub", required=True)
    cmd("run", cmd_scenario_run, scen).add_argument("file")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except ValidationFailed as exc:
        for line in exc.report.lines():
            print(line, file=sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except (ToscaOrchError, FileNotFoundError, ValueError) as exc:
        kind = "unknown deployment" if isinstance(exc, UnknownDeployment) else type(exc).__name__
        print(f"error: {kind}: {exc}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
