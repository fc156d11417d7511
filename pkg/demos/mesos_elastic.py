"""Watch the elastic Mesos cluster grow under a burst of jobs and shrink back once idle.

    python3 demos/mesos_elastic.py [providers]   # default, or hybrid for a cross-site burst
"""

from __future__ import annotations

import sys

from toscaorch.scenario import PROVIDERS_DIR, TEMPLATES_DIR, World


def main(providers: str = "default") -> None:
    world = World.from_file(PROVIDERS_DIR / f"{providers}.yaml")
    dep = world.orch.submit((TEMPLATES_DIR / "mesos_elastic_cluster.yaml").read_text(encoding="utf-8"))
    world.orch.settle(dep)
    print(f"{dep} RUNNING on {world.orch.deployments[dep].plan.provider} at tick {world.orch.now}")
    for _ in range(8):
        world.elastic.submit_job(dep, duration=6)
    world.orch.tick(40)
    print("tick slaves pending running")
    for line in world.elastic.watch_lines(dep):
        print(line)
    cluster = world.elastic.cluster(dep)
    for tick, decision in cluster.decisions:
        print(f"tick {tick}: {decision.kind} -> {decision.target} ({decision.reason})")


if __name__ == "__main__":
    main(*sys.argv[1:])
