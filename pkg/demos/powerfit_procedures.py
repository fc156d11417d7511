"""Deploy Powerfit twice: once where the application image already exists, once on a bare image.

    python3 demos/powerfit_procedures.py
"""

from __future__ import annotations

from toscaorch.cloudsim import load_providers
from toscaorch.scenario import PROVIDERS_DIR, TEMPLATES_DIR, World

TEMPLATE = (TEMPLATES_DIR / "powerfit.yaml").read_text(encoding="utf-8")


def deploy(providers: str) -> None:
    world = World(load_providers(PROVIDERS_DIR / f"{providers}.yaml"))
    dep = world.orch.submit(TEMPLATE)
    world.orch.settle(dep)
    d = world.orch.deployments[dep]
    a = d.plan.assignment("p_server")
    print(f"{providers:>14}: {a.procedure:<13} image={a.image:<30} tasks={len(a.tasks)} ready at tick {d.ready_tick}")


if __name__ == "__main__":
    deploy("powerfit_site")
    deploy("heat_only")
