"""Acceptance criteria 1-9. Each test tags itself with its criterion; the
terminal summary prints one PASS/FAIL line per criterion."""

from __future__ import annotations

import json
import time

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from toscaorch.catalogs import ImageEntry, load_image_catalog
from toscaorch.cloudsim import CONTEXTUALIZING, IM_LIKE, Cloud, ProviderDescriptor, Quotas, load_providers
from toscaorch.errors import InvalidTransition, NoCapableProvider, OutOfBounds, UnknownDeployment
from toscaorch.hot import HEAT_TEMPLATE_VERSION, NOVA_SERVER, parse_hot, serialize_hot, translate
from toscaorch.model import ScalarSize
from toscaorch.orchestrator import FAILED, RUNNING, Orchestrator, make_plan
from toscaorch.parser import DATA_DIR, check_template, load_types, validate_types
from toscaorch.scenario import World, run_scenario

from conftest import PROVIDERS, SCENARIOS, TEMPLATES, fixture_text, graph_of
from mutations import MUTATIONS, mutate

POWERFIT_IMAGE = "indigodatacloudapps/powerfit"


def tag(record_property, n: int, title: str) -> None:
    record_property("criterion", (n, title))


def world(name: str) -> World:
    return World.from_file(PROVIDERS / f"{name}.yaml")


# -- 1 ------------------------------------------------------------------------------


def test_c1_golden_translation(record_property):
    tag(record_property, 1, "golden translation my_server -> reference HOT")
    start = time.perf_counter()
    doc = translate(graph_of(fixture_text("my_server.yaml")))
    text = serialize_hot(doc)
    elapsed = time.perf_counter() - start
    reference = parse_hot((TEMPLATES / "my_server.hot.yaml").read_text(encoding="utf-8"))
    assert parse_hot(text) == reference  # structural
    assert text == serialize_hot(reference)  # canonical bytes
    assert doc.heat_template_version == HEAT_TEMPLATE_VERSION == "2013-05-23"
    (res,) = doc.resources.values()
    assert res.type == NOVA_SERVER
    assert res.properties == {
        "flavor": "m1.medium", "image": "rhel-6.5-test-image", "user_data_format": "SOFTWARE_CONFIG",
    }
    assert doc.parameters == {} and doc.outputs == {}
    assert elapsed < 1.0


# -- 2 ------------------------------------------------------------------------------


def test_c2_two_procedures(record_property):
    tag(record_property, 2, "preconfigured vs vanilla dichotomy")
    start = time.perf_counter()
    w = World(load_providers(PROVIDERS / "powerfit_site.yaml") + [
        ProviderDescriptor("vanilla-site", "heat_like", 2, Quotas(10, 20, ScalarSize(40 * 10**9)),
                           images=load_providers(PROVIDERS / "heat_only.yaml")[0].images),
    ])
    dep = w.orch.submit(fixture_text("powerfit.yaml"))
    with_image = w.orch.plan(dep, "heat-site")
    without = w.orch.plan(dep, "vanilla-site")
    assert len(with_image.config_tasks) == 0
    assert len(without.config_tasks) == 1
    w.cloud.register_image("vanilla-site", ImageEntry(POWERFIT_IMAGE, "ubuntu", "14.04", "x86_64", "linux", "powerfit"))
    assert len(w.orch.plan(dep, "vanilla-site").config_tasks) == 0
    assert time.perf_counter() - start < 1.0


# -- 3 ------------------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["heat_like", "im_like"])
def test_c3_preconfigured_is_faster(record_property, kind):
    tag(record_property, 3, "ready-tick(preconfigured) < ready-tick(vanilla)")
    ticks = {}
    for catalog in ("powerfit_site", "heat_only"):
        (p,) = load_providers(PROVIDERS / f"{catalog}.yaml")
        p = ProviderDescriptor(p.id, kind, p.sla_rank, p.quotas, p.flavors, p.images, p.public_pool,
                               p.private_subnet, p.durations, p.runtime)
        w = World([p])
        dep = w.orch.submit(fixture_text("powerfit.yaml"))
        assert w.orch.settle(dep) == RUNNING
        ticks[catalog] = w.orch.deployments[dep].ready_tick - w.orch.deployments[dep].submitted_tick
    assert ticks["powerfit_site"] < ticks["heat_only"]


# -- 4 ------------------------------------------------------------------------------


def test_c4_elastic_mesos(record_property):
    tag(record_property, 4, "elastic Mesos: 0 -> 5 -> 0 slaves")
    start = time.perf_counter()
    w = world("default")
    dep = w.orch.submit(fixture_text("mesos_elastic_cluster.yaml"))
    assert w.orch.settle(dep) == RUNNING
    d = w.orch.deployments[dep]
    cluster = w.elastic.cluster(dep)
    b = cluster.binding
    counts = {node: len(w.orch.active_members(d, node)) for node in d.members}
    front = {n for n in counts if n != b.worker_compute}
    assert sorted(counts[n] for n in front) == [1, 1] and counts[b.worker_compute] == 0
    assert {w.cloud.instances[i].node for n in front for i in d.members[n]} == {"master_server", "lb_server"}

    for _ in range(8):
        w.elastic.submit_job(dep, slots=1, duration=6)
    seen = []
    while cluster.count("DONE") < 8:
        w.orch.tick()
        seen.append(len(w.elastic.slaves(cluster)))
        assert seen[-1] <= 5
        assert len(seen) < 200
    assert max(seen) == 5
    w.orch.tick(b.idle_threshold + 10)
    assert len(w.elastic.slaves(cluster)) == 0
    assert all(s <= 5 for _, s, _, _ in cluster.watch)
    assert time.perf_counter() - start < 5.0


# -- 5 ------------------------------------------------------------------------------


def expected_placement(free: dict[str, int], ranks: dict[str, int], original: str, n: int) -> list[str]:
    """Per instance: the original provider while it has room, else the best-ranked other one."""
    out = []
    for _ in range(n):
        if free[original] > 0:
            choice = original
        else:
            choice = min((p for p in free if p != original and free[p] > 0), key=lambda p: (ranks[p], p))
        free[choice] -= 1
        out.append(choice)
    return out


def test_c5_hybrid_scale_out(record_property):
    tag(record_property, 5, "hybrid scale-out over an overlay")
    # no elasticity manager here: idle slaves would otherwise be shrunk away
    cloud = Cloud(load_providers(PROVIDERS / "hybrid.yaml"))
    orch = Orchestrator(cloud)
    dep = orch.submit(fixture_text("mesos_elastic_cluster.yaml"))
    assert orch.settle(dep) == RUNNING
    d = orch.deployments[dep]
    b = d.plan.elastic[0]
    assert d.plan.provider == "a"
    orch.scale(dep, b.worker, 2)
    orch.settle(dep)
    assert cloud.free_quota("a")[0] == 0  # master, lb and two slaves
    ranks = {p: cloud.provider(p).sla_rank for p in cloud.provider_ids()}
    free = {p: cloud.free_quota(p)[0] for p in ranks}
    before = set(orch.active_members(d, b.worker_compute))
    orch.scale(dep, b.worker, 4)
    orch.settle(dep)
    slaves = orch.active_members(d, b.worker_compute)
    added = [i for i in slaves if i not in before]
    assert [cloud.instances[i].provider for i in added] == expected_placement(free, ranks, "a", 2) == ["b", "b"]
    assert len(slaves) == 4
    assert all(cloud.reachable(s, d.master) for s in slaves)


def test_c5_hybrid_burst_scenario(record_property):
    tag(record_property, 5, "hybrid scale-out over an overlay")
    result = run_scenario("mesos_hybrid_burst")
    assert all(ok for *_, ok in result.checks)


# -- 6 ------------------------------------------------------------------------------


@pytest.mark.parametrize("name", sorted(p.stem for p in SCENARIOS.glob("*.scn")))
def test_c6_scenarios_are_deterministic(record_property, name):
    tag(record_property, 6, "deterministic replays and plans")
    assert run_scenario(name).text == run_scenario(name).text


@pytest.mark.parametrize("fixture", ["my_server.yaml", "powerfit.yaml", "mesos_elastic_cluster.yaml"])
def test_c6_plans_are_deterministic(record_property, fixture):
    tag(record_property, 6, "deterministic replays and plans")
    providers = load_providers(PROVIDERS / "default.yaml")

    def plan():
        p = providers[0]
        return json.dumps(make_plan("d", graph_of(fixture_text(fixture)), p, p.images).to_dict(), sort_keys=True)

    assert plan() == plan()


# -- 7 ------------------------------------------------------------------------------


def test_c7_fixtures_validate(record_property):
    tag(record_property, 7, "fixtures validate; mutations are caught")
    for name in ("my_server.yaml", "powerfit.yaml", "mesos_elastic_cluster.yaml"):
        _, report = check_template(fixture_text(name))
        assert report.ok and report.errors == [], (name, report.lines())
    types = load_types((DATA_DIR / "types" / "custom_types.yaml").read_text(encoding="utf-8"))
    assert validate_types(types).ok
    hot = parse_hot((TEMPLATES / "my_server.hot.yaml").read_text(encoding="utf-8"))
    assert [r.type for r in hot.resources.values()] == [NOVA_SERVER]


def test_c7_mutations(record_property):
    tag(record_property, 7, "fixtures validate; mutations are caught")
    ids = [m[0] for m in MUTATIONS]
    assert len(MUTATIONS) >= 10 and "gromacs" in ids
    for mid, fixture, old, new, node in MUTATIONS:
        _, report = check_template(mutate(fixture, old, new))
        assert len(report.errors) >= 1, mid
        assert node in report.nodes_with_errors(), (mid, report.lines())


# -- 8 ------------------------------------------------------------------------------

CATALOGS = DATA_DIR / "catalogs"


def quota_providers() -> list[ProviderDescriptor]:
    """A small IM-like site and a Heat-like site that alone holds the Powerfit image."""
    return [
        ProviderDescriptor("p1", "im_like", 1, Quotas(5, 10, ScalarSize(20 * 10**9)),
                           images=load_image_catalog(CATALOGS / "images_base.yaml"), public_pool="203.0.113.0/28"),
        ProviderDescriptor("p2", "heat_like", 2, Quotas(4, 6, ScalarSize(12 * 10**9)),
                           images=load_image_catalog(CATALOGS / "images_with_powerfit.yaml"),
                           public_pool="198.51.100.0/28"),
    ]


TEMPLATE_NAMES = ["my_server.yaml", "powerfit.yaml", "mesos_elastic_cluster.yaml"]

ops = st.lists(
    st.one_of(
        st.tuples(st.just("submit"), st.sampled_from(TEMPLATE_NAMES)),
        st.tuples(st.just("scale"), st.integers(0, 5), st.integers(0, 5)),
        st.tuples(st.just("delete"), st.integers(0, 5)),
        st.tuples(st.just("tick"), st.integers(1, 6)),
    ),
    max_size=18,
)


def assert_within_quota(cloud: Cloud) -> None:
    for p in cloud.provider_ids():
        q = cloud.provider(p).quotas
        vms, cpus, mem = cloud.usage(p)
        assert vms <= q.max_vms and cpus <= q.max_vcpus and mem <= q.max_mem.bytes, (p, cloud.usage(p))


@settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(ops)
def quota_conservation(sequence):
    cloud = Cloud(quota_providers())
    initial = {p: cloud.free_quota(p) for p in cloud.provider_ids()}
    orch = Orchestrator(cloud)
    orch.add_tick_hook(lambda _now: assert_within_quota(cloud))
    deps: list[str] = []
    for op in sequence:
        kind = op[0]
        if kind == "submit":
            deps.append(orch.submit(fixture_text(op[1])))
        elif kind == "tick":
            orch.tick(op[1])
        elif deps:
            dep = deps[op[1] % len(deps)]
            d = orch.deployments[dep]
            try:
                if kind == "scale":
                    worker = d.plan.elastic[0].worker if d.plan and d.plan.elastic else "my_server"
                    orch.scale(dep, worker, op[2])
                else:
                    orch.delete(dep)
            except (InvalidTransition, OutOfBounds, NoCapableProvider, UnknownDeployment):
                pass  # refused requests must leave quotas untouched, checked below
        assert_within_quota(cloud)
    for dep in deps:
        if orch.deployments[dep].state != "DELETED":
            assert orch.settle(dep) in (RUNNING, FAILED)
            orch.delete(dep)
        assert_within_quota(cloud)
    assert {p: cloud.free_quota(p) for p in cloud.provider_ids()} == initial


def test_c8_quota_conservation(record_property):
    tag(record_property, 8, "quota conservation under random workloads")
    quota_conservation()


# -- 9 ------------------------------------------------------------------------------


def im_world() -> World:
    return world("hybrid")  # "a" is IM-like and preferred


def check_master_rule(w: World, dep: str) -> None:
    cloud = w.cloud
    d = w.orch.deployments[dep]
    live = [cloud.instances[i] for ids in d.members.values() for i in ids if cloud.instances[i].active]
    im_live = [i for i in live if cloud.provider(i.provider).backend_kind == IM_LIKE]
    if not any(i.tasks for i in im_live):
        return
    masters = [i for i in im_live if i.master]
    assert len(masters) == 1 and masters[0].public_address
    master = masters[0]
    agent = cloud.provider(master.provider).durations.agent_install
    entered = [e.tick for e in cloud.events if e.instance == master.id and e.new == CONTEXTUALIZING]
    agent_done = entered[0] + agent
    others = {i.id for i in im_live if i is not master}
    starts = [e.tick for e in cloud.events if e.instance in others and e.new == CONTEXTUALIZING]
    assert all(t >= agent_done for t in starts), (agent_done, starts)


@pytest.mark.parametrize("fixture", ["powerfit.yaml", "mesos_elastic_cluster.yaml"])
def test_c9_im_master_rule(record_property, fixture):
    tag(record_property, 9, "IM master rule and agent-first ordering")
    w = im_world()
    dep = w.orch.submit(fixture_text(fixture))
    assert w.orch.settle(dep) == RUNNING
    assert w.orch.deployments[dep].plan.provider == "a"
    check_master_rule(w, dep)


def test_c9_master_rule_survives_scale_out(record_property):
    tag(record_property, 9, "IM master rule and agent-first ordering")
    w = im_world()
    dep = w.orch.submit(fixture_text("mesos_elastic_cluster.yaml"))
    w.orch.settle(dep)
    for _ in range(4):
        w.elastic.submit_job(dep, duration=10)
    for _ in range(12):
        w.orch.tick()
        check_master_rule(w, dep)
    assert len(w.elastic.slaves(w.elastic.cluster(dep))) == 4
