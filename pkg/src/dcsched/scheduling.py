"""Container scheduling: the selection / placement / execution pipeline and
the built-in algorithms (overload_migrate, first_fit, round,
performance_first, job_group).

Placement functions are pure functions of a SchedulerView snapshot; the
engine applies each decision as it is produced and keeps the view current,
so a decision is only dropped (stale) if applied out of band.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

from .model import (Container, ContainerStatus, ContainerType, HostState,
                    ResourceVector)

logger = logging.getLogger(__name__)


class SchedulerError(Exception):
    pass


class Action(str, Enum):
    DEPLOY = "deploy"
    MIGRATE = "migrate"


@dataclass(frozen=True)
class SchedulingDecision:
    container_id: int
    target_host_id: int
    action: Action


@dataclass
class SchedulerConfig:
    algorithm: str = "first_fit"
    overload_threshold: float = 0.7
    idle_threshold: float = 0.3
    round_cursor: int = -1

    def __post_init__(self) -> None:
        if not (0.0 < self.idle_threshold < self.overload_threshold < 1.0):
            raise SchedulerError(
                f"need 0 < idle_threshold < overload_threshold < 1, got "
                f"idle={self.idle_threshold} overload={self.overload_threshold}")


class SchedulerView:
    """Read-only snapshot handed to placement algorithms.

    Mirrors the hosts' allocations so feasibility and utilization queries
    are cheap; the engine refreshes it between placements via apply_deploy,
    never during one.
    """

    def __init__(self, hosts: list[HostState], containers: dict[int, Container],
                 job_map: dict[int, dict[int, int]], delay=None):
        self.n_hosts = len(hosts)
        self.hosts = hosts
        self.containers = containers
        self.job_map = job_map
        self.delay = delay
        self.allocated = [h.allocated.as_tuple() for h in hosts]
        self.capacity = [h.spec.capacity.as_tuple() for h in hosts]
        self.dominant = [h.utilization()[1] for h in hosts]

    def feasible(self, host_idx: int, request: ResourceVector) -> bool:
        alloc = self.allocated[host_idx]
        cap = self.capacity[host_idx]
        return (alloc[0] + request.cpu <= cap[0]
                and alloc[1] + request.mem <= cap[1]
                and alloc[2] + request.gpu <= cap[2])

    def apply_deploy(self, host_idx: int, request: ResourceVector) -> None:
        a = self.allocated[host_idx]
        alloc = (a[0] + request.cpu, a[1] + request.mem, a[2] + request.gpu)
        self.allocated[host_idx] = alloc
        cap = self.capacity[host_idx]
        self.dominant[host_idx] = max(alloc[0] / cap[0], alloc[1] / cap[1],
                                      alloc[2] / cap[2])

    def job_count_on(self, job_id: int, host_idx: int) -> int:
        return self.job_map.get(job_id, {}).get(host_idx, 0)


def select(view: SchedulerView, config: SchedulerConfig) -> list[Container]:
    """Deploy candidates: inactive first (FIFO by submit time), then waiting
    (FIFO by pause time); ties by container id."""
    inactive = []
    waiting = []
    for c in view.containers.values():
        if c.status is ContainerStatus.INACTIVE:
            inactive.append(c)
        elif c.status is ContainerStatus.WAITING:
            waiting.append(c)
    inactive.sort(key=lambda c: (c.submit_time, c.container_id))
    waiting.sort(key=lambda c: (c.paused_at, c.container_id))
    return inactive + waiting


def place_first_fit(container: Container, view: SchedulerView) -> int | None:
    for h in range(view.n_hosts):
        if view.feasible(h, container.resource_request):
            return h
    return None


def place_round(container: Container, view: SchedulerView,
                cursor: int) -> tuple[int | None, int]:
    """Scan from the host after the previously chosen one, wrapping around;
    the cursor advances only when a host is chosen."""
    n = view.n_hosts
    for step in range(1, n + 1):
        h = (cursor + step) % n
        if view.feasible(h, container.resource_request):
            return h, h
    return None, cursor


def place_performance_first(container: Container,
                            view: SchedulerView) -> int | None:
    """Fastest feasible host for the container's primary resource."""
    attr = {ContainerType.CPU_INTENSIVE: "cpu_speed",
            ContainerType.MEM_INTENSIVE: "mem_speed",
            ContainerType.GPU_INTENSIVE: "gpu_speed"}[container.container_type]
    best = None
    best_speed = None
    for h in range(view.n_hosts):
        if not view.feasible(h, container.resource_request):
            continue
        speed = getattr(view.hosts[h].spec, attr)
        if best_speed is None or speed > best_speed:
            best, best_speed = h, speed
    return best


def place_job_group(container: Container, view: SchedulerView) -> int | None:
    """Host holding the most containers of the same job; when no feasible
    host holds any, worst-fit on 1 - dominant utilization."""
    best = None
    best_count = 0
    any_feasible = None
    best_dominant = None
    for h in range(view.n_hosts):
        if not view.feasible(h, container.resource_request):
            continue
        count = view.job_count_on(container.job_id, h)
        if count > best_count:
            best, best_count = h, count
        dom = view.dominant[h]
        if best_dominant is None or dom < best_dominant:
            any_feasible, best_dominant = h, dom
    if best_count > 0:
        return best
    return any_feasible


BOTTLENECK_ORDER = (ContainerType.CPU_INTENSIVE, ContainerType.MEM_INTENSIVE,
                    ContainerType.GPU_INTENSIVE)


def select_overload_migrate(view: SchedulerView,
                            config: SchedulerConfig) -> list[tuple[int, int]]:
    """(container_id, source_host) pairs, at most one per overloaded host.

    For each host whose dominant utilization exceeds the overload threshold,
    the running container with the largest request in the host's bottleneck
    resource is picked, and only if an idle target exists for it.
    """
    pairs: list[tuple[int, int]] = []
    for h in range(view.n_hosts):
        if view.dominant[h] <= config.overload_threshold:
            continue
        alloc = view.allocated[h]
        cap = view.capacity[h]
        fractions = [alloc[0] / cap[0], alloc[1] / cap[1], alloc[2] / cap[2]]
        bottleneck = fractions.index(max(fractions))  # cpu > mem > gpu on ties
        candidate = None
        candidate_req = None
        for cid in sorted(view.hosts[h].deployed):  # ties -> lowest id
            c = view.containers[cid]
            if c.status is not ContainerStatus.RUNNING:
                continue
            req = c.resource_request.as_tuple()[bottleneck]
            if candidate_req is None or req > candidate_req:
                candidate, candidate_req = c, req
        if candidate is None:
            continue
        if place_overload_target(candidate, view, config) is None:
            continue
        pairs.append((candidate.container_id, h))
    return pairs


def place_overload_target(container: Container, view: SchedulerView,
                          config: SchedulerConfig) -> int | None:
    """Feasible host with the lowest dominant utilization strictly below the
    idle threshold; ties go to the lower index."""
    best = None
    best_dom = None
    for h in range(view.n_hosts):
        dom = view.dominant[h]
        if dom >= config.idle_threshold:
            continue
        if not view.feasible(h, container.resource_request):
            continue
        if best_dom is None or dom < best_dom:
            best, best_dom = h, dom
    return best


class PlacementAlgorithm:
    """Extension point: subclass, set `name`, implement place(), and call
    register_algorithm()."""

    name = "base"
    migration_stage = False

    def place(self, container: Container, view: SchedulerView,
              config: SchedulerConfig) -> int | None:
        raise NotImplementedError


class FirstFit(PlacementAlgorithm):
    name = "first_fit"

    def place(self, container, view, config):
        return place_first_fit(container, view)


class RoundRobin(PlacementAlgorithm):
    name = "round"

    def place(self, container, view, config):
        host, config.round_cursor = place_round(container, view,
                                                config.round_cursor)
        return host


class PerformanceFirst(PlacementAlgorithm):
    name = "performance_first"

    def place(self, container, view, config):
        return place_performance_first(container, view)


class JobGroup(PlacementAlgorithm):
    name = "job_group"

    def place(self, container, view, config):
        return place_job_group(container, view)


class OverloadMigrate(FirstFit):
    """Deploys via first-fit and additionally migrates one resource-heavy
    container off each overloaded host whenever an idle target exists."""

    name = "overload_migrate"
    migration_stage = True


ALGORITHMS: dict[str, type[PlacementAlgorithm]] = {}


def register_algorithm(cls: type[PlacementAlgorithm]) -> type[PlacementAlgorithm]:
    if not cls.name or cls.name in ALGORITHMS:
        raise SchedulerError(f"algorithm name {cls.name!r} is empty or taken")
    ALGORITHMS[cls.name] = cls
    return cls


for _cls in (FirstFit, RoundRobin, PerformanceFirst, JobGroup, OverloadMigrate):
    register_algorithm(_cls)


def make_algorithm(name: str) -> PlacementAlgorithm:
    if name not in ALGORITHMS:
        raise SchedulerError(f"unknown scheduling algorithm {name!r}; "
                             f"available: {sorted(ALGORITHMS)}")
    return ALGORITHMS[name]()


def execute(decisions: list[SchedulingDecision], sim) -> list[SchedulingDecision]:
    """Apply decisions to the simulation state; stale ones (the fit no longer
    holds, or the container moved on) are dropped and logged, never applied
    partially.  Returns the decisions actually applied."""
    applied = []
    for decision in decisions:
        container = sim.containers.get(decision.container_id)
        target = sim.hosts[decision.target_host_id]
        if container is None:
            logger.info("dropping decision for unknown container %s",
                        decision.container_id)
            continue
        if decision.action is Action.DEPLOY:
            if (container.status not in (ContainerStatus.INACTIVE,
                                         ContainerStatus.WAITING)
                    or not target.fits(container.resource_request)):
                logger.info("dropping stale deploy of container %d to host %d",
                            container.container_id, decision.target_host_id)
                continue
            sim.deploy(container, decision.target_host_id)
        else:
            if (container.status is not ContainerStatus.RUNNING
                    or container.host_id == decision.target_host_id
                    or not target.fits(container.resource_request)):
                logger.info("dropping stale migration of container %d to "
                            "host %d", container.container_id,
                            decision.target_host_id)
                continue
            sim.begin_migration(container, decision.target_host_id)
        applied.append(decision)
    return applied
