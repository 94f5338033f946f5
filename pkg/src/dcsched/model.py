"""Data center model: hosts, the job/task/container hierarchy, resource
accounting, and execution progress.

Units: CPU and GPU are in percent-of-one-unit terms (100 = one full core or
one full GPU), memory is in GiB.  One simulation tick is one second.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from enum import Enum

logger = logging.getLogger(__name__)

HOSTS_CSV_HEADER = [
    "category", "count", "cpu_cores", "cpu_speed", "mem_gb", "mem_speed",
    "gpu_count", "gpu_speed", "price",
]


class ModelError(Exception):
    """Base class for data center model errors."""


class HostsCsvError(ModelError):
    """Hosts CSV is malformed or fails validation."""


class CapacityExceeded(ModelError):
    """Placement chose a host that cannot hold the container's request."""


class NotDeployedHere(ModelError):
    """Release of a container that is not in the host's deployed set."""


class IllegalTransition(ModelError):
    """Container status change outside the allowed lifecycle graph."""


@dataclass(frozen=True)
class ResourceVector:
    """A (cpu, mem, gpu) triple used for both requests and capacities."""

    cpu: float = 0.0
    mem: float = 0.0
    gpu: float = 0.0

    def __post_init__(self) -> None:
        if self.cpu < 0 or self.mem < 0 or self.gpu < 0:
            raise ValueError(f"resource components must be >= 0, got {self}")

    def add(self, other: "ResourceVector") -> "ResourceVector":
        return ResourceVector(self.cpu + other.cpu, self.mem + other.mem,
                              self.gpu + other.gpu)

    def sub(self, other: "ResourceVector") -> "ResourceVector":
        """Componentwise subtract; fails rather than going negative."""
        out = (self.cpu - other.cpu, self.mem - other.mem, self.gpu - other.gpu)
        if min(out) < 0:
            raise ValueError(f"subtraction would go negative: {self} - {other}")
        return ResourceVector(*out)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.cpu, self.mem, self.gpu)

    def dominates(self, other: "ResourceVector") -> bool:
        """True when every component is >= the other's."""
        return (self.cpu >= other.cpu and self.mem >= other.mem
                and self.gpu >= other.gpu)


class ContainerType(str, Enum):
    CPU_INTENSIVE = "cpu_intensive"
    MEM_INTENSIVE = "mem_intensive"
    GPU_INTENSIVE = "gpu_intensive"


class ContainerStatus(str, Enum):
    INACTIVE = "inactive"
    RUNNING = "running"
    COMMUNICATING = "communicating"
    MIGRATING = "migrating"
    WAITING = "waiting"
    COMPLETED = "completed"


# Legal lifecycle graph.  Everything else raises IllegalTransition.
ALLOWED_TRANSITIONS: dict[ContainerStatus, frozenset[ContainerStatus]] = {
    ContainerStatus.INACTIVE: frozenset({ContainerStatus.RUNNING}),
    ContainerStatus.RUNNING: frozenset({ContainerStatus.COMMUNICATING,
                                        ContainerStatus.MIGRATING,
                                        ContainerStatus.COMPLETED}),
    ContainerStatus.COMMUNICATING: frozenset({ContainerStatus.RUNNING,
                                              ContainerStatus.WAITING}),
    ContainerStatus.MIGRATING: frozenset({ContainerStatus.RUNNING,
                                          ContainerStatus.WAITING}),
    ContainerStatus.WAITING: frozenset({ContainerStatus.RUNNING}),
    ContainerStatus.COMPLETED: frozenset(),
}

DEPLOYED_STATUSES = frozenset({ContainerStatus.RUNNING,
                               ContainerStatus.COMMUNICATING,
                               ContainerStatus.MIGRATING})
UNDEPLOYED_STATUSES = frozenset({ContainerStatus.INACTIVE,
                                 ContainerStatus.WAITING,
                                 ContainerStatus.MIGRATING})


@dataclass(frozen=True)
class HostSpec:
    """Static description of one machine.

    cpu_capacity = cores * 100 and gpu_capacity = gpu_count * 100; the speed
    fields are dimensionless multipliers applied to execution progress.
    price is cost units per occupied second.
    """

    host_id: int
    category: str
    cpu_capacity: float
    cpu_speed: float
    mem_capacity: float
    mem_speed: float
    gpu_capacity: float
    gpu_speed: float
    price: float

    def __post_init__(self) -> None:
        for name in ("cpu_capacity", "cpu_speed", "mem_capacity", "mem_speed",
                     "gpu_capacity", "gpu_speed"):
            if getattr(self, name) <= 0:
                raise ValueError(f"host {self.host_id}: {name} must be > 0")
        if self.price < 0:
            raise ValueError(f"host {self.host_id}: price must be >= 0")

    @property
    def capacity(self) -> ResourceVector:
        return ResourceVector(self.cpu_capacity, self.mem_capacity,
                              self.gpu_capacity)

    def speed_for(self, ctype: ContainerType) -> float:
        if ctype is ContainerType.CPU_INTENSIVE:
            return self.cpu_speed
        if ctype is ContainerType.MEM_INTENSIVE:
            return self.mem_speed
        return self.gpu_speed


@dataclass
class HostState:
    """A host plus its live allocation and deployed-container set.

    `allocated` is always the componentwise sum (in insertion order) of the
    requests of the containers in `deployed`, so the conservation invariant
    holds exactly even with float requests.
    """

    spec: HostSpec
    allocated: ResourceVector = field(default_factory=ResourceVector)
    deployed: dict[int, ResourceVector] = field(default_factory=dict)

    def fits(self, request: ResourceVector) -> bool:
        cap = self.spec
        return (self.allocated.cpu + request.cpu <= cap.cpu_capacity
                and self.allocated.mem + request.mem <= cap.mem_capacity
                and self.allocated.gpu + request.gpu <= cap.gpu_capacity)

    def allocate(self, container_id: int, request: ResourceVector) -> None:
        if not self.fits(request):
            raise CapacityExceeded(
                f"container {container_id} ({request}) does not fit on host "
                f"{self.spec.host_id} (allocated {self.allocated})")
        self.deployed[container_id] = request
        self.allocated = self.allocated.add(request)

    def release(self, container_id: int) -> None:
        if container_id not in self.deployed:
            raise NotDeployedHere(
                f"container {container_id} is not deployed on host "
                f"{self.spec.host_id}")
        del self.deployed[container_id]
        # Recompute instead of subtracting so allocated stays the exact
        # insertion-order sum of the remaining requests.
        total = ResourceVector()
        for request in self.deployed.values():
            total = total.add(request)
        self.allocated = total

    def utilization(self) -> tuple[tuple[float, float, float], float]:
        """Per-resource fractions and the dominant (max) fraction."""
        spec = self.spec
        fractions = (self.allocated.cpu / spec.cpu_capacity,
                     self.allocated.mem / spec.mem_capacity,
                     self.allocated.gpu / spec.gpu_capacity)
        return fractions, max(fractions)


@dataclass
class CommEvent:
    """One planned transfer, fired when the owner's run_at crosses trigger_at."""

    trigger_at: float
    partner_container_id: int
    volume_kb: int
    state: str = "pending"  # pending | active | done | skipped


@dataclass
class Job:
    job_id: int
    submit_time: int
    completion_time: int | None = None
    task_ids: list[int] = field(default_factory=list)
    source_id: str | None = None


@dataclass
class Task:
    task_id: int
    job_id: int
    resource_request: ResourceVector
    instance_num: int
    container_type: ContainerType
    duration: float
    source_id: str | None = None

    def __post_init__(self) -> None:
        if self.instance_num < 1:
            raise ValueError(f"task {self.task_id}: instance_num must be >= 1")
        if self.duration <= 0:
            raise ValueError(f"task {self.task_id}: duration must be > 0")


@dataclass
class Container:
    """Smallest schedulable unit: one instance of a task.

    run_at accrues work at the speed of the host resource matching
    container_type, and is frozen while communicating, migrating or waiting.
    """

    container_id: int
    task_id: int
    job_id: int
    resource_request: ResourceVector
    container_type: ContainerType
    duration: float
    submit_time: int = 0
    status: ContainerStatus = ContainerStatus.INACTIVE
    run_at: float = 0.0
    host_id: int | None = None
    comm_plan: list[CommEvent] = field(default_factory=list)
    first_deploy_time: int | None = None
    completion_time: int | None = None
    comm_time_total: float = 0.0
    comm_events_done: int = 0
    retries_used: int = 0
    paused_at: int | None = None
    next_event_idx: int = 0
    active_comm_flows: int = 0

    def set_status(self, new: ContainerStatus) -> None:
        if new not in ALLOWED_TRANSITIONS[self.status]:
            raise IllegalTransition(
                f"container {self.container_id}: {self.status.value} -> "
                f"{new.value} is not allowed")
        if new is ContainerStatus.COMPLETED and self.run_at < self.duration:
            raise IllegalTransition(
                f"container {self.container_id}: cannot complete at "
                f"run_at={self.run_at} < duration={self.duration}")
        self.status = new

    @property
    def deployed(self) -> bool:
        return self.status in DEPLOYED_STATUSES


def advance_run(container: Container, host: HostSpec) -> bool:
    """Advance one tick of execution; returns True when the run is done.

    Only legal for running containers: progress is frozen in every other
    state so execution time and communication time stay additive.
    """
    if container.status is not ContainerStatus.RUNNING:
        raise ModelError(
            f"advance_run on non-running container {container.container_id} "
            f"({container.status.value})")
    container.run_at += host.speed_for(container.container_type)
    return container.run_at >= container.duration


def queue_sizes(containers) -> tuple[int, int, int]:
    """(undeployed, deployed, completed) sizes; migrating counts in both
    undeployed and deployed views."""
    undeployed = deployed = completed = 0
    for c in containers:
        if c.status in UNDEPLOYED_STATUSES:
            undeployed += 1
        if c.status in DEPLOYED_STATUSES:
            deployed += 1
        if c.status is ContainerStatus.COMPLETED:
            completed += 1
    return undeployed, deployed, completed


def load_hosts(csv_text: str) -> list[HostSpec]:
    """Parse the hosts CSV into one HostSpec per machine.

    Expected header: category,count,cpu_cores,cpu_speed,mem_gb,mem_speed,
    gpu_count,gpu_speed,price.  A row with count=N expands to N hosts with
    sequential ids.
    """
    reader = csv.reader(io.StringIO(csv_text))
    try:
        header = next(reader)
    except StopIteration:
        raise HostsCsvError("hosts CSV is empty (missing header row)")
    header = [h.strip() for h in header]
    if header != HOSTS_CSV_HEADER:
        raise HostsCsvError(
            f"bad hosts CSV header {header!r}, expected {HOSTS_CSV_HEADER!r}")

    hosts: list[HostSpec] = []
    for row in reader:
        line = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(HOSTS_CSV_HEADER):
            raise HostsCsvError(
                f"line {line}: expected {len(HOSTS_CSV_HEADER)} fields, "
                f"got {len(row)}")
        cells = [cell.strip() for cell in row]
        try:
            count = int(cells[1])
            cpu_cores = float(cells[2])
            cpu_speed = float(cells[3])
            mem_gb = float(cells[4])
            mem_speed = float(cells[5])
            gpu_count = float(cells[6])
            gpu_speed = float(cells[7])
            price = float(cells[8])
        except ValueError as exc:
            raise HostsCsvError(f"line {line}: not a number: {exc}") from exc
        if count < 1:
            raise HostsCsvError(f"line {line}: count must be >= 1")
        for _ in range(count):
            try:
                hosts.append(HostSpec(
                    host_id=len(hosts),
                    category=cells[0],
                    cpu_capacity=cpu_cores * 100.0,
                    cpu_speed=cpu_speed,
                    mem_capacity=mem_gb,
                    mem_speed=mem_speed,
                    gpu_capacity=gpu_count * 100.0,
                    gpu_speed=gpu_speed,
                    price=price,
                ))
            except ValueError as exc:
                raise HostsCsvError(f"line {line}: {exc}") from exc
    return hosts
