"""Workload generation and ingestion.

Produces a time-ordered stream of jobs (job -> task -> container) either
synthetically from configured ranges or from an external cluster trace.
Generation is a pure function of (spec, seed): the root seed is split into
named sub-streams (arrivals, requests, comm) so adding draws to one stream
never perturbs the others.
"""

from __future__ import annotations

import csv
import io
import logging
import random
from dataclasses import dataclass, field

from .model import (CommEvent, Container, ContainerType, Job, ResourceVector,
                    Task)

logger = logging.getLogger(__name__)

# Reference capacities used to derive a container's primary resource type
# when the workload does not state one: argmax of request / capacity with
# ties broken cpu > mem > gpu.  Defaults match the bundled sample fleet
# (80 cores, 128 GiB, 8 GPUs).
DEFAULT_REFERENCE_CAPACITY = ResourceVector(8000.0, 128.0, 800.0)

WORKLOAD_CSV_HEADER = [
    "job_id", "job_submit_time", "task_id", "container_id", "container_type",
    "cpu", "mem", "gpu", "duration", "comm_plan",
]


class WorkloadError(Exception):
    """Workload spec, trace, or mapping problem."""


@dataclass(frozen=True)
class WorkloadSpec:
    """Parameters of the synthetic workload; all ranges are inclusive."""

    n_jobs: int
    n_tasks: int
    n_containers: int
    duration_range: tuple[int, int] = (20, 30)
    cpu_range: tuple[int, int] = (100, 1700)
    mem_range: tuple[int, int] = (1, 32)
    gpu_range: tuple[int, int] = (50, 200)
    comm_count_range: tuple[int, int] = (1, 5)
    comm_volume_range: tuple[int, int] = (100, 102400)  # KB
    arrival_window: int = 36
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_jobs < 0:
            raise WorkloadError("n_jobs must be >= 0")
        if not (self.n_jobs <= self.n_tasks <= self.n_containers):
            raise WorkloadError(
                f"need n_jobs <= n_tasks <= n_containers, got "
                f"{self.n_jobs}/{self.n_tasks}/{self.n_containers}")
        for name in ("duration_range", "cpu_range", "mem_range", "gpu_range",
                     "comm_count_range", "comm_volume_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise WorkloadError(f"{name}: empty range [{lo}, {hi}]")
        if self.duration_range[0] < 1:
            raise WorkloadError("duration_range must start at >= 1")
        if self.comm_count_range[0] < 0:
            raise WorkloadError("comm_count_range must start at >= 0")
        if self.arrival_window < 0:
            raise WorkloadError("arrival_window must be >= 0")


@dataclass
class JobStream:
    """Jobs sorted by submit time plus the tasks/containers hanging off them."""

    jobs: list[Job] = field(default_factory=list)
    tasks: dict[int, Task] = field(default_factory=dict)
    containers: list[Container] = field(default_factory=list)
    _next: int = 0
    _last_t: int = -1

    def arrivals_at(self, t: int) -> list[Job]:
        """Jobs whose submit_time == t; t must be non-decreasing across calls."""
        if t < self._last_t:
            raise WorkloadError(f"arrivals_at called with t going backwards "
                                f"({t} after {self._last_t})")
        self._last_t = t
        out = []
        while self._next < len(self.jobs) and self.jobs[self._next].submit_time <= t:
            job = self.jobs[self._next]
            if job.submit_time == t:
                out.append(job)
            self._next += 1
        return out

    @property
    def exhausted(self) -> bool:
        return self._next >= len(self.jobs)

    def containers_of(self, job_id: int) -> list[Container]:
        return [c for c in self.containers if c.job_id == job_id]


def derive_container_type(request: ResourceVector,
                          reference: ResourceVector = DEFAULT_REFERENCE_CAPACITY,
                          ) -> ContainerType:
    """Primary resource type: argmax of request/capacity, ties cpu > mem > gpu."""
    fractions = [
        (request.cpu / reference.cpu, ContainerType.CPU_INTENSIVE),
        (request.mem / reference.mem, ContainerType.MEM_INTENSIVE),
        (request.gpu / reference.gpu, ContainerType.GPU_INTENSIVE),
    ]
    best_frac, best_type = fractions[0]
    for frac, ctype in fractions[1:]:
        if frac > best_frac:
            best_frac, best_type = frac, ctype
    return best_type


def generate_synthetic(spec: WorkloadSpec,
                       reference_capacity: ResourceVector = DEFAULT_REFERENCE_CAPACITY,
                       ) -> JobStream:
    """Build the synthetic stream: exactly n_jobs/n_tasks/n_containers.

    Tasks are distributed round-robin over jobs and containers round-robin
    over tasks.  Every container draws comm partners uniformly among the
    other containers of its own job; solo-container jobs get no comm plan.
    """
    rng_arrivals = random.Random(f"{spec.seed}/arrivals")
    rng_requests = random.Random(f"{spec.seed}/requests")
    rng_comm = random.Random(f"{spec.seed}/comm")

    jobs = [Job(job_id=j,
                submit_time=rng_arrivals.randint(0, spec.arrival_window))
            for j in range(spec.n_jobs)]

    tasks: dict[int, Task] = {}
    base, extra = divmod(spec.n_containers, spec.n_tasks) if spec.n_tasks else (0, 0)
    for t in range(spec.n_tasks):
        job_id = t % spec.n_jobs
        request = ResourceVector(
            cpu=float(rng_requests.randint(*spec.cpu_range)),
            mem=float(rng_requests.randint(*spec.mem_range)),
            gpu=float(rng_requests.randint(*spec.gpu_range)),
        )
        duration = float(rng_requests.randint(*spec.duration_range))
        tasks[t] = Task(task_id=t, job_id=job_id, resource_request=request,
                        instance_num=base + (1 if t < extra else 0),
                        container_type=derive_container_type(request,
                                                             reference_capacity),
                        duration=duration)
        jobs[job_id].task_ids.append(t)

    containers: list[Container] = []
    for c in range(spec.n_containers):
        task = tasks[c % spec.n_tasks]
        containers.append(Container(
            container_id=c,
            task_id=task.task_id,
            job_id=task.job_id,
            resource_request=task.resource_request,
            container_type=task.container_type,
            duration=task.duration,
            submit_time=jobs[task.job_id].submit_time,
        ))

    by_job: dict[int, list[int]] = {}
    for cont in containers:
        by_job.setdefault(cont.job_id, []).append(cont.container_id)
    for cont in containers:
        siblings = [cid for cid in by_job[cont.job_id]
                    if cid != cont.container_id]
        if not siblings:
            continue
        count = rng_comm.randint(*spec.comm_count_range)
        events = []
        triggers: set[float] = set()
        for _ in range(count):
            trigger = rng_comm.uniform(0.0, cont.duration)
            while trigger in triggers:  # thresholds must be strictly increasing
                trigger = rng_comm.uniform(0.0, cont.duration)
            triggers.add(trigger)
            partner = rng_comm.choice(siblings)
            volume = rng_comm.randint(*spec.comm_volume_range)
            events.append(CommEvent(trigger_at=trigger,
                                    partner_container_id=partner,
                                    volume_kb=volume))
        events.sort(key=lambda e: e.trigger_at)
        cont.comm_plan = events

    jobs.sort(key=lambda j: (j.submit_time, j.job_id))
    return JobStream(jobs=jobs, tasks=tasks, containers=containers)


TRACE_MAPPING_KEYS = ["job_id", "task_id", "instance_num", "cpu", "mem",
                      "gpu", "duration", "submit_time"]


def ingest_trace(csv_text: str, mapping: dict[str, str],
                 reference_capacity: ResourceVector = DEFAULT_REFERENCE_CAPACITY,
                 ) -> JobStream:
    """Build a stream from an external cluster trace.

    `mapping` names the trace column for each of job_id, task_id,
    instance_num, cpu, mem, gpu, duration and submit_time (plus an optional
    container_type).  Rows with non-positive duration are dropped with a
    logged count; external traces carry no communication plans.
    """
    for key in TRACE_MAPPING_KEYS:
        if key not in mapping:
            raise WorkloadError(f"trace mapping is missing key {key!r}")

    reader = csv.DictReader(io.StringIO(csv_text))
    if reader.fieldnames is None:
        raise WorkloadError("trace CSV is empty (missing header row)")
    columns = set(reader.fieldnames)
    for key in TRACE_MAPPING_KEYS:
        if mapping[key] not in columns:
            raise WorkloadError(
                f"trace is missing mapped column {mapping[key]!r} (for {key})")
    type_col = mapping.get("container_type")
    if type_col and type_col not in columns:
        raise WorkloadError(
            f"trace is missing mapped column {type_col!r} (for container_type)")

    jobs: dict[str, Job] = {}
    tasks: dict[tuple[str, str], Task] = {}
    dropped = 0
    for row in reader:
        duration = float(row[mapping["duration"]])
        if duration <= 0:
            dropped += 1
            continue
        src_job = row[mapping["job_id"]]
        src_task = row[mapping["task_id"]]
        submit = int(float(row[mapping["submit_time"]]))
        if src_job not in jobs:
            jobs[src_job] = Job(job_id=len(jobs), submit_time=submit,
                                source_id=src_job)
        job = jobs[src_job]
        job.submit_time = min(job.submit_time, submit)

        key = (src_job, src_task)
        if key in tasks:
            raise WorkloadError(
                f"duplicate task row for job {src_job!r} task {src_task!r}")
        request = ResourceVector(cpu=float(row[mapping["cpu"]]),
                                 mem=float(row[mapping["mem"]]),
                                 gpu=float(row[mapping["gpu"]]))
        instance_num = int(float(row[mapping["instance_num"]]))
        if type_col and row[type_col].strip():
            ctype = _parse_container_type(row[type_col])
        else:
            ctype = derive_container_type(request, reference_capacity)
        task = Task(task_id=len(tasks), job_id=job.job_id,
                    resource_request=request, instance_num=instance_num,
                    container_type=ctype, duration=duration,
                    source_id=src_task)
        tasks[key] = task
        job.task_ids.append(task.task_id)

    if dropped:
        logger.warning("trace ingest: dropped %d rows with non-positive "
                       "duration", dropped)

    job_list = sorted(jobs.values(), key=lambda j: (j.submit_time, j.job_id))
    task_map = {t.task_id: t for t in tasks.values()}
    containers: list[Container] = []
    for task in task_map.values():
        job = next(j for j in job_list if j.job_id == task.job_id)
        for _ in range(task.instance_num):
            containers.append(Container(
                container_id=len(containers),
                task_id=task.task_id,
                job_id=task.job_id,
                resource_request=task.resource_request,
                container_type=task.container_type,
                duration=task.duration,
                submit_time=job.submit_time,
            ))
    stream = JobStream(jobs=job_list, tasks=task_map, containers=containers)
    stream.dropped_rows = dropped  # type: ignore[attr-defined]
    return stream


def _parse_container_type(text: str) -> ContainerType:
    value = text.strip().lower()
    aliases = {"cpu": ContainerType.CPU_INTENSIVE,
               "mem": ContainerType.MEM_INTENSIVE,
               "memory": ContainerType.MEM_INTENSIVE,
               "gpu": ContainerType.GPU_INTENSIVE}
    if value in aliases:
        return aliases[value]
    try:
        return ContainerType(value)
    except ValueError:
        raise WorkloadError(f"unknown container type {text!r}") from None


def write_workload_csv(stream: JobStream) -> str:
    """Serialize a stream (one row per container) for later replay."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(WORKLOAD_CSV_HEADER)
    jobs = {j.job_id: j for j in stream.jobs}
    for c in stream.containers:
        plan = ";".join(
            f"{ev.trigger_at!r}:{ev.partner_container_id}:{ev.volume_kb}"
            for ev in c.comm_plan)
        writer.writerow([
            c.job_id, jobs[c.job_id].submit_time, c.task_id, c.container_id,
            c.container_type.value, repr(c.resource_request.cpu),
            repr(c.resource_request.mem), repr(c.resource_request.gpu),
            repr(c.duration), plan,
        ])
    return out.getvalue()


def parse_workload_csv(text: str) -> JobStream:
    """Inverse of write_workload_csv; round-trips the stream exactly."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise WorkloadError("workload CSV is empty (missing header row)")
    if header != WORKLOAD_CSV_HEADER:
        raise WorkloadError(f"bad workload CSV header {header!r}")

    jobs: dict[int, Job] = {}
    tasks: dict[int, Task] = {}
    containers: list[Container] = []
    for row in reader:
        if not row:
            continue
        if len(row) != len(WORKLOAD_CSV_HEADER):
            raise WorkloadError(
                f"line {reader.line_num}: expected "
                f"{len(WORKLOAD_CSV_HEADER)} fields, got {len(row)}")
        (job_id, submit, task_id, container_id, ctype, cpu, mem, gpu,
         duration, plan) = row
        job_id, task_id, container_id = int(job_id), int(task_id), int(container_id)
        request = ResourceVector(float(cpu), float(mem), float(gpu))
        if job_id not in jobs:
            jobs[job_id] = Job(job_id=job_id, submit_time=int(submit))
        if task_id not in tasks:
            tasks[task_id] = Task(task_id=task_id, job_id=job_id,
                                  resource_request=request, instance_num=1,
                                  container_type=ContainerType(ctype),
                                  duration=float(duration))
            jobs[job_id].task_ids.append(task_id)
        else:
            tasks[task_id].instance_num += 1
        events = []
        if plan:
            for part in plan.split(";"):
                trigger, partner, volume = part.split(":")
                events.append(CommEvent(trigger_at=float(trigger),
                                        partner_container_id=int(partner),
                                        volume_kb=int(volume)))
        if container_id != len(containers):
            raise WorkloadError(
                f"line {reader.line_num}: container ids must be consecutive "
                f"from 0, got {container_id}")
        containers.append(Container(
            container_id=container_id, task_id=task_id, job_id=job_id,
            resource_request=request,
            container_type=ContainerType(ctype), duration=float(duration),
            submit_time=jobs[job_id].submit_time, comm_plan=events,
        ))
    job_list = sorted(jobs.values(), key=lambda j: (j.submit_time, j.job_id))
    return JobStream(jobs=job_list, tasks=tasks, containers=containers)
