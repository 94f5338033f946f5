"""Per-tick sampling, end-of-run aggregates, and CSV/report export.

Cost convention: total_cost sums, per host, price * (ticks on which the host
had at least one deployed container at sampling time).  Timestamps follow
the engine's convention: submit/deploy are start-of-second tick indices and
completion_time is the end-of-second boundary (tick + 1).
"""

from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass, field

from .model import (Container, ContainerStatus, HostState, Job, queue_sizes)

logger = logging.getLogger(__name__)

TICKS_CSV_HEADER = [
    "t", "undeployed", "deployed", "completed", "active_flows", "decisions",
    "migrations", "overloaded_hosts", "idle_hosts_pre_schedule",
    "util_variance", "mean_cpu_util", "mean_mem_util", "mean_gpu_util",
]

CONTAINERS_CSV_HEADER = [
    "container_id", "job_id", "task_id", "container_type", "status",
    "submit_time", "first_deploy_time", "completion_time", "duration",
    "run_at", "comm_time_total", "comm_events_done", "retries_used", "host_id",
]


@dataclass
class TickSample:
    t: int
    host_fractions: list[tuple[float, float, float]]
    overloaded_hosts: int
    undeployed: int
    deployed: int
    completed: int
    active_flows: int
    decisions: int
    migrations: int
    idle_hosts_pre_schedule: int
    util_variance: float
    mean_utils: tuple[float, float, float]


@dataclass
class SummaryReport:
    algorithm: str
    seed: int
    ticks: int
    containers_total: int
    containers_completed: int
    jobs_total: int
    avg_response_time: float
    avg_runtime: float
    avg_comm_time: float
    comm_samples: int
    total_cost: float
    util_variance_time_avg: float
    decisions_total: int
    migrations_total: int
    permanent_failures: int


class StatsCollector:
    """Accumulates one TickSample per tick plus per-host busy-tick counts."""

    def __init__(self, overload_threshold: float, idle_threshold: float,
                 variance_metric: str = "mean"):
        if variance_metric not in ("mean", "dominant"):
            raise ValueError(f"unknown variance metric {variance_metric!r}")
        self.overload_threshold = overload_threshold
        self.idle_threshold = idle_threshold
        self.variance_metric = variance_metric
        self.samples: list[TickSample] = []
        self.busy_ticks: dict[int, int] = {}
        self.decisions_total = 0
        self.migrations_total = 0
        self.permanent_failures = 0

    def record_tick(self, t: int, hosts: list[HostState], containers,
                    active_flows: int, decisions: int, migrations: int,
                    idle_hosts_pre_schedule: int) -> TickSample:
        fractions = []
        overloaded = 0
        scalars = []
        for host in hosts:
            frac, dominant = host.utilization()
            fractions.append(frac)
            if dominant > self.overload_threshold:
                overloaded += 1
            if self.variance_metric == "dominant":
                scalars.append(dominant)
            else:
                scalars.append((frac[0] + frac[1] + frac[2]) / 3.0)
            if host.deployed:
                self.busy_ticks[host.spec.host_id] = \
                    self.busy_ticks.get(host.spec.host_id, 0) + 1
        n = len(hosts)
        if n:
            mean_scalar = sum(scalars) / n
            variance = sum((s - mean_scalar) ** 2 for s in scalars) / n
            mean_utils = (sum(f[0] for f in fractions) / n,
                          sum(f[1] for f in fractions) / n,
                          sum(f[2] for f in fractions) / n)
        else:
            variance = 0.0
            mean_utils = (0.0, 0.0, 0.0)
        undeployed, deployed, completed = queue_sizes(containers)
        sample = TickSample(
            t=t, host_fractions=fractions, overloaded_hosts=overloaded,
            undeployed=undeployed, deployed=deployed, completed=completed,
            active_flows=active_flows, decisions=decisions,
            migrations=migrations,
            idle_hosts_pre_schedule=idle_hosts_pre_schedule,
            util_variance=variance, mean_utils=mean_utils)
        self.samples.append(sample)
        self.decisions_total += decisions
        self.migrations_total += migrations
        return sample


def summarize(samples: list[TickSample], containers, jobs: dict[int, Job],
              hosts: list[HostState], collector: StatsCollector,
              algorithm: str, seed: int, ticks: int) -> SummaryReport:
    """Aggregate the run.  Averages cover completed containers only; empty
    means are reported as 0 with a zero sample count, never NaN."""
    completed = [c for c in containers if c.status is ContainerStatus.COMPLETED]
    responses = []
    runtimes = []
    for c in completed:
        submit = jobs[c.job_id].submit_time
        responses.append(c.completion_time - submit)
        runtimes.append(c.completion_time - c.first_deploy_time)
    comm_containers = [c for c in containers if c.comm_events_done >= 1]
    comm_times = [c.comm_time_total for c in comm_containers]

    total_cost = sum(host.spec.price * collector.busy_ticks.get(
        host.spec.host_id, 0) for host in hosts)
    variance_avg = (sum(s.util_variance for s in samples) / len(samples)
                    if samples else 0.0)
    return SummaryReport(
        algorithm=algorithm,
        seed=seed,
        ticks=ticks,
        containers_total=len(list(containers)),
        containers_completed=len(completed),
        jobs_total=len(jobs),
        avg_response_time=_mean(responses),
        avg_runtime=_mean(runtimes),
        avg_comm_time=_mean(comm_times),
        comm_samples=len(comm_times),
        total_cost=total_cost,
        util_variance_time_avg=variance_avg,
        decisions_total=collector.decisions_total,
        migrations_total=collector.migrations_total,
        permanent_failures=collector.permanent_failures,
    )


def _mean(values) -> float:
    return sum(values) / len(values) if values else 0.0


def render_summary(report: SummaryReport) -> str:
    lines = [
        f"algorithm={report.algorithm}",
        f"seed={report.seed}",
        f"ticks={report.ticks}",
        f"containers_total={report.containers_total}",
        f"containers_completed={report.containers_completed}",
        f"jobs_total={report.jobs_total}",
        f"avg_response_time={report.avg_response_time:.6f}",
        f"avg_runtime={report.avg_runtime:.6f}",
        f"avg_comm_time={report.avg_comm_time:.6f}",
        f"comm_samples={report.comm_samples}",
        f"total_cost={report.total_cost:.6f}",
        f"util_variance_time_avg={report.util_variance_time_avg:.9f}",
        f"decisions_total={report.decisions_total}",
        f"migrations_total={report.migrations_total}",
        f"permanent_failures={report.permanent_failures}",
    ]
    return "\n".join(lines) + "\n"


def render_ticks_csv(samples: list[TickSample]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(TICKS_CSV_HEADER)
    for s in samples:
        writer.writerow([
            s.t, s.undeployed, s.deployed, s.completed, s.active_flows,
            s.decisions, s.migrations, s.overloaded_hosts,
            s.idle_hosts_pre_schedule, repr(s.util_variance),
            repr(s.mean_utils[0]), repr(s.mean_utils[1]),
            repr(s.mean_utils[2]),
        ])
    return out.getvalue()


def render_containers_csv(containers) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CONTAINERS_CSV_HEADER)
    for c in sorted(containers, key=lambda c: c.container_id):
        writer.writerow([
            c.container_id, c.job_id, c.task_id, c.container_type.value,
            c.status.value, c.submit_time,
            "" if c.first_deploy_time is None else c.first_deploy_time,
            "" if c.completion_time is None else c.completion_time,
            repr(c.duration), repr(c.run_at), repr(c.comm_time_total),
            c.comm_events_done, c.retries_used,
            "" if c.host_id is None else c.host_id,
        ])
    return out.getvalue()


def export(samples: list[TickSample], report: SummaryReport, out_dir: str,
           containers=(), config_text: str = "") -> list[str]:
    """Write ticks.csv, containers.csv, summary.txt and config_echo.ini.
    Output bytes are deterministic for deterministic runs."""
    os.makedirs(out_dir, exist_ok=True)
    files = {
        "ticks.csv": render_ticks_csv(samples),
        "containers.csv": render_containers_csv(containers),
        "summary.txt": render_summary(report),
        "config_echo.ini": config_text,
    }
    paths = []
    for name, content in files.items():
        path = os.path.join(out_dir, name)
        try:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(content)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        paths.append(path)
    return paths
