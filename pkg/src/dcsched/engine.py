"""Deterministic tick loop tying the model, network, scheduler and metrics
together.

Fixed order inside one tick: apply fault windows, enqueue arrivals, refresh
the delay matrix when due, schedule (deploys then migration starts), fire
communication triggers, advance flows, advance execution, record stats.
The termination check (all generated containers completed and no pending
arrivals) runs at the top of each loop iteration, so the final executed
tick is always sampled and an empty workload terminates at t=0 with no
samples.  Everything is a pure function of (config, seed, inputs): all
iteration orders are fixed (host index, container id, flow id).
"""

from __future__ import annotations

import copy
import logging

from . import metrics, network, scheduling
from .config import SimConfig
from .model import (Container, ContainerStatus, HostSpec, HostState,
                    advance_run)
from .network import Flow, FlowKind, Topology
from .scheduling import Action, SchedulingDecision
from .workload import JobStream

logger = logging.getLogger(__name__)


class SimulationError(Exception):
    pass


class MaxTicksExceeded(SimulationError):
    """Deadlock guard: the run hit the safety limit with work outstanding."""

    def __init__(self, max_ticks: int, stuck_containers: list[int],
                 pending_jobs: int):
        self.max_ticks = max_ticks
        self.stuck_containers = stuck_containers
        self.pending_jobs = pending_jobs
        preview = ", ".join(str(c) for c in stuck_containers[:10])
        if len(stuck_containers) > 10:
            preview += ", ..."
        super().__init__(
            f"simulation did not terminate within {max_ticks} ticks; "
            f"{len(stuck_containers)} containers stuck [{preview}], "
            f"{pending_jobs} jobs not yet arrived")


class Simulation:
    """One self-contained simulation instance.

    Single-threaded; a whole instance may be handed to another process for
    parameter sweeps.  Inputs are deep-copied so instances never share
    mutable state.
    """

    def __init__(self, config: SimConfig, host_specs: list[HostSpec],
                 topology: Topology, stream: JobStream):
        if len(topology.hosts) != len(host_specs):
            raise SimulationError(
                f"topology declares {len(topology.hosts)} hosts but the "
                f"hosts CSV defines {len(host_specs)}")
        self.cfg = config
        self.topology = copy.deepcopy(topology)
        self.topology.slots_per_host = config.network.container_nodes_per_host
        self.stream = copy.deepcopy(stream)
        self.hosts = [HostState(spec=s) for s in host_specs]
        self.containers: dict[int, Container] = {}
        self.jobs = {}
        self.job_map: dict[int, dict[int, int]] = {}
        self.flows: dict[int, Flow] = {}
        self.delay: network.DelayMatrix | None = None
        self._next_flow_id = 0
        self._incomplete = 0
        self._job_remaining: dict[int, int] = {}
        self._slot_warned: set[int] = set()
        self.t = 0
        self.final_tick = 0
        self.permanent_failure_log: list[dict] = []

        self.sched_cfg = scheduling.SchedulerConfig(
            algorithm=config.scheduler.algorithm,
            overload_threshold=config.scheduler.overload_threshold,
            idle_threshold=config.scheduler.idle_threshold)
        self.algorithm = scheduling.make_algorithm(config.scheduler.algorithm)
        self.collector = metrics.StatsCollector(
            overload_threshold=config.scheduler.overload_threshold,
            idle_threshold=config.scheduler.idle_threshold,
            variance_metric=config.metrics.variance_metric)

        self._containers_by_job: dict[int, list[Container]] = {}
        for c in self.stream.containers:
            self._containers_by_job.setdefault(c.job_id, []).append(c)
        self._warn_infeasible_requests(host_specs)

    # ------------------------------------------------------------------ run

    def run(self) -> metrics.SummaryReport:
        max_ticks = self.cfg.effective_max_ticks()
        t = 0
        while True:
            if self.stream.exhausted and self._incomplete == 0:
                break
            if t >= max_ticks:
                stuck = sorted(cid for cid, c in self.containers.items()
                               if c.status is not ContainerStatus.COMPLETED)
                pending = sum(1 for j in self.stream.jobs
                              if j.job_id not in self.jobs)
                raise MaxTicksExceeded(max_ticks, stuck, pending)
            self._tick(t)
            t += 1
            if t % 500 == 0:
                logger.debug("t=%d: %d/%d containers completed, %d flows",
                             t, len(self.containers) - self._incomplete,
                             len(self.containers), len(self.flows))
        self.final_tick = t
        return self.summary()

    def summary(self) -> metrics.SummaryReport:
        return metrics.summarize(
            self.collector.samples, self.containers.values(), self.jobs,
            self.hosts, self.collector, self.cfg.scheduler.algorithm,
            self.cfg.simulation.seed, self.final_tick)

    # ----------------------------------------------------------------- tick

    def _tick(self, t: int) -> None:
        self.t = t
        net = self.cfg.network
        network.apply_faults(self.topology, self.topology.faults, t)

        for job in self.stream.arrivals_at(t):
            self.jobs[job.job_id] = job
            members = self._containers_by_job.get(job.job_id, [])
            for c in members:
                self.containers[c.container_id] = c
            self._incomplete += len(members)
            self._job_remaining[job.job_id] = len(members)

        if self.delay is None or t % net.update_period == 0:
            self.delay = network.refresh_delay_matrix(
                self.topology, self.flows.values(), t,
                congestion_threshold=net.congestion_threshold,
                congestion_k=net.congestion_k)

        decisions, migrations, idle_pre = self._schedule()
        order = sorted(self.containers)
        self._fire_comm_triggers(order)
        self._advance_flows(t)
        self._advance_execution(order, t)

        self.collector.record_tick(
            t, self.hosts, self.containers.values(),
            active_flows=len(self.flows), decisions=decisions,
            migrations=migrations, idle_hosts_pre_schedule=idle_pre)

    # ------------------------------------------------------------- schedule

    def _schedule(self) -> tuple[int, int, int]:
        view = scheduling.SchedulerView(self.hosts, self.containers,
                                        self.job_map, self.delay)
        idle_pre = sum(1 for d in view.dominant
                       if d < self.sched_cfg.idle_threshold)
        applied = 0
        migrations = 0
        # Requests that found no host this tick; anything componentwise >=
        # one of them cannot fit either (capacity only shrinks until step 5).
        failed: list[tuple[float, float, float]] = []
        for c in scheduling.select(view, self.sched_cfg):
            req = c.resource_request
            if any(req.cpu >= f[0] and req.mem >= f[1] and req.gpu >= f[2]
                   for f in failed):
                continue
            host = self.algorithm.place(c, view, self.sched_cfg)
            if host is None:
                failed.append(req.as_tuple())
                continue
            done = scheduling.execute(
                [SchedulingDecision(c.container_id, host, Action.DEPLOY)], self)
            if done:
                view.apply_deploy(host, req)
                applied += 1
        if self.algorithm.migration_stage:
            for cid, _src in scheduling.select_overload_migrate(view,
                                                                self.sched_cfg):
                c = self.containers[cid]
                target = scheduling.place_overload_target(c, view,
                                                          self.sched_cfg)
                if target is None:
                    continue
                done = scheduling.execute(
                    [SchedulingDecision(cid, target, Action.MIGRATE)], self)
                if done:
                    view.apply_deploy(target, c.resource_request)
                    applied += 1
                    migrations += 1
        return applied, migrations, idle_pre

    def deploy(self, container: Container, host_id: int) -> None:
        """Apply a deploy decision: allocate and start (or resume) running."""
        self._host_add(container, host_id)
        container.host_id = host_id
        container.set_status(ContainerStatus.RUNNING)
        if container.first_deploy_time is None:
            container.first_deploy_time = self.t

    def begin_migration(self, container: Container, target_host_id: int) -> None:
        """Reserve the target and start the state-transfer flow; the source
        allocation is held until the transfer finishes."""
        self._host_add(container, target_host_id)
        container.set_status(ContainerStatus.MIGRATING)
        volume = (container.resource_request.mem
                  * self.cfg.scheduler.migration_bytes_per_gib)
        self._new_flow(FlowKind.MIGRATION, container.host_id, target_host_id,
                       volume, owners=(container.container_id,))

    # ------------------------------------------------------- communications

    def _fire_comm_triggers(self, order: list[int]) -> None:
        """Start at most one pending transfer per running container whose
        run_at has crossed the event threshold.  Events whose partner is
        undeployed are re-checked next tick; a completed partner skips the
        event."""
        for cid in order:
            c = self.containers[cid]
            if c.status is not ContainerStatus.RUNNING:
                continue
            plan = c.comm_plan
            idx = c.next_event_idx
            while idx < len(plan):
                ev = plan[idx]
                if ev.state in ("done", "skipped"):
                    idx += 1
                    continue
                if c.run_at < ev.trigger_at:
                    break
                partner = self.containers.get(ev.partner_container_id)
                if partner is None or partner is c:
                    logger.warning("container %d: dropping comm event with "
                                   "invalid partner %d", cid,
                                   ev.partner_container_id)
                    ev.state = "skipped"
                    idx += 1
                    continue
                if partner.status is ContainerStatus.COMPLETED:
                    logger.debug("container %d: partner %d already completed,"
                                 " skipping comm event", cid,
                                 partner.container_id)
                    ev.state = "skipped"
                    idx += 1
                    continue
                if partner.status in (ContainerStatus.RUNNING,
                                      ContainerStatus.COMMUNICATING):
                    ev.state = "active"
                    self._new_flow(FlowKind.COMMUNICATION, c.host_id,
                                   partner.host_id,
                                   ev.volume_kb * network.BYTES_PER_KB,
                                   owners=(cid, partner.container_id),
                                   comm_ref=(cid, idx))
                    c.set_status(ContainerStatus.COMMUNICATING)
                    c.active_comm_flows += 1
                    if (self.cfg.comm.block_partner
                            and partner.status is ContainerStatus.RUNNING):
                        partner.set_status(ContainerStatus.COMMUNICATING)
                    partner.active_comm_flows += 1
                break  # partner undeployed: deferred, re-checked next tick
            c.next_event_idx = idx

    def _new_flow(self, kind: FlowKind, src: int, dst: int, volume_bytes: float,
                  owners: tuple[int, ...], comm_ref=None) -> Flow:
        flow = Flow(flow_id=self._next_flow_id, kind=kind, src_host=src,
                    dst_host=dst, bytes_total=volume_bytes,
                    bytes_remaining=volume_bytes, owners=owners,
                    comm_ref=comm_ref)
        self.flows[flow.flow_id] = flow
        self._next_flow_id += 1
        return flow

    # ---------------------------------------------------------------- flows

    def _advance_flows(self, t: int) -> None:
        net = self.cfg.network
        network.fair_share_rates(self.topology, self.flows.values(),
                                 self.delay, mss_bytes=net.mss_bytes,
                                 mathis_const=net.mathis_const)
        outcome = network.advance_flows(self.topology, self.flows.values(),
                                        stall_timeout=net.stall_timeout,
                                        max_retransmissions=net.max_retransmissions)
        for flow in outcome.attempt_failures:
            for owner in flow.owners:
                c = self.containers.get(owner)
                if c is not None:
                    c.retries_used += 1
        for flow in outcome.completed:
            del self.flows[flow.flow_id]
            if flow.kind is FlowKind.COMMUNICATION:
                self._finish_comm_flow(flow)
            else:
                self._finish_migration_flow(flow)
        for flow in outcome.permanent_failures:
            del self.flows[flow.flow_id]
            self.collector.permanent_failures += 1
            self.permanent_failure_log.append({
                "tick": t, "flow_id": flow.flow_id, "kind": flow.kind.value,
                "owners": flow.owners, "failed_attempts": flow.attempt - 1})
            logger.warning("t=%d: flow %d (%s) permanently failed after %d "
                           "attempts; owners %s return to waiting", t,
                           flow.flow_id, flow.kind.value, flow.attempt - 1,
                           flow.owners)
            if flow.kind is FlowKind.COMMUNICATION:
                cid, idx = flow.comm_ref
                self.containers[cid].comm_plan[idx].state = "skipped"
                for owner in flow.owners:
                    c = self.containers[owner]
                    c.active_comm_flows = max(0, c.active_comm_flows - 1)
                    if c.status is ContainerStatus.COMMUNICATING:
                        self._demote_to_waiting(c)
            else:
                c = self.containers[flow.owners[0]]
                self._host_remove(c, flow.dst_host)   # reserved target
                self._host_remove(c, c.host_id)       # source
                c.host_id = None
                c.set_status(ContainerStatus.WAITING)
                c.paused_at = self.t

    def _finish_comm_flow(self, flow: Flow) -> None:
        cid, idx = flow.comm_ref
        self.containers[cid].comm_plan[idx].state = "done"
        tt = network.transfer_time_seconds(flow, self.delay, self.topology)
        for owner in flow.owners:
            c = self.containers[owner]
            if c.status is ContainerStatus.COMPLETED:
                continue  # partner ran unblocked and finished mid-transfer
            c.comm_time_total += tt
            c.comm_events_done += 1
            c.active_comm_flows = max(0, c.active_comm_flows - 1)
            if (c.status is ContainerStatus.COMMUNICATING
                    and c.active_comm_flows == 0):
                c.set_status(ContainerStatus.RUNNING)

    def _finish_migration_flow(self, flow: Flow) -> None:
        c = self.containers[flow.owners[0]]
        self._host_remove(c, c.host_id)
        c.host_id = flow.dst_host
        c.set_status(ContainerStatus.RUNNING)

    def _demote_to_waiting(self, c: Container) -> None:
        """Failed transfer: suspend the container, free its host, and leave
        it to re-enter placement with run_at preserved."""
        self._abort_comm_flows_of(c)
        self._host_remove(c, c.host_id)
        c.host_id = None
        c.set_status(ContainerStatus.WAITING)
        c.paused_at = self.t
        c.active_comm_flows = 0

    def _abort_comm_flows_of(self, c: Container) -> None:
        """Cancel other in-flight transfers involving c; their events go back
        to pending so the initiator re-triggers once a placement exists."""
        doomed = [f for f in self.flows.values()
                  if f.kind is FlowKind.COMMUNICATION
                  and c.container_id in f.owners]
        for flow in doomed:
            del self.flows[flow.flow_id]
            cid, idx = flow.comm_ref
            self.containers[cid].comm_plan[idx].state = "pending"
            for owner in flow.owners:
                if owner == c.container_id:
                    continue
                other = self.containers[owner]
                other.active_comm_flows = max(0, other.active_comm_flows - 1)
                if (other.status is ContainerStatus.COMMUNICATING
                        and other.active_comm_flows == 0):
                    other.set_status(ContainerStatus.RUNNING)

    # ------------------------------------------------------------ execution

    def _advance_execution(self, order: list[int], t: int) -> None:
        for cid in order:
            c = self.containers[cid]
            if c.status is not ContainerStatus.RUNNING:
                continue
            if advance_run(c, self.hosts[c.host_id].spec):
                self._host_remove(c, c.host_id)
                c.set_status(ContainerStatus.COMPLETED)
                c.host_id = None
                c.completion_time = t + 1
                skipped = 0
                for ev in c.comm_plan[c.next_event_idx:]:
                    if ev.state == "pending":
                        ev.state = "skipped"
                        skipped += 1
                if skipped:
                    logger.debug("container %d completed with %d comm events "
                                 "never fired", cid, skipped)
                self._incomplete -= 1
                self._job_remaining[c.job_id] -= 1
                if self._job_remaining[c.job_id] == 0:
                    self.jobs[c.job_id].completion_time = t + 1

    # ------------------------------------------------------------- plumbing

    def _host_add(self, c: Container, host_id: int) -> None:
        host = self.hosts[host_id]
        host.allocate(c.container_id, c.resource_request)
        per_job = self.job_map.setdefault(c.job_id, {})
        per_job[host_id] = per_job.get(host_id, 0) + 1
        if (len(host.deployed) > self.topology.slots_per_host
                and host_id not in self._slot_warned):
            self._slot_warned.add(host_id)
            logger.warning("host %d holds %d containers, more than its %d "
                           "network endpoint slots", host_id,
                           len(host.deployed), self.topology.slots_per_host)

    def _host_remove(self, c: Container, host_id: int) -> None:
        self.hosts[host_id].release(c.container_id)
        per_job = self.job_map[c.job_id]
        per_job[host_id] -= 1
        if per_job[host_id] == 0:
            del per_job[host_id]

    def _warn_infeasible_requests(self, host_specs: list[HostSpec]) -> None:
        for task in self.stream.tasks.values():
            req = task.resource_request
            if not any(HostState(spec=s).fits(req) for s in host_specs):
                logger.warning("task %d requests %s which fits no host; its "
                               "containers will never deploy", task.task_id,
                               req)


def run_simulation(config: SimConfig, host_specs: list[HostSpec],
                   topology: Topology, stream: JobStream,
                   ) -> metrics.SummaryReport:
    """Convenience wrapper: build a Simulation, run it, return the report."""
    return Simulation(config, host_specs, topology, stream).run()
