"""Flow-level network model: topology, deterministic shortest-path routing,
the periodically refreshed host-to-host delay matrix, max-min fair bandwidth
sharing with a TCP-style loss cap, link/node faults, and bounded
retransmission.

Transfers are modeled as fluid flows that share link capacity, not as
packets.  Rates are recomputed once per tick.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

logger = logging.getLogger(__name__)

BITS_PER_MEGABIT = 1_000_000.0
BYTES_PER_KB = 1024.0


class TopologyError(Exception):
    """Topology text is malformed or fails validation."""


class NoRoute(Exception):
    """The endpoints are partitioned over the currently-up links."""


@dataclass
class Link:
    a: str
    b: str
    bandwidth: float      # Mbps
    latency_ms: float
    loss: float           # fraction in [0, 1)
    up: bool = True

    @property
    def key(self) -> tuple[str, str]:
        return (self.a, self.b) if self.a <= self.b else (self.b, self.a)


@dataclass(frozen=True)
class FaultEvent:
    kind: str             # "link" | "node"
    target: tuple[str, str] | str
    at: int
    duration: int


@dataclass
class Topology:
    """Switch/host graph.  Hosts bind to HostSpec ids by declaration order;
    container network endpoints share their host's access links, so
    slots_per_host is a logged sanity bound, not a hard limit."""

    switches: list[str] = field(default_factory=list)
    hosts: list[str] = field(default_factory=list)
    links: list[Link] = field(default_factory=list)
    faults: list[FaultEvent] = field(default_factory=list)
    slots_per_host: int = 10
    version: int = 0
    _route_cache: dict = field(default_factory=dict, repr=False)

    @property
    def nodes(self) -> list[str]:
        return self.switches + self.hosts

    def host_name(self, host_id: int) -> str:
        return self.hosts[host_id]

    def adjacency(self, up_only: bool = True) -> dict[str, list[tuple[str, int]]]:
        adj: dict[str, list[tuple[str, int]]] = {n: [] for n in self.nodes}
        for idx, link in enumerate(self.links):
            if up_only and not link.up:
                continue
            adj[link.a].append((link.b, idx))
            adj[link.b].append((link.a, idx))
        return adj


def parse_topology(text: str, slots_per_host: int = 10) -> Topology:
    """Parse the line-oriented topology format.

    Statements: `switch <name>`, `host <name>`,
    `link <a> <b> bw=<Mbps> delay=<ms> loss=<fraction>`,
    `fault link <a> <b> at=<tick> for=<ticks>`,
    `fault node <name> at=<tick> for=<ticks>`; `#` starts a comment.
    """
    topo = Topology(slots_per_host=slots_per_host)
    names: set[str] = set()
    link_keys: set[tuple[str, str]] = set()

    def fail(line_no: int, msg: str):
        raise TopologyError(f"line {line_no}: {msg}")

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind = parts[0]
        if kind in ("switch", "host"):
            if len(parts) != 2:
                fail(line_no, f"expected `{kind} <name>`")
            name = parts[1]
            if name in names:
                fail(line_no, f"duplicate node name {name!r}")
            names.add(name)
            (topo.switches if kind == "switch" else topo.hosts).append(name)
        elif kind == "link":
            if len(parts) != 6:
                fail(line_no, "expected `link <a> <b> bw=.. delay=.. loss=..`")
            a, b = parts[1], parts[2]
            for node in (a, b):
                if node not in names:
                    fail(line_no, f"link references undeclared node {node!r}")
            if a == b:
                fail(line_no, "self-links are not allowed")
            params = _parse_params(parts[3:], {"bw", "delay", "loss"}, line_no)
            link = Link(a=a, b=b, bandwidth=params["bw"],
                        latency_ms=params["delay"], loss=params["loss"])
            if link.bandwidth <= 0:
                fail(line_no, "link bandwidth must be > 0")
            if link.latency_ms < 0:
                fail(line_no, "link delay must be >= 0")
            if not (0.0 <= link.loss < 1.0):
                fail(line_no, "link loss must be in [0, 1)")
            if link.key in link_keys:
                fail(line_no, f"duplicate link {a!r} <-> {b!r}")
            link_keys.add(link.key)
            topo.links.append(link)
        elif kind == "fault":
            if len(parts) >= 2 and parts[1] == "link":
                if len(parts) != 6:
                    fail(line_no, "expected `fault link <a> <b> at=.. for=..`")
                a, b = parts[2], parts[3]
                key = (a, b) if a <= b else (b, a)
                if key not in link_keys:
                    fail(line_no, f"fault references unknown link {a!r} <-> {b!r}")
                params = _parse_params(parts[4:], {"at", "for"}, line_no)
                topo.faults.append(FaultEvent("link", key, int(params["at"]),
                                              int(params["for"])))
            elif len(parts) >= 2 and parts[1] == "node":
                if len(parts) != 5:
                    fail(line_no, "expected `fault node <name> at=.. for=..`")
                name = parts[2]
                if name not in names:
                    fail(line_no, f"fault references unknown node {name!r}")
                params = _parse_params(parts[3:], {"at", "for"}, line_no)
                topo.faults.append(FaultEvent("node", name, int(params["at"]),
                                              int(params["for"])))
            else:
                fail(line_no, "expected `fault link ...` or `fault node ...`")
        else:
            fail(line_no, f"unknown statement {kind!r}")

    for fault in topo.faults:
        if fault.at < 0 or fault.duration < 1:
            raise TopologyError(f"fault on {fault.target!r}: need at >= 0 "
                                f"and for >= 1")
    _validate_connectivity(topo)
    return topo


def _parse_params(tokens: list[str], expected: set[str], line_no: int) -> dict:
    params: dict[str, float] = {}
    for token in tokens:
        if "=" not in token:
            raise TopologyError(f"line {line_no}: expected key=value, "
                                f"got {token!r}")
        key, _, value = token.partition("=")
        if key not in expected or key in params:
            raise TopologyError(f"line {line_no}: unexpected parameter "
                                f"{key!r}")
        try:
            params[key] = float(value)
        except ValueError:
            raise TopologyError(f"line {line_no}: bad number {value!r} "
                                f"for {key}") from None
    missing = expected - set(params)
    if missing:
        raise TopologyError(f"line {line_no}: missing parameter(s) "
                            f"{sorted(missing)}")
    return params


def _validate_connectivity(topo: Topology) -> None:
    if not topo.hosts:
        raise TopologyError("topology declares no hosts")
    adj = topo.adjacency(up_only=False)
    for host in topo.hosts:
        if not adj[host]:
            raise TopologyError(f"host {host!r} has no links (unreachable)")
    if len(topo.hosts) == 1 and not topo.links:
        raise TopologyError(f"host {topo.hosts[0]!r} has no links (unreachable)")
    start = topo.nodes[0]
    seen = {start}
    stack = [start]
    while stack:
        node = stack.pop()
        for neighbor, _ in adj[node]:
            if neighbor not in seen:
                seen.add(neighbor)
                stack.append(neighbor)
    unreachable = [n for n in topo.nodes if n not in seen]
    if unreachable:
        raise TopologyError(
            f"topology is disconnected: {unreachable[0]!r} is unreachable "
            f"from {start!r}")


def generate_spine_leaf(spines: int, leaves: int, hosts_per_leaf: int,
                        bandwidth: float = 1000.0, delay_ms: float = 1.0,
                        loss: float = 0.0) -> str:
    """Emit a spine-leaf topology file: every leaf links to every spine and
    hosts hang off their leaf; all links share the given parameters."""
    if spines < 1 or leaves < 1 or hosts_per_leaf < 1:
        raise TopologyError("spine-leaf needs spines, leaves and "
                            "hosts-per-leaf all >= 1")
    lines = [f"# spine-leaf: {spines} spines, {leaves} leaves, "
             f"{hosts_per_leaf} hosts per leaf"]
    for s in range(spines):
        lines.append(f"switch spine{s}")
    for l in range(leaves):
        lines.append(f"switch leaf{l}")
    for l in range(leaves):
        for h in range(hosts_per_leaf):
            lines.append(f"host h{l * hosts_per_leaf + h}")
    params = f"bw={bandwidth!r} delay={delay_ms!r} loss={loss!r}"
    for l in range(leaves):
        for s in range(spines):
            lines.append(f"link leaf{l} spine{s} {params}")
    for l in range(leaves):
        for h in range(hosts_per_leaf):
            lines.append(f"link h{l * hosts_per_leaf + h} leaf{l} {params}")
    return "\n".join(lines) + "\n"


def _shortest_path_tree(topo: Topology, src: str) -> dict:
    """Dijkstra keyed by (total latency ms, hop count, node-name sequence)
    so equal-latency ties resolve deterministically."""
    adj = topo.adjacency(up_only=True)
    best: dict[str, tuple] = {}
    heap = [(0.0, 0, (src,), ())]
    while heap:
        dist, hops, path, links = heapq.heappop(heap)
        node = path[-1]
        if node in best:
            continue
        best[node] = (dist, hops, path, links)
        for neighbor, link_idx in adj[node]:
            if neighbor in best:
                continue
            link = topo.links[link_idx]
            heapq.heappush(heap, (dist + link.latency_ms, hops + 1,
                                  path + (neighbor,), links + (link_idx,)))
    return best


def _routes_from(topo: Topology, src_host: str) -> dict:
    cache = topo._route_cache
    key = (topo.version, src_host)
    if key not in cache:
        if len(cache) > 4 * len(topo.hosts):  # drop entries from old versions
            stale = [k for k in cache if k[0] != topo.version]
            for k in stale:
                del cache[k]
        cache[key] = _shortest_path_tree(topo, src_host)
    return cache[key]


def route(topo: Topology, src_host_id: int, dst_host_id: int) -> list[int]:
    """Link indices of the minimum-base-latency path between two hosts.

    Ties break by fewer hops, then by the lexicographically smallest node
    sequence.  Raises NoRoute when faults partition the pair.
    """
    if src_host_id == dst_host_id:
        return []
    src = topo.host_name(src_host_id)
    dst = topo.host_name(dst_host_id)
    tree = _routes_from(topo, src)
    if dst not in tree:
        raise NoRoute(f"no up path from {src} to {dst}")
    return list(tree[dst][3])


def path_base_latency_ms(topo: Topology, link_indices: list[int]) -> float:
    return sum(topo.links[i].latency_ms for i in link_indices)


@dataclass
class DelayMatrix:
    """Host-to-host latency table in seconds, refreshed periodically."""

    seconds: list[list[float]]
    last_refresh_tick: int = 0

    def get(self, i: int, j: int) -> float:
        return self.seconds[i][j]


def refresh_delay_matrix(topo: Topology, flows, t: int,
                         congestion_threshold: float = 0.2,
                         congestion_k: float = 4.0) -> DelayMatrix:
    """Recompute every pairwise delay along the routed path.

    Each link contributes base_latency * (1 + congestion_k * util) when its
    utilization (allocated flow rate / bandwidth) is at or above the
    congestion threshold, and plain base latency otherwise.  Unreachable
    pairs get +inf.
    """
    util = link_utilization(topo, flows)
    adjusted = []
    for idx, link in enumerate(topo.links):
        penalty = congestion_k * util[idx] if util[idx] >= congestion_threshold else 0.0
        adjusted.append(link.latency_ms * (1.0 + penalty))

    n = len(topo.hosts)
    matrix = [[0.0] * n for _ in range(n)]
    unreachable = 0
    for i in range(n):
        tree = _routes_from(topo, topo.host_name(i))
        for j in range(n):
            if i == j:
                continue
            entry = tree.get(topo.host_name(j))
            if entry is None:
                matrix[i][j] = math.inf
                unreachable += 1
            else:
                total_ms = 0.0
                for link_idx in entry[3]:
                    total_ms += adjusted[link_idx]
                matrix[i][j] = total_ms * 1e-3
    if unreachable:
        logger.warning("delay matrix refresh at t=%d: %d unreachable host "
                       "pairs", t, unreachable)
    return DelayMatrix(seconds=matrix, last_refresh_tick=t)


def link_utilization(topo: Topology, flows) -> list[float]:
    """Per-link utilization from the flows' current routes and rates."""
    load = [0.0] * len(topo.links)
    for flow in flows:
        if flow.src_host == flow.dst_host or flow.current_rate <= 0:
            continue
        try:
            for idx in route(topo, flow.src_host, flow.dst_host):
                load[idx] += flow.current_rate
        except NoRoute:
            continue
    return [load[i] / topo.links[i].bandwidth for i in range(len(topo.links))]


class FlowKind(str, Enum):
    COMMUNICATION = "communication"
    MIGRATION = "migration"


@dataclass
class Flow:
    """An in-progress transfer between two hosts."""

    flow_id: int
    kind: FlowKind
    src_host: int
    dst_host: int
    bytes_total: float
    bytes_remaining: float
    owners: tuple[int, ...]
    comm_ref: tuple[int, int] | None = None  # (container_id, event index)
    current_rate: float = 0.0                # Mbps
    attempt: int = 1
    stall_ticks: int = 0
    ticks_elapsed: int = 0


def progressive_fill(link_capacity: list[float],
                     flow_links: dict[int, list[int]]) -> dict[int, float]:
    """Max-min fair rates by progressive filling.

    All unfrozen flows rise to a common level; the first link to saturate
    freezes the flows crossing it, and filling continues with the rest.
    """
    rates = {fid: 0.0 for fid in flow_links}
    active = list(flow_links)
    while active:
        counts: dict[int, int] = {}
        for fid in active:
            for link in flow_links[fid]:
                counts[link] = counts.get(link, 0) + 1
        if not counts:
            for fid in active:
                rates[fid] = math.inf
            break
        frozen_load: dict[int, float] = {link: 0.0 for link in counts}
        for fid, rate in rates.items():
            if fid in active:
                continue
            for link in flow_links[fid]:
                if link in frozen_load:
                    frozen_load[link] += rate
        level = None
        for link, count in counts.items():
            slack = max(0.0, link_capacity[link] - frozen_load[link])
            lam = slack / count
            if level is None or lam < level:
                level = lam
        saturated = {link for link, count in counts.items()
                     if max(0.0, link_capacity[link] - frozen_load[link]) / count == level}
        still_active = []
        for fid in active:
            if any(link in saturated for link in flow_links[fid]):
                rates[fid] = level
            else:
                still_active.append(fid)
        active = still_active
    return rates


def mathis_cap_mbps(rtt_seconds: float, path_loss: float,
                    mss_bytes: int, mathis_const: float) -> float:
    """TCP-style throughput ceiling: mss_bits * C / (rtt * sqrt(p))."""
    if path_loss <= 0.0:
        return math.inf
    if rtt_seconds <= 0.0:
        return math.inf
    if math.isinf(rtt_seconds):
        return 0.0
    bits = mss_bytes * 8.0 * mathis_const
    return bits / (rtt_seconds * math.sqrt(path_loss)) / BITS_PER_MEGABIT


def fair_share_rates(topo: Topology, flows, delay: DelayMatrix,
                     mss_bytes: int = 1500,
                     mathis_const: float = 1.2247) -> dict[int, float]:
    """Assign each flow its max-min fair rate, then cap it by the loss model.

    The path loss is 1 - prod(1 - loss_l) over the routed links and the RTT
    is twice the current delay-matrix entry.  Flows without an up route get
    rate 0 (they stall).  Rates are also written to flow.current_rate.
    """
    flow_links: dict[int, list[int]] = {}
    paths: dict[int, list[int]] = {}
    by_id = {}
    for flow in flows:
        by_id[flow.flow_id] = flow
        if flow.src_host == flow.dst_host:
            continue
        try:
            links = route(topo, flow.src_host, flow.dst_host)
        except NoRoute:
            flow.current_rate = 0.0
            continue
        flow_links[flow.flow_id] = links
        paths[flow.flow_id] = links

    rates = progressive_fill([l.bandwidth for l in topo.links], flow_links)
    out: dict[int, float] = {}
    for fid, base_rate in rates.items():
        flow = by_id[fid]
        keep = 1.0
        for idx in paths[fid]:
            keep *= (1.0 - topo.links[idx].loss)
        p_path = 1.0 - keep
        rtt = 2.0 * delay.get(flow.src_host, flow.dst_host)
        cap = mathis_cap_mbps(rtt, p_path, mss_bytes, mathis_const)
        rate = min(base_rate, cap)
        flow.current_rate = rate
        out[fid] = rate
    return out


@dataclass
class FlowOutcome:
    completed: list[Flow]
    attempt_failures: list[Flow]
    permanent_failures: list[Flow]


def advance_flows(topo: Topology, flows, stall_timeout: int = 5,
                  max_retransmissions: int = 3) -> FlowOutcome:
    """Advance every flow by one tick at its current rate.

    Intra-host flows complete immediately.  A flow whose route is down makes
    no progress; after stall_timeout consecutive stalled ticks the attempt
    fails and the transfer restarts from scratch, and once the attempt count
    exceeds max_retransmissions + 1 the flow fails permanently.
    """
    outcome = FlowOutcome([], [], [])
    for flow in flows:
        if flow.src_host == flow.dst_host:
            flow.bytes_remaining = 0.0
            outcome.completed.append(flow)
            continue
        route_up = True
        try:
            route(topo, flow.src_host, flow.dst_host)
        except NoRoute:
            route_up = False
        flow.ticks_elapsed += 1
        if not route_up:
            flow.stall_ticks += 1
            if flow.stall_ticks >= stall_timeout:
                flow.stall_ticks = 0
                flow.bytes_remaining = flow.bytes_total
                flow.attempt += 1
                outcome.attempt_failures.append(flow)
                if flow.attempt > max_retransmissions + 1:
                    outcome.permanent_failures.append(flow)
            continue
        flow.stall_ticks = 0
        flow.bytes_remaining -= flow.current_rate * BITS_PER_MEGABIT / 8.0
        if flow.bytes_remaining <= 0.0:
            flow.bytes_remaining = 0.0
            outcome.completed.append(flow)
    return outcome


def transfer_time_seconds(flow: Flow, delay: DelayMatrix,
                          topo: Topology | None = None) -> float:
    """Whole ticks the flow was alive plus the round-trip latency term.
    Intra-host transfers cost nothing."""
    if flow.src_host == flow.dst_host:
        return 0.0
    d = delay.get(flow.src_host, flow.dst_host)
    if math.isinf(d) and topo is not None:
        # Matrix entry is stale from a refresh during a fault window; the
        # flow just completed, so a live path exists.
        try:
            links = route(topo, flow.src_host, flow.dst_host)
            d = path_base_latency_ms(topo, links) * 1e-3
        except NoRoute:
            d = 0.0
    return float(flow.ticks_elapsed) + 2.0 * d


def apply_faults(topo: Topology, schedule, t: int) -> bool:
    """Set every link's up flag from the fault windows active at tick t.
    Returns True (and bumps the topology version) when anything changed."""
    down_links: set[tuple[str, str]] = set()
    down_nodes: set[str] = set()
    for fault in schedule:
        if not (fault.at <= t < fault.at + fault.duration):
            continue
        if fault.kind == "link":
            down_links.add(fault.target)  # type: ignore[arg-type]
        else:
            down_nodes.add(fault.target)  # type: ignore[arg-type]
    changed = False
    for link in topo.links:
        up = (link.key not in down_links and link.a not in down_nodes
              and link.b not in down_nodes)
        if up != link.up:
            link.up = up
            changed = True
    if changed:
        topo.version += 1
    return changed
