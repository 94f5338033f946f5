"""dcsched: a deterministic, seedable discrete-event simulator of container
scheduling in data centers, coupling heterogeneous compute modeling with a
flow-level network model (latency matrix, max-min fair bandwidth sharing,
loss-capped throughput, faults, bounded retransmission)."""

from .config import ConfigError, SimConfig, parse_config, render_config
from .engine import MaxTicksExceeded, Simulation, run_simulation
from .metrics import SummaryReport, TickSample, export
from .model import (CapacityExceeded, CommEvent, Container, ContainerStatus,
                    ContainerType, HostSpec, HostState, Job, NotDeployedHere,
                    ResourceVector, Task, load_hosts)
from .network import (DelayMatrix, Flow, FlowKind, NoRoute, Topology,
                      TopologyError, fair_share_rates, generate_spine_leaf,
                      parse_topology, progressive_fill, route)
from .scheduling import (Action, PlacementAlgorithm, SchedulerConfig,
                         SchedulerView, SchedulingDecision, register_algorithm)
from .workload import (JobStream, WorkloadError, WorkloadSpec,
                       generate_synthetic, ingest_trace, parse_workload_csv,
                       write_workload_csv)

__version__ = "0.1.0"
