"""Command-line entry points: run, validate, generate-workload.

Exit codes: 0 success, 1 runtime/validation failure, 2 usage error.
All state lives in files and flags; there are no environment variables.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import multiprocessing
import os
import sys

from . import engine, metrics, network, workload as workload_mod
from .config import (ConfigError, SimConfig, make_workload_spec, parse_config,
                     render_config)
from .engine import MaxTicksExceeded, Simulation, SimulationError
from .model import HostsCsvError, ModelError, load_hosts
from .network import TopologyError, generate_spine_leaf, parse_topology
from .scheduling import SchedulerError
from .workload import (WorkloadError, generate_synthetic, ingest_trace,
                       parse_workload_csv, write_workload_csv)

logger = logging.getLogger(__name__)

USER_ERRORS = (ConfigError, HostsCsvError, ModelError, TopologyError,
               WorkloadError, SchedulerError, SimulationError, OSError)


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper()),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except MaxTicksExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dcsched",
        description="Deterministic container-scheduling simulator with a "
                    "flow-level network model.")
    parser.add_argument("--log-level", default="warning",
                        choices=["debug", "info", "warning", "error"])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a full simulation")
    run.add_argument("--config", required=True, help="INI config file")
    run.add_argument("--hosts", required=True, help="hosts CSV file")
    run.add_argument("--topology", required=True,
                     help="topology file, or spine-leaf:<spines>,<leaves>,"
                          "<hosts-per-leaf>[,bw,delay,loss]")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int, default=None,
                     help="override [simulation] seed")
    run.add_argument("--sweep", type=int, default=None, metavar="N",
                     help="run N independent seeds (seed..seed+N-1) on "
                          "parallel workers, one output subdirectory each")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate",
                         help="parse and validate all inputs, run zero ticks")
    val.add_argument("--config", required=True)
    val.add_argument("--hosts", required=True)
    val.add_argument("--topology", required=True)
    val.add_argument("--seed", type=int, default=None)
    val.set_defaults(func=cmd_validate)

    gen = sub.add_parser("generate-workload",
                         help="write the synthetic workload to a CSV usable "
                              "via [workload] mode=trace-internal")
    gen.add_argument("--spec", required=True,
                     help="INI config file holding the [workload] spec")
    gen.add_argument("--out", required=True, help="output CSV file")
    gen.add_argument("--seed", type=int, default=None)
    gen.set_defaults(func=cmd_generate_workload)
    return parser


def _read(path: str) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _load_config(path: str, seed_override: int | None) -> SimConfig:
    cfg = parse_config(_read(path))
    if seed_override is not None:
        cfg.simulation.seed = seed_override
    return cfg


def _load_topology(spec: str, slots_per_host: int):
    if spec.startswith("spine-leaf:"):
        params = spec[len("spine-leaf:"):].split(",")
        if len(params) not in (3, 6):
            raise TopologyError(
                f"bad spine-leaf spec {spec!r}: expected "
                f"spine-leaf:<spines>,<leaves>,<hosts-per-leaf>[,bw,delay,loss]")
        try:
            spines, leaves, per_leaf = (int(p) for p in params[:3])
            extra = [float(p) for p in params[3:]]
        except ValueError as exc:
            raise TopologyError(f"bad spine-leaf spec {spec!r}: {exc}") from exc
        text = generate_spine_leaf(spines, leaves, per_leaf, *extra)
    else:
        text = _read(spec)
    return parse_topology(text, slots_per_host=slots_per_host)


def _build_stream(cfg: SimConfig, base_dir: str):
    wl = cfg.workload
    if wl.mode == "synthetic":
        return generate_synthetic(make_workload_spec(cfg))
    if wl.mode == "trace":
        trace_text = _read(_resolve(wl.trace_path, base_dir))
        mapping = _read_mapping(_resolve(wl.mapping_path, base_dir))
        return ingest_trace(trace_text, mapping)
    return parse_workload_csv(_read(_resolve(wl.workload_path, base_dir)))


def _resolve(path: str, base_dir: str) -> str:
    return path if os.path.isabs(path) else os.path.join(base_dir, path)


def _read_mapping(path: str) -> dict[str, str]:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(_read(path))
    except configparser.Error as exc:
        raise ConfigError(f"bad mapping file {path}: {exc}") from exc
    if not parser.has_section("mapping"):
        raise ConfigError(f"mapping file {path} needs a [mapping] section")
    return dict(parser["mapping"])


def _prepare(args, seed: int | None):
    cfg = _load_config(args.config, seed)
    hosts = load_hosts(_read(args.hosts))
    topology = _load_topology(args.topology,
                              cfg.network.container_nodes_per_host)
    stream = _build_stream(cfg, os.path.dirname(os.path.abspath(args.config)))
    return cfg, hosts, topology, stream


def cmd_run(args) -> int:
    if args.sweep is not None:
        return _run_sweep(args)
    cfg, hosts, topology, stream = _prepare(args, args.seed)
    sim = Simulation(cfg, hosts, topology, stream)
    report = sim.run()
    paths = metrics.export(sim.collector.samples, report, args.out,
                           containers=sim.containers.values(),
                           config_text=render_config(cfg))
    print(f"completed in {report.ticks} ticks: "
          f"{report.containers_completed}/{report.containers_total} "
          f"containers, avg_response={report.avg_response_time:.3f}s, "
          f"avg_runtime={report.avg_runtime:.3f}s, "
          f"avg_comm={report.avg_comm_time:.3f}s, "
          f"cost={report.total_cost:.2f}")
    for path in paths:
        print(f"wrote {path}")
    return 0


def _run_sweep(args) -> int:
    if args.sweep < 1:
        raise ConfigError("--sweep must be >= 1")
    base_seed = args.seed
    if base_seed is None:
        base_seed = _load_config(args.config, None).simulation.seed
    jobs = [(args.config, args.hosts, args.topology,
             os.path.join(args.out, f"seed-{seed}"), seed)
            for seed in range(base_seed, base_seed + args.sweep)]
    workers = min(len(jobs), os.cpu_count() or 1)
    with multiprocessing.Pool(workers) as pool:
        for line in pool.map(_sweep_worker, jobs):
            print(line)
    return 0


def _sweep_worker(job) -> str:
    config_path, hosts_path, topo_spec, out_dir, seed = job
    ns = argparse.Namespace(config=config_path, hosts=hosts_path,
                            topology=topo_spec, out=out_dir, seed=seed,
                            sweep=None)
    cfg, hosts, topology, stream = _prepare(ns, seed)
    sim = Simulation(cfg, hosts, topology, stream)
    report = sim.run()
    metrics.export(sim.collector.samples, report, out_dir,
                   containers=sim.containers.values(),
                   config_text=render_config(cfg))
    return (f"seed {seed}: {report.ticks} ticks, "
            f"avg_response={report.avg_response_time:.3f}s, "
            f"cost={report.total_cost:.2f} -> {out_dir}")


def cmd_validate(args) -> int:
    cfg, hosts, topology, stream = _prepare(args, args.seed)
    Simulation(cfg, hosts, topology, stream)  # binds hosts, checks counts
    print(render_config(cfg), end="")
    print(f"# hosts: {len(hosts)}")
    print(f"# topology nodes: {len(topology.nodes)} "
          f"({len(topology.hosts)} hosts, {len(topology.switches)} switches), "
          f"links: {len(topology.links)}, faults: {len(topology.faults)}")
    print(f"# workload: {len(stream.jobs)} jobs, {len(stream.tasks)} tasks, "
          f"{len(stream.containers)} containers")
    print("ok")
    return 0


def cmd_generate_workload(args) -> int:
    cfg = _load_config(args.spec, args.seed)
    stream = generate_synthetic(make_workload_spec(cfg))
    text = write_workload_csv(stream)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    print(f"wrote {len(stream.containers)} container rows to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
