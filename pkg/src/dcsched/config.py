"""INI configuration: parsing, defaults, strict validation, and rendering.

Unknown sections or keys are rejected (typo safety); every value is
range-checked at parse time.  render_config() emits a resolved file that
reparses to an equal SimConfig, which is what run outputs echo.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields

from . import scheduling


class ConfigError(Exception):
    pass


@dataclass
class SimulationSection:
    seed: int = 0
    max_ticks: int = 0  # 0 = auto: max(1000, 100 * arrival_window)


@dataclass
class NetworkSection:
    update_period: int = 10
    max_retransmissions: int = 3
    congestion_threshold: float = 0.2
    congestion_k: float = 4.0
    stall_timeout: int = 5
    container_nodes_per_host: int = 10
    mss_bytes: int = 1500
    mathis_const: float = 1.2247


@dataclass
class SchedulerSection:
    algorithm: str = ""
    overload_threshold: float = 0.7
    idle_threshold: float = 0.3
    migration_bytes_per_gib: float = 268435456.0  # 256 MiB per GiB of memory


@dataclass
class WorkloadSection:
    mode: str = "synthetic"  # synthetic | trace | trace-internal
    arrival_window: int = 36
    n_jobs: int = 100
    n_tasks: int = 300
    n_containers: int = 300
    duration_range: tuple[int, int] = (20, 30)
    cpu_range: tuple[int, int] = (100, 1700)
    mem_range: tuple[int, int] = (1, 32)
    gpu_range: tuple[int, int] = (50, 200)
    comm_count_range: tuple[int, int] = (1, 5)
    comm_volume_range: tuple[int, int] = (100, 102400)
    trace_path: str = ""
    mapping_path: str = ""
    workload_path: str = ""


@dataclass
class CommSection:
    block_partner: bool = True


@dataclass
class MetricsSection:
    variance_metric: str = "mean"  # mean | dominant


@dataclass
class SimConfig:
    simulation: SimulationSection = field(default_factory=SimulationSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    scheduler: SchedulerSection = field(default_factory=SchedulerSection)
    workload: WorkloadSection = field(default_factory=WorkloadSection)
    comm: CommSection = field(default_factory=CommSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)

    def effective_max_ticks(self) -> int:
        if self.simulation.max_ticks > 0:
            return self.simulation.max_ticks
        return max(1000, 100 * self.workload.arrival_window)


_SECTIONS = {
    "simulation": SimulationSection,
    "network": NetworkSection,
    "scheduler": SchedulerSection,
    "workload": WorkloadSection,
    "comm": CommSection,
    "metrics": MetricsSection,
}


def _parse_int(text: str) -> int:
    return int(text.strip())


def _parse_float(text: str) -> float:
    return float(text.strip())


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("true", "yes", "1", "on"):
        return True
    if value in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_range(text: str) -> tuple[int, int]:
    parts = text.replace("~", ",").split(",")
    if len(parts) != 2:
        raise ValueError(f"expected `lo,hi`, got {text!r}")
    return (int(parts[0].strip()), int(parts[1].strip()))


def _coerce(value_type, text: str):
    if value_type is int:
        return _parse_int(text)
    if value_type is float:
        return _parse_float(text)
    if value_type is bool:
        return _parse_bool(text)
    if value_type is str:
        return text.strip()
    return _parse_range(text)


def parse_config(text: str) -> SimConfig:
    """Parse INI text into a validated SimConfig with defaults filled in."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"bad INI syntax: {exc}") from exc

    cfg = SimConfig()
    for section_name in parser.sections():
        if section_name not in _SECTIONS:
            first_key = next(iter(parser[section_name]), "?")
            raise ConfigError(f"unknown key {section_name}.{first_key}")
        target = getattr(cfg, section_name)
        types = _field_types(type(target))
        for key, raw in parser[section_name].items():
            if key not in types:
                raise ConfigError(f"unknown key {section_name}.{key}")
            try:
                value = _coerce(types[key], raw)
            except ValueError as exc:
                raise ConfigError(
                    f"bad value for {section_name}.{key}: {exc}") from exc
            setattr(target, key, value)
    validate_config(cfg)
    return cfg


def _field_types(cls) -> dict[str, type]:
    defaults = cls()
    out = {}
    for f in fields(cls):
        value = getattr(defaults, f.name)
        out[f.name] = tuple if isinstance(value, tuple) else type(value)
    return out


def validate_config(cfg: SimConfig) -> None:
    def check(ok: bool, where: str, msg: str):
        if not ok:
            raise ConfigError(f"{where}: {msg}")

    sim, net, sch, wl = cfg.simulation, cfg.network, cfg.scheduler, cfg.workload
    check(sim.max_ticks >= 0, "simulation.max_ticks", "must be >= 0")
    check(net.update_period >= 1, "network.update_period", "must be >= 1")
    check(net.max_retransmissions >= 0, "network.max_retransmissions",
          "must be >= 0")
    check(0.0 <= net.congestion_threshold <= 1.0,
          "network.congestion_threshold", "must be in [0, 1]")
    check(net.congestion_k >= 0.0, "network.congestion_k", "must be >= 0")
    check(net.stall_timeout >= 1, "network.stall_timeout", "must be >= 1")
    check(net.container_nodes_per_host >= 1,
          "network.container_nodes_per_host", "must be >= 1")
    check(net.mss_bytes >= 1, "network.mss_bytes", "must be >= 1")
    check(net.mathis_const > 0.0, "network.mathis_const", "must be > 0")

    check(bool(sch.algorithm), "scheduler.algorithm",
          "is required (one of: "
          + ", ".join(sorted(scheduling.ALGORITHMS)) + ")")
    check(sch.algorithm in scheduling.ALGORITHMS, "scheduler.algorithm",
          f"unknown algorithm {sch.algorithm!r}; available: "
          + ", ".join(sorted(scheduling.ALGORITHMS)))
    check(0.0 < sch.idle_threshold < sch.overload_threshold < 1.0,
          "scheduler.idle_threshold",
          f"need 0 < idle ({sch.idle_threshold}) < overload "
          f"({sch.overload_threshold}) < 1")
    check(sch.migration_bytes_per_gib >= 0.0,
          "scheduler.migration_bytes_per_gib", "must be >= 0")

    check(wl.mode in ("synthetic", "trace", "trace-internal"),
          "workload.mode", f"unknown mode {wl.mode!r}")
    check(wl.arrival_window >= 0, "workload.arrival_window", "must be >= 0")
    check(0 <= wl.n_jobs <= wl.n_tasks <= wl.n_containers,
          "workload.n_jobs", "need 0 <= n_jobs <= n_tasks <= n_containers")
    for name in ("duration_range", "cpu_range", "mem_range", "gpu_range",
                 "comm_count_range", "comm_volume_range"):
        lo, hi = getattr(wl, name)
        check(lo <= hi, f"workload.{name}", f"empty range [{lo}, {hi}]")
        check(lo >= 0, f"workload.{name}", "must be >= 0")
    check(wl.duration_range[0] >= 1, "workload.duration_range",
          "durations must be >= 1")
    if wl.mode == "trace":
        check(bool(wl.trace_path), "workload.trace_path",
              "required when mode=trace")
        check(bool(wl.mapping_path), "workload.mapping_path",
              "required when mode=trace")
    if wl.mode == "trace-internal":
        check(bool(wl.workload_path), "workload.workload_path",
              "required when mode=trace-internal")
    check(cfg.metrics.variance_metric in ("mean", "dominant"),
          "metrics.variance_metric", "must be `mean` or `dominant`")


def _render_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return f"{value[0]},{value[1]}"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_config(cfg: SimConfig) -> str:
    """Emit the fully resolved config; parse_config() round-trips it."""
    out = io.StringIO()
    for section_name in _SECTIONS:
        target = getattr(cfg, section_name)
        out.write(f"[{section_name}]\n")
        for f in fields(target):
            out.write(f"{f.name} = {_render_value(getattr(target, f.name))}\n")
        out.write("\n")
    return out.getvalue()


def make_workload_spec(cfg: SimConfig):
    """WorkloadSpec for synthetic generation, seeded from [simulation]."""
    from .workload import WorkloadSpec
    wl = cfg.workload
    return WorkloadSpec(
        n_jobs=wl.n_jobs, n_tasks=wl.n_tasks, n_containers=wl.n_containers,
        duration_range=wl.duration_range, cpu_range=wl.cpu_range,
        mem_range=wl.mem_range, gpu_range=wl.gpu_range,
        comm_count_range=wl.comm_count_range,
        comm_volume_range=wl.comm_volume_range,
        arrival_window=wl.arrival_window, seed=cfg.simulation.seed)
