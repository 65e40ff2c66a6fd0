"""Request model, synthetic request generators and Bitbrains trace ingestion."""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

log = logging.getLogger(__name__)

N_APP_IDS = 20

WORKLOAD_HEADER = [
    "request_id",
    "app_id",
    "app_class",
    "service_index",
    "vcpu",
    "memory_gb",
    "volume_count",
    "volume_gb",
    "throughput_kbps",
    "deadline_s",
]


class WorkloadError(ValueError):
    pass


class AppClass(str, enum.Enum):
    NORMAL = "Normal"
    DATA_INTENSIVE = "DataIntensive"
    PROCESS_INTENSIVE = "ProcessIntensive"
    UNCLASSIFIED = "Unclassified"


@dataclass(frozen=True)
class ServiceSpec:
    vcpu: int
    memory_gb: float
    volume_count: int = 1
    volume_gb: float = 4.0
    throughput_kbps: Optional[float] = None
    size_rank: Optional[int] = None

    def __post_init__(self):
        for name in ("vcpu", "memory_gb", "volume_count", "volume_gb", "throughput_kbps", "size_rank"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise WorkloadError(f"service {name} must be positive, got {value}")

    @property
    def storage_gb(self) -> float:
        return self.volume_count * self.volume_gb


@dataclass(frozen=True)
class Request:
    request_id: str
    app_id: str
    services: Tuple[ServiceSpec, ...]
    app_class: AppClass = AppClass.UNCLASSIFIED
    deadline_s: Optional[float] = None  # carried through, never enforced

    def __post_init__(self):
        object.__setattr__(self, "services", tuple(self.services))
        object.__setattr__(self, "app_class", AppClass(self.app_class))
        if not self.services:
            raise WorkloadError(f"request {self.request_id} has no services")

    @property
    def s(self) -> int:
        return len(self.services)


@dataclass(frozen=True)
class Workload:
    requests: Tuple[Request, ...]
    source: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "requests", tuple(self.requests))

    def __len__(self) -> int:
        return len(self.requests)

    def __iter__(self):
        return iter(self.requests)


def _svc(vcpu, mem, count, size) -> ServiceSpec:
    return ServiceSpec(vcpu=vcpu, memory_gb=float(mem), volume_count=count, volume_gb=float(size))


# Request templates: three demand classes and three application types
TEMPLATES: Dict[str, Tuple[AppClass, Tuple[ServiceSpec, ...]]] = {
    "Class1": (AppClass.UNCLASSIFIED, (_svc(1, 1, 1, 4), _svc(1, 4, 1, 4))),
    "Class2": (AppClass.UNCLASSIFIED, (_svc(2, 4, 1, 4), _svc(2, 8, 1, 32), _svc(4, 8, 2, 40))),
    "Class3": (AppClass.UNCLASSIFIED, (
        _svc(2, 15, 2, 32), _svc(4, 15, 2, 80), _svc(4, 30, 1, 32), _svc(8, 15, 1, 32), _svc(8, 30, 1, 80),
    )),
    "DataIntensive": (AppClass.DATA_INTENSIVE, (_svc(1, 15, 2, 40), _svc(1, 30, 1, 32), _svc(2, 60, 1, 80))),
    "ProcessIntensive": (AppClass.PROCESS_INTENSIVE, (_svc(4, 2, 1, 4), _svc(8, 4, 1, 4), _svc(8, 8, 2, 16))),
    "Normal": (AppClass.NORMAL, (_svc(1, 4, 1, 4), _svc(2, 8, 1, 32), _svc(4, 15, 2, 80))),
}

_TEMPLATE_ALIASES = {
    "class1": "Class1", "class2": "Class2", "class3": "Class3",
    "data": "DataIntensive", "dataintensive": "DataIntensive",
    "process": "ProcessIntensive", "processintensive": "ProcessIntensive",
    "normal": "Normal",
}


def template_name(key: str) -> str:
    name = _TEMPLATE_ALIASES.get(key.strip().lower().replace("-", "").replace("_", ""))
    if name is None:
        raise WorkloadError(f"unknown request template {key!r}; expected one of {sorted(TEMPLATES)}")
    return name


def template_request(name: str, request_id: str = "req-0000", app_id: str = "app-00") -> Request:
    app_class, services = TEMPLATES[template_name(name)]
    return Request(request_id, app_id, services, app_class)


@dataclass(frozen=True)
class SyntheticSpec:
    mix: Mapping[str, float]
    count: int = 50

    def __post_init__(self):
        if not self.mix:
            raise WorkloadError("synthetic mix is empty")
        if self.count < 1:
            raise WorkloadError("synthetic count must be >= 1")
        mix = {template_name(k): float(v) for k, v in self.mix.items()}
        if any(v < 0 for v in mix.values()) or not math.isclose(sum(mix.values()), 1.0, abs_tol=1e-9):
            raise WorkloadError(f"mix weights must be non-negative and sum to 1, got {mix}")
        object.__setattr__(self, "mix", mix)

    @classmethod
    def parse(cls, text: str) -> "SyntheticSpec":
        """Parse ``count=50,class1=0.5,class2=0.5``. Unnormalized weights are rescaled."""
        count, mix = 50, {}
        for part in filter(None, (p.strip() for p in text.split(","))):
            key, sep, value = part.partition("=")
            if not sep:
                raise WorkloadError(f"malformed synthetic spec item {part!r}")
            try:
                if key.strip() == "count":
                    count = int(value)
                else:
                    mix[template_name(key)] = float(value)
            except ValueError as exc:
                raise WorkloadError(f"malformed synthetic spec item {part!r}") from exc
        total = sum(mix.values())
        if total <= 0:
            raise WorkloadError("synthetic mix is empty")
        return cls({k: v / total for k, v in mix.items()}, count)

    def describe(self) -> str:
        mix = ",".join(f"{k}={v:g}" for k, v in self.mix.items())
        return f"synthetic:count={self.count},{mix}"


def generate_synthetic(spec: SyntheticSpec, rng: np.random.Generator) -> Workload:
    names = list(spec.mix)
    weights = np.array([spec.mix[n] for n in names])
    picks = rng.choice(len(names), size=spec.count, p=weights / weights.sum())
    requests = [
        template_request(names[k], request_id=f"req-{n:04d}", app_id=f"app-{n % N_APP_IDS:02d}")
        for n, k in enumerate(picks)
    ]
    return Workload(requests, spec.describe())


# -- CSV persistence -------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(value) if isinstance(value, float) else str(value)


def save_workload(workload: Workload, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        write_workload(workload, fh)


def write_workload(workload: Workload, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(WORKLOAD_HEADER)
    for req in workload.requests:
        for k, svc in enumerate(req.services):
            writer.writerow([
                req.request_id, req.app_id, req.app_class.value, k,
                svc.vcpu, _fmt(svc.memory_gb), svc.volume_count, _fmt(svc.volume_gb),
                _fmt(svc.throughput_kbps), _fmt(req.deadline_s),
            ])


def _opt_float(text: str) -> Optional[float]:
    text = (text or "").strip()
    return float(text) if text else None


def load_workload(path) -> Workload:
    path = Path(path)
    grouped: Dict[str, dict] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(WORKLOAD_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise WorkloadError(f"{path}: missing columns {sorted(missing)}")
        last_id = None
        for lineno, row in enumerate(reader, start=2):
            rid = row["request_id"]
            try:
                if not (row["vcpu"] or "").strip():
                    raise WorkloadError(f"request {rid} declares no services (s=0)")
                index = int(row["service_index"])
                svc = ServiceSpec(
                    vcpu=int(row["vcpu"]),
                    memory_gb=float(row["memory_gb"]),
                    volume_count=int(row["volume_count"]),
                    volume_gb=float(row["volume_gb"]),
                    throughput_kbps=_opt_float(row["throughput_kbps"]),
                )
                entry = grouped.get(rid)
                if entry is None:
                    entry = grouped[rid] = {
                        "app_id": row["app_id"],
                        "app_class": AppClass(row["app_class"]),
                        "deadline_s": _opt_float(row["deadline_s"]),
                        "services": [],
                    }
                elif rid != last_id:
                    raise WorkloadError(f"rows of request {rid} are not contiguous")
                if index != len(entry["services"]):
                    raise WorkloadError(f"service_index {index} out of order for request {rid}")
                entry["services"].append(svc)
            except ValueError as exc:
                raise WorkloadError(f"{path}: row {lineno}: {exc}") from exc
            last_id = rid
    requests = [
        Request(rid, e["app_id"], e["services"], e["app_class"], e["deadline_s"])
        for rid, e in grouped.items()
    ]
    if not requests:
        raise WorkloadError(f"{path}: workload has no requests")
    return Workload(requests, str(path))


# -- Bitbrains (GWA-T-12) trace ingestion -----------------------------------

COL_CORES = "CPU cores"
COL_MEM_PROV = "Memory capacity provisioned [KB]"
COL_NET_RX = "Network received throughput [KB/s]"
COL_NET_TX = "Network transmitted throughput [KB/s]"

TRACE_COLUMNS = (
    "Timestamp [ms]",
    COL_CORES,
    "CPU capacity provisioned [MHZ]",
    "CPU usage [MHZ]",
    "CPU usage [%]",
    COL_MEM_PROV,
    "Memory usage [KB]",
    "Disk read throughput [KB/s]",
    "Disk write throughput [KB/s]",
    COL_NET_RX,
    COL_NET_TX,
)

KB_PER_GB = 1024 * 1024


@dataclass(frozen=True)
class IngestConfig:
    percentile: float = 95.0
    services_per_request: Tuple[int, int] = (1, 5)
    delimiter: str = ";"
    lenient: bool = False
    seed: int = 0
    # (upper memory bound in GB, inclusive; volume_count, volume_gb); last row catches the rest
    storage_classes: Tuple[Tuple[float, int, float], ...] = (
        (8.0, 1, 4.0),
        (16.0, 1, 32.0),
        (math.inf, 1, 80.0),
    )
    pattern: str = "*.csv"

    def __post_init__(self):
        if not 0.0 <= self.percentile <= 100.0:
            raise WorkloadError(f"percentile must be within [0, 100], got {self.percentile}")
        lo, hi = self.services_per_request
        if lo < 1 or hi < lo:
            raise WorkloadError(f"invalid services_per_request range {self.services_per_request}")
        if len(self.delimiter) != 1:
            raise WorkloadError(f"delimiter must be a single character, got {self.delimiter!r}")

    def storage_for(self, memory_gb: float) -> Tuple[int, float]:
        for k, (bound, count, size) in enumerate(self.storage_classes):
            # first class is strictly below its bound; middle classes include it
            below = memory_gb < bound if k == 0 else memory_gb <= bound
            if below:
                return count, size
        _, count, size = self.storage_classes[-1]
        return count, size


def _read_trace(path: Path, cfg: IngestConfig):
    cores, mem, net = [], [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=cfg.delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise WorkloadError(f"{path}: empty trace file")
        try:
            ic = header.index(COL_CORES)
            im = header.index(COL_MEM_PROV)
        except ValueError:
            raise WorkloadError(f"{path}: missing '{COL_CORES}' or '{COL_MEM_PROV}' column")
        irx = header.index(COL_NET_RX) if COL_NET_RX in header else None
        itx = header.index(COL_NET_TX) if COL_NET_TX in header else None
        for lineno, row in enumerate(reader, start=2):
            if not any(cell.strip() for cell in row):
                continue
            try:
                c = float(row[ic])
                m = float(row[im])
                n = 0.0
                if irx is not None:
                    n += float(row[irx])
                if itx is not None:
                    n += float(row[itx])
            except (IndexError, ValueError) as exc:
                if cfg.lenient:
                    log.warning("%s:%d: skipping unparseable row (%s)", path, lineno, exc)
                    continue
                raise WorkloadError(f"{path}:{lineno}: unparseable row: {exc}") from exc
            cores.append(c)
            mem.append(m)
            net.append(n)
    if not cores:
        raise WorkloadError(f"{path}: no usable rows")
    return np.array(cores), np.array(mem), np.array(net), irx is not None or itx is not None


def trace_to_service(path, cfg: IngestConfig = IngestConfig()) -> ServiceSpec:
    cores, mem_kb, net, has_net = _read_trace(Path(path), cfg)
    vcpu = max(1, int(math.ceil(cores.max())))
    memory_gb = float(np.percentile(mem_kb, cfg.percentile)) / KB_PER_GB
    throughput = float(np.percentile(net, cfg.percentile)) if has_net else None
    if throughput is not None and throughput <= 0:
        throughput = None
    count, size = cfg.storage_for(memory_gb)
    return ServiceSpec(vcpu, memory_gb, count, size, throughput)


def ingest_traces(directory, cfg: IngestConfig = IngestConfig()) -> Workload:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"trace directory not found: {directory}")
    files = sorted(p for p in directory.glob(cfg.pattern) if p.is_file())
    if not files:
        raise WorkloadError(f"{directory}: no trace files matching {cfg.pattern!r}")
    services = []
    for path in files:
        try:
            services.append(trace_to_service(path, cfg))
        except WorkloadError:
            if not cfg.lenient:
                raise
            log.warning("%s: skipped, no usable rows", path)
    if not services:
        raise WorkloadError(f"{directory}: no usable trace files")

    rng = np.random.default_rng(cfg.seed)
    lo, hi = cfg.services_per_request
    requests, pos = [], 0
    while pos < len(services):
        s = int(rng.integers(lo, hi, endpoint=True))
        n = len(requests)
        requests.append(Request(f"req-{n:04d}", f"app-{n % N_APP_IDS:02d}", services[pos:pos + s]))
        pos += s
    return Workload(requests, f"traces:{directory}")
