"""VM types, provider pools and the feasibility gate."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

CATALOG_HEADER = [
    "name",
    "vcpu",
    "memory_gb",
    "volume_count",
    "volume_gb",
    "throughput_kbps",
    "hour_cost_usd",
]


class CatalogError(ValueError):
    pass


def size_rank_for(vcpu: int) -> int:
    """Map core count to a size rank: 1->1, 2->2, 4->3, 8->4."""
    return int(math.floor(math.log2(vcpu))) + 1


@dataclass(frozen=True)
class VmType:
    name: str
    vcpu: int
    memory_gb: float
    volume_count: int
    volume_gb: float
    hour_cost_usd: float
    throughput_kbps: Optional[float] = None

    def __post_init__(self):
        if self.vcpu < 1:
            raise CatalogError(f"{self.name}: vcpu must be >= 1")
        if self.memory_gb <= 0:
            raise CatalogError(f"{self.name}: memory_gb must be positive")
        if self.volume_count < 1 or self.volume_gb <= 0:
            raise CatalogError(f"{self.name}: storage must be positive")
        if self.hour_cost_usd <= 0:
            raise CatalogError(f"{self.name}: hour_cost_usd must be positive")
        if self.throughput_kbps is not None and self.throughput_kbps <= 0:
            raise CatalogError(f"{self.name}: throughput_kbps must be positive")

    @property
    def storage_gb(self) -> float:
        return self.volume_count * self.volume_gb

    @property
    def size_rank(self) -> int:
        return size_rank_for(self.vcpu)


# Amazon EC2 on-demand (Windows) prices, Feb 2017
_BUILTIN_TYPES: Tuple[VmType, ...] = (
    VmType("t2.small", 1, 2.0, 1, 4.0, 0.026),
    VmType("t2.medium", 2, 4.0, 1, 4.0, 0.052),
    VmType("m3.medium", 1, 3.75, 1, 4.0, 0.070),
    VmType("m4.large", 2, 8.0, 1, 32.0, 0.1041),
    VmType("c3.large", 2, 3.75, 2, 16.0, 0.141),
    VmType("c4.xlarge", 4, 7.5, 2, 40.0, 0.2067),
    VmType("c4.2xlarge", 8, 15.0, 2, 80.0, 0.412),
    VmType("r3.large", 2, 15.0, 1, 32.0, 0.175),
    VmType("i3.large", 2, 15.25, 1, 32.0, 0.109),
    VmType("i3.xlarge", 4, 30.5, 1, 80.0, 0.218),
    VmType("i3.2xlarge", 8, 61.0, 1, 160.0, 0.436),
)


def builtin_catalog() -> List[VmType]:
    return list(_BUILTIN_TYPES)


def load_catalog(path) -> List[VmType]:
    """Read a catalog CSV (see ``CATALOG_HEADER``). Empty throughput means absent."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(CATALOG_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise CatalogError(f"{path}: missing columns {sorted(missing)}")
        types = []
        for lineno, row in enumerate(reader, start=2):
            try:
                tp = (row["throughput_kbps"] or "").strip()
                types.append(
                    VmType(
                        name=row["name"].strip(),
                        vcpu=int(row["vcpu"]),
                        memory_gb=float(row["memory_gb"]),
                        volume_count=int(row["volume_count"]),
                        volume_gb=float(row["volume_gb"]),
                        throughput_kbps=float(tp) if tp else None,
                        hour_cost_usd=float(row["hour_cost_usd"]),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise CatalogError(f"{path}:{lineno}: invalid row {row.get('name')!r}: {exc}") from exc
    if not types:
        raise CatalogError(f"{path}: catalog is empty")
    return types


def save_catalog(types: Sequence[VmType], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CATALOG_HEADER)
        for t in types:
            writer.writerow([
                t.name, t.vcpu, t.memory_gb, t.volume_count, t.volume_gb,
                "" if t.throughput_kbps is None else t.throughput_kbps,
                t.hour_cost_usd,
            ])


@dataclass
class VmInstance:
    id: int
    vm_type: VmType
    # (request id, service index) while allocated
    allocated_to: Optional[Tuple[str, int]] = None

    @property
    def available(self) -> bool:
        return self.allocated_to is None


@dataclass
class Pool:
    instances: List[VmInstance] = field(default_factory=list)
    owner: str = "provider-0"

    @classmethod
    def from_types(cls, types: Sequence[VmType], owner: str = "provider-0") -> "Pool":
        return cls([VmInstance(i, t) for i, t in enumerate(types)], owner)

    def __len__(self) -> int:
        return len(self.instances)

    def available(self) -> List[VmInstance]:
        return [inst for inst in self.instances if inst.available]

    def get(self, instance_id: int) -> VmInstance:
        inst = self.instances[instance_id]
        assert inst.id == instance_id
        return inst

    def add(self, vm_type: VmType) -> VmInstance:
        inst = VmInstance(len(self.instances), vm_type)
        self.instances.append(inst)
        return inst

    def release_all(self) -> None:
        for inst in self.instances:
            inst.allocated_to = None

    def snapshot(self):
        """Hashable view of the pool state, for equality checks."""
        return tuple((i.id, i.vm_type.name, i.allocated_to) for i in self.instances)


@dataclass(frozen=True)
class PoolSpec:
    min_size: int = 20
    max_size: int = 50

    def __post_init__(self):
        if self.min_size < 0 or self.max_size < self.min_size:
            raise ValueError(f"invalid pool size range [{self.min_size}, {self.max_size}]")


def spawn_pool(catalog: Sequence[VmType], spec: PoolSpec, rng: np.random.Generator,
               owner: str = "provider-0") -> Pool:
    if not catalog:
        raise ValueError("cannot spawn a pool from an empty catalog")
    size = int(rng.integers(spec.min_size, spec.max_size, endpoint=True))
    picks = rng.integers(0, len(catalog), size=size)
    return Pool.from_types([catalog[k] for k in picks], owner)


def feasible(inst, svc) -> bool:
    """Whether ``inst`` can host ``svc`` (capacity >= demand on every attribute)."""
    if isinstance(inst, VmInstance):
        if not inst.available:
            return False
        vm = inst.vm_type
    else:
        vm = inst
    if vm.vcpu < svc.vcpu or vm.memory_gb < svc.memory_gb:
        return False
    if vm.storage_gb < svc.storage_gb:
        return False
    if vm.throughput_kbps is not None and svc.throughput_kbps is not None:
        if vm.throughput_kbps < svc.throughput_kbps:
            return False
    if svc.size_rank is not None and vm.size_rank < svc.size_rank:
        return False
    return True
