"""JSON configuration document for the command-line tool.

Precedence, lowest first: built-in defaults, the ``--config`` file, flags.
Unknown keys are rejected.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from orpsim.catalog import PoolSpec, builtin_catalog, load_catalog
from orpsim.engine import WEIGHT_PRESETS, Weights
from orpsim.learning_automata import ConvergencePolicy, LearningParams
from orpsim.simulator import SimConfig, replicate_types
from orpsim.workload import AppClass, IngestConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class LearningSection(_Strict):
    lambda_reward: float = Field(0.8, gt=0, le=1)
    lambda_penalty: float = Field(0.05, ge=0, lt=1)
    threshold: float = Field(0.5, gt=0, lt=1)


class ConvergenceSection(_Strict):
    prob_threshold: float = Field(0.95, gt=0.5, le=1)
    stall_window: int = Field(20, ge=1)
    stall_epsilon: float = Field(1e-6, ge=0)
    max_iterations: int = Field(500, ge=1)

    @model_validator(mode="after")
    def _window_fits(self):
        if self.max_iterations < self.stall_window:
            raise ValueError("max_iterations must be >= stall_window")
        return self


class PoolSection(_Strict):
    mode: Literal["spawn", "fixed"] = "spawn"
    min_size: int = Field(20, ge=0)
    max_size: int = Field(50, ge=0)
    # fixed mode: either explicit counts per type name, or `copies` of every catalog type
    types: Optional[Dict[str, int]] = None
    copies: int = Field(1, ge=0)

    @model_validator(mode="after")
    def _range(self):
        if self.max_size < self.min_size:
            raise ValueError("pool.max_size must be >= pool.min_size")
        return self


class WeightsSection(_Strict):
    v_size: float = Field(0.0, ge=0)
    v_memory: float = Field(0.25, ge=0)
    v_core: float = Field(0.25, ge=0)
    v_storage: float = Field(0.25, ge=0)
    v_throughput: float = Field(0.25, ge=0)

    def to_weights(self) -> Weights:
        return Weights(self.v_size, self.v_memory, self.v_core, self.v_storage, self.v_throughput)


class IngestSection(_Strict):
    percentile: float = Field(95.0, ge=0, le=100)
    services_per_request: Tuple[int, int] = (1, 5)
    delimiter: str = ";"
    lenient: bool = False
    seed: int = 0
    pattern: str = "*.csv"

    def to_ingest(self) -> IngestConfig:
        return IngestConfig(
            percentile=self.percentile,
            services_per_request=tuple(self.services_per_request),
            delimiter=self.delimiter,
            lenient=self.lenient,
            seed=self.seed,
            pattern=self.pattern,
        )


class CliConfig(_Strict):
    catalog: Optional[str] = None
    pool: PoolSection = PoolSection()
    elastic: bool = False
    learning: LearningSection = LearningSection()
    convergence: ConvergenceSection = ConvergenceSection()
    # a single weight vector for every request; otherwise per-class presets apply
    weights: Optional[WeightsSection] = None
    presets: Dict[AppClass, WeightsSection] = Field(default_factory=dict)
    billing_hours: float = Field(1.0, gt=0)
    delay_per_vm_s: float = Field(60.0, ge=0)
    release_after_request: bool = False
    trace: bool = False
    ingest: IngestSection = IngestSection()

    @classmethod
    def load(cls, path) -> "CliConfig":
        text = Path(path).read_text(encoding="utf-8")
        return cls.model_validate(json.loads(text))

    def to_sim_config(self) -> SimConfig:
        catalog = load_catalog(self.catalog) if self.catalog else builtin_catalog()
        pool_types = None
        if self.pool.mode == "fixed":
            if self.pool.types is not None:
                by_name = {t.name: t for t in catalog}
                unknown = sorted(set(self.pool.types) - set(by_name))
                if unknown:
                    raise ValueError(f"pool.types: unknown VM types {unknown}")
                pool_types = tuple(by_name[n] for n, c in self.pool.types.items() for _ in range(c))
            else:
                pool_types = replicate_types(catalog, self.pool.copies)
        presets = dict(WEIGHT_PRESETS)
        presets.update({k: v.to_weights() for k, v in self.presets.items()})
        return SimConfig(
            catalog=tuple(catalog),
            pool_types=pool_types,
            pool_spec=PoolSpec(self.pool.min_size, self.pool.max_size),
            elastic=self.elastic,
            learning=LearningParams(**self.learning.model_dump()),
            policy=ConvergencePolicy(**self.convergence.model_dump()),
            weights=self.weights.to_weights() if self.weights else None,
            presets=presets,
            billing_hours=self.billing_hours,
            delay_per_vm_s=self.delay_per_vm_s,
            release_after_request=self.release_after_request,
            trace=self.trace,
        )
