"""Cost-aware VM provisioning simulator driven by learning automata."""

from orpsim.catalog import Pool, VmInstance, VmType, builtin_catalog, load_catalog, spawn_pool
from orpsim.engine import Allocation, ProvisionParams, Rejection, Weights, provision
from orpsim.learning_automata import Automaton, ConvergencePolicy, LearningParams
from orpsim.workload import Request, ServiceSpec, Workload, generate_synthetic

__version__ = "0.1.0"

__all__ = [
    "Allocation",
    "Automaton",
    "ConvergencePolicy",
    "LearningParams",
    "Pool",
    "ProvisionParams",
    "Rejection",
    "Request",
    "ServiceSpec",
    "VmInstance",
    "VmType",
    "Weights",
    "Workload",
    "builtin_catalog",
    "generate_synthetic",
    "load_catalog",
    "provision",
    "spawn_pool",
]
