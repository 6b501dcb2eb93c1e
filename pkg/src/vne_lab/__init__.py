"""Online virtual network embedding: simulator, heuristics and a hierarchical RL agent."""
from .config import EnvConfig, desk_env
from .core import EmbeddingSolution, Status, validate_solution
from .heuristics import GrcSolver, NrmSolver, RandomSolver
from .sim import Solver, run_simulation
from .topology import (
    PhysicalNetwork,
    VirtualNetworkRequest,
    WaxmanParams,
    generate_vnr_stream,
    generate_waxman,
    load_topology,
)

__version__ = "0.1.0"

__all__ = [
    "EnvConfig", "desk_env", "EmbeddingSolution", "Status", "validate_solution", "GrcSolver", "NrmSolver",
    "RandomSolver", "Solver", "run_simulation", "PhysicalNetwork", "VirtualNetworkRequest", "WaxmanParams",
    "generate_vnr_stream", "generate_waxman", "load_topology",
]
