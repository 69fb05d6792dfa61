"""Byzantine-robust federated recommendation simulator.

The server filters clients on gradients recovered from their optimizer
moments instead of on uploaded parameters, which is what defeats attacks
that camouflage the parameter vector.
"""
from .attack import AttackConfig, AttackKind
from .backend import backend_name
from .defense import DefenseConfig, DefenseKind
from .fed import FederationConfig, run_federation
from .fism import ClientDataset, FismModel, LossConfig
from .optim import OptimConfig, OptimizerKind

__all__ = [
    "AttackConfig", "AttackKind", "ClientDataset", "DefenseConfig",
    "DefenseKind", "FederationConfig", "FismModel", "LossConfig",
    "OptimConfig", "OptimizerKind", "backend_name", "run_federation",
]

__version__ = "0.1.0"
