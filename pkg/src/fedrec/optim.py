"""Client-side optimizer update rules.

Each rule maps (aggregated server state, local gradient) to the packet a
client uploads: first moment, second moment / squared-gradient accumulator,
and updated parameters.  The packet's ``v`` slot is overloaded: it carries
the second moment for the adaptive-moment rule and the squared-gradient
accumulator for the two gradient-normalizing rules; it is all zeros for
plain momentum.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class OptimizerKind(enum.Enum):
    ADAM = "adam"
    SGD_MOMENTUM = "sgd_momentum"
    ADAGRAD = "adagrad"
    RMSPROP = "rmsprop"


@dataclass
class OptimConfig:
    eta: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    beta3: float = 0.9       # momentum weight for SGD with momentum
    beta4: float = 0.9       # accumulator decay for RMSProp
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.eta <= 0.0:
            raise ValueError("eta must be positive")
        for name in ("beta1", "beta2", "beta3", "beta4"):
            b = getattr(self, name)
            if not 0.0 < b < 1.0:
                raise ValueError(f"{name} must be strictly inside (0, 1), got {b}")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")


@dataclass
class ServerState:
    """Aggregated first moment, second moment/accumulator, parameters."""

    m_bar: np.ndarray
    v_bar: np.ndarray
    theta_bar: np.ndarray
    round: int = 0

    def __post_init__(self):
        n = self.theta_bar.size
        if self.m_bar.size != n or self.v_bar.size != n:
            raise ValueError("state vectors must have equal length")
        if self.round < 0:
            raise ValueError("round must be >= 0")


@dataclass
class ClientPacket:
    """One client's round upload."""

    m: np.ndarray
    v: np.ndarray
    theta: np.ndarray
    train_count: int = 1
    client_id: int = -1


def _check_gradient(state: ServerState, g: np.ndarray):
    if g.size != state.theta_bar.size:
        raise ValueError("gradient length does not match state")
    if not np.isfinite(g).all():
        raise FloatingPointError("gradient contains non-finite entries")


def bias_corrected_rate(cfg: OptimConfig, t: int) -> float:
    """Learning rate with the moment-startup correction for round t >= 1."""
    return cfg.eta * math.sqrt(1.0 - cfg.beta2**t) / (1.0 - cfg.beta1**t)


def adam_update(state: ServerState, g: np.ndarray, cfg: OptimConfig) -> ClientPacket:
    _check_gradient(state, g)
    t = state.round + 1
    m = cfg.beta1 * state.m_bar + (1.0 - cfg.beta1) * g
    v = cfg.beta2 * state.v_bar + (1.0 - cfg.beta2) * (g * g)
    u = m / (np.sqrt(v) + cfg.epsilon)
    theta = state.theta_bar - bias_corrected_rate(cfg, t) * u
    return ClientPacket(m=m, v=v, theta=theta)


def sgdm_update(state: ServerState, g: np.ndarray, cfg: OptimConfig) -> ClientPacket:
    _check_gradient(state, g)
    m = cfg.beta3 * state.m_bar + g
    theta = state.theta_bar - cfg.eta * m
    return ClientPacket(m=m, v=np.zeros_like(g), theta=theta)


def adagrad_update(state: ServerState, g: np.ndarray, cfg: OptimConfig) -> ClientPacket:
    _check_gradient(state, g)
    r = state.v_bar + g * g
    u = g / (np.sqrt(r) + cfg.epsilon)
    theta = state.theta_bar - cfg.eta * u
    return ClientPacket(m=np.zeros_like(g), v=r, theta=theta)


def rmsprop_update(state: ServerState, g: np.ndarray, cfg: OptimConfig) -> ClientPacket:
    _check_gradient(state, g)
    r = cfg.beta4 * state.v_bar + (1.0 - cfg.beta4) * (g * g)
    u = g / (np.sqrt(r) + cfg.epsilon)
    theta = state.theta_bar - cfg.eta * u
    return ClientPacket(m=np.zeros_like(g), v=r, theta=theta)


_UPDATES = {
    OptimizerKind.ADAM: adam_update,
    OptimizerKind.SGD_MOMENTUM: sgdm_update,
    OptimizerKind.ADAGRAD: adagrad_update,
    OptimizerKind.RMSPROP: rmsprop_update,
}


def client_update(state: ServerState, g: np.ndarray, cfg: OptimConfig,
                  kind: OptimizerKind) -> ClientPacket:
    return _UPDATES[kind](state, g, cfg)
