"""Byzantine client behaviors.

Three attacks: plain gradient ascent (upload the update computed from -g),
additive Gaussian noise on the uploaded parameters, and the camouflage
attack, which solves per component for the alternative gradient whose
adaptive-moment parameter update equals the benign one.  The camouflaged
packet is indistinguishable in parameter space while its moments are
arbitrarily far from benign ones.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .optim import ClientPacket, OptimConfig, OptimizerKind, adam_update, client_update

# Below this, the closed-form denominator (or the update mismatch) counts
# as degenerate and the component falls back to the benign gradient.
CAMOUFLAGE_TOL = 1e-9


class AttackKind(enum.Enum):
    NONE = "none"
    GRADIENT_ASCENT = "gradient_ascent"
    CAMOUFLAGE = "camouflage"
    ADDITIVE_NOISE = "additive_noise"


@dataclass
class AttackConfig:
    kind: AttackKind = AttackKind.NONE
    sigma: float = 0.1   # noise scale, used by ADDITIVE_NOISE only

    def __post_init__(self):
        if self.kind is AttackKind.ADDITIVE_NOISE and self.sigma <= 0.0:
            raise ValueError("additive noise requires sigma > 0")


def gradient_ascent(state, g: np.ndarray, cfg: OptimConfig,
                    kind: OptimizerKind) -> ClientPacket:
    """Optimizer update evaluated at -g; obeys the update rules exactly."""
    return client_update(state, -g, cfg, kind)


def _eps_free_update(m_bar, v_bar, x, cfg: OptimConfig):
    """Adaptive-moment update direction without the stability epsilon.

    Returns (u, valid); components with a zero variance term are invalid.
    """
    m = cfg.beta1 * m_bar + (1.0 - cfg.beta1) * x
    v = cfg.beta2 * v_bar + (1.0 - cfg.beta2) * (x * x)
    valid = v > 0.0
    u = np.zeros_like(m)
    u[valid] = m[valid] / np.sqrt(v[valid])
    return u, valid


def camouflage_gradient(state, g: np.ndarray, cfg: OptimConfig,
                        tol: float = CAMOUFLAGE_TOL):
    """Per-component alternative gradient preserving the parameter update.

    Returns ``(g_tilde, mask)``.  ``mask[k]`` is True where the component was
    successfully camouflaged; elsewhere ``g_tilde[k] == g[k]``.  A component
    fails when the closed form is degenerate or when its root realizes the
    sign-flipped update (the unique-mapping case), which the closed form
    cannot distinguish on its own.
    """
    b1, b2 = cfg.beta1, cfg.beta2
    m_bar, v_bar = state.m_bar, state.v_bar
    num = (2.0 * b1 * b2 * (1.0 - b1) * m_bar * v_bar
           + b2 * (1.0 - b1) ** 2 * v_bar * g
           - b1**2 * (1.0 - b2) * m_bar**2 * g)
    den = (b1**2 * (1.0 - b2) * m_bar**2
           + 2.0 * b1 * (1.0 - b1) * (1.0 - b2) * m_bar * g
           - b2 * (1.0 - b1) ** 2 * v_bar)

    mask = np.abs(den) >= tol
    g_tilde = g.copy()
    g_tilde[mask] = num[mask] / den[mask]

    u_benign, ok_b = _eps_free_update(m_bar, v_bar, g, cfg)
    u_tilde, ok_t = _eps_free_update(m_bar, v_bar, g_tilde, cfg)
    mask &= ok_b & ok_t
    mask &= np.abs(u_tilde - u_benign) <= tol
    g_tilde[~mask] = g[~mask]
    return g_tilde, mask


def camouflage_packet(state, g: np.ndarray, cfg: OptimConfig) -> ClientPacket:
    """Packet whose parameters match the benign update while the moments
    carry the alternative-root gradient."""
    g_tilde, _ = camouflage_gradient(state, g, cfg)
    return adam_update(state, g_tilde, cfg)


def additive_noise(packet: ClientPacket, sigma: float,
                   rng: np.random.Generator) -> ClientPacket:
    """Gaussian noise on the uploaded parameters; moments untouched."""
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    theta = packet.theta + rng.normal(0.0, sigma, size=packet.theta.size)
    return ClientPacket(m=packet.m, v=packet.v, theta=theta,
                        train_count=packet.train_count,
                        client_id=packet.client_id)
