"""Federation orchestrator: client sampling, the round loop, server-side
gradient recovery and update-rule verification.

The server never sees raw gradients; it inverts each optimizer's
first-moment (or accumulator) rule to recover the gradient a client must
have used, verifies the remaining update rules hold, and hands the
recovered gradients to the configured filter.  With no defense configured
the filter step is skipped and verification is only logged, which is what
keeps the undefended baseline vulnerable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .attack import AttackConfig, AttackKind, additive_noise, camouflage_packet
from .defense import (DefenseConfig, DefenseKind, aggregate, krum_select,
                      trimmed_norm_filter)
from .optim import (ClientPacket, OptimConfig, OptimizerKind, ServerState,
                    client_update)

# Derived-stream tags so every random draw hangs off (seed, tag, ...).
_STREAM_INIT = 1
_STREAM_SAMPLE = 2
_STREAM_NEGATIVES = 3
_STREAM_NOISE = 4

VERIFY_TOL = 1e-8


class RuleViolation(ValueError):
    """A packet whose accumulator cannot come from any real gradient."""


def derived_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


@dataclass
class FederationConfig:
    total_clients: int
    byzantine_fraction: float = 0.0
    client_ratio: float = 0.5
    rounds: int = 50
    optimizer: OptimizerKind = OptimizerKind.ADAM
    attack: AttackConfig = field(default_factory=AttackConfig)
    defense: DefenseConfig = field(default_factory=DefenseConfig)
    seed: int = 0
    probe_clients: int = 5
    warmup: int = 3

    def __post_init__(self):
        if self.total_clients < 1:
            raise ValueError("need at least one client")
        if not 0.0 <= self.byzantine_fraction < 1.0:
            raise ValueError("byzantine_fraction must be in [0, 1)")
        if not 0.0 < self.client_ratio <= 1.0:
            raise ValueError("client_ratio must be in (0, 1]")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if (self.attack.kind is AttackKind.CAMOUFLAGE
                and self.optimizer is not OptimizerKind.ADAM):
            raise ValueError("the camouflage attack is defined for the "
                             "adaptive-moment optimizer only")

    @property
    def num_byzantine(self) -> int:
        return int(math.floor(self.byzantine_fraction * self.total_clients + 0.5))

    @property
    def byzantine_ids(self) -> frozenset[int]:
        # fixed low ids for reproducibility
        return frozenset(range(self.num_byzantine))

    @property
    def sample_size(self) -> int:
        return max(1, int(math.floor(self.client_ratio * self.total_clients + 0.5)))

    def probe_ids(self) -> list[int]:
        """Fixed benign clients whose packets are materialized every round
        as the reference set for the resilience sums."""
        first = self.num_byzantine
        return list(range(first, min(self.total_clients,
                                     first + self.probe_clients)))


def init_state(size_flat: int, seed: int) -> ServerState:
    """Zero moments, standard-Gaussian parameters."""
    rng = derived_rng(seed, _STREAM_INIT)
    return ServerState(
        m_bar=np.zeros(size_flat),
        v_bar=np.zeros(size_flat),
        theta_bar=rng.standard_normal(size_flat),
        round=0,
    )


def sample_clients(round_idx: int, cfg: FederationConfig) -> list[int]:
    """Uniform without-replacement sample, seeded by (seed, round)."""
    rng = derived_rng(cfg.seed, _STREAM_SAMPLE, round_idx)
    chosen = rng.choice(cfg.total_clients, size=cfg.sample_size, replace=False)
    return sorted(int(c) for c in chosen)


def recover_gradient(packet: ClientPacket, state: ServerState,
                     cfg: OptimConfig, kind: OptimizerKind) -> np.ndarray:
    """Invert the optimizer's accumulator rules to the gradient used.

    For the two squared-gradient optimizers the accumulator only reveals the
    gradient's square; the sign comes from the parameter update direction.
    """
    if kind is OptimizerKind.ADAM:
        return (packet.m - cfg.beta1 * state.m_bar) / (1.0 - cfg.beta1)
    if kind is OptimizerKind.SGD_MOMENTUM:
        return packet.m - cfg.beta3 * state.m_bar
    if kind is OptimizerKind.ADAGRAD:
        g_sq = packet.v - state.v_bar
    elif kind is OptimizerKind.RMSPROP:
        g_sq = (packet.v - cfg.beta4 * state.v_bar) / (1.0 - cfg.beta4)
    else:
        raise ValueError(f"unknown optimizer {kind}")
    tol = 1e-12 * max(1.0, float(np.abs(state.v_bar).max(initial=0.0)))
    if (g_sq < -tol).any():
        raise RuleViolation("accumulator decreased: no real gradient fits")
    sign = np.sign(state.theta_bar - packet.theta)
    return sign * np.sqrt(np.maximum(g_sq, 0.0))


def verify_rules(packet: ClientPacket, state: ServerState,
                 g_recovered: np.ndarray, cfg: OptimConfig,
                 kind: OptimizerKind, tol: float = VERIFY_TOL) -> bool:
    """True iff the packet is reproduced by the update rules at the
    recovered gradient, componentwise within ``tol``."""
    expected = client_update(state, g_recovered, cfg, kind)
    checks = [(expected.theta, packet.theta), (expected.v, packet.v)]
    if kind in (OptimizerKind.ADAM, OptimizerKind.SGD_MOMENTUM):
        checks.append((expected.m, packet.m))
    return all(np.allclose(a, b, rtol=tol, atol=tol) for a, b in checks)


@dataclass
class RoundData:
    """Everything one round produced, for observers (ledger, dumps, logs)."""

    round: int
    state_before: ServerState
    state_after: ServerState
    sampled: list[int]
    byzantine: set[int]
    packets: dict[int, ClientPacket]
    recovered: dict[int, np.ndarray | None]
    verified: dict[int, bool]
    selected: list[int]
    scores: dict[int, float]
    benign_refs: dict[int, tuple[ClientPacket, np.ndarray]]


@dataclass
class RoundLog:
    round: int
    sampled: list[int]
    selected: list[int]
    byzantine_sampled: int
    byzantine_selected: int
    verify_failures: int
    mean_cross_grad_dist: float
    theta_centroid_dist: float
    grad_centroid_dist: float


def _client_packet(model, state: ServerState, cid: int,
                   fed_cfg: FederationConfig, optim_cfg: OptimConfig,
                   byzantine: bool) -> ClientPacket:
    t = state.round + 1
    rng = derived_rng(fed_cfg.seed, _STREAM_NEGATIVES, t, cid)
    g = model.gradient(state.theta_bar, cid, rng)
    attack = fed_cfg.attack.kind if byzantine else AttackKind.NONE
    if attack is AttackKind.GRADIENT_ASCENT:
        packet = client_update(state, -g, optim_cfg, fed_cfg.optimizer)
    elif attack is AttackKind.CAMOUFLAGE:
        packet = camouflage_packet(state, g, optim_cfg)
    elif attack is AttackKind.ADDITIVE_NOISE:
        packet = client_update(state, g, optim_cfg, fed_cfg.optimizer)
        packet = additive_noise(packet, fed_cfg.attack.sigma,
                                derived_rng(fed_cfg.seed, _STREAM_NOISE, t, cid))
    else:
        packet = client_update(state, g, optim_cfg, fed_cfg.optimizer)
    packet.client_id = cid
    packet.train_count = model.datasets[cid].train_count
    return packet


def _filter_clients(candidates: list[int], packets, recovered,
                    fed_cfg: FederationConfig):
    """Apply the configured filter to the verified candidates."""
    dcfg = fed_cfg.defense
    kind = dcfg.kind
    if kind in (DefenseKind.NO_DEFENSE, DefenseKind.RFA):
        return list(candidates), {}
    if kind is DefenseKind.TRIMMED_NORM:
        res = trimmed_norm_filter([packets[c] for c in candidates], dcfg.beta)
        return res.selected, res.scores
    # Krum variants; adapt f/keep to this round's candidate count.
    n = len(candidates)
    f = dcfg.f
    if f is None:
        f = math.ceil(fed_cfg.byzantine_fraction * fed_cfg.sample_size)
    f = min(f, n - 3)
    if f < 0:
        f = 0
    keep = dcfg.keep if dcfg.keep is not None else n - f
    keep = max(1, min(keep, n - f))
    if kind is DefenseKind.GRADIENT_KRUM:
        vectors = {c: recovered[c] for c in candidates}
    else:
        vectors = {c: packets[c].theta for c in candidates}
    res = krum_select(vectors, f, keep)
    return res.selected, res.scores


def run_round(model, state: ServerState, fed_cfg: FederationConfig,
              optim_cfg: OptimConfig) -> tuple[ServerState, RoundData]:
    t = state.round + 1
    sampled = sample_clients(t, fed_cfg)
    byz_ids = fed_cfg.byzantine_ids

    packets: dict[int, ClientPacket] = {}
    for cid in sampled:
        packets[cid] = _client_packet(model, state, cid, fed_cfg, optim_cfg,
                                      byzantine=cid in byz_ids)

    recovered: dict[int, np.ndarray | None] = {}
    verified: dict[int, bool] = {}
    for cid in sampled:
        try:
            g_rec = recover_gradient(packets[cid], state, optim_cfg,
                                     fed_cfg.optimizer)
        except RuleViolation:
            recovered[cid] = None
            verified[cid] = False
            continue
        recovered[cid] = g_rec
        verified[cid] = verify_rules(packets[cid], state, g_rec, optim_cfg,
                                     fed_cfg.optimizer)

    # benign reference set: benign sampled clients plus the fixed probes,
    # whose uploads are materialized even when not sampled
    benign_refs: dict[int, tuple[ClientPacket, np.ndarray]] = {}
    for cid in sampled:
        if cid not in byz_ids and recovered[cid] is not None:
            benign_refs[cid] = (packets[cid], recovered[cid])
    for cid in fed_cfg.probe_ids():
        if cid not in benign_refs:
            pkt = _client_packet(model, state, cid, fed_cfg, optim_cfg,
                                 byzantine=False)
            benign_refs[cid] = (pkt, recover_gradient(pkt, state, optim_cfg,
                                                      fed_cfg.optimizer))

    if fed_cfg.defense.kind is DefenseKind.NO_DEFENSE:
        selected = list(sampled)  # verification computed, logged, not acted on
        scores: dict[int, float] = {}
    else:
        candidates = [c for c in sampled if verified[c]]
        if not candidates:
            raise RuleViolation(f"round {t}: every sampled packet failed "
                                "update-rule verification")
        selected, scores = _filter_clients(candidates, packets, recovered,
                                           fed_cfg)

    m_bar, v_bar, theta_bar = aggregate([packets[c] for c in selected],
                                        fed_cfg.defense)
    new_state = ServerState(m_bar=m_bar, v_bar=v_bar, theta_bar=theta_bar,
                            round=t)
    rdata = RoundData(
        round=t, state_before=state, state_after=new_state, sampled=sampled,
        byzantine=set(c for c in sampled if c in byz_ids), packets=packets,
        recovered=recovered, verified=verified, selected=selected,
        scores=scores, benign_refs=benign_refs,
    )
    return new_state, rdata


def summarize_round(rdata: RoundData) -> RoundLog:
    byz = sorted(rdata.byzantine)
    ben = [c for c in rdata.sampled if c not in rdata.byzantine]
    cross = theta_sep = grad_sep = float("nan")
    if byz and ben:
        g_byz = [rdata.recovered[c] for c in byz if rdata.recovered[c] is not None]
        g_ben = [rdata.recovered[c] for c in ben if rdata.recovered[c] is not None]
        if g_byz and g_ben:
            dists = [float(np.linalg.norm(gb - gj)) for gb in g_byz for gj in g_ben]
            cross = float(np.mean(dists))
            grad_sep = float(np.linalg.norm(
                np.mean(g_byz, axis=0) - np.mean(g_ben, axis=0)))
        theta_sep = float(np.linalg.norm(
            np.mean([rdata.packets[c].theta for c in byz], axis=0)
            - np.mean([rdata.packets[c].theta for c in ben], axis=0)))
    return RoundLog(
        round=rdata.round,
        sampled=rdata.sampled,
        selected=rdata.selected,
        byzantine_sampled=len(byz),
        byzantine_selected=sum(1 for c in rdata.selected if c in rdata.byzantine),
        verify_failures=sum(1 for ok in rdata.verified.values() if not ok),
        mean_cross_grad_dist=cross,
        theta_centroid_dist=theta_sep,
        grad_centroid_dist=grad_sep,
    )


@dataclass
class RunResult:
    final_state: ServerState
    round_logs: list[RoundLog]


def run_federation(model, fed_cfg: FederationConfig, optim_cfg: OptimConfig,
                   observers: list | None = None) -> RunResult:
    """Drive the full T-round loop.  Observers are called with each round's
    :class:`RoundData`; the whole run is a pure function of the configs."""
    if fed_cfg.total_clients != len(model.datasets):
        raise ValueError("total_clients must match the model's dataset count")
    state = init_state(model.size_flat, fed_cfg.seed)
    logs = []
    for _ in range(fed_cfg.rounds):
        state, rdata = run_round(model, state, fed_cfg, optim_cfg)
        logs.append(summarize_round(rdata))
        for obs in observers or ():
            obs(rdata)
    return RunResult(final_state=state, round_logs=logs)
