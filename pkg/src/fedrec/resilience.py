"""Empirical resilience harness.

Accumulates, over rounds, the triple sums of distances between selected
clients' uploads and benign clients' uploads (gradients, moments,
accumulators, parameters), and asserts the per-round identities and
inequalities those sums obey for each optimizer:

  adaptive-moment:  ||m^ - m|| = (1-b1) ||g^ - g||            (exact)
                    ||v^ - v|| <= (1-b2)(||g^-g||^2 + 2||g^-g|| g_max)
                    ||m^|| <= g_max
                    post-warmup sqrt / reciprocal-sqrt contractions
  momentum:         ||m^ - m|| = ||g^ - g||, ||th^ - th|| = eta ||m^ - m||
  accumulator:      ||r^ - r|| <= ||g^-g||^2 + 2 ||g^-g|| g_max   (plain)
                    (1-b4)-scaled version for the decaying accumulator
                    plus the same post-warmup contractions with r_min

g_max and the post-warmup floor v_min/r_min are measured witnesses, not
assumed constants: the checker only applies a bound after observing that
its premise held.  Boundedness of the sums is not decidable from a finite
run; the report instead compares growth against an undefended paired run.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fed import RoundData
from .optim import OptimConfig, OptimizerKind

CHAIN_TOL = 1e-9


@dataclass
class RoundSums:
    round: int
    sum_g: float
    sum_m: float
    sum_v: float
    sum_theta: float
    violations: int


@dataclass
class ResilienceLedger:
    """Running triple sums plus the measured witness constants."""

    warmup: int = 3
    sum_g: float = 0.0
    sum_m: float = 0.0
    sum_v: float = 0.0
    sum_theta: float = 0.0
    g_max_witness: float = 0.0
    v_min_witness: float = math.inf
    history: list[RoundSums] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)
    notices: list[str] = field(default_factory=list)
    # post-warmup internals backing the sum-of-products property
    sum_m_post: float = 0.0
    sum_recip_post: float = 0.0
    sum_prod_post: float = 0.0

    def accumulate(self, round_idx: int, selected_pairs, benign_pairs,
                   n_violations: int = 0) -> "ResilienceLedger":
        """Add one round's sums over (selected i, benign j) pairs.

        Each element of the pair lists is (packet, gradient).
        """
        inc_g = inc_m = inc_v = inc_t = 0.0
        for pkt_i, g_i in selected_pairs:
            for pkt_j, g_j in benign_pairs:
                inc_g += float(np.linalg.norm(g_i - g_j))
                inc_m += float(np.linalg.norm(pkt_i.m - pkt_j.m))
                inc_v += float(np.linalg.norm(pkt_i.v - pkt_j.v))
                inc_t += float(np.linalg.norm(pkt_i.theta - pkt_j.theta))
        self.sum_g += inc_g
        self.sum_m += inc_m
        self.sum_v += inc_v
        self.sum_theta += inc_t
        self.history.append(RoundSums(round_idx, self.sum_g, self.sum_m,
                                      self.sum_v, self.sum_theta,
                                      n_violations))
        return self

    def sums_at(self, round_idx: int) -> RoundSums:
        best = RoundSums(0, 0.0, 0.0, 0.0, 0.0, 0)
        for row in self.history:
            if row.round <= round_idx:
                best = row
        return best


def _pair_norms(selected_pairs, benign_pairs):
    for pkt_i, g_i in selected_pairs:
        for pkt_j, g_j in benign_pairs:
            yield pkt_i, g_i, pkt_j, g_j


def check_adam_chain(selected_pairs, benign_pairs, state_before,
                     cfg: OptimConfig, ledger: ResilienceLedger,
                     round_idx: int) -> list[str]:
    bad = []
    b1, b2 = cfg.beta1, cfg.beta2
    post_warmup = round_idx > ledger.warmup
    v_floor_ok = post_warmup and float(state_before.v_bar.min()) > 0.0
    if post_warmup and not v_floor_ok:
        ledger.notices.append(
            f"round {round_idx}: aggregated second moment has zero "
            "components; sqrt contraction bounds skipped")
    if v_floor_ok:
        ledger.v_min_witness = min(ledger.v_min_witness,
                                   float(state_before.v_bar.min()))
    v_min = ledger.v_min_witness
    g_max = ledger.g_max_witness
    for pkt_i, g_i, pkt_j, g_j in _pair_norms(selected_pairs, benign_pairs):
        dg = float(np.linalg.norm(g_i - g_j))
        dm = float(np.linalg.norm(pkt_i.m - pkt_j.m))
        dv = float(np.linalg.norm(pkt_i.v - pkt_j.v))
        if abs(dm - (1.0 - b1) * dg) > CHAIN_TOL:
            bad.append(f"round {round_idx}: first-moment linearity broken: "
                       f"|{dm} - (1-b1)*{dg}| > {CHAIN_TOL}")
        if dv > (1.0 - b2) * (dg * dg + 2.0 * dg * g_max) + CHAIN_TOL:
            bad.append(f"round {round_idx}: second-moment bound broken: "
                       f"{dv} vs (1-b2)({dg}^2 + 2*{dg}*{g_max})")
        m_norm = float(np.linalg.norm(pkt_i.m))
        if m_norm > g_max + CHAIN_TOL:
            bad.append(f"round {round_idx}: first-moment norm {m_norm} "
                       f"exceeds witness {g_max}")
        if v_floor_ok and math.isfinite(v_min):
            sq_i, sq_j = np.sqrt(pkt_i.v), np.sqrt(pkt_j.v)
            dsq = float(np.linalg.norm(sq_i - sq_j))
            if dsq > dv / (2.0 * math.sqrt(b2 * v_min)) + CHAIN_TOL:
                bad.append(f"round {round_idx}: sqrt contraction broken: "
                           f"{dsq} vs {dv}/(2*sqrt(b2*{v_min}))")
            with np.errstate(divide="ignore"):
                drec = float(np.linalg.norm(1.0 / sq_i - 1.0 / sq_j))
            if drec > dsq / (b2 * v_min) + CHAIN_TOL:
                bad.append(f"round {round_idx}: reciprocal-sqrt contraction "
                           f"broken: {drec} vs {dsq}/(b2*{v_min})")
            ledger.sum_m_post += dm
            ledger.sum_recip_post += drec
            ledger.sum_prod_post += dm * drec
    return bad


def check_sgdm_chain(selected_pairs, benign_pairs, cfg: OptimConfig,
                     round_idx: int) -> list[str]:
    bad = []
    for pkt_i, g_i, pkt_j, g_j in _pair_norms(selected_pairs, benign_pairs):
        dg = float(np.linalg.norm(g_i - g_j))
        dm = float(np.linalg.norm(pkt_i.m - pkt_j.m))
        dt = float(np.linalg.norm(pkt_i.theta - pkt_j.theta))
        if abs(dm - dg) > CHAIN_TOL:
            bad.append(f"round {round_idx}: momentum identity broken: "
                       f"|{dm} - {dg}| > {CHAIN_TOL}")
        if abs(dt - cfg.eta * dm) > CHAIN_TOL:
            bad.append(f"round {round_idx}: parameter identity broken: "
                       f"|{dt} - eta*{dm}| > {CHAIN_TOL}")
    return bad


def check_accumulator_chain(selected_pairs, benign_pairs, state_before,
                            cfg: OptimConfig, kind: OptimizerKind,
                            ledger: ResilienceLedger,
                            round_idx: int) -> list[str]:
    """Shared checker for the two squared-gradient optimizers."""
    bad = []
    scale = 1.0 if kind is OptimizerKind.ADAGRAD else (1.0 - cfg.beta4)
    decay = 1.0 if kind is OptimizerKind.ADAGRAD else cfg.beta4
    post_warmup = round_idx > ledger.warmup
    r_floor_ok = post_warmup and float(state_before.v_bar.min()) > 0.0
    if post_warmup and not r_floor_ok:
        ledger.notices.append(
            f"round {round_idx}: aggregated accumulator has zero components;"
            " sqrt contraction bounds skipped")
    if r_floor_ok:
        ledger.v_min_witness = min(ledger.v_min_witness,
                                   float(state_before.v_bar.min()))
    r_min = ledger.v_min_witness
    g_max = ledger.g_max_witness
    for pkt_i, g_i, pkt_j, g_j in _pair_norms(selected_pairs, benign_pairs):
        dg = float(np.linalg.norm(g_i - g_j))
        dr = float(np.linalg.norm(pkt_i.v - pkt_j.v))
        if dr > scale * (dg * dg + 2.0 * dg * g_max) + CHAIN_TOL:
            bad.append(f"round {round_idx}: accumulator bound broken: "
                       f"{dr} vs {scale}*({dg}^2 + 2*{dg}*{g_max})")
        if r_floor_ok and math.isfinite(r_min):
            sq_i, sq_j = np.sqrt(pkt_i.v), np.sqrt(pkt_j.v)
            dsq = float(np.linalg.norm(sq_i - sq_j))
            if dsq > dr / (2.0 * math.sqrt(decay * r_min)) + CHAIN_TOL:
                bad.append(f"round {round_idx}: sqrt contraction broken: "
                           f"{dsq} vs {dr}/(2*sqrt({decay}*{r_min}))")
            with np.errstate(divide="ignore"):
                drec = float(np.linalg.norm(1.0 / sq_i - 1.0 / sq_j))
            if drec > dsq / (decay * r_min) + CHAIN_TOL:
                bad.append(f"round {round_idx}: reciprocal-sqrt contraction "
                           f"broken: {drec} vs {dsq}/({decay}*{r_min})")
    return bad


class ResilienceChecker:
    """Round observer: updates the ledger and runs the per-optimizer checks."""

    def __init__(self, optim_cfg: OptimConfig, kind: OptimizerKind,
                 warmup: int = 3):
        self.cfg = optim_cfg
        self.kind = kind
        self.ledger = ResilienceLedger(warmup=warmup)

    def __call__(self, rdata: RoundData) -> None:
        selected_pairs = [
            (rdata.packets[c], rdata.recovered[c])
            for c in rdata.selected if rdata.recovered[c] is not None
        ]
        benign_pairs = [rdata.benign_refs[c] for c in sorted(rdata.benign_refs)]
        # witness first: every gradient seen this round, selected or not
        for c in rdata.sampled:
            if rdata.recovered[c] is not None:
                self.ledger.g_max_witness = max(
                    self.ledger.g_max_witness,
                    float(np.linalg.norm(rdata.recovered[c])))
        for _, g in benign_pairs:
            self.ledger.g_max_witness = max(self.ledger.g_max_witness,
                                            float(np.linalg.norm(g)))
        if self.kind is OptimizerKind.ADAM:
            bad = check_adam_chain(selected_pairs, benign_pairs,
                                   rdata.state_before, self.cfg, self.ledger,
                                   rdata.round)
        elif self.kind is OptimizerKind.SGD_MOMENTUM:
            bad = check_sgdm_chain(selected_pairs, benign_pairs, self.cfg,
                                   rdata.round)
        else:
            bad = check_accumulator_chain(selected_pairs, benign_pairs,
                                          rdata.state_before, self.cfg,
                                          self.kind, self.ledger, rdata.round)
        self.ledger.violations.extend(bad)
        self.ledger.accumulate(rdata.round, selected_pairs, benign_pairs,
                               n_violations=len(bad))


@dataclass
class ResilienceReport:
    checkpoints: list[int]
    sums: dict[str, list[float]]           # quantity -> value at checkpoints
    baseline_ratio: dict[str, list[float]] | None
    verdict: str
    violations: int


_QUANTITIES = ("sum_g", "sum_m", "sum_v", "sum_theta")


def resilience_report(ledger: ResilienceLedger, total_rounds: int,
                      baseline: ResilienceLedger | None = None) -> ResilienceReport:
    """Sums at T/4, T/2, T and, given an undefended paired run, the
    defense/baseline ratios.  Boundedness itself is not decidable from a
    finite run; the verdict compares against the paired run instead.
    """
    checkpoints = sorted({max(1, total_rounds // 4),
                          max(1, total_rounds // 2), total_rounds})
    sums = {q: [] for q in _QUANTITIES}
    for ck in checkpoints:
        row = ledger.sums_at(ck)
        for q in _QUANTITIES:
            sums[q].append(getattr(row, q))
    ratios = None
    verdict = "no-baseline"
    if baseline is not None:
        ratios = {q: [] for q in _QUANTITIES}
        ok = True
        for idx, ck in enumerate(checkpoints):
            base = baseline.sums_at(ck)
            for q in _QUANTITIES:
                b = getattr(base, q)
                r = sums[q][idx] / b if b > 0 else math.nan
                ratios[q].append(r)
                if b > 0 and sums[q][idx] > b:
                    ok = False
        verdict = "resilient-consistent" if ok else "not-established"
    return ResilienceReport(checkpoints=checkpoints, sums=sums,
                            baseline_ratio=ratios, verdict=verdict,
                            violations=len(ledger.violations))
