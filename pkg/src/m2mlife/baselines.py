"""Reference schedulers that the lifetime-aware ones are measured against.

Baselines transmit at the minimum power that fits the payload into one
slot. That rule is supplied by a power-rule object so the same schedulers
run on LTE open-loop grants or on the Shannon link model.
"""

from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .limitedfb import min_chunks
from .lte import LtePowerParams, NoFit, TbsTable, TTI, fun_d, min_prbp, powc
from .model import IDLE, ChannelRealization, NodeState, RadioEnvironment, ScheduleDecision
from .numerics import RateModel
from .scfdma import InfeasibleGrant, min_power


class Grant(NamedTuple):
    power: float
    rate: float
    tbs_index: Optional[int] = None


class LtePowerRule:
    """Open-loop power at the smallest fitting TBS index."""

    def __init__(self, params: LtePowerParams, tbs: TbsTable, tti: float = TTI):
        self.params, self.tbs, self.tti = params, tbs, tti
        self.max_units = tbs.max_prb
        self._cache: Dict[tuple, Optional[Grant]] = {}
        self._min: Dict[tuple, Optional[int]] = {}
        self._first: Dict[int, Optional[Tuple[int, Grant]]] = {}

    def min_units(self, node: NodeState, gains=None) -> Optional[int]:
        key = (node.pathloss, node.traffic.total_bits, node.energy.max_power)
        if key not in self._min:
            try:
                self._min[key] = min_prbp(node, self.params, self.tbs)
            except NoFit:
                self._min[key] = None
        return self._min[key]

    def first_step(self, node: NodeState) -> Optional[Tuple[int, Grant]]:
        """Minimum unit count and its grant; cached per node id since a
        node's link budget and payload never change."""
        hit = self._first.get(node.id, False)
        if hit is False:
            m = self.min_units(node)
            g = None if m is None else self.grant(node, range(m))
            hit = self._first[node.id] = None if g is None else (m, g)
        return hit

    def grant(self, node: NodeState, chunks: Sequence[int], gains=None) -> Optional[Grant]:
        n = len(chunks)
        key = (node.pathloss, node.traffic.total_bits, node.energy.max_power, n)
        if key not in self._cache:
            self._cache[key] = self._grant(node, n)
        return self._cache[key]

    def _grant(self, node, n):
        if not 1 <= n <= self.tbs.max_prb:
            return None
        try:
            d = fun_d(n, node.traffic.total_bits, self.tbs)
        except NoFit:
            return None
        p = powc(n, d, node, self.params, self.tbs)
        if p > node.energy.max_power:
            return None
        return Grant(p, self.tbs(n, d) / self.tti, d)


class ShannonPowerRule:
    """Minimum Shannon power on the granted chunks.

    Without per-chunk gains the node's average pathloss stands in for every
    chunk.
    """

    def __init__(self, env: RadioEnvironment, model: RateModel, n_chunks: int):
        self.env, self.model = env, model
        self.max_units = n_chunks

    def _gains(self, node, gains):
        if gains is None:
            return np.full(self.max_units, 1.0 / node.pathloss)
        return gains

    def min_units(self, node: NodeState, gains=None) -> Optional[int]:
        if gains is None:
            try:
                return min_chunks(node, self.env, self.model, self.max_units)
            except InfeasibleGrant:
                return None
        order = np.argsort(-np.asarray(gains), kind="stable")
        for n in range(1, self.max_units + 1):
            if self.grant(node, sorted(order[:n].tolist()), gains) is not None:
                return n
        return None

    def grant(self, node: NodeState, chunks: Sequence[int], gains=None) -> Optional[Grant]:
        if not chunks:
            return None
        p = min_power(node, self._gains(node, gains), chunks, self.env, self.model)
        if p > node.energy.max_power * (1 + 1e-12):
            return None
        return Grant(p, node.traffic.total_bits / self.env.slot)


@dataclass
class RoundRobinState:
    """Caller-owned pointer: id of the last node admitted."""

    last: int = -1


def _circular(nodes: Sequence[NodeState], after: int) -> List[int]:
    idx = sorted(range(len(nodes)), key=lambda k: nodes[k].id)
    head = [k for k in idx if nodes[k].id > after]
    return head + [k for k in idx if nodes[k].id <= after]


def _gains_of(channel, k):
    return None if channel is None else channel.column(k)


def _layout(nodes, order, counts, rule, channel) -> Dict[int, ScheduleDecision]:
    """Contiguous runs in admission order, then the minimum-power grant for each."""
    out = {n.id: IDLE for n in nodes}
    start = 0
    for k in order:
        chunks = list(range(start, start + counts[k]))
        start += counts[k]
        g = rule.grant(nodes[k], chunks, _gains_of(channel, k))
        if g is None:
            # contiguous placement on this channel is out of power reach
            start -= counts[k]
            continue
        out[nodes[k].id] = ScheduleDecision(1, tuple(chunks), float(g.power), g.tbs_index)
    return out


def _spread(nodes, order, counts, budget, rule, channel):
    """Hand leftover chunks out one at a time in circular order."""
    spare = budget - sum(counts[k] for k in order)
    active = list(order)
    pos = 0
    while spare > 0 and active:
        k = active[pos % len(active)]
        n = counts[k] + 1
        trial = list(range(n))
        if n <= rule.max_units and rule.grant(nodes[k], trial, _gains_of(channel, k)) is not None:
            counts[k] = n
            spare -= 1
            pos += 1
        else:
            active.remove(k)
    return counts


def schedule_rr(nodes: Sequence[NodeState], budget: int, rule, state: RoundRobinState,
                mode: str = "both", channel: ChannelRealization = None,
                max_admit: int = None) -> Dict[int, ScheduleDecision]:
    """Round-robin admission at minimum requirement, then round-robin chunk spreading.

    ``mode="time"`` stops after admission, ``"frequency"`` spreads over every
    node given, ``"both"`` does admission followed by spreading. At most
    ``max_admit`` nodes are admitted when it is set.
    """
    if mode not in ("time", "frequency", "both"):
        raise ValueError(f"unknown round-robin mode {mode!r}")
    counts: Dict[int, int] = {}
    order: List[int] = []
    used = 0
    candidates = _circular(nodes, state.last)
    if mode == "frequency":
        for k in candidates:
            m = rule.min_units(nodes[k], _gains_of(channel, k))
            if m is not None and used + m <= budget:
                counts[k], used = m, used + m
                order.append(k)
    else:
        for k in candidates:
            m = rule.min_units(nodes[k], _gains_of(channel, k))
            if m is None:
                continue
            if used + m > budget or (max_admit is not None and len(order) >= max_admit):
                break
            counts[k], used = m, used + m
            order.append(k)
        if order:
            state.last = nodes[order[-1]].id
    if mode != "time":
        counts = _spread(nodes, order, counts, budget, rule, channel)
    return _layout(nodes, order, counts, rule, channel)


def best_chunk_snr(gains: Sequence[float], env: RadioEnvironment) -> float:
    return max(g / env.chunk_noise(j) for j, g in enumerate(gains))


def schedule_channel_aware(nodes: Sequence[NodeState], budget: int, rule,
                           channel: ChannelRealization, env: RadioEnvironment,
                           max_admit: int = None) -> Dict[int, ScheduleDecision]:
    """Admit by descending best-chunk SNR, then spread chunks round robin."""
    snr = [best_chunk_snr(channel.column(k), env) for k in range(len(nodes))]
    ranked = sorted(range(len(nodes)), key=lambda k: (-snr[k], nodes[k].id))
    counts: Dict[int, int] = {}
    order, used = [], 0
    for k in ranked:
        if max_admit is not None and len(order) >= max_admit:
            break
        m = rule.min_units(nodes[k], channel.column(k))
        if m is not None and used + m <= budget:
            counts[k], used = m, used + m
            order.append(k)
    counts = _spread(nodes, order, counts, budget, rule, channel)
    return _layout(nodes, order, counts, rule, channel)


def _ratio(rate_sum: float, power_sum: float) -> float:
    return rate_sum / power_sum if power_sum > 0 else float("inf")


def schedule_sumrate_per_power(nodes: Sequence[NodeState], budget: int, rule,
                               channel: ChannelRealization = None
                               ) -> Dict[int, ScheduleDecision]:
    """Greedy maximization of total rate over total transmit power.

    Each step either admits a node at its minimum requirement or gives an
    admitted node one more chunk, whichever yields the largest network
    ratio; it stops once no step raises the ratio. Ties go to the lowest id.
    """
    n_nodes = len(nodes)
    counts = np.zeros(n_nodes, dtype=int)
    cur_rate = np.zeros(n_nodes)
    cur_power = np.zeros(n_nodes)
    # candidate step per node: target count and the grant at that count
    step_n = np.ones(n_nodes, dtype=int)
    step_rate = np.zeros(n_nodes)
    step_power = np.full(n_nodes, np.nan)

    def refresh(k: int) -> None:
        n = counts[k] + 1 if counts[k] else rule.min_units(nodes[k], _gains_of(channel, k))
        g = None
        if n is not None and n <= rule.max_units:
            g = rule.grant(nodes[k], list(range(n)), _gains_of(channel, k))
        if g is None:
            step_power[k] = np.nan
        else:
            step_n[k], step_rate[k], step_power[k] = n, g.rate, g.power

    first = getattr(rule, "first_step", None)
    if channel is None and first is not None:
        steps = [first(nd) for nd in nodes]
        for k, st in enumerate(steps):
            if st is not None:
                step_n[k], step_rate[k], step_power[k] = st[0], st[1].rate, st[1].power
    else:
        for k in range(n_nodes):
            refresh(k)
    ids = np.array([n.id for n in nodes])
    order: List[int] = []
    rate_sum = power_sum = 0.0
    used = 0
    current = 0.0
    while used < budget:
        ok = ~np.isnan(step_power) & (used + step_n - counts <= budget)
        if not ok.any():
            break
        r = rate_sum + step_rate - cur_rate
        p = power_sum + np.nan_to_num(step_power) - cur_power
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.where(p > 0, r / p, np.inf)
        val = np.where(ok, val, -np.inf)
        top = val.max()
        if top <= current:
            break
        tied = np.flatnonzero(val == top)
        k = int(tied[np.argmin(ids[tied])])
        if counts[k] == 0:
            order.append(k)
        used += step_n[k] - counts[k]
        rate_sum, power_sum = float(r[k]), float(p[k])
        counts[k], cur_rate[k], cur_power[k] = step_n[k], step_rate[k], step_power[k]
        current = _ratio(rate_sum, power_sum)
        refresh(k)
    return _layout(nodes, order, {k: int(counts[k]) for k in order}, rule, channel)
