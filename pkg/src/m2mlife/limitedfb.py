"""Chunk-count scheduling from average pathloss only.

The base station knows each node's remaining energy, reporting period,
static energy and average pathloss, but no per-chunk channel state. It
therefore decides how many chunks each node gets, not which ones.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

from .model import NodeState, RadioEnvironment
from .numerics import RateModel
from .scfdma import InfeasibleGrant, energy_optimal_power

LN2 = math.log(2.0)


@dataclass
class ChunkCountAllocation:
    counts: Dict[int, int]
    power: Dict[int, float]
    tbs_index: Dict[int, int] = field(default_factory=dict)
    deferred: List[int] = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def _snr_factor(y: int, node: NodeState, env: RadioEnvironment, model: RateModel) -> float:
    # SNR per watt on each subcarrier, gap included
    return env.antenna_gain / (y * env.subcarriers_per_chunk * node.pathloss
                               * (env.noise_psd + env.interference_psd) * model.w
                               * model.gamma_mcs)


def rate_avg(y: int, power: float, node: NodeState, env: RadioEnvironment,
             model: RateModel) -> float:
    """Rate over ``y`` chunks at total power ``power`` under the average channel."""
    if y < 1:
        raise ValueError("at least one chunk is needed")
    k = _snr_factor(y, node, env, model)
    return y * env.subcarriers_per_chunk * model.w * math.log1p(k * power) / LN2


def _min_power(y, node, env, model):
    bits = node.traffic.total_bits
    x = bits / (env.slot * y * env.subcarriers_per_chunk * model.w)
    return math.expm1(x * LN2) / _snr_factor(y, node, env, model)


def count_power(y: int, node: NodeState, env: RadioEnvironment, model: RateModel) -> float:
    """Energy-optimal power for ``y`` chunks, clamped to ``[P_min, P_max]``."""
    p_max = node.energy.max_power
    p_min = _min_power(y, node, env, model)
    if p_min > p_max * (1 + 1e-12):
        raise InfeasibleGrant(f"node {node.id}: {y} chunks need {p_min:.4g} W")
    e = node.energy
    p = energy_optimal_power(_snr_factor(y, node, env, model), e.circuit_power, e.pa_inefficiency)
    return min(p_max, max(p_min, p))


def count_lifetime(y: int, node: NodeState, env: RadioEnvironment, model: RateModel) -> float:
    """Expected lifetime with ``y`` chunks at the energy-optimal power."""
    e = node.energy
    p = count_power(y, node, env, model)
    e_tx = (e.circuit_power + e.pa_inefficiency * p) * node.traffic.total_bits / rate_avg(
        y, p, node, env, model)
    return e.remaining * node.traffic.period / (e.static + e_tx)


def min_chunks(node: NodeState, env: RadioEnvironment, model: RateModel,
               total_chunks: int) -> int:
    """Fewest chunks carrying the payload within one slot at maximum power."""
    need = node.traffic.total_bits / env.slot
    for y in range(1, total_chunks + 1):
        if rate_avg(y, node.energy.max_power, node, env, model) >= need * (1 - 1e-12):
            return y
    raise InfeasibleGrant(f"node {node.id} cannot fit its payload in {total_chunks} chunks")


def admit_by_lifetime(minimum: Dict[int, int], lifetime: Dict[int, float],
                      budget: int) -> List[int]:
    """Node ids admitted at their minimum, shortest lifetime first, within ``budget``."""
    admitted = []
    used = 0
    for i in sorted(minimum, key=lambda i: (lifetime[i], i)):
        if used + minimum[i] <= budget:
            admitted.append(i)
            used += minimum[i]
    return admitted


def schedule_limited_feedback(nodes: Sequence[NodeState], total_chunks: int,
                              env: RadioEnvironment, model: RateModel) -> ChunkCountAllocation:
    """Greedy chunk counts: start at each node's minimum, then top up the shortest lifetime.

    A node whose lifetime would not improve with one more chunk leaves the
    candidate set. Nodes that do not fit are returned in ``deferred``.
    """
    by_id = {n.id: n for n in nodes}
    minimum, deferred = {}, []
    for n in nodes:
        try:
            minimum[n.id] = min_chunks(n, env, model, total_chunks)
        except InfeasibleGrant:
            deferred.append(n.id)
    f0 = {i: count_lifetime(y, by_id[i], env, model) for i, y in minimum.items()}
    admitted = admit_by_lifetime(minimum, f0, total_chunks)
    deferred += [i for i in minimum if i not in admitted]

    y = {i: minimum[i] for i in admitted}
    f = {i: f0[i] for i in admitted}
    spare = total_chunks - sum(y.values())
    while spare > 0:
        live = [i for i in f if f[i] != math.inf]
        if not live:
            break
        m = min(live, key=lambda i: (f[i], i))
        x = y[m] + 1
        try:
            cand = count_lifetime(x, by_id[m], env, model)
        except InfeasibleGrant:
            cand = -math.inf
        if cand > f[m]:
            y[m], f[m] = x, cand
            spare -= 1
        else:
            f[m] = math.inf
    power = {i: count_power(y[i], by_id[i], env, model) for i in y}
    return ChunkCountAllocation(y, power, deferred=sorted(deferred))
