"""Lifetime-aware uplink scheduling over SC-FDMA chunks.

The link model follows the SC-FDMA effective-SINR approximation: a node
granted chunk set ``C`` at total power ``P`` carries
``|C| M w log2(1 + K P)`` bit/s with ``K = G h_e / (|C| Gamma)``. Since
``h_e`` is already normalized by the noise of a whole chunk, the power
share of one chunk, ``P / |C|``, sets the per-subcarrier SNR; this keeps
the model identical to the average-channel rate of the count-based
scheduler when all chunk gains are equal.
"""

import functools
import heapq
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .lifetime import expected_lifetime, lex_compare, network_lifetime, slot_lifetime
from .model import (IDLE, ChannelRealization, NodeState, RadioEnvironment, ResourceGrid,
                    ScheduleDecision, check_decisions, count_runs,
                    effective_channel_gain)
from .numerics import RateModel, lambert_w

OBJECTIVES = ("SIL", "LIL", "AIL", "SLIL")
LN2 = math.log(2.0)


class InfeasibleGrant(ValueError):
    """The chunk set cannot carry the payload within the slot at maximum power."""


@dataclass(frozen=True)
class SchedulerObjective:
    kind: str = "SIL"

    def __post_init__(self):
        if self.kind not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.kind!r}")


@dataclass
class ScheduleResult:
    decisions: Dict[int, ScheduleDecision]
    dropped: List[int] = field(default_factory=list)
    lifetimes: Dict[int, float] = field(default_factory=dict)


# link-level helpers --------------------------------------------------------

def power_factor(h_e: float, n_chunks: int, env: RadioEnvironment, model: RateModel) -> float:
    """Per-subcarrier SNR per watt of total power, SNR gap included."""
    return env.antenna_gain * h_e / (n_chunks * model.gamma_mcs)


def link_rate(n_chunks: int, k: float, power: float, env: RadioEnvironment,
              model: RateModel) -> float:
    return n_chunks * env.subcarriers_per_chunk * model.w * math.log1p(k * power) / LN2


def _min_power(bits, slot, n_chunks, k, env, model):
    x = bits / (slot * env.subcarriers_per_chunk * n_chunks * model.w)
    return math.expm1(x * LN2) / k


def energy_optimal_power(k: float, circuit_power: float, pa: float) -> float:
    """Unconstrained minimizer of ``(P_c + xi P) / log(1 + k P)`` over ``P > 0``."""
    a = k * circuit_power / pa - 1.0
    if a == 0.0:
        return (math.e - 1.0) / k
    return (a / lambert_w(a / math.e) - 1.0) / k


def _optimal_power(bits, slot, n_chunks, k, circuit_power, pa, p_max, env, model):
    p_min = _min_power(bits, slot, n_chunks, k, env, model)
    if p_min > p_max * (1 + 1e-12):
        raise InfeasibleGrant(f"minimum power {p_min:.4g} W exceeds {p_max:.4g} W")
    return min(p_max, max(p_min, energy_optimal_power(k, circuit_power, pa)))


def min_power(node: NodeState, gains: Sequence[float], chunks: Sequence[int],
              env: RadioEnvironment, model: RateModel) -> float:
    """Smallest power that fits the node's payload into one slot on ``chunks``."""
    chunks = list(chunks)
    k = power_factor(effective_channel_gain(gains, chunks, env), len(chunks), env, model)
    return _min_power(node.traffic.total_bits, env.slot, len(chunks), k, env, model)


def optimal_power(node: NodeState, gains: Sequence[float], chunks: Sequence[int],
                  env: RadioEnvironment, model: RateModel) -> float:
    """Energy-minimizing transmit power on ``chunks``, clamped to ``[P_min, P_max]``."""
    chunks = list(chunks)
    e = node.energy
    k = power_factor(effective_channel_gain(gains, chunks, env), len(chunks), env, model)
    return _optimal_power(node.traffic.total_bits, env.slot, len(chunks), k,
                          e.circuit_power, e.pa_inefficiency, e.max_power, env, model)


def grant_energy(node: NodeState, gains: Sequence[float], chunks: Sequence[int],
                 env: RadioEnvironment, model: RateModel,
                 power: Optional[float] = None) -> Tuple[float, float, float]:
    """``(power, rate, energy)`` of a grant; power defaults to the optimum."""
    chunks = list(chunks)
    e = node.energy
    k = power_factor(effective_channel_gain(gains, chunks, env), len(chunks), env, model)
    if power is None:
        power = _optimal_power(node.traffic.total_bits, env.slot, len(chunks), k,
                               e.circuit_power, e.pa_inefficiency, e.max_power, env, model)
    rate = link_rate(len(chunks), k, power, env, model)
    energy = (e.circuit_power + e.pa_inefficiency * power) * node.traffic.total_bits / rate
    return power, rate, energy


@functools.lru_cache(maxsize=65536)
def _estimated_energy(pathloss, bits, circuit_power, pa, p_max, n_chunks, env, model):
    gains = [1.0 / pathloss] * n_chunks
    for n in range(1, n_chunks + 1):
        chunks = range(n)
        k = power_factor(effective_channel_gain(gains, chunks, env), n, env, model)
        if _min_power(bits, env.slot, n, k, env, model) <= p_max:
            p = _optimal_power(bits, env.slot, n, k, circuit_power, pa, p_max, env, model)
            return (circuit_power + pa * p) * bits / link_rate(n, k, p, env, model)
    # unreachable within one slot; charge full-band maximum power
    return (circuit_power + pa * p_max) * bits / link_rate(n_chunks, k, p_max, env, model)


def estimated_tx_energy(node: NodeState, n_chunks: int, env: RadioEnvironment,
                        model: RateModel) -> float:
    """Expected transmission energy of a still-unscheduled node.

    Optimal-power energy at the node's minimum chunk count under the
    pathloss-only channel.
    """
    e = node.energy
    return _estimated_energy(float(node.pathloss), float(node.traffic.total_bits),
                             e.circuit_power, e.pa_inefficiency, e.max_power,
                             n_chunks, env, model)


def metric_F(node: NodeState, gains: Optional[Sequence[float]], chunks: Sequence[int],
             theta: int, ed_est: float, env: RadioEnvironment, model: RateModel) -> float:
    """Expected lifetime at the end of the slot for a tentative grant."""
    e = node.energy
    e_tx = grant_energy(node, gains, chunks, env, model)[2] if theta else 0.0
    return slot_lifetime(e.remaining, node.traffic.period, e.static, e.circuit_power,
                         env.slot, theta, e_tx, ed_est)


def expand(free: Sequence[int], chunks: Sequence[int], max_clusters: int,
           gains: Sequence[float], env: RadioEnvironment) -> Optional[int]:
    """Best eligible free chunk for a node, or ``None``.

    While the node holds fewer than ``max_clusters`` runs any free chunk may
    open a new one; otherwise only chunks adjacent to its runs qualify.
    """
    if count_runs(chunks) < max_clusters:
        eligible = free
    else:
        owned = set(chunks)
        eligible = [m for m in free if (m - 1) in owned or (m + 1) in owned]
    best, best_val = None, -math.inf
    for m in sorted(eligible):
        val = gains[m] / (env.noise_psd + env.interference(m))
        if val > best_val:
            best, best_val = m, val
    return best


def select_node(objective: str, candidates: Sequence[int], current: Dict[int, float],
                improved: Dict[int, Optional[float]], ids: Dict[int, int]) -> Optional[int]:
    """Pick the next node to serve among ``candidates``.

    ``current`` holds each candidate's metric under its present grant and
    ``improved`` its metric after the next expansion (``None`` when no
    expansion is possible). SIL/LIL order by the current metric and skip
    nodes that cannot improve; AIL maximizes the gain and SLIL the ratio.
    Ties go to the lowest node id.
    """
    if not candidates:
        return None
    usable = [k for k in candidates
              if improved.get(k) is not None and improved[k] > current[k]]
    if not usable:
        return None
    if objective == "SIL":
        return min(usable, key=lambda k: (current[k], ids[k]))
    if objective == "LIL":
        return min(usable, key=lambda k: (-current[k], ids[k]))
    if objective == "AIL":
        return min(usable, key=lambda k: (-(improved[k] - current[k]), ids[k]))
    if objective == "SLIL":
        def ratio(k):
            return math.inf if current[k] <= 0 else improved[k] / current[k]
        return min(usable, key=lambda k: (-ratio(k), ids[k]))
    raise ValueError(f"unknown objective {objective!r}")


class _Slot:
    """Mutable per-slot bookkeeping for the greedy scheduler."""

    def __init__(self, nodes, channel, n_chunks, env, model, ed_est):
        self.nodes = nodes
        self.env = env
        self.model = model
        self.gains = channel.gains.T
        self.free = set(range(n_chunks))
        self.chunks: List[List[int]] = [[] for _ in nodes]
        self.theta = [0] * len(nodes)
        self.e_tx = [0.0] * len(nodes)
        self.ed_est = [ed_est[n.id] if ed_est is not None and n.id in ed_est
                       else estimated_tx_energy(n, n_chunks, env, model) for n in nodes]
        self.ids = {k: n.id for k, n in enumerate(nodes)}
        self._bits = [n.traffic.total_bits for n in nodes]

    def feasible(self, k, chunks) -> bool:
        if not chunks:
            return False
        n = self.nodes[k]
        kf = power_factor(effective_channel_gain(self.gains[k], chunks, self.env),
                          len(chunks), self.env, self.model)
        return _min_power(self._bits[k], self.env.slot, len(chunks), kf,
                          self.env, self.model) <= n.energy.max_power * (1 + 1e-12)

    def energy(self, k, chunks) -> float:
        return grant_energy(self.nodes[k], self.gains[k], chunks, self.env, self.model)[2]

    def lifetime(self, k, theta, e_tx) -> float:
        n = self.nodes[k]
        e = n.energy
        return slot_lifetime(e.remaining, n.traffic.period, e.static, e.circuit_power,
                             self.env.slot, theta, e_tx, self.ed_est[k])

    def current(self, k) -> float:
        return self.lifetime(k, self.theta[k], self.e_tx[k])

    def all_current(self) -> np.ndarray:
        """``current`` for every node at once."""
        rem = np.array([n.energy.remaining for n in self.nodes])
        period = np.array([n.traffic.period for n in self.nodes])
        static = np.array([n.energy.static for n in self.nodes])
        p_c = np.array([n.energy.circuit_power for n in self.nodes])
        ed = np.asarray(self.ed_est, dtype=float)
        num = rem - self.env.slot * p_c - ed
        out = np.where(num > 0, num * period / (static + ed), 0.0)
        for k, th in enumerate(self.theta):
            if th:
                out[k] = self.current(k)
        return out

    def minimal_grant(self, k, free) -> Optional[List[int]]:
        """Chunks ExpAlg would add from scratch until the payload fits."""
        chunks: List[int] = []
        free = set(free)
        while not self.feasible(k, chunks):
            c = expand(free, chunks, self.env.max_clusters, self.gains[k], self.env)
            if c is None:
                return None
            chunks.append(c)
            free.discard(c)
        return sorted(chunks)

    def next_step(self, k):
        """``(chunks after the next step, energy)`` or ``None``."""
        if not self.theta[k]:
            chunks = self.minimal_grant(k, self.free)
            if chunks is None:
                return None
            return chunks, self.energy(k, chunks)
        c = expand(self.free, self.chunks[k], self.env.max_clusters, self.gains[k], self.env)
        if c is None:
            return None
        chunks = sorted(self.chunks[k] + [c])
        if not self.feasible(k, chunks):
            # a deep fade can make the wider grant unreachable; treat as a rollback
            return chunks, math.inf
        return chunks, self.energy(k, chunks)

    def commit(self, k, chunks, e_tx):
        self.free.difference_update(chunks)
        self.free.update(c for c in self.chunks[k] if c not in chunks)
        self.chunks[k] = list(chunks)
        self.theta[k] = 1
        self.e_tx[k] = e_tx

    def release(self, k):
        self.free.update(self.chunks[k])
        self.chunks[k] = []
        self.theta[k] = 0
        self.e_tx[k] = 0.0


def schedule(nodes: Sequence[NodeState], grid, channel: ChannelRealization,
             objective="SIL", env: RadioEnvironment = None, model: RateModel = None,
             ed_est: Optional[Dict[int, float]] = None) -> ScheduleResult:
    """Lifetime-aware time/frequency scheduling of one slot.

    Priority nodes first receive their minimum contiguous grant in order of
    increasing expected lifetime; the remaining chunks are then handed out
    one at a time to the node selected by the objective, rolling back any
    expansion that raises the node's transmission energy.
    """
    env = env or RadioEnvironment()
    model = model or RateModel(w=env.subcarrier_bw)
    kind = objective.kind if isinstance(objective, SchedulerObjective) else objective
    SchedulerObjective(kind)
    n_chunks = grid.n_chunks if isinstance(grid, ResourceGrid) else int(grid)
    if n_chunks < 1:
        raise ValueError("grid must hold at least one chunk")
    if channel.gains.shape != (n_chunks, len(nodes)):
        raise ValueError("channel realization does not match grid and node list")

    s = _Slot(nodes, channel, n_chunks, env, model, ed_est)
    dropped = []

    # step 1: priority nodes, shortest expected lifetime first
    prio = [k for k, n in enumerate(nodes) if n.priority]
    prio.sort(key=lambda k: (expected_lifetime(nodes[k].energy, nodes[k].traffic,
                                               s.ed_est[k]), s.ids[k]))
    for k in prio:
        chunks = s.minimal_grant(k, s.free)
        if chunks is None:
            dropped.append(s.ids[k])
            continue
        s.commit(k, chunks, s.energy(k, chunks))

    # step 2: all remaining candidates compete for the leftover chunks
    now = s.all_current()
    gone = set(dropped)
    active = [k for k in range(len(nodes)) if s.ids[k] not in gone]
    current = dict(zip(active, now[active].tolist()))
    if kind in ("SIL", "LIL"):
        _greedy_ordered(s, active, current, kind)
    else:
        _greedy_marginal(s, active, current, kind)

    decisions = {}
    for k, n in enumerate(nodes):
        if s.theta[k]:
            p = optimal_power(n, s.gains[k], s.chunks[k], env, model)
            decisions[n.id] = ScheduleDecision(1, tuple(s.chunks[k]), float(p))
        else:
            decisions[n.id] = IDLE
    lifetimes = dict(zip((n.id for n in nodes), s.all_current().tolist()))
    return ScheduleResult(decisions, dropped, lifetimes)


def _greedy_ordered(s: _Slot, active, current, kind):
    sign = 1.0 if kind == "SIL" else -1.0
    # only the selected node's key changes, so a heap replays the linear scan
    heap = [(sign * current[k], s.ids[k], k) for k in active]
    heapq.heapify(heap)
    while s.free and heap:
        _, _, k = heapq.heappop(heap)
        step = s.next_step(k)
        if step is None:
            continue
        chunks, e_new = step
        if not s.theta[k]:
            # admission only if it lengthens the node's expected lifetime
            if s.lifetime(k, 1, e_new) <= current[k]:
                continue
        elif e_new > s.e_tx[k]:
            # expansion would cost more energy: roll back and retire the node
            continue
        s.commit(k, chunks, e_new)
        current[k] = s.current(k)
        heapq.heappush(heap, (sign * current[k], s.ids[k], k))


def _greedy_marginal(s: _Slot, active, current, kind):
    live = list(active)
    while s.free and live:
        improved = {}
        steps = {}
        for k in live:
            step = s.next_step(k)
            steps[k] = step
            improved[k] = None if step is None else s.lifetime(k, 1, step[1])
        # nodes with no improving step leave the candidate set
        live = [k for k in live if improved[k] is not None and improved[k] > current[k]]
        k = select_node(kind, live, current, improved, s.ids)
        if k is None:
            break
        chunks, e_new = steps[k]
        s.commit(k, chunks, e_new)
        current[k] = s.current(k)


# exhaustive oracle ---------------------------------------------------------

def count_allocations(n_nodes: int, n_chunks: int, allow_idle: bool = False) -> int:
    """Number of single-run chunk allocations.

    Without idle chunks this is the classic SC-FDMA search-space size
    ``sum_i C(A, i) i! C(C-1, i-1)``; with idle chunks each of the ``i`` runs
    may be separated by gaps, giving ``C(C+i, 2i)`` placements instead.
    """
    total = 0
    if allow_idle:
        total = 1
    for i in range(1, min(n_nodes, n_chunks) + 1):
        placements = math.comb(n_chunks + i, 2 * i) if allow_idle else math.comb(n_chunks - 1, i - 1)
        total += math.comb(n_nodes, i) * math.factorial(i) * placements
    return total


def enumerate_allocations(n_nodes: int, n_chunks: int, allow_idle: bool = False):
    """Yield tuples of per-node ``(start, stop)`` runs (``None`` when unscheduled)."""
    def rec(pos, assign, used):
        if pos == n_chunks:
            if allow_idle or any(a is not None for a in assign):
                yield tuple(assign)
            return
        if allow_idle:
            yield from rec(pos + 1, assign, used)
        for node in range(n_nodes):
            if node in used:
                continue
            for stop in range(pos + 1, n_chunks + 1):
                assign[node] = (pos, stop)
                used.add(node)
                yield from rec(stop, assign, used)
                used.discard(node)
                assign[node] = None

    if n_chunks == 0:
        return
    yield from rec(0, [None] * n_nodes, set())


def _objective_key(values, kind):
    if kind == "SIL":
        return sorted(values)
    return network_lifetime(np.asarray(values), kind)


def brute_force(nodes: Sequence[NodeState], grid, channel: ChannelRealization,
                objective="SIL", env: RadioEnvironment = None, model: RateModel = None,
                ed_est: Optional[Dict[int, float]] = None,
                limit: int = 10 ** 6) -> ScheduleResult:
    """Best single-run allocation by exhaustive search.

    Every allocation of contiguous runs (idle chunks allowed) is evaluated
    with optimal power; priority nodes must be served whenever some feasible
    allocation serves them all. SIL keeps the lexicographically largest
    sorted lifetime vector.
    """
    env = env or RadioEnvironment()
    model = model or RateModel(w=env.subcarrier_bw)
    kind = objective.kind if isinstance(objective, SchedulerObjective) else objective
    n_chunks = grid.n_chunks if isinstance(grid, ResourceGrid) else int(grid)
    size = count_allocations(len(nodes), n_chunks, allow_idle=True)
    if size > limit:
        raise ValueError(f"{size} allocations exceed the enumeration limit {limit}")
    s = _Slot(nodes, channel, n_chunks, env, model, ed_est)

    run_cache: Dict[Tuple[int, int, int], Optional[float]] = {}

    def run_life(k, run):
        key = (k, run[0], run[1])
        if key not in run_cache:
            chunks = list(range(*run))
            run_cache[key] = (s.lifetime(k, 1, s.energy(k, chunks))
                              if s.feasible(k, chunks) else None)
        return run_cache[key]

    idle = [s.lifetime(k, 0, 0.0) for k in range(len(nodes))]
    prio = [k for k, n in enumerate(nodes) if n.priority]
    best, best_key, best_serves_prio = None, None, False
    for alloc in enumerate_allocations(len(nodes), n_chunks, allow_idle=True):
        values = []
        ok = True
        for k, run in enumerate(alloc):
            if run is None:
                values.append(idle[k])
            else:
                life = run_life(k, run)
                if life is None:
                    ok = False
                    break
                values.append(life)
        if not ok:
            continue
        serves = all(alloc[k] is not None for k in prio)
        if best_serves_prio and not serves:
            continue
        key = _objective_key(values, kind)
        if best is None or (serves and not best_serves_prio) or _better(key, best_key, values, best[1], kind):
            best, best_key, best_serves_prio = (alloc, values), key, serves

    alloc, values = best
    decisions, lifetimes = {}, {}
    for k, n in enumerate(nodes):
        run = alloc[k]
        if run is None:
            decisions[n.id] = IDLE
        else:
            chunks = list(range(*run))
            decisions[n.id] = ScheduleDecision(1, tuple(chunks),
                                               optimal_power(n, s.gains[k], chunks, env, model))
        lifetimes[n.id] = values[k]
    return ScheduleResult(decisions, [], lifetimes)


def _better(key, best_key, values, best_values, kind) -> bool:
    if kind == "SIL":
        return lex_compare(values, best_values) > 0
    if key != best_key:
        return key > best_key
    return lex_compare(values, best_values) > 0


def validate(result: ScheduleResult, nodes: Sequence[NodeState], channel: ChannelRealization,
             env: RadioEnvironment, model: RateModel) -> List[str]:
    """Constraint post-check of a slot's decisions (budget, runs, airtime, power)."""
    n_chunks = channel.n_chunks
    problems = check_decisions(result.decisions, n_chunks, env.max_clusters)
    index = {n.id: k for k, n in enumerate(nodes)}
    for node_id, d in result.decisions.items():
        if not d.theta:
            continue
        node = nodes[index[node_id]]
        if d.power > node.energy.max_power * (1 + 1e-9):
            problems.append(f"node {node_id}: power {d.power:.4g} above maximum")
        _, rate, _ = grant_energy(node, channel.column(index[node_id]), d.chunks, env, model,
                                  power=d.power)
        if node.traffic.total_bits / rate > env.slot * (1 + 1e-9):
            problems.append(f"node {node_id}: airtime exceeds slot")
    return problems
