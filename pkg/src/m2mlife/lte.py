"""LTE uplink scheduling on PRB pairs with open-loop power control.

Transmit power follows the open-loop rule
``PowC(n, delta) = n P0 beta gamma (2^(k_s TBS(n, delta) / (n N_s N_sc)) - 1)``
and a grant always occupies one TTI.
"""

import csv
import math
from dataclasses import dataclass
from importlib import resources
from typing import Dict, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from .limitedfb import ChunkCountAllocation, admit_by_lifetime
from .model import NodeState, dbm_to_watts
from .numerics import lambert_w

LN2 = math.log(2.0)
TTI = 1e-3


class NoFit(ValueError):
    """No table entry or PRB count can carry the payload."""


@dataclass(frozen=True)
class TbsTable:
    """Transport block sizes indexed by PRB count (1-based) and TBS index."""

    bits: Tuple[Tuple[int, ...], ...]   # bits[n - 1][delta]

    @property
    def max_prb(self) -> int:
        return len(self.bits)

    @property
    def max_delta(self) -> int:
        return len(self.bits[0]) - 1

    def __call__(self, n_prb: int, delta: int) -> int:
        if not (1 <= n_prb <= self.max_prb and 0 <= delta <= self.max_delta):
            raise KeyError(f"(n_prb={n_prb}, delta={delta}) outside the TBS table")
        return self.bits[n_prb - 1][delta]

    def max_bits_per_prb(self) -> float:
        return max(self.bits[n - 1][-1] / n for n in range(1, self.max_prb + 1))


def load_tbs(path=None) -> TbsTable:
    """Read a ``n_prb,delta,tbs_bits`` CSV and validate it.

    Rejects missing cells, duplicates and any entry that decreases along a
    row or a column.
    """
    if path is None:
        path = resources.files("m2mlife") / "data" / "tbs.csv"
    cells: Dict[Tuple[int, int], int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["n_prb", "delta", "tbs_bits"]:
            raise ValueError(f"{path}: unexpected header {header}")
        for line, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise ValueError(f"{path}:{line}: expected 3 columns, got {len(row)}")
            try:
                n, d, b = (int(v) for v in row)
            except ValueError as exc:
                raise ValueError(f"{path}:{line}: {exc}") from None
            if (n, d) in cells:
                raise ValueError(f"{path}:{line}: duplicate entry ({n}, {d})")
            if n < 1 or d < 0 or b <= 0:
                raise ValueError(f"{path}:{line}: out-of-range entry {row}")
            cells[(n, d)] = b
    if not cells:
        raise ValueError(f"{path}: empty table")
    n_max = max(n for n, _ in cells)
    d_max = max(d for _, d in cells)
    for n in range(1, n_max + 1):
        for d in range(d_max + 1):
            if (n, d) not in cells:
                raise ValueError(f"{path}: missing entry n_prb={n}, delta={d}")
            if d and cells[(n, d)] < cells[(n, d - 1)]:
                raise ValueError(f"{path}: TBS decreases in delta at n_prb={n}, delta={d}")
            if n > 1 and cells[(n, d)] < cells[(n - 1, d)]:
                raise ValueError(f"{path}: TBS decreases in n_prb at n_prb={n}, delta={d}")
    return TbsTable(tuple(tuple(cells[(n, d)] for d in range(d_max + 1))
                          for n in range(1, n_max + 1)))


@dataclass(frozen=True)
class LtePowerParams:
    """Open-loop power control settings; dB quantities stay in dB here.

    ``noise_dbm`` is the noise power over one resource block in dBm.
    """

    beta: float = 0.92
    k_s: float = 1.25
    n_s: int = 12
    n_sc: int = 12
    snr_target_db: float = 1.0
    noise_dbm: float = -174.0 + 10.0 * math.log10(180e3)
    max_power_dbm: float = 24.0

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")

    @property
    def p0_dbm(self) -> float:
        b = self.beta
        return b * (self.snr_target_db + self.noise_dbm) + (1 - b) * self.max_power_dbm

    @property
    def p0(self) -> float:
        return dbm_to_watts(self.p0_dbm)

    @property
    def bits_per_prb(self) -> int:
        return self.n_s * self.n_sc


def _powc_bits(n: int, bits: float, pathloss: float, params: LtePowerParams) -> float:
    x = params.k_s * bits / (n * params.bits_per_prb)
    return n * params.p0 * params.beta * pathloss * math.expm1(x * LN2)


def powc(n_prb: int, delta: int, node: NodeState, params: LtePowerParams,
         tbs: TbsTable) -> float:
    """Open-loop transmit power in watts for an ``(n_prb, delta)`` grant."""
    return _powc_bits(n_prb, tbs(n_prb, delta), node.pathloss, params)


def fun_d(n_prb: int, bits: float, tbs: TbsTable) -> int:
    """Smallest TBS index whose block holds ``bits`` on ``n_prb`` PRB pairs."""
    for d in range(tbs.max_delta + 1):
        if tbs(n_prb, d) >= bits:
            return d
    raise NoFit(f"{bits} bits exceed TBS({n_prb}, {tbs.max_delta})")


def min_prbp(node: NodeState, params: LtePowerParams, tbs: TbsTable,
             p_max: float = None) -> int:
    """Fewest PRB pairs whose smallest fitting block is reachable within ``p_max``."""
    p_max = node.energy.max_power if p_max is None else p_max
    bits = node.traffic.total_bits
    for n in range(1, tbs.max_prb + 1):
        try:
            d = fun_d(n, bits, tbs)
        except NoFit:
            continue
        if powc(n, d, node, params, tbs) <= p_max:
            return n
    raise NoFit(f"node {node.id} cannot be served within {tbs.max_prb} PRB pairs")


def lifetime_lte(node: NodeState, n_prb: int, delta: int, params: LtePowerParams,
                 tbs: TbsTable, tti: float = TTI) -> float:
    e = node.energy
    p = powc(n_prb, delta, node, params, tbs)
    return e.remaining * node.traffic.period / (
        e.static + tti * (e.circuit_power + e.pa_inefficiency * p))


def _grant(node, n, params, tbs, tti):
    """``(delta, power, lifetime)`` at ``n`` PRB pairs, or ``None`` if impossible."""
    if n > tbs.max_prb:
        return None
    try:
        d = fun_d(n, node.traffic.total_bits, tbs)
    except NoFit:
        return None
    p = powc(n, d, node, params, tbs)
    return d, p, lifetime_lte(node, n, d, params, tbs, tti)


def _admit(nodes, total_prbp, params, tbs, tti):
    minimum, deferred, life = {}, [], {}
    for n in nodes:
        try:
            minimum[n.id] = min_prbp(n, params, tbs)
        except NoFit:
            deferred.append(n.id)
            continue
        life[n.id] = _grant(n, minimum[n.id], params, tbs, tti)[2]
    admitted = admit_by_lifetime(minimum, life, total_prbp)
    deferred += [i for i in minimum if i not in admitted]
    return minimum, admitted, deferred


def schedule_lte(nodes: Sequence[NodeState], total_prbp: int, params: LtePowerParams,
                 tbs: TbsTable, tti: float = TTI) -> ChunkCountAllocation:
    """Greedy PRB-pair counts with open-loop power.

    Every admitted node starts at its minimum; the spare pairs then go one
    at a time to the shortest-lived node as long as the extra pair keeps its
    power within the limit and lengthens its lifetime.
    """
    by_id = {n.id: n for n in nodes}
    minimum, admitted, deferred = _admit(nodes, total_prbp, params, tbs, tti)
    y, p, delta, f = {}, {}, {}, {}
    for i in admitted:
        d, pw, life = _grant(by_id[i], minimum[i], params, tbs, tti)
        y[i], delta[i], p[i], f[i] = minimum[i], d, pw, life
    spare = total_prbp - sum(y.values())
    while spare > 0:
        live = [i for i in f if f[i] != math.inf]
        if not live:
            break
        m = min(live, key=lambda i: (f[i], i))
        g = _grant(by_id[m], y[m] + 1, params, tbs, tti)
        if g is not None and g[1] <= by_id[m].energy.max_power and g[2] > f[m]:
            y[m] += 1
            delta[m], p[m], f[m] = g
            spare -= 1
        else:
            f[m] = math.inf
    return ChunkCountAllocation(y, p, delta, sorted(deferred))


# relaxed problem --------------------------------------------------------------

@dataclass
class RelaxedSolution:
    counts: Dict[int, float]
    level: float
    mu: float
    lambdas: Dict[int, float]
    lower: Dict[int, float]
    upper: Dict[int, float]

    def dual_ratio(self, i: int) -> float:
        return self.mu / self.lambdas[i] if self.lambdas[i] > 0 else 0.0


def relaxed_inverse_lifetime(node: NodeState, n: float, params: LtePowerParams,
                             tti: float = TTI) -> float:
    """Inverse lifetime with a continuous PRB count and the payload as the block size."""
    e = node.energy
    p = _powc_bits(n, node.traffic.total_bits, node.pathloss, params)
    return (e.static + tti * (e.circuit_power + e.pa_inefficiency * p)) / (
        e.remaining * node.traffic.period)


def _relaxed_slope(node, n, params, tti):
    e = node.energy
    a = params.p0 * params.beta * node.pathloss
    x = params.k_s * node.traffic.total_bits / (n * params.bits_per_prb) * LN2
    return tti * e.pa_inefficiency * a * (math.expm1(x) - x * math.exp(x)) / (
        e.remaining * node.traffic.period)


def relaxed_min_count(node: NodeState, params: LtePowerParams, tbs: TbsTable) -> float:
    """Lower bound on a node's relaxed PRB count.

    The larger of the smallest integer count meeting the power limit with
    the payload as block size and the payload over the densest PRB load the
    table offers.
    """
    bits = node.traffic.total_bits
    n_m = None
    for n in range(1, tbs.max_prb + 1):
        if _powc_bits(n, bits, node.pathloss, params) <= node.energy.max_power:
            n_m = n
            break
    if n_m is None:
        raise NoFit(f"node {node.id} exceeds the power limit at {tbs.max_prb} PRB pairs")
    return max(float(n_m), bits / tbs.max_bits_per_prb())


def closed_form_count(node: NodeState, dual_ratio: float, params: LtePowerParams,
                      lower: float, upper: float = math.inf, tti: float = TTI) -> float:
    """LambertW stationary PRB count for a given PRB price, clamped to ``[lower, upper]``.

    A zero price means extra PRB pairs are free, so the count goes to ``upper``.
    """
    e = node.energy
    a = params.p0 * params.beta * node.pathloss
    arg = (e.remaining * node.traffic.period * dual_ratio
           / (math.e * a * e.pa_inefficiency * tti) - 1.0 / math.e)
    c = params.k_s * LN2 * node.traffic.total_bits / params.bits_per_prb
    denom = 1.0 + lambert_w(arg)
    if denom <= 0.0:
        return upper
    return min(upper, max(lower, c / denom))


def relaxed_solve(nodes: Sequence[NodeState], total_prbp: float, params: LtePowerParams,
                  tbs: TbsTable, tti: float = TTI, rtol: float = 1e-10) -> RelaxedSolution:
    """Continuous max-min PRB split by bisection on the common inverse-lifetime level.

    Counts live in ``[lower_i, max_prb]``; inverse lifetime falls with the
    count, so the budget binds unless every node sits at the table width.
    """
    lower = {n.id: relaxed_min_count(n, params, tbs) for n in nodes}
    upper = {n.id: float(tbs.max_prb) for n in nodes}
    if sum(lower.values()) > total_prbp * (1 + 1e-12):
        raise NoFit("relaxed minimum counts exceed the PRB budget")

    def z(n, x):
        return relaxed_inverse_lifetime(n, x, params, tti)

    if sum(upper.values()) <= total_prbp:
        counts = dict(upper)
        level = max(z(n, counts[n.id]) for n in nodes)
        return RelaxedSolution(counts, level, 0.0, {n.id: 0.0 for n in nodes}, lower, upper)

    z_top = {n.id: z(n, lower[n.id]) for n in nodes}
    z_bot = {n.id: z(n, upper[n.id]) for n in nodes}

    def counts_at(level):
        out = {}
        for n in nodes:
            i = n.id
            if z_top[i] <= level:
                out[i] = lower[i]
            elif z_bot[i] >= level:
                out[i] = upper[i]
            else:
                out[i] = brentq(lambda x: z(n, x) - level, lower[i], upper[i],
                                xtol=1e-14, rtol=1e-14)
        return out

    lo, hi = max(z_bot.values()), max(z_top.values())
    counts = counts_at(hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        trial = counts_at(mid)
        if sum(trial.values()) <= total_prbp:
            hi, counts = mid, trial
        else:
            lo = mid
        if total_prbp - sum(counts.values()) <= rtol * total_prbp or hi - lo <= 1e-15 * hi:
            break
    level = max(z(n, counts[n.id]) for n in nodes)

    slopes = {}
    for n in nodes:
        i = n.id
        interior = lower[i] * (1 + 1e-12) < counts[i] < upper[i] * (1 - 1e-12)
        slopes[i] = -_relaxed_slope(n, counts[i], params, tti) if interior else 0.0
    inv = [1.0 / s for s in slopes.values() if s > 0]
    mu = 1.0 / sum(inv) if inv else 0.0
    lambdas = {i: (mu / s if s > 0 else 0.0) for i, s in slopes.items()}
    return RelaxedSolution(counts, level, mu, lambdas, lower, upper)


def randomized_round(fractional: Dict[int, float], floor_at: Dict[int, int],
                     cap: Dict[int, int], budget: int,
                     rng: np.random.Generator) -> Dict[int, int]:
    """Round each count to floor plus a Bernoulli of its fraction, then repair.

    Repair raises every count to ``floor_at``, trims the largest excess over
    the floor while the budget is exceeded and hands leftover units to the
    largest rounding deficits.
    """
    ids = sorted(fractional)
    y = {}
    for i in ids:
        base = math.floor(fractional[i] + 1e-12)
        frac = fractional[i] - base
        y[i] = base + (1 if frac > 1e-12 and rng.random() < frac else 0)
        y[i] = min(cap[i], max(floor_at[i], y[i]))
    while sum(y.values()) > budget:
        over = [i for i in ids if y[i] > floor_at[i]]
        if not over:
            raise NoFit("rounded minimum counts exceed the budget")
        i = max(over, key=lambda k: (y[k] - fractional[k], y[k] - floor_at[k], -k))
        y[i] -= 1
    while sum(y.values()) < budget:
        short = [i for i in ids if y[i] < cap[i] and fractional[i] - y[i] > 1e-12]
        if not short:
            break
        i = max(short, key=lambda k: (fractional[k] - y[k], -k))
        y[i] += 1
    return y


def relaxed_schedule_lte(nodes: Sequence[NodeState], total_prbp: int, params: LtePowerParams,
                         tbs: TbsTable, rng: np.random.Generator,
                         tti: float = TTI) -> ChunkCountAllocation:
    """Relaxed continuous split followed by randomized rounding."""
    by_id = {n.id: n for n in nodes}
    minimum, admitted, deferred = _admit(nodes, total_prbp, params, tbs, tti)
    if not admitted:
        return ChunkCountAllocation({}, {}, {}, sorted(deferred))
    chosen = [by_id[i] for i in admitted]
    sol = relaxed_solve(chosen, total_prbp, params, tbs, tti)
    floor_at = {i: max(minimum[i], math.ceil(sol.lower[i] - 1e-9)) for i in admitted}
    cap = {i: tbs.max_prb for i in admitted}
    y = randomized_round(sol.counts, floor_at, cap, total_prbp, rng)
    p, delta = {}, {}
    for i in admitted:
        g = _grant(by_id[i], y[i], params, tbs, tti)
        if g is None or g[1] > by_id[i].energy.max_power:
            # table granularity can push power up; fall back to the minimum grant
            y[i] = minimum[i]
            g = _grant(by_id[i], y[i], params, tbs, tti)
        delta[i], p[i] = g[0], g[1]
    return ChunkCountAllocation(y, p, delta, sorted(deferred))
