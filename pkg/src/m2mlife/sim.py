"""Monte-Carlo battery-lifetime simulator for scheduled machine uplink.

Nodes report with Poisson arrivals. Every ``reservation_period`` seconds a
reservation window of ``reserved_subframes`` subframes opens. The base
station plans the window's grants subframe by subframe from the backlog
present at the window start and delivers them before the window, so a
backlogged node that gets no grant in a window pays one slot of listening
energy and waits for the next window.
"""

import dataclasses
import hashlib
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy import stats

from .baselines import (LtePowerRule, RoundRobinState, schedule_channel_aware, schedule_rr,
                        schedule_sumrate_per_power)
from .lifetime import jain_index, network_lifetime
from .lte import LtePowerParams, TbsTable, load_tbs, schedule_lte
from .model import (IDLE, EnergyProfile, NodeState, RadioEnvironment, ScheduleDecision,
                    TrafficProfile, check_decisions, dbm_to_watts, draw_channel, place_nodes)
from .numerics import RateModel
from .scfdma import estimated_tx_energy, grant_energy, schedule

SCHEMES = {
    1: "lifetime-aware SC-FDMA, shortest lifetime",
    2: "round-robin admission with limited-feedback LTE allocation",
    3: "lifetime-aware SC-FDMA, longest lifetime",
    4: "round robin in time and frequency",
    5: "channel-aware admission with round-robin frequency allocation",
    6: "sum rate over transmit power greedy",
}
LTE_SCHEMES = (2, 4, 5, 6)
# windows covered by SimReport.arrival_digest
DIGEST_WINDOWS = 10


class ConfigError(ValueError):
    """Invalid simulation configuration."""


@dataclass(frozen=True)
class SimConfig:
    """One simulated cell; defaults follow the reference parameter table.

    ``initial_energy`` has no reference value and must be given. The table
    reserves 20 subframes every second for 18000 nodes; at the default 2000
    nodes the window is stretched to 9 s so each window sees the same
    offered load.
    """

    initial_energy: float
    scheme: int = 1
    node_count: int = 2000
    seed: int = 0
    objective: Optional[str] = None
    cell_radius: float = 500.0
    min_distance: float = 35.0
    fading: str = "rayleigh_block"
    reporting_period: float = 300.0
    payload: float = 600.0
    overhead: float = 0.0
    static_energy: float = 10e-6
    circuit_power_dbm: float = 7.0
    max_power_dbm: float = 24.0
    pa_inefficiency: float = 1.0
    initial_energy_spread: float = 0.0
    noise_psd_dbm: float = -174.0
    interference_psd: float = 0.0
    antenna_gain: float = 1.0
    subcarrier_bw: float = 15e3
    subcarriers_per_chunk: int = 12
    chunks: int = 6
    tti: float = 1e-3
    max_clusters: int = 1
    gamma_mcs: float = 1.0
    reservation_period: float = 9.0
    reserved_subframes: int = 20
    beta: float = 0.92
    k_s: float = 1.25
    n_s: int = 12
    n_sc: int = 12
    snr_target_db: float = 1.0
    lte_noise_dbm: float = -174.0 + 10.0 * math.log10(180e3)
    horizon: float = 1e7
    stop_drained_fraction: float = 0.05

    def __post_init__(self):
        checks = [
            (self.scheme in SCHEMES, f"scheme must be one of {sorted(SCHEMES)}"),
            (self.node_count >= 1, "node_count must be >= 1"),
            (self.initial_energy > 0, "initial_energy must be positive"),
            (0 <= self.initial_energy_spread < 1, "initial_energy_spread must lie in [0, 1)"),
            (self.objective in (None, "SIL", "LIL", "AIL", "SLIL"), "unknown objective"),
            (self.cell_radius > self.min_distance > 0, "need cell_radius > min_distance > 0"),
            (self.fading in ("none", "rayleigh_block"), "fading must be none or rayleigh_block"),
            (self.reporting_period > 0 and self.payload > 0, "period and payload must be positive"),
            (self.overhead >= 0 and self.static_energy >= 0, "negative overhead or static energy"),
            (self.pa_inefficiency >= 1, "pa_inefficiency must be >= 1"),
            (self.chunks >= 1 and self.reserved_subframes >= 1, "empty reservation"),
            (self.reservation_period >= self.reserved_subframes * self.tti,
             "reservation window longer than its period"),
            (self.horizon > 0, "horizon must be positive"),
            (0 < self.stop_drained_fraction <= 1, "stop_drained_fraction must lie in (0, 1]"),
            (0 < self.beta <= 1, "beta must lie in (0, 1]"),
            (self.gamma_mcs >= 1 and self.max_clusters >= 1, "gamma_mcs and max_clusters >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def scheduler_objective(self) -> str:
        if self.objective:
            return self.objective
        return "LIL" if self.scheme == 3 else "SIL"

    def environment(self) -> RadioEnvironment:
        return RadioEnvironment(noise_psd=dbm_to_watts(self.noise_psd_dbm),
                                interference_psd=self.interference_psd,
                                antenna_gain=self.antenna_gain,
                                subcarrier_bw=self.subcarrier_bw,
                                subcarriers_per_chunk=self.subcarriers_per_chunk,
                                slot=self.tti, max_clusters=self.max_clusters)

    def rate_model(self) -> RateModel:
        return RateModel(w=self.subcarrier_bw, gamma_mcs=self.gamma_mcs)

    def lte_params(self) -> LtePowerParams:
        return LtePowerParams(beta=self.beta, k_s=self.k_s, n_s=self.n_s, n_sc=self.n_sc,
                              snr_target_db=self.snr_target_db, noise_dbm=self.lte_noise_dbm,
                              max_power_dbm=self.max_power_dbm)

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class SimReport:
    """Outcome of one replication.

    ``drain_time`` holds empirical drain times for drained nodes. Nodes
    still alive get initial energy times reporting period over their
    observed energy per report, floored at the end time; ``drained`` tells
    the two apart. ``predicted_lifetime`` is the remaining lifetime from
    the end time. ``distance`` is each node's placement.
    """

    config: SimConfig
    drain_time: np.ndarray
    drained: np.ndarray
    predicted_lifetime: np.ndarray
    initial_energy: float
    remaining_energy: float
    consumed_energy: float
    generated_bits: float
    delivered_bits: float
    reserved_time: float
    end_time: float
    windows: int
    violations: int
    violation_log: List[str] = field(default_factory=list)
    backlog: np.ndarray = field(default_factory=lambda: np.zeros(0))
    arrivals: int = 0
    energy_per_report: np.ndarray = field(default_factory=lambda: np.zeros(0))
    arrival_digest: str = ""
    distance: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def bandwidth(self) -> float:
        c = self.config
        return c.chunks * c.subcarriers_per_chunk * c.subcarrier_bw

    def metrics(self) -> Dict[str, float]:
        t = self.drain_time
        return {
            "sil": network_lifetime(t, "SIL"),
            "lil": network_lifetime(t, "LIL"),
            "ail": network_lifetime(t, "AIL"),
            "slil": network_lifetime(t, "SLIL"),
            "jain": jain_index(t),
            "variance": float(np.var(t)),
            "ee": self.delivered_bits / self.consumed_energy if self.consumed_energy else 0.0,
            "se": self.delivered_bits / (self.reserved_time * self.bandwidth)
            if self.reserved_time else 0.0,
            "drained_fraction": float(self.drained.mean()),
            "violations": float(self.violations),
        }


def generate_arrivals(period: float, horizon: float, rng: np.random.Generator) -> np.ndarray:
    """Poisson arrival times with mean inter-arrival ``period`` on ``[0, horizon)``."""
    if not period > 0:
        raise ValueError("period must be positive")
    out = []
    t = 0.0
    block = max(16, int(horizon / period * 1.2) + 16)
    while True:
        gaps = rng.exponential(period, size=block)
        times = t + np.cumsum(gaps)
        keep = times[times < horizon]
        out.append(keep)
        if keep.size < block:
            break
        t = float(times[-1])
    return np.concatenate(out) if out else np.zeros(0)


class _Cell:
    """Mutable replication state."""

    def __init__(self, cfg: SimConfig, tbs: TbsTable):
        self.cfg = cfg
        seq = np.random.SeedSequence(cfg.seed)
        place_ss, arrival_ss, channel_ss, energy_ss = seq.spawn(4)
        self.rng_arrival = np.random.default_rng(arrival_ss)
        self.rng_channel = np.random.default_rng(channel_ss)
        self.env = cfg.environment()
        self.model = cfg.rate_model()
        self.params = cfg.lte_params()
        self.tbs = tbs
        self.rule = LtePowerRule(self.params, tbs, cfg.tti)
        self.rr = RoundRobinState()

        n = cfg.node_count
        dist = place_nodes(n, cfg.cell_radius, np.random.default_rng(place_ss), cfg.min_distance)
        spread = cfg.initial_energy_spread
        if spread > 0:
            e0 = cfg.initial_energy * np.random.default_rng(energy_ss).uniform(
                1 - spread, 1 + spread, size=n)
        else:
            e0 = np.full(n, float(cfg.initial_energy))
        p_c = dbm_to_watts(cfg.circuit_power_dbm)
        p_max = dbm_to_watts(cfg.max_power_dbm)
        self.nodes = [NodeState(i, TrafficProfile(cfg.reporting_period, cfg.payload, cfg.overhead),
                                EnergyProfile(float(e0[i]), cfg.static_energy, p_c,
                                              cfg.pa_inefficiency, p_max),
                                float(dist[i]))
                      for i in range(n)]
        self.e0 = e0
        self.energy = e0.copy()
        self.consumed = np.zeros(n)
        self.reports = np.zeros(n, dtype=np.int64)
        self.queue = np.zeros(n, dtype=np.int64)
        self.oldest = np.full(n, np.inf)
        self.alive = np.ones(n, dtype=bool)
        self.drain_time = np.full(n, np.nan)
        self.pending: List[List[float]] = [[] for _ in range(n)]
        self.t_now = 0.0
        self.ed_est = {i: estimated_tx_energy(nd, cfg.chunks, self.env, self.model)
                       for i, nd in enumerate(self.nodes)}
        self.generated_bits = 0.0
        self.delivered_bits = 0.0
        self.violations: List[str] = []
        self.arrivals = 0

    def debit(self, i: int, amount: float, t: float) -> bool:
        """Take ``amount`` joules from node ``i``; returns False once it drains."""
        take = min(amount, self.energy[i])
        self.energy[i] -= take
        self.consumed[i] += take
        if take < amount or self.energy[i] <= 0.0:
            self.energy[i] = 0.0
            self.alive[i] = False
            self.drain_time[i] = t
            self.queue[i] = 0
            self.pending[i] = []
            self.oldest[i] = np.inf
            return False
        return True


def _arrivals_in(cell: _Cell, t0: float, t1: float):
    """Poisson arrivals of every node on ``(t0, t1]``; generated for all nodes so
    the stream does not depend on which nodes are still alive."""
    cfg = cell.cfg
    rate = (t1 - t0) / cfg.reporting_period
    counts = cell.rng_arrival.poisson(rate, size=cfg.node_count)
    idx = np.nonzero(counts)[0]
    times = [np.sort(t0 + (t1 - t0) * cell.rng_arrival.random(counts[i])) for i in idx]
    return idx, times


def _slot_decisions(cell: _Cell, cands: List[int], remaining_subframes: int, backlog: int):
    cfg = cell.cfg
    nodes = [cell.nodes[i] for i in cands]
    if cfg.scheme in (1, 2, 3):
        # only the lifetime-aware schedulers read energy and deadlines
        expired = cell.t_now - cell.oldest[cands] > cfg.reporting_period
        for i, nd, q in zip(cands, nodes, expired.tolist()):
            nd.energy.remaining = float(cell.energy[i])
            nd.deadline_expired = q
    spread_cap = math.ceil(backlog / remaining_subframes)
    if cfg.scheme in (1, 3):
        channel = draw_channel(nodes, cfg.chunks, cfg.fading, cell.rng_channel)
        res = schedule(nodes, cfg.chunks, channel, cfg.scheduler_objective, cell.env,
                       cell.model, ed_est={nd.id: cell.ed_est[nd.id] for nd in nodes})
        return nodes, res.decisions, channel
    if cfg.scheme == 2:
        admitted = schedule_rr(nodes, cfg.chunks, cell.rule, cell.rr, mode="time",
                               max_admit=spread_cap)
        chosen = [nd for nd in nodes if admitted[nd.id].theta]
        alloc = schedule_lte(chosen, cfg.chunks, cell.params, cell.tbs, cfg.tti)
        decisions = {nd.id: IDLE for nd in nodes}
        start = 0
        for nd in chosen:
            y = alloc.counts.get(nd.id)
            if not y:
                continue
            decisions[nd.id] = ScheduleDecision(1, tuple(range(start, start + y)),
                                                float(alloc.power[nd.id]), alloc.tbs_index[nd.id])
            start += y
        return nodes, decisions, None
    if cfg.scheme == 4:
        return nodes, schedule_rr(nodes, cfg.chunks, cell.rule, cell.rr, max_admit=spread_cap), None
    if cfg.scheme == 5:
        channel = draw_channel(nodes, cfg.chunks, cfg.fading, cell.rng_channel)
        return nodes, schedule_channel_aware(nodes, cfg.chunks, cell.rule, channel, cell.env,
                                             max_admit=spread_cap), channel
    return nodes, schedule_sumrate_per_power(nodes, cfg.chunks, cell.rule), None


def _transmit(cell: _Cell, nodes, decisions, channel, t: float):
    """Apply a slot's grants; returns the ids that transmitted."""
    cfg = cell.cfg
    problems = check_decisions(decisions, cfg.chunks, cfg.max_clusters)
    sent = []
    for k, nd in enumerate(nodes):
        d = decisions[nd.id]
        if not d.theta:
            continue
        if d.power > nd.energy.max_power * (1 + 1e-9):
            problems.append(f"node {nd.id}: power {d.power:.4g} W above maximum")
        bits = nd.traffic.total_bits
        if cfg.scheme in LTE_SCHEMES:
            if cell.tbs(len(d.chunks), d.tbs_index) < bits:
                problems.append(f"node {nd.id}: block too small")
            cost = cfg.tti * (nd.energy.circuit_power + nd.energy.pa_inefficiency * d.power)
        else:
            _, rate, cost = grant_energy(nd, channel.column(k), d.chunks, cell.env, cell.model,
                                         power=d.power)
            if bits / rate > cfg.tti * (1 + 1e-9):
                problems.append(f"node {nd.id}: airtime {bits / rate:.4g} s above slot")
        i = nd.id
        if cell.debit(i, cost, t):
            cell.queue[i] -= 1
            cell.delivered_bits += bits
            cell.pending[i].pop(0)
            cell.oldest[i] = cell.pending[i][0] if cell.pending[i] else np.inf
            sent.append(i)
    for p in problems:
        cell.violations.append(f"t={t:.6f}: {p}")
    return sent


def run_replication(cfg: SimConfig, tbs: TbsTable = None) -> SimReport:
    """Simulate one cell until the drained fraction or the horizon is reached."""
    tbs = tbs or load_tbs()
    cell = _Cell(cfg, tbs)
    n = cfg.node_count
    stop_after = max(1, math.ceil(cfg.stop_drained_fraction * n))
    backlog_series = []
    t_prev = 0.0
    w = 0
    reserved_time = 0.0
    p_c = dbm_to_watts(cfg.circuit_power_dbm)
    digest = hashlib.sha256()
    while True:
        w += 1
        t_w = w * cfg.reservation_period
        if t_w > cfg.horizon:
            t_end = cfg.horizon
            break
        idx, times = _arrivals_in(cell, t_prev, t_w)
        if w <= DIGEST_WINDOWS:
            digest.update(idx.astype(np.int64).tobytes())
            for ts in times:
                digest.update(ts.tobytes())
        for i, ts in zip(idx, times):
            cell.arrivals += len(ts)
            for ta in ts:
                if not cell.alive[i]:
                    break
                cell.generated_bits += cfg.payload + cfg.overhead
                cell.reports[i] += 1
                if cell.debit(i, cfg.static_energy, float(ta)):
                    cell.queue[i] += 1
                    cell.pending[i].append(float(ta))
                    cell.oldest[i] = cell.pending[i][0]
        t_prev = t_w

        backlog_series.append(int(cell.queue.sum()))
        for s in range(cfg.reserved_subframes):
            cands = [int(i) for i in np.nonzero(cell.queue > 0)[0]]
            if not cands:
                break
            t = t_w + s * cfg.tti
            cell.t_now = t
            nodes, decisions, channel = _slot_decisions(cell, cands, cfg.reserved_subframes - s,
                                                        len(cands))
            _transmit(cell, nodes, decisions, channel, t)
        reserved_time += cfg.reserved_subframes * cfg.tti
        t_end_window = t_w + cfg.reserved_subframes * cfg.tti
        # one slot of grant listening for every node left waiting
        for i in np.nonzero(cell.queue > 0)[0]:
            cell.debit(int(i), cfg.tti * p_c, t_end_window)
        if (~cell.alive).sum() >= stop_after:
            t_end = t_end_window
            break
    per_report = np.where(cell.reports > 0, cell.consumed / np.maximum(cell.reports, 1),
                          cfg.static_energy + np.array([cell.ed_est[i] for i in range(n)]))
    predicted = cell.energy * cfg.reporting_period / per_report
    # full-battery lifetime at the observed cost per report; adding the
    # realized history instead would inflate the max by the run length
    projected = np.maximum(t_end, cell.e0 * cfg.reporting_period / per_report)
    drain = np.where(cell.alive, projected, cell.drain_time)
    return SimReport(
        config=cfg, drain_time=drain, drained=~cell.alive, predicted_lifetime=predicted,
        initial_energy=float(cell.e0.sum()), remaining_energy=float(cell.energy.sum()),
        consumed_energy=float(cell.consumed.sum()), generated_bits=cell.generated_bits,
        delivered_bits=cell.delivered_bits, reserved_time=reserved_time, end_time=t_end,
        windows=w, violations=len(cell.violations), violation_log=cell.violations[:100],
        backlog=np.asarray(backlog_series), arrivals=cell.arrivals,
        energy_per_report=per_report, arrival_digest=digest.hexdigest(),
        distance=np.array([nd.distance for nd in cell.nodes]))


# experiments --------------------------------------------------------------

def replication_seeds(master_seed: int, replications: int) -> List[int]:
    """Per-replication seeds; shared by every scheme for common random numbers."""
    ss = np.random.SeedSequence(master_seed)
    return [int(c.generate_state(1)[0]) for c in ss.spawn(replications)]


def _run_one(cfg: SimConfig) -> Dict[str, float]:
    return run_replication(cfg).metrics()


@dataclass
class ExperimentResult:
    config: SimConfig
    seeds: List[int]
    runs: List[Dict[str, float]]
    reports: List[SimReport] = field(default_factory=list)

    def values(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.runs])

    def summary(self) -> Dict[str, Dict[str, float]]:
        out = {}
        for key in self.runs[0]:
            x = self.values(key)
            out[key] = {"mean": float(x.mean()), "ci95": ci_halfwidth(x)}
        return out


def ci_halfwidth(x: np.ndarray, level: float = 0.95) -> float:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return 0.0
    sd = x.std(ddof=1)
    return float(stats.t.ppf(0.5 + level / 2, x.size - 1) * sd / math.sqrt(x.size))


def paired_ratio(a: np.ndarray, b: np.ndarray, level: float = 0.95):
    """Geometric-mean ratio of paired samples with a t-interval on the log scale.

    Returns ``(ratio, low, high)``.
    """
    lr = np.log(np.asarray(a, dtype=float)) - np.log(np.asarray(b, dtype=float))
    m = float(lr.mean())
    h = ci_halfwidth(lr, level)
    return math.exp(m), math.exp(m - h), math.exp(m + h)


def run_experiment(cfg: SimConfig, replications: int, workers: int = None,
                   keep_reports: bool = False) -> ExperimentResult:
    """Run ``replications`` independent cells; seeds derive from ``cfg.seed``.

    With ``keep_reports`` the full per-replication reports are returned too.
    """
    if replications < 1:
        raise ValueError("replications must be >= 1")
    seeds = replication_seeds(cfg.seed, replications)
    cfgs = [cfg.replace(seed=s) for s in seeds]
    workers = workers or os.cpu_count() or 1
    job = run_replication if keep_reports else _run_one
    if workers > 1 and replications > 1:
        with ProcessPoolExecutor(max_workers=min(workers, replications)) as ex:
            out = list(ex.map(job, cfgs))
    else:
        out = [job(c) for c in cfgs]
    if keep_reports:
        return ExperimentResult(cfg, seeds, [r.metrics() for r in out], out)
    return ExperimentResult(cfg, seeds, out)
