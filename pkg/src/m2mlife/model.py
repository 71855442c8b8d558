"""Domain types for machine nodes and the radio resources they share."""

import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    return 10.0 * math.log10(watts) + 30.0


def pathloss_db(distance: float) -> float:
    """Macro-cell pathloss ``128 + 38 log10(r / 1000)`` in dB, ``r`` in meters."""
    if not distance > 0:
        raise ValueError(f"distance must be positive, got {distance}")
    return 128.0 + 38.0 * math.log10(distance / 1000.0)


def pathloss_linear(distance: float) -> float:
    return db_to_linear(pathloss_db(distance))


@dataclass
class TrafficProfile:
    period: float
    payload: float
    overhead: float = 0.0
    priority: int = 0

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError("reporting period must be positive")
        if not self.payload > 0:
            raise ValueError("payload must be positive")
        if self.overhead < 0:
            raise ValueError("overhead must be non-negative")
        if self.priority not in (0, 1):
            raise ValueError("priority flag must be 0 or 1")

    @property
    def total_bits(self) -> float:
        return self.payload + self.overhead


@dataclass
class EnergyProfile:
    """Battery state and power-consumption parameters of one device.

    ``remaining`` is in joules, ``static`` is the per-report static energy,
    ``circuit_power`` and ``max_power`` are in watts and ``pa_inefficiency``
    is the inverse power-amplifier efficiency.
    """

    remaining: float
    static: float
    circuit_power: float
    pa_inefficiency: float = 1.0
    max_power: float = 0.2512
    capacity: Optional[float] = None

    def __post_init__(self):
        if self.capacity is None:
            self.capacity = self.remaining
        for name in ("remaining", "static", "circuit_power", "max_power"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.pa_inefficiency < 1:
            raise ValueError("pa_inefficiency must be >= 1")
        if self.remaining > self.capacity * (1 + 1e-12):
            raise ValueError("remaining energy exceeds capacity")


@dataclass(frozen=True)
class RadioEnvironment:
    noise_psd: float = dbm_to_watts(-174.0)
    interference_psd: float = 0.0
    antenna_gain: float = 1.0
    subcarrier_bw: float = 15e3
    subcarriers_per_chunk: int = 12
    slot: float = 1e-3
    max_clusters: int = 1
    chunk_interference: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if not self.noise_psd > 0:
            raise ValueError("noise PSD must be positive")
        if self.interference_psd < 0:
            raise ValueError("interference PSD must be non-negative")
        if self.subcarriers_per_chunk < 1 or self.max_clusters < 1:
            raise ValueError("subcarriers_per_chunk and max_clusters must be >= 1")
        if not self.slot > 0:
            raise ValueError("slot length must be positive")

    def interference(self, chunk: int) -> float:
        if self.chunk_interference is not None:
            return self.chunk_interference[chunk]
        return self.interference_psd

    def chunk_noise(self, chunk: int) -> float:
        """Noise-plus-interference power over one chunk, ``[N0 + I_j] M w``."""
        return ((self.noise_psd + self.interference(chunk))
                * self.subcarriers_per_chunk * self.subcarrier_bw)


@dataclass
class NodeState:
    id: int
    traffic: TrafficProfile
    energy: EnergyProfile
    distance: float
    pathloss: Optional[float] = None
    queue: int = 0
    deadline_expired: bool = False

    def __post_init__(self):
        if self.pathloss is None:
            self.pathloss = pathloss_linear(self.distance)
        if self.pathloss < 1:
            raise ValueError("pathloss is a loss and must be >= 1")
        if self.queue < 0:
            raise ValueError("queue must be non-negative")

    @property
    def priority(self) -> int:
        return 1 if (self.traffic.priority or self.deadline_expired) else 0


@dataclass
class ChannelRealization:
    """Per-(chunk, node) linear channel gains for one slot.

    Column ``k`` belongs to the ``k``-th node of the list the realization was
    drawn for. Gains exclude the antenna gain, which enters once through the
    power factor.
    """

    gains: np.ndarray

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=float)
        if self.gains.ndim != 2:
            raise ValueError("gains must be a (chunks, nodes) matrix")
        if not np.all(self.gains > 0):
            raise ValueError("channel gains must be positive")

    @property
    def n_chunks(self) -> int:
        return self.gains.shape[0]

    def column(self, k: int) -> np.ndarray:
        return self.gains[:, k]


@dataclass(frozen=True)
class ScheduleDecision:
    theta: int = 0
    chunks: Tuple[int, ...] = ()
    power: float = 0.0
    tbs_index: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "chunks", tuple(sorted(self.chunks)))
        if bool(self.theta) != bool(self.chunks):
            raise ValueError("theta must be 1 exactly when chunks are granted")


IDLE = ScheduleDecision()


class ResourceGrid:
    """Allocation map of one slot's chunks; each chunk goes to at most one node."""

    def __init__(self, n_chunks: int, max_clusters: int = 1):
        if n_chunks < 1:
            raise ValueError("grid needs at least one chunk")
        self.n_chunks = n_chunks
        self.max_clusters = max_clusters
        self.owner: List[Optional[int]] = [None] * n_chunks

    def free(self) -> List[int]:
        return [j for j, o in enumerate(self.owner) if o is None]

    def allocate(self, chunk: int, node: int):
        if self.owner[chunk] is not None:
            raise ValueError(f"chunk {chunk} already allocated to node {self.owner[chunk]}")
        self.owner[chunk] = node

    def release(self, chunk: int):
        self.owner[chunk] = None

    def chunks_of(self, node: int) -> List[int]:
        return [j for j, o in enumerate(self.owner) if o == node]


def count_runs(chunks: Iterable[int]) -> int:
    """Number of maximal runs of adjacent indices."""
    s = sorted(chunks)
    if not s:
        return 0
    return 1 + sum(1 for a, b in zip(s, s[1:]) if b != a + 1)


def effective_channel_gain(gains: Sequence[float], chunks: Iterable[int],
                           env: RadioEnvironment) -> float:
    """Harmonic-mean gain-to-noise ratio over a chunk set, in 1/W."""
    chunks = list(chunks)
    if not chunks:
        raise ValueError("effective gain of an empty chunk set")
    return len(chunks) / sum(env.chunk_noise(j) / gains[j] for j in chunks)


def draw_channel(nodes: Sequence[NodeState], n_chunks: int, fading: str,
                 rng: np.random.Generator) -> ChannelRealization:
    """Gains ``X / gamma_i`` with ``X`` unit-mean exponential (block Rayleigh) or 1."""
    inv_loss = np.array([1.0 / n.pathloss for n in nodes])
    if fading == "none":
        gains = np.tile(inv_loss, (n_chunks, 1))
    elif fading == "rayleigh_block":
        gains = rng.exponential(1.0, size=(n_chunks, len(nodes))) * inv_loss
        # exponential draws of exactly 0 are possible in principle
        np.maximum(gains, 1e-300, out=gains)
    else:
        raise ValueError(f"unknown fading mode {fading!r}")
    return ChannelRealization(gains)


def place_nodes(n: int, radius: float, rng: np.random.Generator,
                min_distance: float = 35.0) -> np.ndarray:
    """Distances of ``n`` points uniform over an annulus ``[min_distance, radius]``."""
    u = rng.random(n)
    return np.sqrt(min_distance ** 2 + u * (radius ** 2 - min_distance ** 2))


def check_decisions(decisions: Dict[int, ScheduleDecision], n_chunks: int,
                    max_clusters: int = 1) -> List[str]:
    """Every broken grid constraint in a slot's decisions, one message each."""
    problems = []
    seen: Dict[int, int] = {}
    total = 0
    for node, d in decisions.items():
        if not d.theta:
            continue
        total += len(d.chunks)
        for j in d.chunks:
            if not 0 <= j < n_chunks:
                problems.append(f"node {node}: chunk {j} outside grid")
            if j in seen:
                problems.append(f"chunk {j} granted to nodes {seen[j]} and {node}")
            seen[j] = node
        if count_runs(d.chunks) > max_clusters:
            problems.append(f"node {node}: {count_runs(d.chunks)} runs > {max_clusters}")
    if total > n_chunks:
        problems.append(f"{total} chunks granted out of {n_chunks}")
    return problems
