"""Individual and network battery-lifetime measures."""

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Union

import numpy as np

from .model import EnergyProfile, NodeState, ScheduleDecision, TrafficProfile

DEFINITIONS = ("SIL", "LIL", "AIL", "SLIL")


@dataclass
class LifetimeVector:
    values: np.ndarray
    definition: str = "SIL"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.definition not in DEFINITIONS:
            raise ValueError(f"unknown lifetime definition {self.definition!r}")
        if np.any(self.values < 0):
            raise ValueError("lifetimes must be non-negative")

    def network(self) -> float:
        return network_lifetime(self)

    def sorted(self) -> np.ndarray:
        return np.sort(self.values)


class SlotOutcome(NamedTuple):
    lifetime: float
    energy_after: float
    drained: bool


def expected_lifetime(energy: EnergyProfile, traffic: TrafficProfile, e_tx: float) -> float:
    """Remaining energy over per-report energy, times the reporting period."""
    per_report = energy.static + e_tx
    if per_report <= 0:
        raise ZeroDivisionError("per-report energy must be positive")
    return energy.remaining * traffic.period / per_report


def transmission_energy(power: float, rate: float, bits: float,
                        circuit_power: float, pa_inefficiency: float = 1.0) -> float:
    """Energy to push ``bits`` at ``rate`` with transmit power ``power``."""
    if not rate > 0:
        raise ZeroDivisionError("transmission rate must be positive")
    return (circuit_power + pa_inefficiency * power) * bits / rate


def slot_lifetime(remaining: float, period: float, static: float, circuit_power: float,
                  slot: float, theta: int, e_tx: float, ed_est: float) -> float:
    """Expected lifetime at the end of a slot, clamped at zero.

    A scheduled node pays ``e_tx`` and re-enters the reporting cycle; an
    unscheduled one pays idle listening for the slot and still owes the
    expected transmission energy ``ed_est``.
    """
    if theta:
        num = remaining - e_tx
        den = static + e_tx
    else:
        num = remaining - slot * circuit_power - ed_est
        den = static + ed_est
    if num <= 0:
        return 0.0
    return num * period / den


def post_slot_lifetime(node: NodeState, decision: ScheduleDecision, rate: float,
                       slot: float, ed_est: float) -> SlotOutcome:
    e = node.energy
    bits = node.traffic.total_bits
    if decision.theta:
        if not rate > 0:
            raise ValueError("a scheduled node needs a positive rate")
        if bits / rate > slot * (1 + 1e-9):
            raise ValueError(f"airtime {bits / rate:.3g} s exceeds slot {slot:.3g} s")
        e_tx = transmission_energy(decision.power, rate, bits, e.circuit_power,
                                   e.pa_inefficiency)
        after = e.remaining - e_tx
    else:
        e_tx = 0.0
        after = e.remaining - slot * e.circuit_power
    life = slot_lifetime(e.remaining, node.traffic.period, e.static, e.circuit_power,
                         slot, decision.theta, e_tx, ed_est)
    drained = after <= 0 or life == 0.0
    return SlotOutcome(life, max(after, 0.0), drained)


def network_lifetime(v: Union[LifetimeVector, Sequence[float]], definition: str = None) -> float:
    """Reduce individual lifetimes to one network lifetime.

    SIL is the minimum, LIL the maximum, AIL the mean and SLIL the sum of
    natural logs (``-inf`` once any node is at zero).
    """
    if isinstance(v, LifetimeVector):
        values, definition = v.values, definition or v.definition
    else:
        values = np.asarray(v, dtype=float)
        definition = definition or "SIL"
    if values.size == 0:
        raise ValueError("empty lifetime vector")
    if definition == "SIL":
        return float(values.min())
    if definition == "LIL":
        return float(values.max())
    if definition == "AIL":
        return float(values.mean())
    if definition == "SLIL":
        if np.any(values <= 0):
            return -math.inf
        return float(np.log(values).sum())
    raise ValueError(f"unknown lifetime definition {definition!r}")


def jain_index(values) -> float:
    """``(sum L)^2 / (n sum L^2)``, in ``[1/n, 1]``."""
    if isinstance(values, LifetimeVector):
        values = values.values
    x = np.asarray(values, dtype=float)
    sq = float(np.dot(x, x))
    if sq == 0:
        raise ValueError("Jain index of an all-zero vector")
    return float(x.sum() ** 2 / (x.size * sq))


def lex_compare(a: Sequence[float], b: Sequence[float], rtol: float = 1e-12) -> int:
    """Compare two lifetime vectors after sorting ascending; returns -1, 0 or 1."""
    for x, y in zip(sorted(a), sorted(b)):
        if abs(x - y) <= rtol * max(abs(x), abs(y), 1e-300):
            continue
        return -1 if x < y else 1
    return 0
