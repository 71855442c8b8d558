"""Time-domain lifetime scheduling for a single narrow-band carrier.

Each node transmits alone on the whole carrier for ``tau_i`` seconds. With
``c_i = (N0 + I) w / (h_i G)`` the power needed for ``D_i`` bits is
``c_i S(D_i / tau_i)`` and the node's inverse lifetime is

    z_i(tau_i) = [E_s + (P_c + xi c_i S(D_i / tau_i)) tau_i] / (E_i T_i),

convex in ``tau_i``. The scheduler minimizes ``max_i z_i`` subject to
``sum tau_i <= tau`` and ``tau_i >= tau_i^m``.
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .model import NodeState, RadioEnvironment
from .numerics import RateModel, lambert_w, minimize_unimodal, snr_for_rate

LN2 = math.log(2.0)


class InfeasibleSlot(ValueError):
    """Minimum airtimes do not fit in the slot."""

    def __init__(self, deficit: float):
        super().__init__(f"minimum airtimes exceed the slot by {deficit:.6g} s")
        self.deficit = deficit


@dataclass
class TimeAllocation:
    airtime: np.ndarray
    level: float
    mu: float
    lambdas: np.ndarray

    @property
    def dual_ratio(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.lambdas > 0, self.mu / self.lambdas, 0.0)


def _gain(node: NodeState, gain: Optional[float]) -> float:
    return 1.0 / node.pathloss if gain is None else gain


def _noise_over_gain(node, env, model, gain):
    return (env.noise_psd + env.interference_psd) * model.w / (_gain(node, gain) * env.antenna_gain)


def required_power(node: NodeState, airtime: float, env: RadioEnvironment,
                   model: RateModel, gain: float = None) -> float:
    return _noise_over_gain(node, env, model, gain) * snr_for_rate(
        node.traffic.total_bits / airtime, model)


def inverse_lifetime(node: NodeState, airtime: float, env: RadioEnvironment,
                     model: RateModel, gain: float = None) -> float:
    e = node.energy
    p = required_power(node, airtime, env, model, gain)
    used = e.static + (e.circuit_power + e.pa_inefficiency * p) * airtime
    return used / (e.remaining * node.traffic.period)


def min_airtime(node: NodeState, env: RadioEnvironment, model: RateModel,
                gain: float = None) -> float:
    """Airtime needed at maximum power."""
    snr = node.energy.max_power / _noise_over_gain(node, env, model, gain)
    return node.traffic.total_bits / (model.w * math.log1p(snr / model.gamma_mcs) / LN2)


def closed_form_airtime(node: NodeState, dual_ratio: float, env: RadioEnvironment,
                        model: RateModel, gain: float = None) -> float:
    """LambertW stationary point of the airtime-priced inverse lifetime.

    ``dual_ratio`` is the price of airtime relative to the node's lifetime
    weight; zero gives the node's own energy-optimal airtime.
    """
    if model.gamma_mcs != 1.0:
        raise ValueError("closed form holds for gamma_mcs = 1 only")
    if dual_ratio < 0:
        raise ValueError("dual ratio must be non-negative")
    e = node.energy
    c = _noise_over_gain(node, env, model, gain)
    price = node.traffic.period * e.remaining * dual_ratio
    a = (e.circuit_power + price) / (e.pa_inefficiency * c) - 1.0
    w0 = lambert_w(a / math.e)
    opt = LN2 * node.traffic.total_bits / (model.w * (1.0 + w0))
    return max(min_airtime(node, env, model, gain), opt)


def _slope(node, t, env, model, gain):
    # analytic derivative of z(t)
    e = node.energy
    c = _noise_over_gain(node, env, model, gain)
    x = node.traffic.total_bits / t * LN2 / model.w
    g = model.gamma_mcs
    d_energy = e.circuit_power + e.pa_inefficiency * c * g * (math.expm1(x) - x * math.exp(x))
    return d_energy / (e.remaining * node.traffic.period)


def schedule_narrowband(nodes: Sequence[NodeState], tau: float, env: RadioEnvironment,
                        model: RateModel, gains: Sequence[float] = None,
                        rtol: float = 1e-9) -> TimeAllocation:
    """Max-min lifetime airtime split by bisection on the common inverse-lifetime level."""
    n = len(nodes)
    if n == 0:
        raise ValueError("no nodes to schedule")
    gains = [None] * n if gains is None else list(gains)
    t_min = np.array([min_airtime(nd, env, model, g) for nd, g in zip(nodes, gains)])
    if t_min.sum() > tau * (1 + rtol):
        raise InfeasibleSlot(float(t_min.sum() - tau))
    t_unc = np.array([closed_form_airtime(nd, 0.0, env, model, g) if model.gamma_mcs == 1.0
                      else _numeric_unconstrained(nd, env, model, g, tm)
                      for nd, g, tm in zip(nodes, gains, t_min)])

    def z(k, t):
        return inverse_lifetime(nodes[k], t, env, model, gains[k])

    if t_unc.sum() <= tau:
        airtime = t_unc
        level = max(z(k, airtime[k]) for k in range(n))
        return TimeAllocation(airtime, level, 0.0, np.zeros(n))

    z_top = np.array([z(k, t_min[k]) for k in range(n)])
    z_bot = np.array([z(k, t_unc[k]) for k in range(n)])

    def airtimes(level):
        out = np.empty(n)
        for k in range(n):
            if z_top[k] <= level:
                out[k] = t_min[k]
            elif z_bot[k] >= level:
                out[k] = t_unc[k]
            else:
                out[k] = brentq(lambda t: z(k, t) - level, t_min[k], t_unc[k],
                                xtol=1e-15, rtol=1e-14)
        return out

    lo, hi = float(z_bot.max()), float(z_top.max())
    airtime = airtimes(hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        trial = airtimes(mid)
        if trial.sum() <= tau:
            hi, airtime = mid, trial
        else:
            lo = mid
        if tau - airtime.sum() <= rtol * tau or hi - lo <= 1e-15 * hi:
            break
    level = max(z(k, airtime[k]) for k in range(n))
    return TimeAllocation(airtime, level, *_duals(nodes, airtime, t_min, t_unc, env, model, gains))


def _numeric_unconstrained(node, env, model, gain, t_min):
    hi = t_min * 1e4
    return max(t_min, minimize_unimodal(lambda t: inverse_lifetime(node, t, env, model, gain),
                                        t_min, hi, tol=t_min * 1e-10))


def _duals(nodes, airtime, t_min, t_unc, env, model, gains):
    """``(mu, lambdas)`` from stationarity ``lambda_i z_i' + mu = 0``, ``sum lambda = 1``."""
    slopes = []
    for k, nd in enumerate(nodes):
        interior = airtime[k] > t_min[k] * (1 + 1e-12) and airtime[k] < t_unc[k] * (1 - 1e-12)
        slopes.append(-_slope(nd, airtime[k], env, model, gains[k]) if interior else 0.0)
    inv = [1.0 / s for s in slopes if s > 0]
    if not inv:
        return 0.0, np.zeros(len(nodes))
    mu = 1.0 / sum(inv)
    lambdas = np.array([mu / s if s > 0 else 0.0 for s in slopes])
    return mu, lambdas
