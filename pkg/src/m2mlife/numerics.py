"""Scalar kernels shared by the schedulers.

LambertW on the principal branch and the Shannon-gap rate model. A
golden-section minimizer serves as an independent numerical check.
"""

import math
from dataclasses import dataclass
from typing import Callable

INV_E = math.exp(-1.0)
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class RateModel:
    """Shannon rate with an SNR gap.

    ``w`` is the subcarrier bandwidth in Hz and ``gamma_mcs`` the linear gap
    between capacity and the modulation/coding scheme in use.
    """

    w: float = 15e3
    gamma_mcs: float = 1.0

    def __post_init__(self):
        if not self.w > 0:
            raise ValueError(f"subcarrier bandwidth must be positive, got {self.w}")
        if not self.gamma_mcs >= 1:
            raise ValueError(f"gamma_mcs must be >= 1, got {self.gamma_mcs}")


def lambert_w(x: float, tol: float = 1e-12, max_iter: int = 50) -> float:
    """Principal branch of the LambertW function, ``W(x) * exp(W(x)) = x``.

    Halley iteration started from a branch-point series near ``-1/e`` and a
    logarithmic guess elsewhere.
    """
    x = float(x)
    if math.isnan(x):
        raise ValueError("lambert_w of NaN")
    if x < -INV_E:
        if x > -INV_E - 1e-15:
            return -1.0
        raise ValueError(f"lambert_w domain is x >= -1/e, got {x!r}")
    if x == 0.0:
        return 0.0
    if x == -INV_E:
        return -1.0
    if math.isinf(x):
        return math.inf

    if x < -0.32:
        p = math.sqrt(2.0 * (math.e * x + 1.0))
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    elif x <= 3.0:
        w = math.log1p(x)
        if x > 0.5:
            w *= 0.75
    else:
        l1 = math.log(x)
        l2 = math.log(l1)
        w = l1 - l2 + l2 / l1

    for _ in range(max_iter):
        ew = math.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        if wp1 == 0.0:
            break
        denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
        if denom == 0.0:
            break
        step = f / denom
        w_new = w - step
        if w_new < -1.0:
            w_new = -1.0
        if abs(w_new - w) <= tol * (1.0 + abs(w_new)):
            return w_new
        w = w_new
    return w


def snr_for_rate(x: float, model: RateModel) -> float:
    """Linear SNR needed to carry ``x`` bit/s on one subcarrier."""
    if x < 0:
        raise ValueError(f"rate must be non-negative, got {x}")
    return math.expm1(x / model.w * math.log(2.0)) * model.gamma_mcs


def rate_for_snr(eta: float, model: RateModel) -> float:
    """Bit/s on one subcarrier at linear SNR ``eta``; inverse of :func:`snr_for_rate`."""
    if eta < 0:
        raise ValueError(f"SNR must be non-negative, got {eta}")
    return model.w * math.log1p(eta / model.gamma_mcs) / math.log(2.0)


def minimize_unimodal(f: Callable[[float], float], lo: float, hi: float,
                      tol: float = 1e-8) -> float:
    """Golden-section search for the minimizer of a unimodal ``f`` on ``[lo, hi]``."""
    if not lo < hi:
        raise ValueError(f"invalid interval [{lo}, {hi}]")
    if not tol > 0:
        raise ValueError("tol must be positive")
    a, b = float(lo), float(hi)
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return (a + b) / 2.0
