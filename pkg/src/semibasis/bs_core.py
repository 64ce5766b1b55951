"""Black-Scholes building blocks: normal CDF, European prices and deltas,
and the two coordinate changes used by the American-put machinery.

All array-level helpers (``bs_price``, ``bs_delta``) broadcast over numpy
inputs; the ``OptionSpec``/``MarketState`` wrappers are the scalar surface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import ndtr

TRADING_DAYS = 253


class Kind(str, Enum):
    CALL = "call"
    PUT = "put"


class Style(str, Enum):
    EUROPEAN = "european"
    AMERICAN = "american"


@dataclass(frozen=True)
class OptionSpec:
    kind: Kind
    style: Style
    K: float
    T: float

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "style", Style(self.style))
        if not self.K > 0:
            raise ValueError(f"strike must be positive, got {self.K}")
        if not self.T > 0:
            raise ValueError(f"expiry must be positive, got {self.T}")


@dataclass(frozen=True)
class MarketState:
    S: float
    t: float = 0.0
    r: float = 0.0
    d: float = 0.0
    sigma: float = 0.2

    def __post_init__(self):
        if not self.S > 0:
            raise ValueError(f"spot must be positive, got {self.S}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.r < 0 or self.d < 0:
            raise ValueError("rates must be non-negative")
        if self.t < 0:
            raise ValueError("t must be non-negative")

    def tau(self, spec: OptionSpec) -> float:
        if self.t > spec.T:
            raise ValueError(f"t={self.t} lies beyond expiry T={spec.T}")
        return spec.T - self.t


@dataclass(frozen=True)
class BmCoords:
    """Coordinates under which GBM becomes standard Brownian motion."""

    rho: float
    theta: float
    u: float
    z_bm: float


@dataclass(frozen=True)
class SplineFeatures:
    u: float
    z: float
    w: float


def norm_cdf(x):
    """Standard normal CDF; scalar or array. Rejects non-finite input."""
    if np.ndim(x) == 0:
        xf = float(x)
        if not math.isfinite(xf):
            raise ValueError(f"norm_cdf needs a finite argument, got {x!r}")
        return 0.5 * math.erfc(-xf / math.sqrt(2.0))
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("norm_cdf needs finite arguments")
    return ndtr(arr)


def d1_d2(S, K, v, r, d, sigma):
    """Return (d1, d2) for horizon ``v`` years."""
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise ValueError("d1_d2 requires v > 0")
    sv = sigma * np.sqrt(v)
    d1 = (np.log(S / K) + (r - d + 0.5 * sigma * sigma) * v) / sv
    d2 = d1 - sv
    if d1.ndim == 0:
        return float(d1), float(d2)
    return d1, d2


def _cdf(x):
    # Fast path for internal use: ndtr saturates cleanly at +-inf.
    return ndtr(x)


def bs_price(kind, S, K, tau, r, d, sigma):
    """European price, broadcasting over array inputs."""
    d1, d2 = d1_d2(S, K, tau, r, d, sigma)
    dq = np.exp(-d * np.asarray(tau))
    dr = np.exp(-r * np.asarray(tau))
    if Kind(kind) is Kind.CALL:
        out = S * dq * _cdf(d1) - K * dr * _cdf(d2)
    else:
        out = K * dr * _cdf(-d2) - S * dq * _cdf(-d1)
    return np.maximum(out, 0.0) if np.ndim(out) else max(float(out), 0.0)


def bs_delta(kind, S, K, tau, r, d, sigma):
    d1, _ = d1_d2(S, K, tau, r, d, sigma)
    dq = np.exp(-d * np.asarray(tau))
    call = dq * _cdf(d1)
    out = call if Kind(kind) is Kind.CALL else call - dq
    return out if np.ndim(out) else float(out)


def _check_live(spec: OptionSpec, mkt: MarketState) -> float:
    tau = mkt.tau(spec)
    if tau <= 0:
        raise ValueError("option is at expiry; price it as its payoff")
    return tau


def euro_price(spec: OptionSpec, mkt: MarketState) -> float:
    tau = _check_live(spec, mkt)
    return bs_price(spec.kind, mkt.S, spec.K, tau, mkt.r, mkt.d, mkt.sigma)


def euro_delta(spec: OptionSpec, mkt: MarketState) -> float:
    tau = _check_live(spec, mkt)
    return bs_delta(spec.kind, mkt.S, spec.K, tau, mkt.r, mkt.d, mkt.sigma)


def drift_centering(r, d, sigma):
    """The factor rho - theta*rho - 1/2 = (r - d)/sigma^2 - 1/2."""
    return (r - d) / (sigma * sigma) - 0.5


def to_bm_coords(spec: OptionSpec, mkt: MarketState) -> BmCoords:
    tau = mkt.tau(spec)
    if mkt.r == 0:
        if mkt.d > 0:
            raise ValueError("theta = d/r is undefined for r = 0 with d > 0")
        theta = 0.0
    else:
        theta = mkt.d / mkt.r
    s2 = mkt.sigma**2
    rho = mkt.r / s2
    u = -s2 * tau
    z_bm = math.log(mkt.S / spec.K) - (rho - theta * rho - 0.5) * u
    return BmCoords(rho=rho, theta=theta, u=u, z_bm=z_bm)


def spline_features_arrays(S, K, tau, r, d, sigma):
    """Vectorised (u, z, w) features; ``tau`` must be strictly positive."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("w is undefined at u = 0 (tau must be > 0)")
    u = -(sigma * sigma) * tau
    z = np.log(S / K)
    w = (z - drift_centering(r, d, sigma) * u) / np.sqrt(-u)
    return u, z, w


def spline_features(spec: OptionSpec, mkt: MarketState) -> SplineFeatures:
    tau = mkt.tau(spec)
    u, z, w = spline_features_arrays(mkt.S, spec.K, tau, mkt.r, mkt.d, mkt.sigma)
    return SplineFeatures(u=float(u), z=float(z), w=float(w))
