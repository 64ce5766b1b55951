"""Cox-Ross-Rubinstein lattice pricing, exercise-boundary extraction and the
early-exercise-premium integral for American puts.

The lattice is the ground-truth oracle for the spline pricer and the hedging
experiments, so the batch routine ``crr_batch`` prices many contracts at once
(one row per contract) with a shared step count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bs_core import (
    BmCoords,
    Kind,
    MarketState,
    OptionSpec,
    Style,
    _cdf,
    drift_centering,
    euro_price,
)


class LatticeError(ValueError):
    """Raised when the tree parameters admit arbitrage (p* outside (0, 1))."""


@dataclass(frozen=True)
class Lattice:
    n_steps: int
    up_factor: float
    down_factor: float
    p_star: float
    dt: float


def build_lattice(tau: float, r: float, d: float, sigma: float, n_steps: int) -> Lattice:
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    dt = tau / n_steps
    up = math.exp(sigma * math.sqrt(dt))
    down = 1.0 / up
    p = (math.exp((r - d) * dt) - down) / (up - down)
    if not 0.0 < p < 1.0:
        raise LatticeError(f"risk-neutral probability {p:.6g} outside (0, 1); use more steps")
    return Lattice(n_steps, up, down, p, dt)


def _payoff(kind: Kind, S, K):
    return np.maximum(S - K, 0.0) if kind is Kind.CALL else np.maximum(K - S, 0.0)


def crr_batch(kind, american, S, K, tau, r, d, sigma, n_steps, chunk=4096):
    """Price and delta for a batch of contracts on CRR trees of ``n_steps``.

    S, K, tau, r, d, sigma broadcast to a common 1-d shape. Returns
    ``(price, delta)`` arrays; delta is the step-1 difference quotient.
    """
    kind = Kind(kind)
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    S, K, tau, r, d, sigma = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (S, K, tau, r, d, sigma))
    S, K, tau, r, d, sigma = np.broadcast_arrays(S, K, tau, r, d, sigma)
    if np.any(tau <= 0):
        raise ValueError("lattice pricing needs tau > 0")
    price = np.empty(S.shape)
    delta = np.empty(S.shape)
    for lo in range(0, S.size, chunk):
        sl = slice(lo, lo + chunk)
        price[sl], delta[sl] = _crr_chunk(
            kind, american, S[sl], K[sl], tau[sl], r[sl], d[sl], sigma[sl], n_steps
        )
    return price, delta


def _crr_chunk(kind, american, S, K, tau, r, d, sigma, n):
    dt = tau / n
    step = sigma * np.sqrt(dt)
    up = np.exp(step)
    down = 1.0 / up
    p = (np.exp((r - d) * dt) - down) / (up - down)
    if np.any((p <= 0) | (p >= 1)):
        raise LatticeError("risk-neutral probability outside (0, 1); use more steps")
    disc = np.exp(-r * dt)[:, None]
    pu = (disc[:, 0] * p)[:, None]
    pd = (disc[:, 0] * (1.0 - p))[:, None]
    logS = np.log(S)[:, None]
    Kc = K[:, None]
    stepc = step[:, None]

    j = np.arange(n + 1)
    assets = np.exp(logS + stepc * (2 * j - n))
    values = _payoff(kind, assets, Kc)
    upc = up[:, None]
    v1 = None
    for i in range(n - 1, -1, -1):
        values = pu * values[:, 1:] + pd * values[:, :-1]
        if american:
            # node (i, j) sits one up-move above node (i + 1, j)
            assets = assets[:, :-1] * upc
            np.maximum(values, _payoff(kind, assets, Kc), out=values)
        if i == 1:
            v1 = values.copy()
    if v1 is None:
        # one-step tree: step-1 values are the payoffs
        v1 = _payoff(kind, np.exp(logS + stepc * np.array([-1.0, 1.0])), Kc)
    s_up = S * up
    s_dn = S * down
    delta = (v1[:, 1] - v1[:, 0]) / (s_up - s_dn)
    return values[:, 0], delta


def lattice_price(spec: OptionSpec, mkt: MarketState, n_steps: int) -> float:
    tau = mkt.tau(spec)
    if tau <= 0:
        raise ValueError("lattice pricing needs t < T")
    build_lattice(tau, mkt.r, mkt.d, mkt.sigma, n_steps)  # validates p*
    price, _ = crr_batch(
        spec.kind, spec.style is Style.AMERICAN, mkt.S, spec.K, tau, mkt.r, mkt.d, mkt.sigma, n_steps
    )
    return float(price[0])


def lattice_delta(spec: OptionSpec, mkt: MarketState, n_steps: int) -> float:
    tau = mkt.tau(spec)
    if tau <= 0:
        raise ValueError("lattice pricing needs t < T")
    build_lattice(tau, mkt.r, mkt.d, mkt.sigma, n_steps)
    _, delta = crr_batch(
        spec.kind, spec.style is Style.AMERICAN, mkt.S, spec.K, tau, mkt.r, mkt.d, mkt.sigma, n_steps
    )
    return float(delta[0])


@dataclass(frozen=True)
class ExerciseBoundary:
    """Put exercise boundary sampled on the lattice time grid.

    ``u`` runs from sigma^2 (t - T) up to 0; ``zbar`` is the boundary in the
    Brownian coordinates, ``level`` the matching asset price.
    """

    u: np.ndarray = field(default_factory=lambda: np.empty(0))
    zbar: np.ndarray = field(default_factory=lambda: np.empty(0))
    level: np.ndarray = field(default_factory=lambda: np.empty(0))
    times: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def empty(self) -> bool:
        return self.u.size == 0

    def zbar_at(self, s):
        s = np.asarray(s, dtype=float)
        lo, hi = self.u[0], self.u[-1]
        tol = 1e-12 * max(1.0, abs(lo))
        if np.any(s < lo - tol) or np.any(s > hi + tol):
            raise ValueError(f"boundary covers u in [{lo:.6g}, {hi:.6g}] only")
        return np.interp(s, self.u, self.zbar)

    def level_at(self, t):
        """Boundary asset level at calendar time(s) ``t`` (linear in time)."""
        return np.interp(t, self.times, self.level)


def _perpetual_put_boundary(K, r, d, sigma):
    s2 = sigma * sigma
    b = r - d - 0.5 * s2
    lam = (-b - math.sqrt(b * b + 2.0 * s2 * r)) / s2
    return K * lam / (lam - 1.0)


def extract_boundary(spec: OptionSpec, mkt: MarketState, n_steps: int) -> ExerciseBoundary:
    """Largest exercise node per time slice of an American put lattice.

    The boundary depends on time-to-expiry only, so the tree is started
    ``m`` steps earlier than ``t`` (same dt): every slice from ``t`` onwards
    then spans the region where the boundary can lie.
    """
    if spec.kind is not Kind.PUT or spec.style is not Style.AMERICAN:
        raise ValueError("extract_boundary handles American puts only")
    tau = mkt.tau(spec)
    if tau <= 0:
        raise ValueError("boundary extraction needs t < T")
    K, r, d, sigma = spec.K, mkt.r, mkt.d, mkt.sigma
    if r <= 0:
        return ExerciseBoundary()
    lat = build_lattice(tau, r, d, sigma, n_steps)
    step = sigma * math.sqrt(lat.dt)
    floor = _perpetual_put_boundary(K, r, d, sigma)
    m = int(math.ceil(math.log(K / floor) / step)) + 2
    N = n_steps + m
    disc = math.exp(-r * lat.dt)
    pu, pd = disc * lat.p_star, disc * (1.0 - lat.p_star)
    logK = math.log(K)

    levels = np.full(n_steps + 1, np.nan)
    j = np.arange(N + 1)
    S_N = np.exp(logK + step * (2 * j - N))
    values = np.maximum(K - S_N, 0.0)
    itm = np.flatnonzero(S_N < K)
    if itm.size:
        levels[n_steps] = S_N[itm[-1]]
    for i in range(N - 1, m - 1, -1):
        cont = pu * values[1:] + pd * values[:-1]
        Si = np.exp(logK + step * (2 * j[: i + 1] - i))
        ex = K - Si
        hit = (ex > 0) & (ex >= cont)
        values = np.maximum(cont, ex)
        idx = np.flatnonzero(hit)
        if idx.size:
            levels[i - m] = Si[idx[-1]]
    ok = ~np.isnan(levels)
    if not ok.any():
        return ExerciseBoundary()
    k = np.flatnonzero(ok)
    # Slices alternate node parity; each largest exercise node sits below the
    # (nondecreasing) true boundary, so the running max is a tighter lower bound.
    levels[k] = np.maximum.accumulate(levels[k])
    times = mkt.t + k * lat.dt
    u = sigma * sigma * (times - spec.T)
    u[-1] = min(u[-1], 0.0)
    if k[-1] == n_steps:
        u[-1] = 0.0
    zbar = np.log(levels[k] / K) - drift_centering(r, d, sigma) * u
    return ExerciseBoundary(u=u, zbar=zbar, level=levels[k], times=times)


_GL = {n: np.polynomial.legendre.leggauss(n) for n in (10, 21)}


def adaptive_gauss_legendre(f, a: float, b: float, rtol: float = 1e-6, breaks=None, max_rounds: int = 40) -> float:
    """Integrate a vectorised ``f`` over [a, b].

    Panels start at ``breaks`` (kinks of the integrand, if known); every panel
    whose 10- and 21-point Gauss-Legendre estimates disagree beyond its share
    of the tolerance is bisected, all panels of a round in one call to ``f``.
    """
    if b == a:
        return 0.0
    edges = np.unique(np.clip(np.r_[a, [] if breaks is None else breaks, b], a, b))
    lo, hi = edges[:-1], edges[1:]

    def rule(n, lo, hi):
        x, w = _GL[n]
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        vals = f((mid[:, None] + half[:, None] * x[None, :]).ravel()).reshape(lo.size, n)
        return half * (vals @ w)

    atol = None
    total = 0.0
    for round_ in range(max_rounds + 1):
        coarse, fine = rule(10, lo, hi), rule(21, lo, hi)
        if atol is None:
            atol = rtol * max(abs(fine.sum()), 1e-300)
        share = atol * (hi - lo) / (b - a)
        ok = np.abs(fine - coarse) <= np.maximum(share, rtol * np.abs(fine))
        if round_ == max_rounds:
            ok[:] = True
        total += fine[ok].sum()
        if ok.all():
            break
        lo, hi = lo[~ok], hi[~ok]
        mid = 0.5 * (lo + hi)
        lo, hi = np.r_[lo, mid], np.r_[mid, hi]
    return float(total)


def early_exercise_premium(
    boundary: ExerciseBoundary,
    coords: BmCoords,
    spec: OptionSpec,
    mkt: MarketState,
    rtol: float = 1e-6,
) -> float:
    """Integral part of the American put decomposition.

    With s = u + v^2 the square-root singularity at s = u disappears:
    ds = 2 v dv and sqrt(s - u) = v.
    """
    u, z, rho = coords.u, coords.z_bm, coords.rho
    if not u < 0:
        raise ValueError("premium needs u < 0")
    if rho == 0 or boundary.empty:
        return 0.0
    if boundary.u[0] > u + 1e-12 * max(1.0, abs(u)) or boundary.u[-1] < -1e-12:
        raise ValueError("boundary does not cover the integration range [u, 0]")
    theta_rho = mkt.d / mkt.sigma**2

    def integrand(v):
        s = np.minimum(u + v * v, 0.0)
        zb = boundary.zbar_at(s)
        safe_v = np.where(v > 0, v, 1.0)
        arg = np.where(v > 0, (zb - z) / safe_v, np.where(zb > z, np.inf, -np.inf))
        first = np.exp(-rho * s) * _cdf(arg)
        second = np.exp(-(theta_rho * s + 0.5 * u) + z) * _cdf(arg - v)
        return 2.0 * v * (first - (theta_rho / rho) * second)

    inside = boundary.u[(boundary.u > u) & (boundary.u < 0)]
    integral = adaptive_gauss_legendre(
        integrand, 0.0, math.sqrt(-u), rtol=rtol, breaks=np.sqrt(inside - u)
    )
    return max(spec.K * rho * math.exp(rho * u) * integral, 0.0)


def decomposition_price(spec: OptionSpec, mkt: MarketState, n_steps: int = 5000) -> tuple[float, float]:
    """(European put, premium) for an American put via boundary + quadrature."""
    from .bs_core import to_bm_coords

    euro_spec = OptionSpec(Kind.PUT, Style.EUROPEAN, spec.K, spec.T)
    p = euro_price(euro_spec, mkt)
    boundary = extract_boundary(spec, mkt, n_steps)
    coords = to_bm_coords(spec, mkt)
    return p, early_exercise_premium(boundary, coords, spec, mkt)
