"""Delta-hedging experiments on simulated geometric Brownian motion paths.

All path work is vectorised across paths: a hedge is run as one pass over the
time grid with arrays of shape (n_paths,).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .american_lattice import crr_batch, extract_boundary
from .bs_core import TRADING_DAYS, Kind, MarketState, OptionSpec, Style, bs_delta, bs_price

log = logging.getLogger(__name__)

SCHEMA = "hedge-report/1"
RNG_DESCRIPTION = "numpy PCG64, one stream per path from SeedSequence(seed).spawn; standard_normal (ziggurat)"
FREQUENCIES = (63, 126, 253, 1012)


@dataclass(frozen=True)
class GbmParams:
    S0: float
    mu: float
    sigma: float
    T: float
    steps_per_year: int = TRADING_DAYS
    seed: int = 0

    def __post_init__(self):
        if not self.S0 > 0 or not self.T > 0:
            raise ValueError("S0 and T must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.steps_per_year < 1:
            raise ValueError("steps_per_year must be >= 1")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.T * self.steps_per_year)))

    @property
    def dt(self) -> float:
        # the grid ends exactly at T
        return self.T / self.n_steps


def path_generators(seed: int, n_paths: int):
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n_paths)]


def simulate_gbm(params: GbmParams, n_paths: int = 1) -> np.ndarray:
    """Exact log-normal stepping; returns an (n_paths, n_steps + 1) array.

    Path ``i`` depends only on (seed, i), so a larger run extends a smaller one.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    n, dt = params.n_steps, params.dt
    eps = np.stack([g.standard_normal(n) for g in path_generators(params.seed, n_paths)])
    incr = (params.mu - 0.5 * params.sigma**2) * dt + params.sigma * math.sqrt(dt) * eps
    logS = np.concatenate([np.zeros((n_paths, 1)), np.cumsum(incr, axis=1)], axis=1)
    return params.S0 * np.exp(logS)


# ---------------------------------------------------------------- replication


@dataclass
class HedgeOutcome:
    V: np.ndarray  # hedge error at termination (portfolio minus payoff)
    stop_index: np.ndarray
    stop_time: np.ndarray
    exercised: np.ndarray


class HedgeError(RuntimeError):
    pass


def _payoff(kind: Kind, S, K):
    return np.maximum(S - K, 0.0) if kind is Kind.CALL else np.maximum(K - S, 0.0)


def run_hedge(
    delta_source: Callable[[int, float, np.ndarray], np.ndarray],
    price0,
    spec: OptionSpec,
    paths,
    r: float,
    d: float = 0.0,
    steps_per_year: int = TRADING_DAYS,
    exercise_level: Optional[Callable[[float], float]] = None,
) -> HedgeOutcome:
    """Self-financing replication of a short option position.

    The option is sold for ``price0`` at time 0; the hedger then holds
    ``delta_source(k, t_k, S_k)`` shares, rebalanced at every step of the grid t_k = k T/N,
    N = round(T * steps_per_year), with
    the remaining cash accruing at ``r`` and dividends at ``d`` paid into
    cash. For American specs the position ends at the first step with
    ``S_k <= exercise_level(t_k)`` (the holder exercises), otherwise at expiry.
    """
    paths = np.atleast_2d(np.asarray(paths, dtype=float))
    n_paths, n_cols = paths.shape
    N = max(1, int(round(spec.T * steps_per_year)))
    dt = spec.T / N
    if n_cols < N + 1:
        raise ValueError(f"paths have {n_cols - 1} steps, the option needs {N}")
    american = spec.style is Style.AMERICAN and exercise_level is not None
    grow, div = math.exp(r * dt), math.exp(d * dt) - 1.0

    alive = np.ones(n_paths, bool)
    V = np.zeros(n_paths)
    stop = np.full(n_paths, N)
    exercised = np.zeros(n_paths, bool)
    shares = np.zeros(n_paths)
    cash = np.broadcast_to(np.asarray(price0, dtype=float), (n_paths,)).copy()

    for k in range(N + 1):
        S = paths[:, k]
        t = k * dt
        if k > 0:
            cash = cash * grow + shares * S * div
        if american:
            hit = alive & (S <= exercise_level(t)) & (S < spec.K)
        else:
            hit = np.zeros(n_paths, bool)
        if k == N:
            hit = alive.copy()
        if hit.any():
            V[hit] = cash[hit] + shares[hit] * S[hit] - _payoff(spec.kind, S[hit], spec.K)
            stop[hit] = k
            exercised[hit] = k < N
            alive &= ~hit
        if k == N or not alive.any():
            break
        new = np.asarray(delta_source(k, t, S), dtype=float)
        new = np.broadcast_to(new, (n_paths,))
        bad = alive & ~np.isfinite(new)
        if bad.any():
            raise HedgeError(f"non-finite delta at step {k} on paths {np.flatnonzero(bad)[:5].tolist()}")
        new = np.where(alive, new, 0.0)
        cash = cash - (new - shares) * S
        shares = new
    return HedgeOutcome(V, stop, stop * dt, exercised)


def hedging_measures(values, times, r: float) -> tuple[float, float]:
    """(xi, eta): mean |e^{-r tau} V| and root-mean of (e^{-r tau} V)^2."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("hedging measures need at least one path")
    disc = np.exp(-r * np.broadcast_to(np.asarray(times, dtype=float), v.shape)) * v
    xi = math.fsum(np.abs(disc)) / v.size
    eta = math.sqrt(math.fsum(disc * disc) / v.size)
    return xi, eta


def kappa_measure(delta_hat, delta_true, path, K: float, stop_index=None, dt: float = 1.0 / TRADING_DAYS):
    """Per-path sum over steps k < stop of (S_k/K)^2 (delta_k - delta_hat_k)^2 dt.

    ``delta_hat``/``delta_true`` have one column per hedge step; ``path``
    holds the matching prices. Returns one value per path.
    """
    dh = np.atleast_2d(np.asarray(delta_hat, dtype=float))
    dtr = np.atleast_2d(np.asarray(delta_true, dtype=float))
    S = np.atleast_2d(np.asarray(path, dtype=float))[:, : dh.shape[1]]
    if dh.shape != dtr.shape or S.shape != dh.shape:
        raise ValueError("delta and price arrays must share one (paths, steps) shape")
    terms = (S / K) ** 2 * (dtr - dh) ** 2 * dt
    if stop_index is not None:
        stop = np.broadcast_to(np.asarray(stop_index), (dh.shape[0],))
        terms = np.where(np.arange(dh.shape[1])[None, :] < stop[:, None], terms, 0.0)
    return np.array([math.fsum(row) for row in terms])


# ---------------------------------------------------------------- reports


@dataclass
class HedgeReport:
    xi: float
    eta: float
    kappa: float
    n_paths: int
    seed: int
    inputs: dict = field(default_factory=dict)
    breakdown: list = field(default_factory=list)
    rng: str = RNG_DESCRIPTION

    def to_dict(self) -> dict:
        doc = {"schema": SCHEMA}
        doc.update(asdict(self))
        return doc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> "HedgeReport":
        if doc.get("schema") != SCHEMA:
            raise ValueError(f"expected schema {SCHEMA!r}, got {doc.get('schema')!r}")
        fields_ = {k: v for k, v in doc.items() if k != "schema"}
        return cls(**fields_)


def bs_frequency_study(
    S0: float = 100.0,
    K: float = 100.0,
    T: float = 0.25,
    r: float = 0.05,
    d: float = 0.0,
    sigma: float = 0.2,
    mu: float = 0.1,
    kind: Kind = Kind.CALL,
    n_paths: int = 10_000,
    seed: int = 12345,
    frequencies: Sequence[int] = FREQUENCIES,
) -> HedgeReport:
    """Black-Scholes delta hedging of a European option at several rebalance rates.

    Each frequency gets its own spawned seed; the headline xi/eta are those
    of daily (253/year) hedging when it is in the list. kappa is zero since
    the hedge delta is the model delta.
    """
    kind = Kind(kind)
    spec = OptionSpec(kind, Style.EUROPEAN, K, T)
    price0 = float(bs_price(kind, S0, K, T, r, d, sigma))
    sub_seeds = np.random.SeedSequence(seed).spawn(len(frequencies))
    rows = []
    for f, ss in zip(frequencies, sub_seeds):
        f_seed = int(ss.generate_state(1, np.uint64)[0])
        params = GbmParams(S0, mu, sigma, T, f, f_seed)
        paths = simulate_gbm(params, n_paths)

        def delta(k, t, S, f=f):
            return bs_delta(kind, S, K, T - t, r, d, sigma)

        out = run_hedge(delta, price0, spec, paths, r, d, steps_per_year=f)
        xi, eta = hedging_measures(out.V, out.stop_time, r)
        rows.append({"steps_per_year": int(f), "xi": xi, "eta": eta})
    head = next((row for row in rows if row["steps_per_year"] == TRADING_DAYS), rows[-1])
    inputs = dict(S0=S0, K=K, T=T, r=r, d=d, sigma=sigma, mu=mu, kind=kind.value, price0=price0)
    return HedgeReport(head["xi"], head["eta"], 0.0, n_paths, seed, inputs, rows)


def american_study(
    model,
    S0: float = 100.0,
    K: float = 100.0,
    T: float = 0.25,
    r: float = 0.05,
    d: float = 0.0,
    sigma: float = 0.2,
    mu: float = 0.1,
    n_paths: int = 200,
    seed: int = 12345,
    n_steps: int = 500,
) -> HedgeReport:
    """Hedge an American put with the spline model's delta on daily paths.

    The holder exercises at the first crossing of the lattice boundary; the
    true delta for kappa comes from the CRR lattice. The breakdown also
    reports the same hedge run with the lattice delta itself.
    """
    from .spline_pricer import SplinePricerModel

    spec = OptionSpec(Kind.PUT, Style.AMERICAN, K, T)
    mkt0 = MarketState(S0, 0.0, r, d, sigma)
    boundary = extract_boundary(spec, mkt0, n_steps)
    if boundary.empty:
        level = None
    else:
        def level(t):
            return float(boundary.level_at(t))

    paths = simulate_gbm(GbmParams(S0, mu, sigma, T, TRADING_DAYS, seed), n_paths)
    N = max(1, int(round(T * TRADING_DAYS)))
    dt = T / N
    true_delta = np.zeros((n_paths, N))
    hat_delta = np.zeros((n_paths, N))
    for k in range(N):
        tau = T - k * dt
        S = paths[:, k]
        true_delta[:, k] = crr_batch(Kind.PUT, True, S, K, tau, r, d, sigma, n_steps)[1]
        hat_delta[:, k] = model.delta(S, K, tau, r, d, sigma)

    true_price0 = float(crr_batch(Kind.PUT, True, S0, K, T, r, d, sigma, n_steps)[0][0])
    hat_price0 = float(model.price(S0, K, T, r, d, sigma)[0]) if isinstance(model, SplinePricerModel) else true_price0

    def table(arr):
        return lambda k, t, S: arr[:, k]

    out_hat = run_hedge(table(hat_delta), hat_price0, spec, paths, r, d, exercise_level=level)
    out_true = run_hedge(table(true_delta), true_price0, spec, paths, r, d, exercise_level=level)
    xi, eta = hedging_measures(out_hat.V, out_hat.stop_time, r)
    xi_t, eta_t = hedging_measures(out_true.V, out_true.stop_time, r)
    kappa = math.fsum(kappa_measure(hat_delta, true_delta, paths, K, out_hat.stop_index, dt)) / n_paths
    inputs = dict(S0=S0, K=K, T=T, r=r, d=d, sigma=sigma, mu=mu, n_steps=n_steps,
                  price0_model=hat_price0, price0_lattice=true_price0,
                  exercised_fraction=float(out_hat.exercised.mean()))
    breakdown = [
        {"delta": "spline", "xi": xi, "eta": eta, "kappa": kappa},
        {"delta": "lattice", "xi": xi_t, "eta": eta_t, "kappa": 0.0},
    ]
    return HedgeReport(xi, eta, kappa, n_paths, seed, inputs, breakdown)
