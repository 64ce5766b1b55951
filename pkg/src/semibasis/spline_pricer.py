"""Semiparametric American-put pricer: European put plus regression splines.

For tau > 5/253 the price is modelled as

    P = p + K exp(rho u) * B(u, z, w) . coef

with B = [1, u, (u - u_j)_+, z, z^2, (z - z_j)_+^2, w, w^2, (w - w_j)_+^2],
u = -sigma^2 tau, z = log(S/K) and w the drift-centred, |u|^(-1/2)-scaled
log-moneyness. Knot counts (J_u, J_z, J_w) are chosen by GCV over {1..10}^3.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .american_lattice import crr_batch
from .bs_core import TRADING_DAYS, Kind, MarketState, OptionSpec, bs_delta, bs_price, drift_centering
from .regress import ols

SCHEMA = "spline-pricer/1"
SHORT_MATURITY = 5.0 / TRADING_DAYS
J_RANGE = range(1, 11)
BOOK_FIELDS = ("S", "K", "tau", "r", "d", "sigma", "price")


@dataclass(frozen=True)
class PriceSample:
    S: float
    K: float
    tau: float
    r: float
    d: float
    sigma: float
    price: float


@dataclass
class PriceBook:
    """Column-oriented training set (one entry per observed option price)."""

    S: np.ndarray
    K: np.ndarray
    tau: np.ndarray
    r: np.ndarray
    d: np.ndarray
    sigma: np.ndarray
    price: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in BOOK_FIELDS:
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        n = self.S.size
        for name in BOOK_FIELDS:
            arr = np.broadcast_to(getattr(self, name), (n,)).copy()
            setattr(self, name, arr)
        if np.any(self.S <= 0) or np.any(self.K <= 0) or np.any(self.sigma <= 0) or np.any(self.tau <= 0):
            raise ValueError("S, K, sigma and tau must be positive in every sample")

    def __len__(self):
        return self.S.size

    @classmethod
    def from_samples(cls, samples: Iterable[PriceSample]) -> "PriceBook":
        rows = list(samples)
        return cls(*(np.array([getattr(s, f) for s in rows]) for f in BOOK_FIELDS))

    def samples(self):
        for i in range(len(self)):
            yield PriceSample(*(float(getattr(self, f)[i]) for f in BOOK_FIELDS))

    def subset(self, mask) -> "PriceBook":
        return PriceBook(*(getattr(self, f)[mask] for f in BOOK_FIELDS), meta=dict(self.meta))

    def permuted(self, perm) -> "PriceBook":
        return self.subset(np.asarray(perm))

    def european(self):
        return bs_price(Kind.PUT, self.S, self.K, self.tau, self.r, self.d, self.sigma)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(BOOK_FIELDS)
            for i in range(len(self)):
                w.writerow([repr(float(getattr(self, f)[i])) for f in BOOK_FIELDS])

    @classmethod
    def read_csv(cls, path) -> "PriceBook":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(BOOK_FIELDS) - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"training file lacks columns {sorted(missing)}")
            cols = {f: [] for f in BOOK_FIELDS}
            for lineno, row in enumerate(reader, start=2):
                for f in BOOK_FIELDS:
                    try:
                        cols[f].append(float(row[f]))
                    except (TypeError, ValueError):
                        raise ValueError(f"line {lineno}: bad value for {f!r}: {row[f]!r}") from None
        return cls(*(np.array(cols[f]) for f in BOOK_FIELDS))


def _as_book(training) -> PriceBook:
    return training if isinstance(training, PriceBook) else PriceBook.from_samples(training)


# ---------------------------------------------------------------- features & basis


def features(S, K, tau, r, d, sigma):
    """(u, z, w, rho) arrays; tau must be positive."""
    tau = np.asarray(tau, dtype=float)
    s2 = np.asarray(sigma, dtype=float) ** 2
    u = -s2 * tau
    z = np.log(np.asarray(S, dtype=float) / K)
    w = (z - drift_centering(r, d, sigma) * u) / np.sqrt(-u)
    rho = np.asarray(r, dtype=float) / s2
    return u, z, w, rho


@dataclass(frozen=True)
class Knots:
    u: tuple
    z: tuple
    w: tuple

    @property
    def J(self):
        return len(self.u), len(self.z), len(self.w)

    @property
    def n_columns(self) -> int:
        return sum(self.J) + 6


def _percentile_levels(J: int):
    # 100 j / (J + 1): the last knot stays inside the data range
    return [100.0 * j / (J + 1) for j in range(1, J + 1)]


def percentile_knots(u, z, w, J_u: int, J_z: int, J_w: int) -> Knots:
    """Knots at the 100j/(J+1)-th percentiles of each feature.

    Repeated knots (ties in the sample) are kept so every design has
    J_u+J_z+J_w+6 columns; the duplicate columns are dropped by ``ols``.
    """
    arrays = [np.asarray(a, dtype=float) for a in (u, z, w)]
    if any(a.size == 0 for a in arrays):
        raise ValueError("percentile knots need a nonempty training set")
    out = []
    for a, J in zip(arrays, (J_u, J_z, J_w)):
        if J < 1:
            raise ValueError("knot counts must be >= 1")
        out.append(tuple(float(v) for v in np.percentile(a, _percentile_levels(J))))
    return Knots(*out)


def _u_block(u, knots):
    return np.column_stack([np.ones_like(u), u] + [np.maximum(u - k, 0.0) for k in knots])


def _quad_block(x, knots):
    return np.column_stack([x, x * x] + [np.maximum(x - k, 0.0) ** 2 for k in knots])


def basis_matrix(u, z, w, knots: Knots) -> np.ndarray:
    """Spline basis before the K exp(rho u) factor."""
    u, z, w = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (u, z, w))
    return np.hstack([_u_block(u, knots.u), _quad_block(z, knots.z), _quad_block(w, knots.w)])


def basis_slope(u, z, w, knots: Knots) -> tuple[np.ndarray, np.ndarray]:
    """d(basis)/dz and d(basis)/dw (the u-block does not depend on S)."""
    u, z, w = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (u, z, w))
    n = u.size
    zeros_u = np.zeros((n, 2 + len(knots.u)))
    zeros_z = np.zeros((n, 2 + len(knots.z)))
    zeros_w = np.zeros((n, 2 + len(knots.w)))

    def dquad(x, ks):
        return np.column_stack([np.ones_like(x), 2 * x] + [2 * np.maximum(x - k, 0.0) for k in ks])

    dz = np.hstack([zeros_u, dquad(z, knots.z), zeros_w])
    dw = np.hstack([zeros_u, zeros_z, dquad(w, knots.w)])
    return dz, dw


def build_basis(sample: PriceSample, knots: Knots) -> tuple[np.ndarray, float]:
    """(row with the K e^{rho u} factor applied, European price offset p)."""
    if sample.tau <= SHORT_MATURITY:
        raise ValueError("samples with tau <= 5/253 are priced by p alone")
    u, z, w, rho = features(sample.S, sample.K, sample.tau, sample.r, sample.d, sample.sigma)
    row = sample.K * np.exp(rho * u) * basis_matrix(u, z, w, knots)[0]
    p = bs_price(Kind.PUT, sample.S, sample.K, sample.tau, sample.r, sample.d, sample.sigma)
    return row, float(p)


# ---------------------------------------------------------------- model


@dataclass
class SplinePricerModel:
    knots: Knots
    coefficients: np.ndarray
    gcv: float
    rss: float = float("nan")
    n_obs: int = 0
    short_maturity_cutoff: float = SHORT_MATURITY
    dropped: tuple = ()

    @property
    def J(self):
        return self.knots.J

    def _bracket(self, S, K, tau, r, d, sigma):
        u, z, w, rho = features(S, K, tau, r, d, sigma)
        B = basis_matrix(u, z, w, self.knots)
        return u, z, w, rho, B

    def price(self, S, K, tau, r, d, sigma):
        S, K, tau, r, d, sigma = np.broadcast_arrays(*(np.atleast_1d(np.asarray(a, dtype=float))
                                                       for a in (S, K, tau, r, d, sigma)))
        out = bs_price(Kind.PUT, S, K, tau, r, d, sigma)
        long = tau > self.short_maturity_cutoff
        if long.any():
            args = [a[long] for a in (S, K, tau, r, d, sigma)]
            u, _, _, rho, B = self._bracket(*args)
            out = np.array(out, dtype=float)
            out[long] += args[1] * np.exp(rho * u) * (B @ self.coefficients)
        return out

    def delta(self, S, K, tau, r, d, sigma):
        S, K, tau, r, d, sigma = np.broadcast_arrays(*(np.atleast_1d(np.asarray(a, dtype=float))
                                                       for a in (S, K, tau, r, d, sigma)))
        out = np.array(bs_delta(Kind.PUT, S, K, tau, r, d, sigma), dtype=float)
        long = tau > self.short_maturity_cutoff
        if long.any():
            Sl, Kl, tl, rl, dl, sl = (a[long] for a in (S, K, tau, r, d, sigma))
            u, z, w, rho = features(Sl, Kl, tl, rl, dl, sl)
            dz, dw = basis_slope(u, z, w, self.knots)
            # dz/dS = 1/S, dw/dS = |u|^(-1/2)/S
            slope = (dz @ self.coefficients + (dw @ self.coefficients) / np.sqrt(-u)) / Sl
            out[long] += Kl * np.exp(rho * u) * slope
        return out

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "J": list(self.J),
            "knots": {"u": list(self.knots.u), "z": list(self.knots.z), "w": list(self.knots.w)},
            "coefficients": [float(c) for c in self.coefficients],
            "gcv": self.gcv,
            "rss": self.rss,
            "n_obs": self.n_obs,
            "short_maturity_cutoff": self.short_maturity_cutoff,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> "SplinePricerModel":
        if doc.get("schema") != SCHEMA:
            raise ValueError(f"expected schema {SCHEMA!r}, got {doc.get('schema')!r}")
        k = doc["knots"]
        knots = Knots(tuple(k["u"]), tuple(k["z"]), tuple(k["w"]))
        coef = np.array(doc["coefficients"], dtype=float)
        if coef.size != knots.n_columns:
            raise ValueError(f"expected {knots.n_columns} coefficients, got {coef.size}")
        return cls(knots, coef, float(doc["gcv"]), float(doc.get("rss", float("nan"))),
                   int(doc.get("n_obs", 0)), float(doc.get("short_maturity_cutoff", SHORT_MATURITY)))

    @classmethod
    def loads(cls, text: str) -> "SplinePricerModel":
        return cls.from_dict(json.loads(text))


def _require_put(spec: OptionSpec):
    if spec.kind is not Kind.PUT:
        raise ValueError("the spline pricer models puts only")


def predict_price(model: SplinePricerModel, spec: OptionSpec, mkt: MarketState) -> float:
    _require_put(spec)
    tau = mkt.tau(spec)
    if tau <= 0:
        return max(spec.K - mkt.S, 0.0)
    return float(model.price(mkt.S, spec.K, tau, mkt.r, mkt.d, mkt.sigma)[0])


def predict_delta(model: SplinePricerModel, spec: OptionSpec, mkt: MarketState) -> float:
    _require_put(spec)
    tau = mkt.tau(spec)
    if tau <= 0:
        raise ValueError("delta is undefined at expiry")
    return float(model.delta(mkt.S, spec.K, tau, mkt.r, mkt.d, mkt.sigma)[0])


def gcv_criterion(rss: float, n: int, n_params: int) -> float:
    if n_params >= n:
        return float("inf")
    return rss / (n * (1.0 - n_params / n) ** 2)


def fit_gcv(training, J_range: Sequence[int] = J_RANGE) -> SplinePricerModel:
    """Exhaustive GCV search over (J_u, J_z, J_w) in J_range^3.

    Samples with tau <= 5/253 are left out of the regression. Ties in GCV go
    to the smallest J_u+J_z+J_w, then to the lexicographically smallest J.
    """
    book = _as_book(training)
    book = book.subset(book.tau > SHORT_MATURITY)
    n = len(book)
    J_range = list(J_range)
    max_params = 3 * max(J_range) + 6
    if n <= max_params:
        raise ValueError(f"need more than {max_params} samples with tau > 5/253, got {n}")

    u, z, w, rho = features(book.S, book.K, book.tau, book.r, book.d, book.sigma)
    scale = (book.K * np.exp(rho * u))[:, None]
    target = book.price - book.european()

    blocks_u, blocks_z, blocks_w = {}, {}, {}
    for J in J_range:
        levels = _percentile_levels(J)
        ku, kz, kw = (tuple(float(v) for v in np.percentile(a, levels)) for a in (u, z, w))
        blocks_u[J] = (ku, scale * _u_block(u, ku))
        blocks_z[J] = (kz, scale * _quad_block(z, kz))
        blocks_w[J] = (kw, scale * _quad_block(w, kw))

    best = None
    for Ju, Jz, Jw in itertools.product(J_range, repeat=3):
        design = np.hstack([blocks_u[Ju][1], blocks_z[Jz][1], blocks_w[Jw][1]])
        fit = ols(design, target)
        g = gcv_criterion(fit.residual_sum_squares, n, Ju + Jz + Jw + 6)
        key = (g, Ju + Jz + Jw, (Ju, Jz, Jw))
        if best is None or key < best[0]:
            best = (key, fit)
    (g, _, (Ju, Jz, Jw)), fit = best
    knots = Knots(blocks_u[Ju][0], blocks_z[Jz][0], blocks_w[Jw][0])
    return SplinePricerModel(knots, fit.coefficients, g, fit.residual_sum_squares, n, dropped=fit.dropped)


def rolling_sigma(returns, window: int = 60) -> float:
    """Annualised sd of the last ``window`` daily log-returns."""
    x = np.asarray(returns, dtype=float).ravel()
    if window < 2:
        raise ValueError("window must cover at least 2 returns")
    if x.size < window:
        raise ValueError(f"need {window} returns of history, got {x.size}")
    return float(np.std(x[-window:], ddof=1) * math.sqrt(TRADING_DAYS))


# ---------------------------------------------------------------- training data


def _contract_expiries(n_days: int, cycle: int) -> np.ndarray:
    return np.arange(cycle, n_days + 2 * cycle + 1, cycle)


def simulate_training_book(
    years: float = 10.0,
    S0: float = 100.0,
    mu: float = 0.08,
    sigma: float = 0.2,
    r: float = 0.05,
    d: float = 0.0,
    seed: int = 20040301,
    n_steps: int = 500,
    strike_unit: float = 5.0,
    n_strikes: int = 2,
    n_expiries: int = 2,
    expiry_cycle: int = 21,
    sigma_mode: str = "true",
    window: int = 60,
) -> PriceBook:
    """American-put book priced on CRR lattices along one simulated GBM path.

    Each trading day lists the ``n_strikes`` multiples of ``strike_unit``
    nearest the price and the ``n_expiries`` nearest contract expiries (every
    ``expiry_cycle`` trading days). ``sigma_mode='rolling'`` records the
    60-day historical estimate instead of the true volatility.
    """
    from .hedge_lab import GbmParams, simulate_gbm

    if sigma_mode not in ("true", "rolling"):
        raise ValueError("sigma_mode must be 'true' or 'rolling'")
    n_days = int(round(years * TRADING_DAYS))
    warmup = window if sigma_mode == "rolling" else 0
    total_T = (n_days + warmup) / TRADING_DAYS
    path = simulate_gbm(GbmParams(S0, mu, sigma, total_T, TRADING_DAYS, seed))[0]
    logret = np.diff(np.log(path))
    path = path[warmup:]

    expiries = _contract_expiries(n_days, expiry_cycle)
    rows = {f: [] for f in ("S", "K", "tau", "sigma")}
    for day in range(n_days):
        S = path[day]
        live = expiries[expiries > day][:n_expiries]
        base = strike_unit * np.round(S / strike_unit)
        offsets = sorted(range(-n_strikes, n_strikes + 1), key=lambda k: (abs(base + k * strike_unit - S), k))
        strikes = [base + k * strike_unit for k in offsets if base + k * strike_unit > 0][:n_strikes]
        sig = rolling_sigma(logret[: warmup + day], window) if sigma_mode == "rolling" else sigma
        for e in live:
            for K in strikes:
                rows["S"].append(S)
                rows["K"].append(K)
                rows["tau"].append((e - day) / TRADING_DAYS)
                rows["sigma"].append(sig)
    S = np.array(rows["S"])
    K = np.array(rows["K"])
    tau = np.array(rows["tau"])
    price, _ = crr_batch(Kind.PUT, True, S, K, tau, r, d, sigma, n_steps)
    meta = dict(years=years, S0=S0, mu=mu, sigma=sigma, r=r, d=d, seed=seed, n_steps=n_steps,
                sigma_mode=sigma_mode)
    return PriceBook(S, K, tau, r, d, np.array(rows["sigma"]), price, meta=meta)
