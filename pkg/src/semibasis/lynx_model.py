"""Canadian lynx (1821-1934) population models.

X_t = log10(count in year 1820 + t). Growth-form models predict
R_{t-1} = X_t - X_{t-1} from (X_{t-1}, X_{t-2}); SETAR(2) predicts X_t
directly. Fitting uses the first 102 observations; the last 12 are held out.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Protocol

import numpy as np

from .mars import INTERCEPT, MarsModel, mars_fit
from .regress import NlsError, NlsResult, RegionS, nls_lm, ols, principal_region

log = logging.getLogger(__name__)

FIRST_YEAR = 1821
N_OBS = 114
TRAIN_WINDOW = 102
HOLDOUT = 12

# X_t for 1923-1934 as tabulated alongside the forecast comparison
HOLDOUT_X = {
    1923: 3.054, 1924: 3.386, 1925: 3.553, 1926: 3.468, 1927: 3.187, 1928: 2.723,
    1929: 2.686, 1930: 2.821, 1931: 3.000, 1932: 3.201, 1933: 3.424, 1934: 3.531,
}


class LynxDataError(ValueError):
    pass


@dataclass(frozen=True)
class LynxSeries:
    years: np.ndarray
    counts: np.ndarray

    @property
    def X(self) -> np.ndarray:
        return np.log10(self.counts.astype(float))

    def __len__(self):
        return self.years.size


def validate_series(years, counts) -> LynxSeries:
    years = np.asarray(years, dtype=int)
    counts = np.asarray(counts, dtype=int)
    if years.size != N_OBS:
        raise LynxDataError(f"expected {N_OBS} yearly records, got {years.size}")
    expected = np.arange(FIRST_YEAR, FIRST_YEAR + N_OBS)
    bad = np.flatnonzero(years != expected)
    if bad.size:
        raise LynxDataError(f"year {years[bad[0]]} out of sequence (expected {expected[bad[0]]})")
    nonpos = np.flatnonzero(counts <= 0)
    if nonpos.size:
        raise LynxDataError(f"count for year {years[nonpos[0]]} must be positive, got {counts[nonpos[0]]}")
    X = np.log10(counts.astype(float))
    for year, ref in HOLDOUT_X.items():
        val = X[year - FIRST_YEAR]
        if round(val, 3) != ref:
            raise LynxDataError(f"log10 count for year {year} is {val:.4f}, expected {ref:.3f}")
    return LynxSeries(years, counts)


def load_series(path=None) -> LynxSeries:
    """Read a ``year,count`` CSV (the bundled dataset when ``path`` is None)."""
    if path is None:
        text = resources.files("semibasis.data").joinpath("lynx.csv").read_text()
    else:
        text = Path(path).read_text()
    rows = list(csv.DictReader(text.splitlines()))
    if not rows or set(rows[0]) != {"year", "count"}:
        raise LynxDataError("lynx file must have header 'year,count'")
    years, counts = [], []
    for i, row in enumerate(rows, start=2):
        try:
            years.append(int(row["year"]))
            counts.append(int(row["count"]))
        except (TypeError, ValueError) as exc:
            raise LynxDataError(f"line {i}: cannot parse {row}") from exc
    return validate_series(years, counts)


def lagged(X, stop: Optional[int] = None):
    """(x1, x2, R) triples: x1 = X_{t-1}, x2 = X_{t-2}, R = X_t - X_{t-1}."""
    X = np.asarray(X, dtype=float)[:stop]
    return X[1:-1], X[:-2], X[2:] - X[1:-1]


# ---------------------------------------------------------------- logistic


@dataclass(frozen=True)
class LogisticParams:
    r_m: float
    a0: float
    a1: float
    a2: float

    def as_array(self):
        return np.array([self.r_m, self.a0, self.a1, self.a2])

    def growth(self, x1, x2):
        return self.r_m - np.exp(-self.a0 - self.a1 * np.asarray(x1) - self.a2 * np.asarray(x2))

    def equilibrium(self) -> float:
        """Nonzero fixed point X* on the diagonal (zero of the growth)."""
        if self.r_m <= 0:
            raise ValueError("no positive equilibrium when r_m <= 0")
        return -(self.a0 + math.log(self.r_m)) / (self.a1 + self.a2)

    @property
    def max_factor(self) -> float:
        return 10.0**self.r_m

    def __str__(self):
        return (
            f"X_t - X_(t-1) = {self.r_m:.3f} - exp{{{-self.a0:+.3f} {-self.a1:+.3f}X_(t-1) {-self.a2:+.3f}X_(t-2)}}"
        )


ROYAMA_INIT = LogisticParams(0.597, 2.526, 0.838, -1.508)


def logistic_growth(params: LogisticParams, x1, x2):
    return params.growth(x1, x2)


def _logistic_residuals(x1, x2, target):
    def resid(p):
        return target - (p[0] - np.exp(-p[1] - p[2] * x1 - p[3] * x2))

    def jac(p):
        e = np.exp(-p[1] - p[2] * x1 - p[3] * x2)
        # d resid / d p = -(d growth / d p)
        return np.column_stack([-np.ones_like(x1), -e, -e * x1, -e * x2])

    return resid, jac


def fit_logistic_nls(x1, x2, target, init: LogisticParams = ROYAMA_INIT) -> tuple[LogisticParams, NlsResult]:
    resid, jac = _logistic_residuals(np.asarray(x1), np.asarray(x2), np.asarray(target))
    res = nls_lm(resid, init.as_array(), jac=jac, max_iter=1000)
    if not res.converged:
        raise NlsError(f"logistic NLS did not converge ({res.status} after {res.n_iter} iterations)", res)
    return LogisticParams(*map(float, res.params)), res


def fit_logistic(series, window: int = TRAIN_WINDOW, init: LogisticParams = ROYAMA_INIT) -> LogisticParams:
    X = series.X if isinstance(series, LynxSeries) else np.asarray(series, dtype=float)
    if window < 10:
        raise ValueError("window must hold at least 10 observations")
    x1, x2, R = lagged(X, window)
    params, _ = fit_logistic_nls(x1, x2, R, init)
    return params


# ---------------------------------------------------------------- combined


@dataclass(frozen=True)
class BackfitConfig:
    max_terms: int = 15
    penalty_d: float = 3.0
    max_interaction: int = 2
    threshold: float = 1e-3
    max_iter: int = 50
    tol: float = 1e-6
    use_mars: bool = True
    endspan: int = 0
    minspan: int = 1


@dataclass
class CombinedLynxModel:
    logistic: LogisticParams
    g: MarsModel
    region: RegionS
    extinction_floor: float = 0.0
    converged: bool = True
    n_iter: int = 0
    rss_trace: list = field(default_factory=list)

    def correction(self, x1, x2):
        x1, x2 = np.broadcast_arrays(np.asarray(x1, dtype=float), np.asarray(x2, dtype=float))
        pts = np.column_stack([x1.ravel(), x2.ravel()])
        inside = self.region.contains(pts)
        g = np.where(inside, self.g.predict(pts), 0.0)
        return g.reshape(x1.shape) if x1.ndim else float(g[0])

    def growth(self, x1, x2):
        return self.logistic.growth(x1, x2) + self.correction(x1, x2)

    def to_dict(self) -> dict:
        return {
            "schema": "lynx-combined/1",
            "logistic": vars(self.logistic),
            "g": self.g.to_dict(),
            "region": self.region.to_dict(),
            "converged": self.converged,
            "n_iter": self.n_iter,
            "rss_trace": self.rss_trace,
        }


def combined_growth(model, x1, x2):
    """(growth, extinction flag); extinction when x1 + growth < floor."""
    R = model.growth(x1, x2)
    floor = getattr(model, "extinction_floor", 0.0)
    return R, np.asarray(x1) + R < floor


def _zero_mars(n: int) -> MarsModel:
    return MarsModel(basis=[INTERCEPT], coefficients=np.zeros(1), gcv=float("nan"), penalty_d=3.0, n_obs=n)


def _refit_basis(g: MarsModel, pts, target) -> MarsModel:
    fit = ols(g.design(pts), target)
    return replace(g, coefficients=fit.coefficients, rss=fit.residual_sum_squares)


def fit_combined(series, window: int = TRAIN_WINDOW, config: BackfitConfig = BackfitConfig(),
                 init: LogisticParams = ROYAMA_INIT) -> CombinedLynxModel:
    """Backfit logistic + MARS correction restricted to the principal region.

    Each g-step keeps the better (lower training RSS) of a fresh MARS fit and
    an OLS refit of the current basis, so training RSS never increases.
    """
    X = series.X if isinstance(series, LynxSeries) else np.asarray(series, dtype=float)
    x1, x2, R = lagged(X, window)
    pts = np.column_stack([x1, x2])
    region = principal_region(pts)
    inside = region.contains(pts)

    logistic, _ = fit_logistic_nls(x1, x2, R, init)
    g = _zero_mars(len(R))
    g_vals = np.zeros_like(R)

    def rss(lp, gv):
        e = R - lp.growth(x1, x2) - gv
        return float(e @ e)

    trace = [rss(logistic, g_vals)]
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        resid = R - logistic.growth(x1, x2)
        if config.use_mars:
            fresh = mars_fit(pts[inside], resid[inside], max_terms=config.max_terms,
                             penalty_d=config.penalty_d, max_interaction=config.max_interaction,
                             threshold=config.threshold, endspan=config.endspan,
                             minspan=config.minspan)
            refit = _refit_basis(g, pts[inside], resid[inside])
            g_new = fresh if fresh.rss <= refit.rss else refit
            g_vals_new = np.zeros_like(R)
            g_vals_new[inside] = g_new.predict(pts[inside])
        else:
            g_new, g_vals_new = g, g_vals
        logistic_new, _ = fit_logistic_nls(x1, x2, R - g_vals_new, logistic)
        change = max(
            float(np.max(np.abs(logistic_new.as_array() - logistic.as_array()))),
            float(np.max(np.abs(g_vals_new - g_vals), initial=0.0)),
        )
        logistic, g, g_vals = logistic_new, g_new, g_vals_new
        trace.append(rss(logistic, g_vals))
        if change < config.tol:
            converged = True
            break
    if not converged:
        log.warning("backfitting stopped after %d iterations without converging", it)
    return CombinedLynxModel(logistic, g, region, converged=converged, n_iter=it, rss_trace=trace)


# ---------------------------------------------------------------- SETAR(2)


@dataclass(frozen=True)
class Setar2Model:
    lower: tuple = (0.424, 1.255, -0.348)
    upper: tuple = (1.882, 1.516, -1.126)
    threshold: float = 2.981

    def step(self, x1, x2):
        x1, x2 = np.asarray(x1, dtype=float), np.asarray(x2, dtype=float)
        lo = self.lower[0] + self.lower[1] * x1 + self.lower[2] * x2
        hi = self.upper[0] + self.upper[1] * x1 + self.upper[2] * x2
        out = np.where(x2 <= self.threshold, lo, hi)
        return out if out.ndim else float(out)

    def growth(self, x1, x2):
        return self.step(x1, x2) - np.asarray(x1, dtype=float)


SETAR2 = Setar2Model()


def setar2_step(x1, x2):
    return SETAR2.step(x1, x2)


# ---------------------------------------------------------------- forecasting


class Forecaster(Protocol):
    def step(self, x1, x2): ...


@dataclass(frozen=True)
class GrowthForecaster:
    """Wraps a growth-form model: X_t = X_{t-1} + R(X_{t-1}, X_{t-2})."""

    model: object

    def step(self, x1, x2):
        return np.asarray(x1) + self.model.growth(x1, x2)


def as_forecaster(model):
    if hasattr(model, "step"):
        return model
    if hasattr(model, "growth"):
        return GrowthForecaster(model)
    raise TypeError(f"cannot forecast with {type(model).__name__}")


@dataclass
class ForecastReport:
    years: np.ndarray
    actual: np.ndarray
    forecasts: dict
    errors: dict
    aape: dict
    label: str = ""

    def rows(self):
        hs = sorted(self.errors)
        for i, year in enumerate(self.years):
            yield [int(year), round(float(self.actual[i]), 3)] + [float(self.errors[h][i]) for h in hs]


def forecast_eval(forecaster, series, holdout: int = HOLDOUT, horizons=(1, 2), label: str = "") -> ForecastReport:
    """One-step and iterative two-step forecasts over the last ``holdout`` years.

    The two-step forecast of X_t feeds the one-step forecast of X_{t-1} into
    the X_{t-1} slot and keeps the observed X_{t-2}.
    """
    if any(h not in (1, 2) for h in horizons):
        raise ValueError("only horizons 1 and 2 are supported")
    f = as_forecaster(forecaster)
    X = series.X if isinstance(series, LynxSeries) else np.asarray(series, dtype=float)
    years = series.years if isinstance(series, LynxSeries) else np.arange(X.size) + FIRST_YEAR
    idx = np.arange(X.size - holdout, X.size)
    if idx[0] < 3:
        raise ValueError("holdout leaves too little history")
    one = np.asarray(f.step(X[idx - 1], X[idx - 2]), dtype=float)
    forecasts, errors, aape = {}, {}, {}
    for h in horizons:
        if h == 1:
            fc = one
        else:
            prev = np.asarray(f.step(X[idx - 2], X[idx - 3]), dtype=float)
            fc = np.asarray(f.step(prev, X[idx - 2]), dtype=float)
        forecasts[h] = fc
        errors[h] = np.abs(fc - X[idx])
        aape[h] = float(np.mean(errors[h]))
    return ForecastReport(years[idx], X[idx], forecasts, errors, aape, label)


@dataclass
class OrbitResult:
    orbit: np.ndarray
    period: Optional[int]
    max_growth: Optional[float]
    min_growth: Optional[float]
    cycle: Optional[np.ndarray] = None

    @property
    def summary(self) -> str:
        if self.period is None:
            return "no cycle detected"
        return f"period {self.period}, max {self.max_growth:.3f}, min {self.min_growth:.3f}"


def skeleton_orbit(forecaster, x0, n_steps: int = 2000, discard: Optional[int] = None,
                   tol: float = 1e-9, max_period: int = 200) -> OrbitResult:
    """Iterate the noise-free map from x0 = (X_{t-1}, X_{t-2}).

    After ``discard`` transient steps, the cycle is the smallest lag p with
    |state_k - state_{k-p}| <= tol for the final state.
    """
    if n_steps < 100:
        raise ValueError("n_steps must be >= 100")
    f = as_forecaster(forecaster)
    discard = n_steps // 2 if discard is None else discard
    x = np.empty(n_steps + 2)
    x[0], x[1] = x0[1], x0[0]
    for k in range(2, n_steps + 2):
        x[k] = float(f.step(x[k - 1], x[k - 2]))
    tail = x[discard:]
    last = len(tail) - 1
    period = None
    for p in range(1, min(max_period, last) + 1):
        if abs(tail[last] - tail[last - p]) <= tol and abs(tail[last - 1] - tail[last - 1 - p]) <= tol:
            period = p
            break
    if period is None:
        return OrbitResult(x, None, None, None)
    cycle = tail[last - period: last + 1]
    growth = np.diff(cycle)
    return OrbitResult(x, period, float(growth.max()), float(growth.min()), cycle[1:])


@dataclass
class GrowthGrid:
    x1: np.ndarray
    x2: np.ndarray
    R: np.ndarray  # shape (len(x2), len(x1))
    extinct: np.ndarray

    def records(self):
        for i, b in enumerate(self.x2):
            for j, a in enumerate(self.x1):
                yield float(a), float(b), float(self.R[i, j]), bool(self.extinct[i, j])


def growth_grid(model, x1_values, x2_values) -> GrowthGrid:
    x1 = np.asarray(x1_values, dtype=float)
    x2 = np.asarray(x2_values, dtype=float)
    A, B = np.meshgrid(x1, x2)
    R, ext = combined_growth(model, A, B)
    return GrowthGrid(x1, x2, np.asarray(R), np.asarray(ext))
