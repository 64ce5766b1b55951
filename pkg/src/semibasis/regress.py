"""Least-squares kernels shared by the spline pricer, MARS and the lynx models."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg

log = logging.getLogger(__name__)

RANK_RTOL = 1e-10


@dataclass(frozen=True)
class OlsFit:
    coefficients: np.ndarray
    residual_sum_squares: float
    n_params: int
    dropped: tuple = ()

    def predict(self, design):
        return np.asarray(design) @ self.coefficients


def ols(design, response, rank_rtol: float = RANK_RTOL) -> OlsFit:
    """Least squares by column-pivoted QR.

    Columns whose pivot falls below ``rank_rtol`` times the leading pivot are
    treated as dependent: their coefficients are set to zero and their
    indices are listed in ``dropped``.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    if X.ndim != 2:
        raise ValueError("design must be a 2-d array")
    n, p = X.shape
    if y.shape != (n,):
        raise ValueError(f"response shape {y.shape} does not match design rows {n}")
    if n < p:
        raise ValueError(f"need n >= p, got n={n}, p={p}")
    coef = np.zeros(p)
    if p == 0:
        return OlsFit(coef, float(y @ y), 0)
    Q, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    lead = diag[0] if diag.size else 0.0
    rank = int(np.sum(diag > rank_rtol * lead)) if lead > 0 else 0
    if rank:
        qty = Q[:, :rank].T @ y
        coef[piv[:rank]] = linalg.solve_triangular(R[:rank, :rank], qty)
    dropped = tuple(sorted(int(c) for c in piv[rank:]))
    if dropped:
        log.debug("ols dropped dependent columns %s", dropped)
    resid = y - X @ coef
    return OlsFit(coef, float(resid @ resid), p, dropped)


@dataclass
class NlsResult:
    params: np.ndarray
    cost: float
    converged: bool
    status: str
    n_iter: int
    trace: list = field(default_factory=list)


class NlsError(RuntimeError):
    def __init__(self, message, result: NlsResult):
        super().__init__(message)
        self.result = result


def numerical_jacobian(fun, x, f0=None, rel_step=1e-6):
    x = np.asarray(x, dtype=float)
    f0 = fun(x) if f0 is None else f0
    J = np.empty((f0.size, x.size))
    for k in range(x.size):
        h = rel_step * (1.0 + abs(x[k]))
        xk = x.copy()
        xk[k] += h
        J[:, k] = (fun(xk) - f0) / h
    return J


def nls_lm(
    residual_map: Callable[[np.ndarray], np.ndarray],
    init,
    jac: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    max_iter: int = 500,
    gtol: float = 1e-8,
    xtol: float = 1e-14,
    lam0: float = 1e-3,
) -> NlsResult:
    """Levenberg-Marquardt minimisation of 0.5 * ||residual_map(p)||^2.

    Damping starts at ``lam0``, is multiplied by 10 on a rejected step and
    divided by 10 on an accepted one. Steps that produce non-finite residuals
    count as rejections. ``gtol`` bounds the gradient infinity-norm relative
    to ``max(1, cost)``.
    """
    x = np.array(init, dtype=float)
    r = np.asarray(residual_map(x), dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValueError("residuals are not finite at the initial point")
    cost = 0.5 * float(r @ r)
    jacobian = jac if jac is not None else (lambda p, f0=None: numerical_jacobian(residual_map, p, f0))
    lam = lam0
    trace = [(x.copy(), cost)]
    status = "max_iter"
    it = 0
    for it in range(1, max_iter + 1):
        J = jacobian(x) if jac is not None else jacobian(x, r)
        g = J.T @ r
        if np.max(np.abs(g), initial=0.0) <= gtol * max(1.0, cost):
            status = "gtol"
            break
        JtJ = J.T @ J
        scale = np.maximum(np.diag(JtJ), 1e-12)
        accepted = False
        while lam < 1e16:
            A = JtJ + lam * np.diag(scale)
            try:
                step = -linalg.solve(A, g, assume_a="pos")
            except (linalg.LinAlgError, ValueError):
                lam *= 10.0
                continue
            x_new = x + step
            r_new = np.asarray(residual_map(x_new), dtype=float)
            if np.all(np.isfinite(r_new)):
                cost_new = 0.5 * float(r_new @ r_new)
                if cost_new <= cost:
                    accepted = True
                    break
            lam *= 10.0
        if not accepted:
            status = "stalled"
            break
        small = np.linalg.norm(step) <= xtol * (np.linalg.norm(x) + xtol)
        x, r, cost = x_new, r_new, cost_new
        lam = max(lam / 10.0, 1e-15)
        trace.append((x.copy(), cost))
        if small:
            status = "xtol"
            break
    converged = status in ("gtol", "xtol", "stalled")
    return NlsResult(x, cost, converged, status, it, trace)


def percentile(values, q: float) -> float:
    """Percentile by linear interpolation at fractional index q(n-1)/100."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("percentile of an empty sample")
    if not 0 < q <= 100:
        raise ValueError(f"q must lie in (0, 100], got {q}")
    return float(np.percentile(v, q, method="linear"))


@dataclass(frozen=True)
class RegionS:
    center: np.ndarray
    axes: np.ndarray  # rows are the unit principal axes
    half_widths: np.ndarray

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        proj = (pts - self.center) @ self.axes.T
        return np.all(np.abs(proj) <= self.half_widths, axis=1)

    def to_dict(self) -> dict:
        return {
            "center": self.center.tolist(),
            "axes": self.axes.tolist(),
            "half_widths": self.half_widths.tolist(),
        }


def principal_region(points, n_sd: float = 3.0) -> RegionS:
    """Oblique rectangle: sample mean +/- ``n_sd`` sd along the principal axes."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise ValueError("principal_region needs at least 3 two-dimensional points")
    center = pts.mean(axis=0)
    cov = np.cov(pts, rowvar=False, ddof=1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, axes = evals[order], evecs[:, order].T
    # fix orientation so results do not depend on LAPACK sign choices
    for k in range(2):
        lead = np.argmax(np.abs(axes[k]))
        if axes[k, lead] < 0:
            axes[k] = -axes[k]
    sd = np.sqrt(np.clip(evals, 0.0, None))
    if sd[1] <= 1e-12 * max(sd[0], 1e-300):
        raise ValueError("points are collinear: second principal sd is zero")
    return RegionS(center=center, axes=axes, half_widths=n_sd * sd)
