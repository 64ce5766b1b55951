"""Multivariate adaptive regression splines (Friedman's forward/backward MARS).

Forward pass: greedily add the reflected hinge pair ``parent*(x_v - k)_+``,
``parent*(k - x_v)_+`` with the largest RSS reduction, knots taken from the
observed values of ``x_v``. Backward pass: drop terms one at a time and keep
the model with the smallest GCV along the pruning path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .regress import ols

SCHEMA = "mars/1"


@dataclass(frozen=True)
class Hinge:
    var: int
    knot: float
    sign: int  # +1 -> (x - knot)_+, -1 -> (knot - x)_+

    def __call__(self, X):
        return np.maximum(self.sign * (X[..., self.var] - self.knot), 0.0)


@dataclass(frozen=True)
class MarsBasisFn:
    factors: tuple = ()

    def __post_init__(self):
        vars_ = [h.var for h in self.factors]
        if len(set(vars_)) != len(vars_):
            raise ValueError("a basis function may use each variable at most once")

    @property
    def degree(self) -> int:
        return len(self.factors)

    @property
    def variables(self):
        return {h.var for h in self.factors}

    def evaluate(self, X):
        X = np.asarray(X, dtype=float)
        out = np.ones(X.shape[:-1])
        for h in self.factors:
            out = out * h(X)
        return out

    def __str__(self):
        if not self.factors:
            return "1"
        parts = []
        for h in self.factors:
            parts.append(f"(x{h.var} - {h.knot:.4g})+" if h.sign > 0 else f"({h.knot:.4g} - x{h.var})+")
        return "*".join(parts)


INTERCEPT = MarsBasisFn()


def gcv_score(rss: float, n: int, n_terms: int, penalty_d: float) -> float:
    c = n_terms + penalty_d * (n_terms - 1)
    if c >= n:
        return float("inf")
    return rss / (n * (1.0 - c / n) ** 2)


@dataclass
class MarsModel:
    basis: list
    coefficients: np.ndarray
    gcv: float
    penalty_d: float
    rss: float = float("nan")
    n_obs: int = 0
    forward_rss: list = field(default_factory=list)
    forward_gcv: float = float("nan")

    def design(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.column_stack([b.evaluate(X) for b in self.basis])

    def predict(self, X):
        return self.design(X) @ self.coefficients

    @property
    def max_degree(self) -> int:
        return max((b.degree for b in self.basis), default=0)

    def __str__(self):
        terms = [f"{c:+.4f}*{b}" for b, c in zip(self.basis, self.coefficients)]
        return " ".join(terms)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "penalty_d": self.penalty_d,
            "gcv": self.gcv,
            "rss": self.rss,
            "n_obs": self.n_obs,
            "terms": [
                {
                    "coefficient": float(c),
                    "factors": [
                        {"var": h.var, "knot": h.knot, "sign": "+" if h.sign > 0 else "-"} for h in b.factors
                    ],
                }
                for b, c in zip(self.basis, self.coefficients)
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> "MarsModel":
        if doc.get("schema") != SCHEMA:
            raise ValueError(f"expected schema {SCHEMA!r}, got {doc.get('schema')!r}")
        basis, coefs = [], []
        for term in doc["terms"]:
            factors = tuple(
                Hinge(int(f["var"]), float(f["knot"]), 1 if f["sign"] == "+" else -1) for f in term["factors"]
            )
            basis.append(MarsBasisFn(factors))
            coefs.append(float(term["coefficient"]))
        return cls(
            basis=basis,
            coefficients=np.array(coefs),
            gcv=float(doc.get("gcv", float("nan"))),
            penalty_d=float(doc.get("penalty_d", 3.0)),
            rss=float(doc.get("rss", float("nan"))),
            n_obs=int(doc.get("n_obs", 0)),
        )

    @classmethod
    def loads(cls, text: str) -> "MarsModel":
        return cls.from_dict(json.loads(text))


def mars_predict(model: MarsModel, x) -> float:
    x = np.asarray(x, dtype=float)
    n_vars = 1 + max((h.var for b in model.basis for h in b.factors), default=-1)
    if x.ndim != 1 or x.size < n_vars:
        raise ValueError(f"expected a vector with at least {n_vars} entries, got shape {x.shape}")
    return float(model.predict(x[None, :])[0])


def _orthonormal(B):
    Q, R = np.linalg.qr(B)
    keep = np.abs(np.diag(R)) > 1e-10 * max(np.abs(R[0, 0]), 1e-300)
    return Q[:, keep]


def _knot_candidates(values, endspan: int, minspan: int):
    v = np.sort(values)
    if endspan and v.size > 2 * endspan:
        v = v[endspan:-endspan]
    if minspan > 1:
        v = v[::minspan]
    return np.unique(v)


def _best_addition(X, y_res, Q, basis, cols, max_interaction, room, endspan=0, minspan=1):
    """Scan every (parent, variable, knot) candidate.

    Returns (reduction, new basis functions) for the best candidate; the new
    functions are the reflected pair, or a single hinge when the mate is
    degenerate or only one slot is left.
    """
    n = X.shape[0]
    best = (0.0, None)
    for m, parent in enumerate(basis):
        if parent.degree >= max_interaction:
            continue
        pcol = cols[m]
        active = pcol > 0
        if not active.any():
            continue
        for v in range(X.shape[1]):
            if v in parent.variables:
                continue
            knots = _knot_candidates(X[active, v], endspan, minspan)
            xv = X[:, v][:, None]
            C1 = pcol[:, None] * np.maximum(xv - knots[None, :], 0.0)
            C2 = pcol[:, None] * np.maximum(knots[None, :] - xv, 0.0)
            T1 = C1 - Q @ (Q.T @ C1)
            T2 = C2 - Q @ (Q.T @ C2)
            a = np.einsum("ij,ij->j", T1, T1)
            c = np.einsum("ij,ij->j", T2, T2)
            b = np.einsum("ij,ij->j", T1, T2)
            r1 = T1.T @ y_res
            r2 = T2.T @ y_res
            ok1 = a > 1e-10 * np.maximum(np.einsum("ij,ij->j", C1, C1), 1e-300)
            ok2 = c > 1e-10 * np.maximum(np.einsum("ij,ij->j", C2, C2), 1e-300)
            s1 = np.where(ok1, r1**2 / np.where(ok1, a, 1.0), 0.0)
            s2 = np.where(ok2, r2**2 / np.where(ok2, c, 1.0), 0.0)
            det = a * c - b * b
            okp = ok1 & ok2 & (det > 1e-10 * np.maximum(a * c, 1e-300))
            safe = np.where(okp, det, 1.0)
            pair = np.where(okp, (c * r1**2 - 2 * b * r1 * r2 + a * r2**2) / safe, np.maximum(s1, s2))
            if room >= 2:
                gains = pair
            else:
                gains = np.maximum(s1, s2)
            k = int(np.argmax(gains))
            if gains[k] <= best[0]:
                continue
            knot = float(knots[k])
            plus = MarsBasisFn(parent.factors + (Hinge(v, knot, +1),))
            minus = MarsBasisFn(parent.factors + (Hinge(v, knot, -1),))
            if room >= 2 and okp[k]:
                new = [plus, minus]
            elif ok1[k] and (s1[k] >= s2[k] or not ok2[k]):
                new = [plus]
            else:
                new = [minus]
            best = (float(gains[k]), new)
    return best


def mars_fit(
    X,
    y,
    max_terms: int = 15,
    penalty_d: float = 3.0,
    max_interaction: int = 2,
    threshold: float = 1e-3,
    endspan: int = 0,
    minspan: int = 1,
) -> MarsModel:
    """Fit a MARS model.

    ``threshold`` stops the forward pass once the best addition would lower
    RSS by less than that fraction of the total sum of squares. Knots come
    from the observed values of the variable where the parent is nonzero;
    ``endspan`` drops that many values at each end and ``minspan`` keeps
    every ``minspan``-th one (the defaults search all of them).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    if max_terms < 1:
        raise ValueError("max_terms must be >= 1")
    if p < 1 or y.shape != (n,):
        raise ValueError("X must be n x p with p >= 1 and y of length n")
    if n <= 2 * max_terms:
        raise ValueError(f"need n > 2*max_terms, got n={n}, max_terms={max_terms}")

    basis = [INTERCEPT]
    cols = [np.ones(n)]
    tss = float(np.sum((y - y.mean()) ** 2))
    rss = tss
    forward_rss = [rss]
    Q = _orthonormal(np.column_stack(cols))
    while len(basis) < max_terms and rss > 1e-14 * max(tss, 1e-300):
        res = y - Q @ (Q.T @ y)
        gain, new = _best_addition(
            X, res, Q, basis, cols, max_interaction, max_terms - len(basis), endspan, minspan
        )
        if new is None or gain <= threshold * tss or gain <= 0:
            break
        basis.extend(new)
        cols.extend(b.evaluate(X) for b in new)
        Q = _orthonormal(np.column_stack(cols))
        new_rss = float(np.sum((y - Q @ (Q.T @ y)) ** 2))
        if not new_rss < rss:
            # numerically no progress: undo and stop
            del basis[-len(new):]
            del cols[-len(new):]
            Q = _orthonormal(np.column_stack(cols))
            break
        rss = new_rss
        forward_rss.append(rss)

    full = np.column_stack(cols)
    full_fit = ols(full, y)
    forward_gcv = gcv_score(full_fit.residual_sum_squares, n, len(basis), penalty_d)

    # backward elimination over column indices; the intercept (0) stays
    active = list(range(len(basis)))
    best_active, best_gcv = list(active), forward_gcv
    while len(active) > 1:
        trial = None
        for idx in active[1:]:
            keep = [a for a in active if a != idx]
            r = ols(full[:, keep], y).residual_sum_squares
            if trial is None or r < trial[0]:
                trial = (r, keep)
        active = trial[1]
        g = gcv_score(trial[0], n, len(active), penalty_d)
        if g < best_gcv:
            best_active, best_gcv = list(active), g

    final_basis = [basis[i] for i in best_active]
    fit = ols(full[:, best_active], y)
    return MarsModel(
        basis=final_basis,
        coefficients=fit.coefficients,
        gcv=gcv_score(fit.residual_sum_squares, n, len(final_basis), penalty_d),
        penalty_d=penalty_d,
        rss=fit.residual_sum_squares,
        n_obs=n,
        forward_rss=forward_rss,
        forward_gcv=forward_gcv,
    )
