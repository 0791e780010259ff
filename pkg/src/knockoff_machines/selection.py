"""Elastic-net importance statistics, the knockoff filter and selection scoring.

The elastic net minimizes::

    (1/m) |y - c - D b|^2 + (1 - alpha) (tau / 2) |b|^2 + alpha tau |b|_1

over an intercept ``c`` and coefficients ``b``. Columns of ``D`` are
centered and scaled to unit mean square before fitting, so the penalty acts
on standardized coefficients; reported coefficients are on the original
scale.
"""
import csv
import io
import json
import logging
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import BadParam, EmptyTruth, ShapeMismatch
from .numerics import make_rng

log = logging.getLogger(__name__)

ALPHA_FLOOR = 1e-3


@dataclass
class ElasticNetFit:
    coef: np.ndarray
    intercept: float
    tau: float
    alpha: float
    converged: bool
    sweeps: int = 0
    scale: np.ndarray = field(default=None, repr=False)

    @property
    def p(self):
        return self.coef.shape[0] // 2

    @property
    def beta(self):
        return self.coef[: self.p]

    @property
    def beta_tilde(self):
        return self.coef[self.p :]

    def predict(self, D):
        return self.intercept + np.asarray(D) @ self.coef


@dataclass
class SelectionResult:
    W: np.ndarray
    threshold: float
    selected: np.ndarray
    q: float
    fdp: float = None
    power: float = None

    def to_dict(self):
        return {
            "W": [float(w) for w in self.W],
            "threshold": None if not np.isfinite(self.threshold) else float(self.threshold),
            "selected": [int(j) for j in self.selected],
            "q": self.q,
            "fdp": self.fdp,
            "power": self.power,
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    def to_csv(self):
        """One row per variable: index, W, selected flag."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variable", "W", "selected"])
        chosen = set(self.selected.tolist())
        for j, wj in enumerate(self.W):
            w.writerow([j, repr(float(wj)), int(j in chosen)])
        return buf.getvalue()


# ---------------------------------------------------------------- elastic net


def _standardize(D, y):
    D = np.asarray(D, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if D.ndim != 2 or D.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"design {D.shape} and response {y.shape} do not align")
    if D.shape[0] < 2:
        raise BadParam("need at least 2 observations")
    mean = D.mean(axis=0)
    Dc = D - mean
    scale = np.sqrt(np.mean(Dc * Dc, axis=0))
    scale[scale == 0] = 1.0  # constant columns stay at zero coefficient
    ymean = y.mean()
    return Dc / scale, y - ymean, mean, scale, ymean


def _gram(Ds, yc):
    m = Ds.shape[0]
    return Ds.T @ Ds / m, Ds.T @ yc / m, float(yc @ yc) / m


@numba.njit(cache=True)
def _objective(G, c, yy, b, alpha, tau):
    quad = yy - 2.0 * np.dot(c, b) + np.dot(b, G @ b)
    return quad + (1.0 - alpha) * 0.5 * tau * np.dot(b, b) + alpha * tau * np.sum(np.abs(b))


@numba.njit(cache=True)
def _fast_objective(c, yy, b, q, alpha, tau):
    # same value as _objective given the running product q = G b
    quad = yy - 2.0 * np.dot(c, b) + np.dot(b, q)
    return quad + (1.0 - alpha) * 0.5 * tau * np.dot(b, b) + alpha * tau * np.sum(np.abs(b))


@numba.njit(cache=True)
def _suboptimality(c, yy, b, q, alpha, tau):
    """Upper bound on objective minus optimum; inf when no bound applies.

    Uses the duality gap of the equivalent lasso on ridge-augmented data
    when the l1 weight is positive, and the strong-convexity bound
    ``|g|^2 / (2 * ridge)`` on the minimum-norm subgradient ``g`` when the
    l2 weight is positive.
    """
    l1 = alpha * tau
    l2 = (1.0 - alpha) * tau
    best = np.inf
    cb = np.dot(c, b)
    dual = 0.0
    g2 = 0.0
    for j in range(c.shape[0]):
        r = c[j] - q[j]
        v = abs(r - 0.5 * l2 * b[j])
        if v > dual:
            dual = v
        if b[j] > 0.0:
            gj = -2.0 * r + l2 * b[j] + l1
        elif b[j] < 0.0:
            gj = -2.0 * r + l2 * b[j] - l1
        else:
            gj = max(abs(2.0 * r) - l1, 0.0)
        g2 += gj * gj
    if l1 > 0.0:
        s = 1.0 if dual <= 0.5 * l1 else 0.5 * l1 / dual
        r2 = yy - 2.0 * cb + np.dot(b, q)
        gap = (1.0 + s * s) * (r2 + 0.5 * l2 * np.dot(b, b)) + l1 * np.sum(np.abs(b)) - 2.0 * s * (yy - cb)
        best = gap
    if l2 > 0.0:
        best = min(best, g2 / (2.0 * l2))
    return best


@numba.njit(cache=True)
def _cd_path(G, c, yy, alpha, taus, b0, tol, max_sweeps):
    d = c.shape[0]
    nt = taus.shape[0]
    B = np.zeros((nt, d))
    sweeps = np.zeros(nt, dtype=np.int64)
    converged = np.zeros(nt, dtype=np.bool_)
    worst_rise = 0.0
    b = b0.copy()
    q = G @ b
    scale = max(yy, 1e-300)
    for t in range(nt):
        tau = taus[t]
        thresh = 0.5 * alpha * tau
        ridge = 0.5 * (1.0 - alpha) * tau
        prev = _fast_objective(c, yy, b, q, alpha, tau)
        for sweep in range(max_sweeps):
            biggest = 0.0
            for j in range(d):
                a = G[j, j]
                if a == 0.0:
                    continue
                z = c[j] - q[j] + a * b[j]
                if z > thresh:
                    new = (z - thresh) / (a + ridge)
                elif z < -thresh:
                    new = (z + thresh) / (a + ridge)
                else:
                    new = 0.0
                delta = new - b[j]
                if delta != 0.0:
                    b[j] = new
                    for k in range(d):
                        q[k] += G[k, j] * delta
                    step = abs(delta) * np.sqrt(a)
                    if step > biggest:
                        biggest = step
            if sweep % 64 == 63:
                q = G @ b  # flush accumulated rounding in the running product
            cur = _fast_objective(c, yy, b, q, alpha, tau)
            rise = (cur - prev) / max(1.0, abs(prev))
            if rise > worst_rise:
                worst_rise = rise
            prev = cur
            sweeps[t] = sweep + 1
            # stop on a tiny step or a certified small suboptimality
            if biggest < tol or _suboptimality(c, yy, b, q, alpha, tau) <= tol * scale:
                converged[t] = True
                break
        B[t] = b
    return B, sweeps, converged, worst_rise


def _check_alpha_tau(alpha, tau):
    if not 0 <= alpha <= 1:
        raise BadParam(f"alpha must lie in [0, 1], got {alpha}")
    if np.any(np.asarray(tau) < 0):
        raise BadParam("tau must be nonnegative")


def elastic_net_path(design, y, alpha, taus, tol=1e-8, max_sweeps=100_000):
    """Fits along ``taus`` in the given order, each warm-started from the last."""
    _check_alpha_tau(alpha, taus)
    Ds, yc, mean, scale, ymean = _standardize(design, y)
    G, c, yy = _gram(Ds, yc)
    taus = np.atleast_1d(np.asarray(taus, dtype=np.float64))
    B, sweeps, conv, rise = _cd_path(G, c, yy, float(alpha), taus, np.zeros(c.shape[0]), tol, max_sweeps)
    if rise > 1e-10:
        log.warning("coordinate descent objective rose by a relative %.3g within a sweep", rise)
    fits = []
    for t, tau in enumerate(taus):
        coef = B[t] / scale
        if not conv[t]:
            log.warning("elastic net hit the sweep cap (%d) at tau=%.4g", max_sweeps, tau)
        fits.append(ElasticNetFit(coef, float(ymean - mean @ coef), float(tau), float(alpha), bool(conv[t]), int(sweeps[t]), scale))
    return fits


def elastic_net(design, y, alpha, tau, tol=1e-8, max_sweeps=100_000):
    """Single elastic-net fit by cyclic coordinate descent (see module docstring).

    Sweeps stop once the largest standardized coordinate step drops below
    ``tol`` or a certified bound on the suboptimality falls below ``tol``
    times the objective at zero.
    """
    return elastic_net_path(design, y, alpha, [tau], tol, max_sweeps)[0]


def objective(design, y, alpha, tau, coef):
    """Objective on the standardized problem at original-scale ``coef``."""
    Ds, yc, _, scale, _ = _standardize(design, y)
    G, c, yy = _gram(Ds, yc)
    return float(_objective(G, c, yy, np.asarray(coef, dtype=np.float64) * scale, float(alpha), float(tau)))


def descent_trace(design, y, alpha, tau, sweeps):
    """Objective after each of the first ``sweeps`` full passes from zero."""
    Ds, yc, _, _, _ = _standardize(design, y)
    G, c, yy = _gram(Ds, yc)
    b = np.zeros(c.shape[0])
    out = [float(_objective(G, c, yy, b, alpha, tau))]
    for _ in range(sweeps):
        B, _, _, _ = _cd_path(G, c, yy, float(alpha), np.array([float(tau)]), b, 0.0, 1)
        b = B[0]
        out.append(float(_objective(G, c, yy, b, alpha, tau)))
    return np.array(out)


def tau_max(design, y, alpha):
    """Smallest ``tau`` whose lasso-type solution is all zero (alpha floored at 1e-3)."""
    Ds, yc, _, _, _ = _standardize(design, y)
    m = Ds.shape[0]
    return 2.0 * float(np.max(np.abs(Ds.T @ yc))) / (m * max(alpha, ALPHA_FLOOR))


def tau_grid(design, y, alpha, count=100, ratio=1e-4):
    """``count`` log-spaced values from ``tau_max`` down to ``ratio * tau_max``."""
    top = tau_max(design, y, alpha)
    if top == 0:
        top = 1.0
    return np.geomspace(top, ratio * top, count)


def fold_ids(m, folds, rng):
    """Seeded assignment of ``m`` rows to ``folds`` near-equal folds."""
    if folds < 2 or folds > m:
        raise BadParam(f"need 2 <= folds <= {m}, got {folds}")
    ids = np.empty(m, dtype=np.int64)
    for f, rows in enumerate(np.array_split(make_rng(rng).permutation(m), folds)):
        ids[rows] = f
    return ids


def cv_errors(design, y, alpha, taus, folds=10, rng=0):
    """Mean held-out squared error per ``tau``."""
    design = np.asarray(design, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    taus = np.asarray(taus, dtype=np.float64)
    order = np.argsort(-taus, kind="stable")  # warm starts run from large to small
    ids = fold_ids(design.shape[0], folds, rng)
    err = np.zeros(len(taus))
    for f in range(folds):
        test = ids == f
        fits = elastic_net_path(design[~test], y[~test], alpha, taus[order])
        for idx, fit in zip(order, fits):
            r = y[test] - fit.predict(design[test])
            err[idx] += np.mean(r * r) / folds
    return err


def cv_tune(design, y, alpha, taus, folds=10, rng=0):
    """``tau`` with the smallest cross-validated error; ties go to the larger ``tau``."""
    taus = np.asarray(taus, dtype=np.float64)
    if taus.size == 0:
        raise BadParam("tau grid is empty")
    if taus.size == 1:
        return float(taus[0])
    err = cv_errors(design, y, alpha, taus, folds, rng)
    best = err.min()
    return float(taus[err == best].max())


def importance_fit(X, Xk, y, alpha, folds=10, rng=0, count=100):
    """Cross-validated elastic net on the augmented design ``[X, Xk]``."""
    D = np.concatenate([np.asarray(X, dtype=np.float64), np.asarray(Xk, dtype=np.float64)], axis=1)
    grid = tau_grid(D, y, alpha, count)
    tau = cv_tune(D, y, alpha, grid, folds, rng)
    return elastic_net(D, y, alpha, tau)


# ---------------------------------------------------------------- filter


def knockoff_stats(fit):
    """``W_j = |beta_j| - |beta_tilde_j|``."""
    coef = fit.coef if isinstance(fit, ElasticNetFit) else np.asarray(fit, dtype=np.float64)
    if coef.shape[0] % 2:
        raise ShapeMismatch("coefficient vector must have even length 2p")
    p = coef.shape[0] // 2
    return np.abs(coef[:p]) - np.abs(coef[p:])


def knockoff_threshold(W, q, plus=True):
    """Smallest nonzero ``|W_j|`` whose estimated FDP is at most ``q`` (inf if none)."""
    if not 0 < q < 1:
        raise BadParam(f"q must lie in (0, 1), got {q}")
    W = np.asarray(W, dtype=np.float64)
    cand = np.unique(np.abs(W[W != 0]))
    if cand.size == 0:
        return np.inf
    neg = np.sum(W[None, :] <= -cand[:, None], axis=1)
    pos = np.sum(W[None, :] >= cand[:, None], axis=1)
    ok = (int(plus) + neg) / np.maximum(1, pos) <= q
    return float(cand[ok][0]) if ok.any() else np.inf


def knockoff_filter(W, q=0.1, plus=True):
    W = np.asarray(W, dtype=np.float64)
    t = knockoff_threshold(W, q, plus)
    selected = np.flatnonzero(W >= t) if np.isfinite(t) else np.array([], dtype=np.int64)
    return SelectionResult(W, t, selected, q)


def score_selection(selected, truth):
    """``(fdp, power)`` of a selection against the true support."""
    truth = set(int(j) for j in np.atleast_1d(truth))
    if not truth:
        raise EmptyTruth("true support is empty; power is undefined")
    sel = set(int(j) for j in np.atleast_1d(selected))
    false = len(sel - truth)
    return false / max(1, len(sel)), len(sel & truth) / len(truth)


def select(X, Xk, y, alpha=0.1, q=0.1, folds=10, rng=0, truth=None, plus=True):
    """Full pipeline: cross-validated elastic net, statistics, filter, optional scoring."""
    fit = importance_fit(X, Xk, y, alpha, folds, rng)
    res = knockoff_filter(knockoff_stats(fit), q, plus)
    if truth is not None:
        res.fdp, res.power = score_selection(res.selected, truth)
    return res
