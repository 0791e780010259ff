"""Goodness-of-fit statistics for knockoff samplers.

Each statistic compares two independent sets of joint rows ``(x, x_tilde)``:
``Z1`` holds untouched rows and ``Z2`` holds rows after either swapping
every coordinate (``full``) or a random subset of them (``partial``). Valid
knockoffs make the two sets identically distributed.
"""
import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from .errors import BadParam, ShapeMismatch, TooFewSamples
from .losses import JointBatch, KernelSpec, _swap_joined, mmd_unbiased
from .numerics import make_rng, substreams

log = logging.getLogger(__name__)

HYPOTHESES = ("full", "partial")


@dataclass
class DiagnosticPair:
    Z1: np.ndarray
    Z2: np.ndarray
    hypothesis: str
    swap: np.ndarray = None
    _dist: np.ndarray = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.Z1 = np.asarray(self.Z1, dtype=np.float64)
        self.Z2 = np.asarray(self.Z2, dtype=np.float64)
        if self.Z1.ndim != 2 or self.Z1.shape != self.Z2.shape:
            raise ShapeMismatch(f"Z1 {self.Z1.shape} and Z2 {self.Z2.shape} must match")

    @property
    def n(self):
        return self.Z1.shape[0]

    def distances(self):
        """Euclidean distances among the pooled rows ``[Z1; Z2]`` (cached)."""
        if self._dist is None:
            self._dist = _pairwise_distances(np.concatenate([self.Z1, self.Z2]))
        return self._dist


@dataclass
class DiagnosticsReport:
    replicate: int
    hypothesis: str
    cov: float
    mmd: float
    knn: float
    energy: float
    abs_corr: float
    n: int
    p: int
    seed: int = None

    FIELDS = ("replicate", "hypothesis", "cov", "mmd", "knn", "energy", "abs_corr", "n", "p", "seed")


def make_pair(b, hypothesis, rng):
    """Split the joint rows in half after one shuffle and build ``(Z1, Z2)``.

    Shuffled even rows feed ``Z1`` and odd rows feed ``Z2``, so both sets are
    independent. For the partial hypothesis the swap set is drawn once, with
    each coordinate included with probability 1/2.
    """
    if hypothesis not in HYPOTHESES:
        raise BadParam(f"hypothesis must be one of {HYPOTHESES}, got {hypothesis!r}")
    if b.n < 4:
        raise TooFewSamples(f"need at least 4 joint rows, got {b.n}")
    rng = make_rng(rng)
    order = rng.permutation(b.n)
    m = b.n // 2
    Z = b.joined()
    Z1 = Z[order[0 : 2 * m : 2]]
    Z2 = Z[order[1 : 2 * m : 2]]
    if hypothesis == "full":
        mask = np.ones(b.p, dtype=bool)
    else:
        mask = rng.random(b.p) < 0.5
    return DiagnosticPair(Z1, _swap_joined(Z2, mask), hypothesis, np.flatnonzero(mask))


def cov_diagnostic(pair):
    """Unbiased estimate of ``||G1 - G2||_F^2`` for the second-moment matrices.

    Both sets are centered with their pooled mean. Under the null the pooled
    rows are exchangeable, so within- and between-set pair terms share one
    expectation and the estimate stays unbiased after centering.
    """
    n = pair.n
    if n < 2:
        raise TooFewSamples("covariance diagnostic needs n >= 2")
    mu = 0.5 * (pair.Z1.mean(axis=0) + pair.Z2.mean(axis=0))
    A = pair.Z1 - mu
    B = pair.Z2 - mu
    # sum_{i,j} (a_i . b_j)^2 = <A^T A, B^T B>_F; diagonal terms removed within sets
    GA = A.T @ A
    GB = B.T @ B
    within = np.sum(GA * GA) + np.sum(GB * GB)
    within -= np.sum(np.sum(A * A, axis=1) ** 2) + np.sum(np.sum(B * B, axis=1) ** 2)
    return float(within / (n * (n - 1)) - 2.0 * np.sum(GA * GB) / (n * n))


def mmd_diagnostic(pair, k=None):
    return mmd_unbiased(pair.Z1, pair.Z2, k or KernelSpec())


@numba.njit(cache=True)
def _pairwise_distances(Z):
    # direct differences with Kahan summation; no Gram-matrix cancellation
    n, d = Z.shape
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            s = 0.0
            c = 0.0
            for k in range(d):
                t = Z[i, k] - Z[j, k]
                y = t * t - c
                u = s + y
                c = (u - s) - y
                s = u
            D[i, j] = math.sqrt(s)
            D[j, i] = D[i, j]
    return D


@numba.njit(cache=True)
def _nearest(D):
    n = D.shape[0]
    out = np.empty(n, dtype=np.int64)
    ties = 0
    for i in range(n):
        best = np.inf
        arg = -1
        for j in range(n):
            if j == i:
                continue
            if D[i, j] < best:
                best = D[i, j]
                arg = j
            elif D[i, j] == best:
                ties += 1
        out[i] = arg
    return out, ties


def knn_diagnostic(pair):
    """Fraction of pooled points whose nearest neighbour is from the same set.

    Equals 1/2 in expectation when both sets share a distribution. Exact
    distance ties go to the lowest pooled index.
    """
    n = pair.n
    if n < 2:
        raise TooFewSamples("nearest-neighbour diagnostic needs n >= 2 per set")
    nn, ties = _nearest(pair.distances())
    if ties:
        log.warning("%d exact nearest-neighbour ties; resolved by lowest index", ties)
    group = np.arange(2 * n) >= n
    return float(np.mean(group == group[nn]))


def energy_diagnostic(pair):
    """Energy-distance statistic ``(n/2) (2 E|Z1-Z2| - E|Z1-Z1'| - E|Z2-Z2'|)``."""
    n = pair.n
    if n < 1:
        raise TooFewSamples("energy diagnostic needs n >= 1")
    D = pair.distances()
    cross = D[:n, n:].sum()
    w1 = D[:n, :n].sum()
    w2 = D[n:, n:].sum()
    return float(max(0.5 * n * (2 * cross - w1 - w2) / (n * n), 0.0))


def mean_abs_correlation(X, Xk):
    """Average over columns of ``|corr(X_j, Xk_j)|``; a proxy for knockoff power."""
    X = np.asarray(X, dtype=np.float64)
    Xk = np.asarray(Xk, dtype=np.float64)
    a = X - X.mean(axis=0)
    b = Xk - Xk.mean(axis=0)
    den = np.sqrt(np.sum(a * a, axis=0) * np.sum(b * b, axis=0))
    r = np.divide(np.sum(a * b, axis=0), den, out=np.zeros(X.shape[1]), where=den > 0)
    return float(np.mean(np.abs(r)))


def diagnose(X, Xk, rng, k=None, replicate=0, seed=None):
    """Both hypotheses for one joint sample; returns two reports."""
    b = JointBatch(X, Xk)
    corr = mean_abs_correlation(X, Xk)
    rng = make_rng(rng)
    reports = []
    for hyp in HYPOTHESES:
        pair = make_pair(b, hyp, rng)
        reports.append(
            DiagnosticsReport(
                replicate, hyp, cov_diagnostic(pair), mmd_diagnostic(pair, k),
                knn_diagnostic(pair), energy_diagnostic(pair), corr, pair.n, b.p, seed,
            )
        )
    return reports


def run_diagnostics(sampler, test_data, k=None, replicates=1, rng=None, seed=None):
    """Diagnostics for ``sampler`` over independent test sets.

    ``test_data`` is either a callable ``(rng) -> X`` drawing a fresh test set
    per replicate or a fixed matrix reused by every replicate. ``sampler``
    must expose ``knockoffs(X, rng)``. Each replicate uses its own substream.
    """
    rng = make_rng(seed if rng is None else rng)
    streams = substreams(rng, replicates)
    reports = []
    for r, stream in enumerate(streams):
        X = test_data(stream) if callable(test_data) else np.asarray(test_data, dtype=np.float64)
        Xk = sampler.knockoffs(X, stream)
        reports.extend(diagnose(X, Xk, stream, k, r, seed))
    return reports


def write_reports(path_or_fh, reports, comment=None, extra=None, header=True):
    """One CSV row per (replicate, hypothesis); ``extra`` adds constant columns."""
    extra = extra or {}
    own = isinstance(path_or_fh, str) or hasattr(path_or_fh, "__fspath__")
    fh = open(path_or_fh, "w", newline="", encoding="utf-8") if own else path_or_fh
    try:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(list(extra) + list(DiagnosticsReport.FIELDS))
        for rep in reports:
            d = asdict(rep)
            w.writerow(list(extra.values()) + [_fmt(d[f]) for f in DiagnosticsReport.FIELDS])
    finally:
        if own:
            fh.close()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v
