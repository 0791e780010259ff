"""Knockoff scoring: swaps, mixture kernel, MMD estimators and the training loss.

Every loss that enters training has a companion ``*_grad`` returning the
gradient with respect to the knockoff matrix, which seeds backpropagation.
"""
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import (
    BadParam,
    DegenerateCovariance,
    IndexOutOfRange,
    ShapeMismatch,
    TooFewSamples,
    ZeroVariance,
)

DEFAULT_BANDWIDTHS = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0)


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian mixture kernel ``sum_i w_i exp(-|u - v|^2 / (2 xi_i^2))``."""

    bandwidths: tuple = DEFAULT_BANDWIDTHS
    weights: tuple = None

    def __post_init__(self):
        bw = tuple(float(b) for b in self.bandwidths)
        w = (1.0 / len(bw),) * len(bw) if self.weights is None else tuple(float(x) for x in self.weights)
        if not bw or len(bw) != len(w):
            raise BadParam("bandwidths and weights must be nonempty and the same length")
        if min(bw) <= 0 or min(w) <= 0:
            raise BadParam("bandwidths and weights must be positive")
        if abs(sum(w) - 1.0) > 1e-12:
            raise BadParam("kernel weights must sum to 1")
        object.__setattr__(self, "bandwidths", bw)
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class LossWeights:
    gamma: float = 1.0
    lam: float = 1.0
    delta: float = 1.0
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0

    def __post_init__(self):
        for name in ("gamma", "lam", "delta", "lambda1", "lambda2", "lambda3"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise BadParam(f"loss weight {name} must be finite and nonnegative, got {v}")


@dataclass
class JointBatch:
    """Paired rows of originals and knockoffs."""

    X: np.ndarray
    Xtilde: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Xtilde = np.asarray(self.Xtilde, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape != self.Xtilde.shape:
            raise ShapeMismatch(f"X {self.X.shape} and Xtilde {self.Xtilde.shape} differ")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def joined(self):
        return np.concatenate([self.X, self.Xtilde], axis=1)


@dataclass
class LossBreakdown:
    total: float
    mmd: float
    second_order: float
    decorrelation: float
    grad: tuple = field(default=None, repr=False)


def swap_mask(S, p):
    """Boolean mask from a collection of 0-based swap indices (or a mask)."""
    S = np.asarray(list(S) if not isinstance(S, np.ndarray) else S)
    if S.dtype == bool:
        if S.shape != (p,):
            raise IndexOutOfRange(f"swap mask must have length {p}")
        return S
    mask = np.zeros(p, dtype=bool)
    if S.size:
        S = S.astype(int)
        if S.min() < 0 or S.max() >= p:
            raise IndexOutOfRange(f"swap indices must lie in [0, {p})")
        if len(np.unique(S)) != len(S):
            raise IndexOutOfRange("swap indices must be unique")
        mask[S] = True
    return mask


def swap(b, S):
    """Exchange columns ``j in S`` between ``X`` and ``Xtilde``."""
    mask = swap_mask(S, b.p)
    X = np.where(mask, b.Xtilde, b.X)
    Xt = np.where(mask, b.X, b.Xtilde)
    return JointBatch(X, Xt)


def _swap_joined(Z, mask):
    """Apply a swap to rows stored as ``[X, Xtilde]`` concatenations."""
    p = mask.shape[0]
    out = Z.copy()
    out[:, :p][:, mask] = Z[:, p:][:, mask]
    out[:, p:][:, mask] = Z[:, :p][:, mask]
    return out


# ---------------------------------------------------------------- kernels


def kernel_eval(k, u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ShapeMismatch("kernel arguments must have equal length")
    d2 = float(np.sum((u - v) ** 2))
    return float(sum(w * np.exp(-d2 / (2 * xi * xi)) for xi, w in zip(k.bandwidths, k.weights)))


def sq_distances(A, B=None):
    """Pairwise squared Euclidean distances, clipped at zero."""
    if B is None:
        sq = (A * A).sum(axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (A @ A.T)
        np.fill_diagonal(d2, 0.0)
    else:
        d2 = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * (A @ B.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


@numba.njit(cache=True)
def _doubling_kernel(d2, bw, w, symmetric):
    # bandwidths ascending with ratio 2: exp(-d/(2 xi_b^2)) = exp(-d/(2 xi_{b+1}^2))^4
    K = np.empty_like(d2)
    S = np.empty_like(d2)
    nb = bw.shape[0]
    c = -0.5 / (bw[nb - 1] * bw[nb - 1])
    ws = w / (bw * bw)
    n, m = d2.shape
    for i in range(n):
        for j in range(i if symmetric else 0, m):
            e = math.exp(d2[i, j] * c)
            k = w[nb - 1] * e
            s = ws[nb - 1] * e
            for b in range(nb - 2, -1, -1):
                e = e * e
                e = e * e
                k += w[b] * e
                s += ws[b] * e
            K[i, j] = k
            S[i, j] = s
            if symmetric:
                K[j, i] = k
                S[j, i] = s
    return K, S


def _is_doubling(bandwidths):
    bw = np.asarray(bandwidths)
    return len(bw) > 1 and np.all(bw[1:] == 2 * bw[:-1])


def kernel_matrix(k, A, B=None, with_slope=False, fast=False):
    """Kernel matrix, and optionally ``sum_i w_i e_i / xi_i^2`` for gradients.

    ``B=None`` computes the self-kernel of ``A``. ``fast=True`` evaluates
    doubling bandwidth ladders with one exponential per entry (absolute error
    around 1e-13), used on the training path.
    """
    d2 = sq_distances(A, B)
    if fast and _is_doubling(k.bandwidths):
        K, S = _doubling_kernel(d2, np.asarray(k.bandwidths), np.asarray(k.weights), B is None)
        return (K, S) if with_slope else K
    K = np.zeros_like(d2)
    slope = np.zeros_like(d2) if with_slope else None
    for xi, w in zip(k.bandwidths, k.weights):
        e = np.exp(d2 * (-0.5 / (xi * xi)))
        K += w * e
        if with_slope:
            slope += (w / (xi * xi)) * e
    return (K, slope) if with_slope else K


# ---------------------------------------------------------------- MMD


def _check_samples(A, B, minimum):
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise ShapeMismatch(f"sample dimensions differ: {A.shape[1]} vs {B.shape[1]}")
    if A.shape[0] < minimum or B.shape[0] < minimum:
        raise TooFewSamples(f"need at least {minimum} samples per set")
    return A, B


def _mmd_blocks(A, B, aa, bb, ab, unbiased, grad):
    """MMD from precomputed kernel blocks (``(K, slope)`` pairs when ``grad``)."""
    m, mp = A.shape[0], B.shape[0]
    if grad:
        (Kaa, Saa), (Kbb, Sbb), (Kab, Sab) = aa, bb, ab
    else:
        Kaa, Kbb, Kab = aa, bb, ab
    if unbiased:
        ca, cb = 1.0 / (m * (m - 1)), 1.0 / (mp * (mp - 1))
        taa = Kaa.sum() - np.trace(Kaa)
        tbb = Kbb.sum() - np.trace(Kbb)
    else:
        ca, cb = 1.0 / (m * m), 1.0 / (mp * mp)
        taa, tbb = Kaa.sum(), Kbb.sum()
    cab = 2.0 / (m * mp)
    value = ca * taa + cb * tbb - cab * Kab.sum()
    if not grad:
        return value
    # d k(u, v) / du = -(u - v) * slope(u, v); the diagonal carries no gradient
    dA = -2.0 * ca * (Saa.sum(axis=1)[:, None] * A - Saa @ A)
    dA += cab * (Sab.sum(axis=1)[:, None] * A - Sab @ B)
    dB = -2.0 * cb * (Sbb.sum(axis=1)[:, None] * B - Sbb @ B)
    dB += cab * (Sab.sum(axis=0)[:, None] * B - Sab.T @ A)
    return value, dA, dB


def _mmd(A, B, k, unbiased, grad, fast=False):
    aa = kernel_matrix(k, A, None, grad, fast)
    bb = kernel_matrix(k, B, None, grad, fast)
    ab = kernel_matrix(k, A, B, grad, fast)
    return _mmd_blocks(A, B, aa, bb, ab, unbiased, grad)


def mmd_unbiased(A, B, k):
    """Unbiased MMD^2 estimate (within-sample diagonals excluded); may be negative."""
    A, B = _check_samples(A, B, 2)
    return float(_mmd(A, B, k, True, False))


def mmd_biased(A, B, k):
    """Squared distance between empirical kernel mean embeddings (>= 0)."""
    A, B = _check_samples(A, B, 1)
    return float(max(_mmd(A, B, k, False, False), 0.0))


def mmd_grad(A, B, k, unbiased=False):
    """``(value, dA, dB)`` for either estimator."""
    A, B = _check_samples(A, B, 2 if unbiased else 1)
    return _mmd(A, B, k, unbiased, True)


def mmd_lower_bound(A, B, k):
    """``-(1/(n(n-1))) sum_i [k(a_i,a_i) + k(b_i,b_i) - k(a_i,b_i)]``."""
    A, B = _check_samples(A, B, 2)
    if A.shape != B.shape:
        raise ShapeMismatch("lower bound needs equal sample counts")
    n = A.shape[0]
    d2 = np.sum((A - B) ** 2, axis=1)
    kab = sum(w * np.exp(-d2 / (2 * xi * xi)) for xi, w in zip(k.bandwidths, k.weights))
    kself = sum(k.weights)
    return float(-np.sum(2 * kself - kab) / (n * (n - 1)))


# ---------------------------------------------------------------- second order


def _centered(M):
    return M - M.mean(axis=0)


def joint_covariance(b):
    """``(G_XX, G_XXt, G_XtXt)`` with the 1/(n-1) estimator."""
    if b.n < 2:
        raise TooFewSamples("covariance needs at least 2 rows")
    Xc, Tc = _centered(b.X), _centered(b.Xtilde)
    d = b.n - 1
    G_xx = Xc.T @ Xc / d
    G_tt = Tc.T @ Tc / d
    return 0.5 * (G_xx + G_xx.T), Xc.T @ Tc / d, 0.5 * (G_tt + G_tt.T)


def second_order_grad(b, w):
    """Second-order moment loss, its three terms, and d/dXtilde."""
    n, p = b.n, b.p
    if n < 2:
        raise TooFewSamples("second-order loss needs at least 2 rows")
    Xc, Tc = _centered(b.X), _centered(b.Xtilde)
    d = n - 1
    G_xx = Xc.T @ Xc / d
    G_tt = Tc.T @ Tc / d
    G_xt = Xc.T @ Tc / d
    norm = np.sum(G_xx * G_xx)
    if norm == 0:
        raise DegenerateCovariance("empirical covariance of X is identically zero")

    mean_diff = (b.X - b.Xtilde).mean(axis=0)
    t1 = np.dot(mean_diff, mean_diff) / p
    D2 = G_tt - G_xx
    t2 = np.sum(D2 * D2) / norm
    D3 = G_xt - G_xx
    np.fill_diagonal(D3, 0.0)
    t3 = np.sum(D3 * D3) / norm
    value = w.lambda1 * t1 + w.lambda2 * t2 + w.lambda3 * t3

    grad = np.broadcast_to(-2.0 * w.lambda1 * mean_diff / (p * n), b.Xtilde.shape).copy()
    dTc = (4.0 * w.lambda2 / (norm * d)) * (Tc @ D2) + (2.0 * w.lambda3 / (norm * d)) * (Xc @ D3)
    grad += dTc - dTc.mean(axis=0)
    return value, (t1, t2, t3), grad


def loss_second_order(b, w=LossWeights()):
    return float(second_order_grad(b, w)[0])


# ---------------------------------------------------------------- decorrelation


def decorrelation_simple_grad(b):
    Xc, Tc = _centered(b.X), _centered(b.Xtilde)
    sxx = np.sum(Xc * Xc, axis=0)
    stt = np.sum(Tc * Tc, axis=0)
    for name, s in (("X", sxx), ("Xtilde", stt)):
        zero = np.flatnonzero(s == 0)
        if zero.size:
            raise ZeroVariance(int(zero[0]), name)
    sxt = np.sum(Xc * Tc, axis=0)
    denom = np.sqrt(sxx * stt)
    corr = sxt / denom
    dTc = Xc / denom - Tc * (sxt / (np.sqrt(sxx) * stt ** 1.5))
    return float(corr.sum()), dTc - dTc.mean(axis=0)


def loss_decorrelation_simple(b):
    """Sum over columns of the Pearson correlation between X_j and Xtilde_j."""
    return decorrelation_simple_grad(b)[0]


def decorrelation_sdp_grad(b, s_star):
    s_star = np.asarray(s_star, dtype=np.float64)
    if s_star.shape != (b.p,):
        raise ShapeMismatch(f"s_star must have length {b.p}")
    if b.n < 2:
        raise TooFewSamples("decorrelation loss needs at least 2 rows")
    Xc, Tc = _centered(b.X), _centered(b.Xtilde)
    d = b.n - 1
    r = np.sum(Xc * Tc, axis=0) / d - 1.0 + s_star
    dTc = (2.0 / d) * Xc * r
    return float(np.dot(r, r)), dTc - dTc.mean(axis=0)


def loss_decorrelation_sdp(b, s_star):
    """``|diag(G_XXt) - 1 + s_star|^2`` on correlation-scale data."""
    return decorrelation_sdp_grad(b, s_star)[0]


# ---------------------------------------------------------------- MMD objective


def mmd_objective_grad(bprime, bsecond, S, k, estimator="biased", grad=True, fast=False):
    """Two-swap MMD objective and its gradient w.r.t. both knockoff halves.

    Compares ``(X', Xt')`` against the fully swapped ``(Xt'', X'')`` and
    against ``(X'', Xt'')`` with the columns in ``S`` swapped.
    """
    if estimator not in ("biased", "unbiased"):
        raise BadParam(f"unknown estimator {estimator!r}")
    unbiased = estimator == "unbiased"
    minimum = 2 if unbiased else 1
    if bprime.n < minimum or bsecond.n < minimum:
        raise TooFewSamples(f"each half needs at least {minimum} rows")
    p = bprime.p
    mask = swap_mask(S, p)
    P = bprime.joined()
    Q = np.concatenate([bsecond.Xtilde, bsecond.X], axis=1)
    R = _swap_joined(bsecond.joined(), mask)
    # a swap permutes coordinates identically in every row, so both swapped
    # sets share the within-set kernel of (X'', Xt'')
    pp = kernel_matrix(k, P, None, grad, fast)
    ss = kernel_matrix(k, Q, None, grad, fast)
    pq = kernel_matrix(k, P, Q, grad, fast)
    pr = kernel_matrix(k, P, R, grad, fast)
    if not grad:
        return float(_mmd_blocks(P, Q, pp, ss, pq, unbiased, False) + _mmd_blocks(P, R, pp, ss, pr, unbiased, False))
    v1, dP1, dQ = _mmd_blocks(P, Q, pp, ss, pq, unbiased, True)
    v2, dP2, dR = _mmd_blocks(P, R, pp, ss, pr, unbiased, True)
    d_prime = (dP1 + dP2)[:, p:]
    d_second = dQ[:, :p] + _swap_joined(dR, mask)[:, p:]
    return float(v1 + v2), d_prime, d_second


def loss_mmd(bprime, bsecond, S, k, estimator="biased"):
    return mmd_objective_grad(bprime, bsecond, S, k, estimator, grad=False)


def mmd_all_single_swaps(bprime, bsecond, k, estimator="unbiased"):
    """Slow reference: sum over j of MMD against the single-coordinate swap of j."""
    P = bprime.joined()
    est = mmd_unbiased if estimator == "unbiased" else mmd_biased
    total = 0.0
    for j in range(bprime.p):
        R = swap(bsecond, [j]).joined()
        total += est(P, R, k)
    return total


# ---------------------------------------------------------------- total


def loss_total(bprime, bsecond, S, k, w, s_star=None, estimator="biased", grad=False, fast=False):
    """Weighted knockoff objective with its per-term breakdown.

    The moment and decorrelation terms use the union of both halves; the MMD
    term uses the halves separately. With ``grad=True`` the breakdown also
    carries ``(dXt', dXt'')``. The decorrelation term is the SDP-target form
    when ``s_star`` is given, otherwise the sum of Pearson correlations.
    """
    full = JointBatch(
        np.concatenate([bprime.X, bsecond.X]), np.concatenate([bprime.Xtilde, bsecond.Xtilde])
    )
    n1 = bprime.n
    g_full = np.zeros_like(full.Xtilde)
    g1 = np.zeros_like(bprime.Xtilde)
    g2 = np.zeros_like(bsecond.Xtilde)

    j_mmd = j_so = j_dec = 0.0
    if w.gamma > 0:
        if grad:
            j_mmd, d1, d2 = mmd_objective_grad(bprime, bsecond, S, k, estimator, fast=fast)
            g1 += w.gamma * d1
            g2 += w.gamma * d2
        else:
            j_mmd = loss_mmd(bprime, bsecond, S, k, estimator)
    if w.lam > 0:
        j_so, _, d = second_order_grad(full, w)
        g_full += w.lam * d
    if w.delta > 0:
        if s_star is None:
            j_dec, d = decorrelation_simple_grad(full)
        else:
            j_dec, d = decorrelation_sdp_grad(full, s_star)
        g_full += w.delta * d

    total = w.gamma * j_mmd + w.lam * j_so + w.delta * j_dec
    out = LossBreakdown(float(total), float(j_mmd), float(j_so), float(j_dec))
    if grad:
        out.grad = (g1 + g_full[:n1], g2 + g_full[n1:])
    return out
