"""Second-order knockoff machinery and exact Gaussian / mixture oracles."""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import BadParam, ShapeMismatch, TooFewSamples
from .numerics import cholesky, make_rng, solve_psd, sym_eigs, symmetrize

log = logging.getLogger(__name__)


def estimate_covariance(X, shrinkage=0.0):
    """Unbiased sample covariance shrunk toward ``(trace/p) * I``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise TooFewSamples("covariance estimation needs at least 2 rows")
    if not 0 <= shrinkage <= 1:
        raise BadParam("shrinkage must lie in [0, 1]")
    Xc = X - X.mean(axis=0)
    S = symmetrize(Xc.T @ Xc / (X.shape[0] - 1))
    if shrinkage == 0:
        return S
    p = S.shape[0]
    target = (np.trace(S) / p) * np.eye(p)
    if shrinkage == 1:
        return target
    return (1 - shrinkage) * S + shrinkage * target


def cov_to_corr(Sigma):
    sd = np.sqrt(np.diag(Sigma))
    return symmetrize(Sigma / np.outer(sd, sd)), sd


def equicorrelated_s(Sigma):
    """Closed form ``min(1, 2 lambda_min) * 1`` for a correlation matrix."""
    lam = sym_eigs(Sigma)[0]
    return np.full(Sigma.shape[0], float(np.clip(2 * lam, 0.0, 1.0)))


@dataclass
class SdpResult:
    s: np.ndarray
    converged: bool
    sweeps: int

    @property
    def objective(self):
        return float(np.sum(np.abs(1 - self.s)))


def _coordinate_max(A0, j, tol):
    """Largest t with ``A0 - t e_j e_j^T`` PSD (``A0`` PSD)."""
    lam, U = np.linalg.eigh(A0)
    cut = tol * max(lam[-1], 1.0)
    keep = lam > cut
    u = U[j]
    if np.sum(u[~keep] ** 2) > 1e-12:
        return 0.0
    return 1.0 / np.sum(u[keep] ** 2 / lam[keep])


def _barrier_start(Sigma, margin):
    """Approximate SDP optimum from a log-barrier Newton method."""
    p = Sigma.shape[0]
    lam_min = sym_eigs(Sigma)[0]
    s = np.full(p, 0.5 * min(1.0, 2 * lam_min - margin))
    two_sigma = 2 * Sigma - margin * np.eye(p)

    def barrier(s, t):
        if np.any(s <= 0) or np.any(s >= 1):
            return np.inf
        try:
            L = np.linalg.cholesky(two_sigma - np.diag(s))
        except np.linalg.LinAlgError:
            return np.inf
        logdet = 2 * np.sum(np.log(np.diag(L)))
        return -t * s.sum() - logdet - np.sum(np.log(s)) - np.sum(np.log1p(-s))

    t = 1.0
    while 3 * p / t > 1e-9:
        for _ in range(100):
            Ainv = np.linalg.inv(two_sigma - np.diag(s))
            g = -t + np.diag(Ainv) - 1 / s + 1 / (1 - s)
            H = Ainv * Ainv + np.diag(1 / s**2 + 1 / (1 - s) ** 2)
            step = -np.linalg.solve(H, g)
            decrement = -g @ step
            if decrement / 2 < 1e-10:
                break
            f0 = barrier(s, t)
            a = 1.0
            while barrier(s + a * step, t) > f0 - 0.25 * a * decrement:
                a *= 0.5
                if a < 1e-12:
                    break
            s = s + a * step
        t *= 10
    return s


def solve_sdp(Sigma, margin=0.0, tol=1e-6, max_sweeps=1000):
    """Minimize ``sum_j |1 - s_j|`` over ``s in [0,1]^p`` with ``2 Sigma - diag(s) >= margin*I``.

    ``Sigma`` must be a correlation matrix. A log-barrier Newton solve gives
    a near-optimal interior point; cyclic coordinate ascent then raises each
    ``s_j`` to its exact feasibility limit until no coordinate moves by more
    than ``tol``. If ``2 lambda_min(Sigma) <= margin`` the zero vector is
    returned.
    """
    Sigma = symmetrize(Sigma)
    if not np.allclose(np.diag(Sigma), 1.0, atol=1e-8):
        raise BadParam("solve_sdp expects a correlation matrix (unit diagonal)")
    p = Sigma.shape[0]
    lam_min = sym_eigs(Sigma)[0]
    if 2 * lam_min - margin <= 1e-12:
        return SdpResult(np.zeros(p), True, 0)
    if p == 1:
        return SdpResult(np.array([min(1.0, 2.0 - margin)]), True, 0)

    s = _barrier_start(Sigma, margin)
    base = 2 * Sigma - margin * np.eye(p)
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        change = 0.0
        for j in range(p):
            A0 = base - np.diag(s)
            A0[j, j] += s[j]
            new = float(np.clip(_coordinate_max(A0, j, 1e-13), 0.0, 1.0))
            change = max(change, abs(new - s[j]))
            s[j] = new
        if change < tol:
            converged = True
            break
    if not converged:
        log.warning("SDP coordinate ascent hit the sweep cap (%d)", max_sweeps)
    return SdpResult(s, converged, sweeps)


def solve_s(Sigma, method="sdp"):
    """``s`` in covariance units for a covariance matrix ``Sigma``."""
    corr, sd = cov_to_corr(Sigma)
    if method == "sdp":
        s = solve_sdp(corr).s
    elif method == "equi":
        s = equicorrelated_s(corr)
    else:
        raise BadParam(f"unknown s method {method!r}")
    return s * sd**2


@dataclass
class GaussianModel:
    """Exact knockoff sampler for ``N(mean, cov)`` with diagonal shift ``s``.

    ``s`` is in covariance units. Factors are computed on construction.
    """

    mean: np.ndarray
    cov: np.ndarray
    s: np.ndarray
    _proj: np.ndarray = field(init=False, repr=False)
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.cov = symmetrize(self.cov)
        p = self.cov.shape[0]
        self.mean = np.broadcast_to(np.asarray(self.mean, dtype=np.float64), (p,)).copy()
        self.s = np.asarray(self.s, dtype=np.float64)
        if self.s.shape != (p,):
            raise ShapeMismatch(f"s must have length {p}")
        L = cholesky(self.cov)
        D = np.diag(self.s)
        inv_sigma_d = solve_psd(L, D)  # Sigma^{-1} diag(s)
        self._proj = np.eye(p) - inv_sigma_d
        cond_cov = symmetrize(2 * D - D @ inv_sigma_d)
        self._chol = cholesky(cond_cov)
        self._L = L

    @classmethod
    def fit(cls, X, shrinkage=0.0, method="sdp"):
        """Second-order model from data: sample mean, covariance and SDP ``s``."""
        cov = estimate_covariance(X, shrinkage)
        return cls(np.asarray(X).mean(axis=0), cov, solve_s(cov, method))

    @classmethod
    def from_cov(cls, cov, mean=0.0, method="sdp"):
        return cls(mean, cov, solve_s(cov, method))

    @property
    def p(self):
        return self.cov.shape[0]

    def logpdf(self, X):
        Xc = np.asarray(X) - self.mean
        z = np.linalg.solve(self._L, Xc.T)
        logdet = 2 * np.sum(np.log(np.diag(self._L)))
        return -0.5 * (np.sum(z * z, axis=0) + logdet + self.p * np.log(2 * np.pi))

    def knockoffs(self, X, rng):
        return gaussian_knockoffs(self, X, rng)


def gaussian_knockoffs(model, X, rng):
    """``mean + (X - mean)(I - Sigma^{-1} D) + V C^T`` with ``C C^T = 2D - D Sigma^{-1} D``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.p:
        raise ShapeMismatch(f"X must have {model.p} columns")
    V = make_rng(rng).standard_normal(X.shape)
    return model.mean + (X - model.mean) @ model._proj + V @ model._chol.T


@dataclass
class MixtureModel:
    weights: np.ndarray
    components: list

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.weights) != len(self.components) or not len(self.components):
            raise BadParam("need one weight per component")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1) > 1e-10:
            raise BadParam("mixture weights must be positive and sum to 1")

    @classmethod
    def from_covs(cls, weights, means, covs, method="sdp"):
        comps = [GaussianModel.from_cov(c, m, method) for m, c in zip(means, covs)]
        return cls(weights, comps)

    @property
    def p(self):
        return self.components[0].p

    def posterior(self, X):
        """``P(Z = k | x)`` per row, computed in log space."""
        logp = np.stack(
            [np.log(w) + c.logpdf(X) for w, c in zip(self.weights, self.components)], axis=1
        )
        return np.exp(logp - logsumexp(logp, axis=1, keepdims=True))

    def knockoffs(self, X, rng):
        return mixture_oracle_knockoffs(self, X, rng)


def mixture_oracle_knockoffs(model, X, rng):
    """Sample the latent component from its posterior, then a Gaussian knockoff."""
    rng = make_rng(rng)
    X = np.asarray(X, dtype=np.float64)
    post = model.posterior(X)
    u = rng.random(X.shape[0])
    labels = np.minimum((post.cumsum(axis=1) < u[:, None]).sum(axis=1), len(model.components) - 1)
    Xk = np.empty_like(X)
    for k, comp in enumerate(model.components):
        rows = labels == k
        if rows.any():
            Xk[rows] = gaussian_knockoffs(comp, X[rows], rng)
    return Xk
