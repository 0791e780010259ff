"""Synthetic feature distributions, response simulation and CSV I/O."""
import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BadParam, NonFiniteEntry, ParseError, RaggedRows
from .gaussian import GaussianModel, MixtureModel
from .numerics import cholesky, make_rng, sample_gamma

KINDS = ("ar1-gaussian", "gaussian-mixture", "multivariate-t", "sparse-gaussian", "custom-gaussian")


def ar1_cov(p, rho):
    idx = np.arange(p)
    return rho ** np.abs(np.subtract.outer(idx, idx)).astype(np.float64)


def _check_rho(rho):
    if not -1 < rho < 1:
        raise BadParam(f"AR(1) correlation must lie in (-1, 1), got {rho}")


def sample_ar1(p, rho, n, rng):
    """Rows from ``N(0, Sigma)`` with ``Sigma_ij = rho^|i-j|`` via the AR recursion."""
    _check_rho(rho)
    if p < 1 or n < 1:
        raise BadParam("p and n must be positive")
    Z = make_rng(rng).standard_normal((n, p))
    X = np.empty_like(Z)
    X[:, 0] = Z[:, 0]
    c = math.sqrt(1 - rho * rho)
    for j in range(1, p):
        X[:, j] = rho * X[:, j - 1] + c * Z[:, j]
    return X


def sample_mixture(p, rhos=(0.3, 0.5, 0.7), n=1, rng=None, return_labels=False):
    """Equal-weight mixture of zero-mean AR(1) Gaussians."""
    for r in rhos:
        _check_rho(r)
    rng = make_rng(rng)
    if len(rhos) == 1:
        X = sample_ar1(p, rhos[0], n, rng)
        labels = np.zeros(n, dtype=int)
    else:
        labels = rng.integers(len(rhos), size=n)
        X = np.empty((n, p))
        for k, r in enumerate(rhos):
            rows = labels == k
            if rows.any():
                X[rows] = sample_ar1(p, r, int(rows.sum()), rng)
    return (X, labels) if return_labels else X


def sample_mvt(p, nu=3.0, rho=0.5, n=1, rng=None):
    """Unit-variance multivariate t: ``sqrt((nu-2)/nu) * Z / sqrt(Gamma)``."""
    if not nu > 2:
        raise BadParam(f"degrees of freedom must exceed 2, got {nu}")
    rng = make_rng(rng)
    Z = sample_ar1(p, rho, n, rng)
    G = sample_gamma(rng, nu / 2, nu / 2, n)
    return math.sqrt((nu - 2) / nu) * Z / np.sqrt(G)[:, None]


def sample_sparse_gaussian(p, L=30, n=1, rng=None):
    """Each row is ``sqrt(p/L) * eta`` on a random size-L support, zero elsewhere."""
    if not 1 <= L <= p:
        raise BadParam(f"support size L must satisfy 1 <= L <= p, got L={L}, p={p}")
    rng = make_rng(rng)
    eta = rng.standard_normal(n)
    # argsort of uniforms gives a uniform random L-subset per row
    support = np.argsort(rng.random((n, p)), axis=1)[:, :L]
    X = np.zeros((n, p))
    np.put_along_axis(X, support, (math.sqrt(p / L) * eta)[:, None], axis=1)
    return X


def sample_custom_gaussian(Sigma, n, rng, mean=None):
    L = cholesky(Sigma)
    Z = make_rng(rng).standard_normal((n, L.shape[0]))
    X = Z @ L.T
    return X if mean is None else X + mean


@dataclass
class DistributionSpec:
    kind: str = "ar1-gaussian"
    p: int = 100
    rho: float = 0.5
    rhos: tuple = (0.3, 0.5, 0.7)
    nu: float = 3.0
    L: int = 30
    Sigma: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise BadParam(f"unknown distribution kind {self.kind!r}; expected one of {KINDS}")
        if self.p < 1:
            raise BadParam("p must be positive")
        if self.kind in ("ar1-gaussian", "multivariate-t"):
            _check_rho(self.rho)
        if self.kind == "gaussian-mixture":
            for r in self.rhos:
                _check_rho(r)
        if self.kind == "multivariate-t" and not self.nu > 2:
            raise BadParam("nu must exceed 2")
        if self.kind == "sparse-gaussian" and not 1 <= self.L <= self.p:
            raise BadParam("L must satisfy 1 <= L <= p")
        if self.kind == "custom-gaussian":
            if self.Sigma is None:
                raise BadParam("custom-gaussian needs Sigma")
            self.Sigma = np.asarray(self.Sigma, dtype=np.float64)
            if self.Sigma.shape != (self.p, self.p):
                raise BadParam(f"Sigma must be {self.p} x {self.p}")

    def sample(self, n, rng):
        if self.kind == "ar1-gaussian":
            return sample_ar1(self.p, self.rho, n, rng)
        if self.kind == "gaussian-mixture":
            return sample_mixture(self.p, self.rhos, n, rng)
        if self.kind == "multivariate-t":
            return sample_mvt(self.p, self.nu, self.rho, n, rng)
        if self.kind == "sparse-gaussian":
            return sample_sparse_gaussian(self.p, self.L, n, rng)
        return sample_custom_gaussian(self.Sigma, n, rng)

    def covariance(self):
        """Population covariance (all kinds have zero mean)."""
        if self.kind in ("ar1-gaussian", "multivariate-t"):
            return ar1_cov(self.p, self.rho)
        if self.kind == "gaussian-mixture":
            return np.mean([ar1_cov(self.p, r) for r in self.rhos], axis=0)
        if self.kind == "sparse-gaussian":
            off = (self.L - 1) / (self.p - 1) if self.p > 1 else 0.0
            S = np.full((self.p, self.p), off)
            np.fill_diagonal(S, 1.0)
            return S
        return self.Sigma.copy()

    def oracle(self, method="sdp"):
        """Exact knockoff sampler for this distribution (Gaussian kinds only)."""
        if self.kind in ("ar1-gaussian", "custom-gaussian"):
            return GaussianModel.from_cov(self.covariance(), 0.0, method)
        if self.kind == "gaussian-mixture":
            k = len(self.rhos)
            covs = [ar1_cov(self.p, r) for r in self.rhos]
            return MixtureModel.from_covs(np.full(k, 1.0 / k), [np.zeros(self.p)] * k, covs, method)
        raise BadParam(f"no oracle available for {self.kind}")


@dataclass
class ResponseSpec:
    k: int = 30
    amplitude: float = 10.0
    random_signs: bool = False

    def __post_init__(self):
        if self.k < 1 or self.amplitude < 0:
            raise BadParam("need k >= 1 and amplitude >= 0")


def simulate_response(X, spec, rng):
    """``y = X beta + N(0, 1)`` with ``k`` nonzero ``beta_j = a / sqrt(m)``.

    Returns ``(y, support, beta)``; ``support`` is sorted.
    """
    rng = make_rng(rng)
    m, p = X.shape
    if spec.k > p:
        raise BadParam(f"signal count {spec.k} exceeds p={p}")
    support = np.sort(rng.choice(p, size=spec.k, replace=False))
    beta = np.zeros(p)
    beta[support] = spec.amplitude / math.sqrt(m)
    if spec.random_signs:
        beta[support] *= rng.choice([-1.0, 1.0], size=spec.k)
    y = X @ beta + rng.standard_normal(m)
    return y, support, beta


def load_csv(path, has_header=False):
    """Read a rectangular numeric CSV; returns ``(matrix, column_names or None)``.

    ``has_header="auto"`` treats the first record as a header when any of its
    fields is not a number.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_csv(fh, has_header)


def parse_csv(fh, has_header=False):
    if isinstance(fh, str):
        fh = io.StringIO(fh)
    names = None
    rows = []
    width = None
    for lineno, record in enumerate(csv.reader(fh), start=1):
        if not record or (record[0].startswith("#") and not rows and names is None):
            continue
        if has_header == "auto" and names is None and not rows:
            has_header = not all(_is_number(c) for c in record)
        if has_header and names is None:
            names = [c.strip() for c in record]
            width = len(names)
            continue
        if width is None:
            width = len(record)
        if len(record) != width:
            raise RaggedRows(lineno, len(record), width)
        vals = []
        for col, tok in enumerate(record, start=1):
            try:
                v = float(tok)
            except ValueError:
                raise ParseError(lineno, col, tok) from None
            if not math.isfinite(v):
                raise NonFiniteEntry(lineno, col)
            vals.append(v)
        rows.append(vals)
    if not rows:
        raise ParseError(0, 0, "<empty>")
    return np.array(rows, dtype=np.float64), names


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def write_csv(path_or_fh, X, names=None, comment=None):
    """Write a matrix with a header row, optionally preceded by ``# comment``."""
    X = np.asarray(X)
    names = names or [f"x{j + 1}" for j in range(X.shape[1])]
    own = isinstance(path_or_fh, (str, bytes)) or hasattr(path_or_fh, "__fspath__")
    fh = open(path_or_fh, "w", newline="", encoding="utf-8") if own else path_or_fh
    try:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in X:
            w.writerow([repr(float(v)) for v in row])
    finally:
        if own:
            fh.close()
