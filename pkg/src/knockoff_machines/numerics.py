"""Dense linear algebra and seeded random streams.

Random streams are numpy ``Generator`` objects over the counter-based
Philox bit generator; normal draws use numpy's Ziggurat sampler. Parallel
replicates get independent substreams spawned from one ``SeedSequence``.
"""
import numpy as np
from scipy.linalg import cho_solve

from .errors import BadParam, NonFinite, NotPositiveDefinite

# jitter escalation stops once it would exceed this fraction of trace/dim
MAX_JITTER_FRACTION = 1e-4


def make_rng(seed):
    """Return a Philox-backed ``numpy.random.Generator`` for ``seed``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def substreams(seed, count):
    """Independent child generators, stable in ``count`` order.

    ``seed`` may also be a generator, whose own seed sequence is spawned.
    """
    if isinstance(seed, np.random.Generator):
        return seed.spawn(count)
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


def symmetrize(m):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise BadParam(f"expected a square matrix, got shape {m.shape}")
    return 0.5 * (m + m.T)


def cholesky(m, jitter=0.0, escalate=True):
    """Lower Cholesky factor of ``m + jitter * I`` with jitter escalation.

    If the first attempt fails the jitter is raised (starting from
    ``1e-12 * trace/dim`` when ``jitter`` is zero) by factors of 10 until it
    would exceed ``1e-4 * trace/dim``. A zero matrix factors to zero.
    """
    if jitter < 0:
        raise BadParam("jitter must be nonnegative")
    m = symmetrize(m)
    if not np.all(np.isfinite(m)):
        raise NonFinite("matrix has non-finite entries")
    dim = m.shape[0]
    if jitter == 0 and not np.any(m):
        return np.zeros_like(m)
    scale = max(np.trace(m) / dim, 0.0)
    cap = MAX_JITTER_FRACTION * scale
    eye = np.eye(dim)
    current = float(jitter)
    while True:
        try:
            return np.linalg.cholesky(m + current * eye)
        except np.linalg.LinAlgError:
            pass
        if not escalate or scale <= 0:
            break
        current = current * 10 if current > 0 else 1e-12 * scale
        if current > cap:
            break
    raise NotPositiveDefinite("matrix is not positive definite after jitter escalation")


def sym_eigs(m):
    """Eigenvalues of a symmetric matrix in ascending order."""
    m = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise NonFinite("matrix has non-finite entries")
    return np.linalg.eigvalsh(symmetrize(m))


def sample_std_normal(rng, n, p):
    if n < 1 or p < 1:
        raise BadParam("n and p must be at least 1")
    return make_rng(rng).standard_normal((n, p))


def sample_gamma(rng, shape, rate, n):
    """I.i.d. Gamma(shape, rate) draws (rate parametrization)."""
    if not (shape > 0 and rate > 0):
        raise BadParam(f"gamma shape and rate must be positive, got {shape}, {rate}")
    return make_rng(rng).gamma(shape, 1.0 / rate, size=n)


def solve_psd(chol_lower, b):
    """Solve ``A x = b`` given the lower Cholesky factor of ``A``."""
    return cho_solve((chol_lower, True), b)
