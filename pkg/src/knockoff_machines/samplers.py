"""Knockoff samplers behind one interface: ``sampler.knockoffs(X, rng)``."""
import numpy as np

from .datagen import ar1_cov
from .errors import BadParam
from .gaussian import GaussianModel
from .machine import KnockoffMachine, train
from .numerics import make_rng

SAMPLERS = ("machine", "second-order", "oracle", "identity", "independent", "misspecified")


class IdentitySampler:
    """Returns the features themselves; exchangeable but useless for selection."""

    def knockoffs(self, X, rng):
        return np.array(X, dtype=np.float64, copy=True)


class IndependentSampler:
    """Draws each column independently from ``N(mean_j, scale_j^2)``, ignoring ``X``."""

    def __init__(self, mean, scale):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)

    @classmethod
    def fit(cls, X):
        return cls(X.mean(axis=0), X.std(axis=0, ddof=1))

    def knockoffs(self, X, rng):
        Z = make_rng(rng).standard_normal(np.shape(X))
        return self.mean + Z * self.scale


def build_sampler(name, dist=None, X_train=None, train_cfg=None, misspecified_rho=0.0, method="sdp"):
    """Construct a sampler by name.

    ``machine`` and ``second-order`` are fit on ``X_train``; ``oracle`` uses
    the exact law of ``dist``; ``misspecified`` is the Gaussian oracle of an
    AR(1) model with correlation ``misspecified_rho``.
    """
    if name == "identity":
        return IdentitySampler()
    if name == "oracle":
        if dist is None:
            raise BadParam("the oracle sampler needs a distribution")
        return dist.oracle(method)
    if name == "misspecified":
        p = dist.p if dist is not None else np.shape(X_train)[1]
        return GaussianModel.from_cov(ar1_cov(p, misspecified_rho), 0.0, method)
    if X_train is None:
        raise BadParam(f"sampler {name!r} needs training data")
    if name == "second-order":
        return GaussianModel.fit(X_train, 0.0, method)
    if name == "independent":
        return IndependentSampler.fit(X_train)
    if name == "machine":
        if train_cfg is None:
            raise BadParam("the machine sampler needs a training configuration")
        return train(X_train, train_cfg)
    raise BadParam(f"unknown sampler {name!r}; expected one of {SAMPLERS}")


__all__ = ["IdentitySampler", "IndependentSampler", "KnockoffMachine", "SAMPLERS", "build_sampler"]
