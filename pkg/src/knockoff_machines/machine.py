"""Training and sampling of deep knockoff machines."""
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import checkpoint
from .errors import ConfigInvalid, FormatVersionMismatch, NonFiniteLoss, ShapeMismatch, ZeroVariance
from .gaussian import solve_sdp
from .losses import JointBatch, KernelSpec, LossWeights, loss_total
from .netcore import Network, SgdState, backward, forward, global_norm, init_machine, sgd_step
from .numerics import make_rng, substreams

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Inputs of the training loop. ``hidden=None`` means ``10 * p``."""

    iterations: int = 1000
    lr: float = 0.001
    momentum: float = 0.9
    batch_fraction: float = 0.25
    weights: LossWeights = field(default_factory=LossWeights)
    kernel: KernelSpec = field(default_factory=KernelSpec)
    hidden: int = None
    layers: int = 6
    seed: int = 0
    eval_every: int = 100
    holdout_fraction: float = 0.0
    clip_norm: float = 10.0
    estimator: str = "biased"
    decorrelation: str = "sdp"

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if isinstance(self.kernel, dict):
            self.kernel = KernelSpec(**self.kernel)
        if self.iterations < 1:
            raise ConfigInvalid("iterations must be at least 1")
        if not 0 < self.batch_fraction <= 1:
            raise ConfigInvalid("batch_fraction must lie in (0, 1]")
        if not 0 <= self.holdout_fraction <= 0.5:
            raise ConfigInvalid("holdout_fraction must lie in [0, 0.5]")
        if not self.lr > 0 or not 0 <= self.momentum < 1:
            raise ConfigInvalid("need lr > 0 and momentum in [0, 1)")
        if self.layers < 1 or (self.hidden is not None and self.hidden < 1):
            raise ConfigInvalid("hidden width and layer count must be positive")
        if self.eval_every < 1:
            raise ConfigInvalid("eval_every must be positive")
        if self.clip_norm is not None and self.clip_norm <= 0:
            self.clip_norm = None
        if self.estimator not in ("biased", "unbiased"):
            raise ConfigInvalid(f"unknown MMD estimator {self.estimator!r}")
        if self.decorrelation not in ("sdp", "simple"):
            raise ConfigInvalid(f"unknown decorrelation penalty {self.decorrelation!r}")

    def to_dict(self):
        d = asdict(self)
        d["kernel"] = {"bandwidths": list(self.kernel.bandwidths), "weights": list(self.kernel.weights)}
        return d

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TrainHistory:
    train_loss: np.ndarray
    mmd: np.ndarray
    second_order: np.ndarray
    decorrelation: np.ndarray
    grad_sq_norm: np.ndarray
    holdout_iter: np.ndarray
    holdout_loss: np.ndarray


class KnockoffMachine:
    """A trained network plus the column standardization it was trained on."""

    def __init__(self, net, mean, scale, s_star, config, history=None):
        self.net = net
        self.mean = np.asarray(mean, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)
        self.s_star = None if s_star is None else np.asarray(s_star, dtype=np.float64)
        self.config = config
        self.history = history

    @property
    def p(self):
        return self.net.p

    def standardize(self, X):
        return (X - self.mean) / self.scale

    def destandardize(self, Z):
        return Z * self.scale + self.mean

    def generate(self, X, rng):
        return generate(self, X, rng)

    def knockoffs(self, X, rng):
        return generate(self, X, rng)

    def save(self, path):
        save_checkpoint(self, path)


def _standardization(X):
    mean = X.mean(axis=0)
    scale = X.std(axis=0, ddof=1)
    zero = np.flatnonzero(scale == 0)
    if zero.size:
        raise ZeroVariance(int(zero[0]))
    return mean, scale


def train(X, cfg):
    """Fit a knockoff machine to the rows of ``X``.

    Each iteration draws a mini-batch without replacement, splits it into two
    halves for the MMD terms, draws fresh noise for the batch and a random
    swap set (each coordinate with probability 1/2), then takes one SGD step
    on the weighted objective. Returns the trained :class:`KnockoffMachine`;
    its ``history`` holds per-iteration losses and squared gradient norms.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 8:
        raise ConfigInvalid("training needs a 2-d matrix with at least 8 rows")
    if not np.all(np.isfinite(X)):
        raise ConfigInvalid("training data contain non-finite values")
    n, p = X.shape
    init_rng, batch_rng, eval_rng = substreams(cfg.seed, 3)

    mean, scale = _standardization(X)
    Xs = (X - mean) / scale
    n_hold = int(round(cfg.holdout_fraction * n))
    if n_hold:
        perm = batch_rng.permutation(n)
        Xhold, Xs = Xs[perm[:n_hold]], Xs[perm[n_hold:]]
    n_train = Xs.shape[0]
    batch = max(4, int(round(cfg.batch_fraction * n_train)))
    half = batch // 2

    s_star = None
    if cfg.decorrelation == "sdp":
        corr = np.corrcoef(Xs, rowvar=False) if p > 1 else np.ones((1, 1))
        s_star = solve_sdp(np.atleast_2d(corr)).s

    h = cfg.hidden or 10 * p
    net = init_machine(p, h, cfg.layers, init_rng)
    opt = SgdState(net, cfg.lr, cfg.momentum)
    T = cfg.iterations
    hist = {k: np.zeros(T) for k in ("train_loss", "mmd", "second_order", "decorrelation", "grad_sq_norm")}
    hold_iter, hold_loss = [], []

    net.train()
    for t in range(T):
        idx = batch_rng.choice(n_train, size=batch, replace=False)
        Xb = Xs[idx]
        V = batch_rng.standard_normal((batch, p))
        mask = batch_rng.random(p) < 0.5
        Xt = forward(net, Xb, V)
        L = loss_total(
            JointBatch(Xb[:half], Xt[:half]),
            JointBatch(Xb[half:], Xt[half:]),
            mask, cfg.kernel, cfg.weights, s_star, cfg.estimator, grad=True, fast=True,
        )
        if not math.isfinite(L.total):
            raise NonFiniteLoss(t)
        grads = backward(net, np.concatenate(L.grad))
        norm = global_norm(grads)
        hist["train_loss"][t] = L.total
        hist["mmd"][t] = L.mmd
        hist["second_order"][t] = L.second_order
        hist["decorrelation"][t] = L.decorrelation
        hist["grad_sq_norm"][t] = norm * norm
        if cfg.clip_norm is not None and norm > cfg.clip_norm:
            factor = cfg.clip_norm / norm
            grads = {k: g * factor for k, g in grads.items()}
        sgd_step(net, opt, grads)

        if n_hold >= 4 and ((t + 1) % cfg.eval_every == 0 or t == T - 1):
            hold_iter.append(t + 1)
            hold_loss.append(_holdout_loss(net, Xhold, cfg, s_star, eval_rng))
            net.train()
        if (t + 1) % max(1, T // 10) == 0:
            log.info("iteration %d/%d loss %.5f", t + 1, T, L.total)

    net.eval()
    history = TrainHistory(
        hist["train_loss"], hist["mmd"], hist["second_order"], hist["decorrelation"],
        hist["grad_sq_norm"], np.array(hold_iter, dtype=np.float64), np.array(hold_loss),
    )
    return KnockoffMachine(net, mean, scale, s_star, cfg, history)


def _holdout_loss(net, Xhold, cfg, s_star, rng):
    net.eval()
    half = Xhold.shape[0] // 2
    V = rng.standard_normal(Xhold.shape)
    Xt = forward(net, Xhold, V)
    mask = rng.random(Xhold.shape[1]) < 0.5
    L = loss_total(
        JointBatch(Xhold[:half], Xt[:half]), JointBatch(Xhold[half : 2 * half], Xt[half : 2 * half]),
        mask, cfg.kernel, cfg.weights, s_star, cfg.estimator, fast=True,
    )
    return L.total


def generate(machine, X, rng):
    """Knockoff copies of the rows of ``X`` with fresh noise from ``rng``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != machine.p:
        raise ShapeMismatch(f"expected {machine.p} columns, got shape {X.shape}")
    net = machine.net
    was_training = net.training
    net.eval()
    V = make_rng(rng).standard_normal(X.shape)
    out = machine.destandardize(forward(net, machine.standardize(X), V))
    if was_training:
        net.train()
    return out


def grad_norm_monitor(history, window=100):
    """Means of the squared gradient norm over consecutive windows."""
    g = np.asarray(history.grad_sq_norm if hasattr(history, "grad_sq_norm") else history)
    count = math.ceil(len(g) / window)
    return np.array([g[i * window : (i + 1) * window].mean() for i in range(count)])


def window_means(values, fraction):
    """Mean of the first and last ``fraction`` of a series."""
    values = np.asarray(values)
    w = max(1, int(len(values) * fraction))
    return float(values[:w].mean()), float(values[-w:].mean())


def save_checkpoint(machine, path):
    net = machine.net
    tensors = {}
    for name in net.param_shapes():
        tensors[name] = net.params[name]
    for name in net.buffer_shapes():
        tensors[name] = net.buffers[name]
    tensors["standardize_mean"] = machine.mean
    tensors["standardize_scale"] = machine.scale
    if machine.s_star is not None:
        tensors["s_star"] = machine.s_star
    if machine.history is not None:
        tensors["history_train_loss"] = machine.history.train_loss
        tensors["history_grad_sq_norm"] = machine.history.grad_sq_norm
        tensors["history_holdout_iter"] = machine.history.holdout_iter
        tensors["history_holdout_loss"] = machine.history.holdout_loss
    cfg = machine.config
    meta = {
        "p": net.p,
        "h": net.h,
        "K": net.K,
        "standardization": {"mean": machine.mean.tolist(), "scale": machine.scale.tolist()},
        "s_star": None if machine.s_star is None else machine.s_star.tolist(),
        "config": cfg.to_dict() if cfg is not None else None,
        "config_digest": cfg.digest() if cfg is not None else None,
    }
    checkpoint.write_container(path, meta, tensors)


def load_checkpoint(path):
    meta, tensors = checkpoint.read_container(path)
    try:
        net = Network(meta["p"], meta["h"], meta["K"])
        net.params = {name: tensors[name].copy() for name in net.param_shapes()}
        net.buffers = {name: tensors[name].copy() for name in net.buffer_shapes()}
    except KeyError as exc:
        raise FormatVersionMismatch(f"{path}: missing tensor {exc}") from None
    net.eval()
    cfg = TrainConfig(**meta["config"]) if meta.get("config") else None
    history = None
    if "history_train_loss" in tensors:
        n = len(tensors["history_train_loss"])
        history = TrainHistory(
            tensors["history_train_loss"], np.full(n, np.nan), np.full(n, np.nan), np.full(n, np.nan),
            tensors["history_grad_sq_norm"], tensors["history_holdout_iter"], tensors["history_holdout_loss"],
        )
    return KnockoffMachine(
        net, tensors["standardize_mean"], tensors["standardize_scale"], tensors.get("s_star"), cfg, history
    )
