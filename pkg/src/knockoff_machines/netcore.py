"""Fully connected knockoff network with batch normalization and PReLU.

Layout: ``[X, V]`` (2p) -> input layer (h) -> K hidden layers (h) -> output
layer (p). Every layer except the output applies
linear map -> batch normalization -> PReLU. The output layer is a plain
linear map. Gradients are computed by hand-written backpropagation.
"""
import numba
import numpy as np

from .errors import BadParam, ShapeMismatch, StaleCache
from .numerics import make_rng

BN_EPS = 1e-5
BN_MOMENTUM = 0.9  # running <- 0.9 * running + 0.1 * batch
PRELU_INIT = 0.25


def prelu(x, slope):
    return np.where(x >= 0, x, slope * x)


@numba.njit(cache=True)
def _bn_prelu_train(A, gamma, beta, slope):
    # batch statistics (two-pass variance), then normalize, scale, activate
    n, h = A.shape
    mu = np.zeros(h)
    for i in range(n):
        for j in range(h):
            mu[j] += A[i, j]
    mu /= n
    var = np.zeros(h)
    for i in range(n):
        for j in range(h):
            d = A[i, j] - mu[j]
            var[j] += d * d
    var /= n
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    A_hat = np.empty_like(A)
    Y = np.empty_like(A)
    Z = np.empty_like(A)
    for i in range(n):
        for j in range(h):
            a = (A[i, j] - mu[j]) * inv_std[j]
            y = gamma[j] * a + beta[j]
            A_hat[i, j] = a
            Y[i, j] = y
            Z[i, j] = y if y >= 0 else slope * y
    return mu, var, inv_std, A_hat, Y, Z


@numba.njit(cache=True)
def _bn_prelu_backward(dZ, A_hat, Y, inv_std, gamma, slope):
    n, h = dZ.shape
    g_slope = 0.0
    g_gamma = np.zeros(h)
    g_beta = np.zeros(h)
    for i in range(n):
        for j in range(h):
            y = Y[i, j]
            dy = dZ[i, j]
            if y < 0:
                g_slope += dy * y
                dy *= slope
            g_gamma[j] += dy * A_hat[i, j]
            g_beta[j] += dy
    # gradient through the batch mean and variance
    m1 = gamma * g_beta / n
    m2 = gamma * g_gamma / n
    dA = np.empty_like(dZ)
    g_bias = np.zeros(h)
    for i in range(n):
        for j in range(h):
            dy = dZ[i, j]
            if Y[i, j] < 0:
                dy *= slope
            d = inv_std[j] * (dy * gamma[j] - m1[j] - A_hat[i, j] * m2[j])
            dA[i, j] = d
            g_bias[j] += d
    return dA, g_gamma, g_beta, g_slope, g_bias


class Network:
    """Parameters, normalization buffers and forward cache of f(X, V).

    Trainable tensors live in ``params`` (an ordered dict), normalization
    running statistics in ``buffers``. Both are plain float64 arrays so the
    checkpoint writer can serialize them in a fixed order.
    """

    def __init__(self, p, h, K):
        if min(p, h, K) < 1:
            raise BadParam("p, h and K must all be at least 1")
        self.p, self.h, self.K = int(p), int(h), int(K)
        self.params = {}
        self.buffers = {}
        self.training = True
        self._cache = None
        self._version = 0

    @property
    def n_bn_layers(self):
        return self.K + 1

    def param_shapes(self):
        shapes = {}
        fan_in = 2 * self.p
        for l in range(self.n_bn_layers):
            shapes[f"W{l}"] = (fan_in, self.h)
            shapes[f"b{l}"] = (self.h,)
            shapes[f"gamma{l}"] = (self.h,)
            shapes[f"beta{l}"] = (self.h,)
            shapes[f"slope{l}"] = (1,)
            fan_in = self.h
        shapes["W_out"] = (self.h, self.p)
        shapes["b_out"] = (self.p,)
        return shapes

    def buffer_shapes(self):
        shapes = {}
        for l in range(self.n_bn_layers):
            shapes[f"running_mean{l}"] = (self.h,)
            shapes[f"running_var{l}"] = (self.h,)
        return shapes

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        self._cache = None
        return self

    def touch(self):
        """Mark parameters as modified so any cached forward pass goes stale."""
        self._version += 1

    def copy(self):
        other = Network(self.p, self.h, self.K)
        other.params = {k: v.copy() for k, v in self.params.items()}
        other.buffers = {k: v.copy() for k, v in self.buffers.items()}
        other.training = self.training
        return other


def init_machine(p, h, K, rng):
    """Glorot-uniform weights, zero biases, slopes 0.25, identity normalization."""
    rng = make_rng(rng)
    net = Network(p, h, K)
    for name, shape in net.param_shapes().items():
        if name.startswith("W"):
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            net.params[name] = rng.uniform(-bound, bound, size=shape)
        elif name.startswith("gamma"):
            net.params[name] = np.ones(shape)
        elif name.startswith("slope"):
            net.params[name] = np.full(shape, PRELU_INIT)
        else:
            net.params[name] = np.zeros(shape)
    for name, shape in net.buffer_shapes().items():
        net.buffers[name] = np.ones(shape) if "var" in name else np.zeros(shape)
    return net


def forward(net, X, V):
    """Compute knockoffs ``f(X, V)`` for an n x p batch.

    In train mode the batch statistics normalize each layer and the running
    statistics are updated; the intermediate values are cached for
    :func:`backward`. In eval mode the running statistics are used and
    nothing is cached.
    """
    X = np.asarray(X, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if X.ndim != 2 or X.shape != V.shape or X.shape[1] != net.p:
        raise ShapeMismatch(f"X {X.shape} and V {V.shape} must both be n x {net.p}")
    n = X.shape[0]
    if net.training and n < 2:
        raise ShapeMismatch("train-mode batch normalization needs at least 2 rows")

    Z = np.concatenate([X, V], axis=1)
    layers = []
    for l in range(net.n_bn_layers):
        P = net.params
        A = Z @ P[f"W{l}"] + P[f"b{l}"]
        if net.training:
            mu, var, inv_std, A_hat, Y, Z_out = _bn_prelu_train(
                A, P[f"gamma{l}"], P[f"beta{l}"], P[f"slope{l}"][0]
            )
            rm, rv = net.buffers[f"running_mean{l}"], net.buffers[f"running_var{l}"]
            rm *= BN_MOMENTUM
            rm += (1 - BN_MOMENTUM) * mu
            rv *= BN_MOMENTUM
            rv += (1 - BN_MOMENTUM) * var * n / (n - 1)
        else:
            mu = net.buffers[f"running_mean{l}"]
            inv_std = 1.0 / np.sqrt(net.buffers[f"running_var{l}"] + BN_EPS)
            A_hat = (A - mu) * inv_std
            Y = P[f"gamma{l}"] * A_hat + P[f"beta{l}"]
            Z_out = prelu(Y, P[f"slope{l}"][0])
        layers.append((Z, A_hat, inv_std, Y))
        Z = Z_out
    out = Z @ net.params["W_out"] + net.params["b_out"]

    net._cache = (net._version, X.shape, layers, Z) if net.training else None
    return out


def backward(net, grad_out):
    """Backpropagate ``dLoss/dXtilde`` through the last train-mode forward pass.

    Returns a dict of gradients keyed like ``net.params``.
    """
    if net._cache is None or net._cache[0] != net._version:
        raise StaleCache("backward requires a train-mode forward pass on the current parameters")
    _, shape, layers, Z_last = net._cache
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != shape:
        raise ShapeMismatch(f"upstream gradient {grad_out.shape} does not match output {shape}")
    P = net.params
    grads = {
        "W_out": Z_last.T @ grad_out,
        "b_out": grad_out.sum(axis=0),
    }
    dZ = grad_out @ P["W_out"].T
    for l in reversed(range(net.n_bn_layers)):
        Z_in, A_hat, inv_std, Y = layers[l]
        dA, g_gamma, g_beta, g_slope, g_bias = _bn_prelu_backward(
            dZ, A_hat, Y, inv_std, P[f"gamma{l}"], P[f"slope{l}"][0]
        )
        grads[f"slope{l}"] = np.array([g_slope])
        grads[f"gamma{l}"] = g_gamma
        grads[f"beta{l}"] = g_beta
        grads[f"W{l}"] = Z_in.T @ dA
        grads[f"b{l}"] = g_bias
        if l > 0:
            dZ = dA @ P[f"W{l}"].T
    return grads


def global_norm(grads):
    return float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))


class SgdState:
    """Learning rate, momentum coefficient and per-parameter velocity."""

    def __init__(self, net, lr, momentum=0.0):
        if not lr > 0:
            raise BadParam("learning rate must be positive")
        if not 0 <= momentum < 1:
            raise BadParam("momentum must lie in [0, 1)")
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.velocity = {k: np.zeros_like(v) for k, v in net.params.items()}


def sgd_step(net, state, grads):
    """``v <- momentum * v + g``; ``theta <- theta - lr * v`` (in place)."""
    for name, theta in net.params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, expected {theta.shape}")
        if state.momentum:
            v = state.velocity[name]
            v *= state.momentum
            v += g
            theta -= state.lr * v
        else:
            theta -= state.lr * g
    net.touch()
    return net
