"""
Dense feedforward networks with hand-derived gradients and an Adam optimizer.

A network is an ordered list of layers (affine, relu, tanh, sigmoid,
batchnorm). ``forward`` returns the output together with a cache holding
every intermediate that ``backward`` needs; ``backward`` returns parameter
gradients laid out exactly like ``net.params`` plus the gradient w.r.t. the
input. Everything runs in float64.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, UsageError

LAYER_KINDS = ("affine", "relu", "tanh", "sigmoid", "batchnorm")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int | None = None
    out_dim: int | None = None
    bias: bool = True

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.kind == "affine":
            if not (isinstance(self.in_dim, int) and isinstance(self.out_dim, int)):
                raise ConfigError("affine layer needs integer in_dim and out_dim")
            if self.in_dim < 1 or self.out_dim < 1:
                raise ConfigError("affine dimensions must be positive")


def affine(in_dim, out_dim, bias=True):
    return LayerSpec("affine", in_dim, out_dim, bias)


def act(kind):
    return LayerSpec(kind)


class DenseNet:
    """Parameters and batch-norm state for a stack of ``LayerSpec``.

    ``params[k]`` is a dict of arrays for layer k: ``{"W", "b"}`` for affine
    (``"b"`` omitted when the layer has no bias), ``{"gamma", "beta"}`` for
    batchnorm and empty otherwise. ``bn_state[k]`` holds ``running_mean`` and
    ``running_var`` for batchnorm layers, ``None`` elsewhere.
    """

    def __init__(self, layers, in_dim, seed=0, bn_momentum=0.9, bn_eps=1e-5):
        self.layers = list(layers)
        if not self.layers:
            raise ConfigError("a network needs at least one layer")
        self.bn_momentum = float(bn_momentum)
        self.bn_eps = float(bn_eps)
        self.dims = _resolve_dims(self.layers, in_dim)
        rng = np.random.default_rng(seed)
        self.params = []
        self.bn_state = []
        for k, layer in enumerate(self.layers):
            p, s = {}, None
            if layer.kind == "affine":
                limit = np.sqrt(6.0 / (layer.in_dim + layer.out_dim))
                p["W"] = rng.uniform(-limit, limit, size=(layer.in_dim, layer.out_dim))
                if layer.bias:
                    p["b"] = np.zeros(layer.out_dim)
            elif layer.kind == "batchnorm":
                d = self.dims[k]
                p["gamma"] = np.ones(d)
                p["beta"] = np.zeros(d)
                s = {"running_mean": np.zeros(d), "running_var": np.ones(d)}
            self.params.append(p)
            self.bn_state.append(s)

    @property
    def in_dim(self):
        return self.dims[0]

    @property
    def out_dim(self):
        return self.dims[-1]

    def copy(self):
        return copy.deepcopy(self)

    def named_params(self):
        """Yield ``(layer_index, name, array)`` in a fixed order."""
        for k, p in enumerate(self.params):
            for name in sorted(p):
                yield k, name, p[name]

    def num_params(self):
        return sum(a.size for _, _, a in self.named_params())

    def state_arrays(self):
        """Flat ``{key: array}`` mapping of parameters and batch-norm state."""
        out = {}
        for k, name, arr in self.named_params():
            out[f"p{k}.{name}"] = arr
        for k, s in enumerate(self.bn_state):
            if s is not None:
                out[f"s{k}.running_mean"] = s["running_mean"]
                out[f"s{k}.running_var"] = s["running_var"]
        return out

    def load_state_arrays(self, arrays):
        for key, target in self.state_arrays().items():
            if key not in arrays:
                raise ConfigError(f"missing array {key!r} in saved network")
            src = np.asarray(arrays[key], dtype=np.float64)
            if src.shape != target.shape:
                raise ConfigError(f"array {key!r} has shape {src.shape}, expected {target.shape}")
            target[...] = src

    def describe(self):
        """JSON-friendly description of the architecture."""
        return {
            "in_dim": self.in_dim,
            "bn_momentum": self.bn_momentum,
            "bn_eps": self.bn_eps,
            "layers": [
                {"kind": l.kind, "in_dim": l.in_dim, "out_dim": l.out_dim, "bias": l.bias}
                for l in self.layers
            ],
        }

    @classmethod
    def from_description(cls, desc):
        layers = [LayerSpec(d["kind"], d.get("in_dim"), d.get("out_dim"), d.get("bias", True))
                  for d in desc["layers"]]
        return cls(layers, desc["in_dim"], bn_momentum=desc["bn_momentum"], bn_eps=desc["bn_eps"])


def _resolve_dims(layers, in_dim):
    dims = [int(in_dim)]
    if dims[0] < 1:
        raise ConfigError("input dimension must be positive")
    for k, layer in enumerate(layers):
        if layer.kind == "affine":
            if layer.in_dim != dims[-1]:
                raise ConfigError(
                    f"layer {k}: affine expects in_dim {layer.in_dim}, previous output is {dims[-1]}")
            dims.append(layer.out_dim)
        else:
            dims.append(dims[-1])
    return dims


def save_net(net, path):
    np.savez(path, __arch__=np.array(json.dumps(net.describe())), **net.state_arrays())


def load_net(path):
    with np.load(path, allow_pickle=False) as data:
        net = DenseNet.from_description(json.loads(str(data["__arch__"])))
        net.load_state_arrays({k: data[k] for k in data.files if k != "__arch__"})
    return net


def mlp(dims, hidden_act="relu", out_act=None, seed=0):
    """Affine layers over ``dims`` with ``hidden_act`` between them."""
    layers = []
    for k in range(len(dims) - 1):
        layers.append(affine(dims[k], dims[k + 1]))
        if k < len(dims) - 2:
            layers.append(act(hidden_act))
    if out_act is not None:
        layers.append(act(out_act))
    return DenseNet(layers, dims[0], seed=seed)


def hash_net(in_dim, code_length, hidden=(512, 512), seed=0):
    """Three affine layers, batch norm after the second one, tanh output.

    The affine layer feeding the batch norm carries no bias: the normalisation
    removes it anyway and it would only add parameters with zero gradient.
    """
    h1, h2 = hidden
    layers = [
        affine(in_dim, h1), act("relu"),
        affine(h1, h2, bias=False), act("batchnorm"), act("relu"),
        affine(h2, code_length), act("tanh"),
    ]
    return DenseNet(layers, in_dim, seed=seed)


def discriminator_net(in_dim, hidden=(512, 256, 128, 64), seed=0):
    """Five affine layers with ReLU in between and a single sigmoid output."""
    return mlp([in_dim, *hidden, 1], hidden_act="relu", out_act="sigmoid", seed=seed)


@dataclass
class Cache:
    net_id: int
    mode: str
    entries: list = field(default_factory=list)


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def forward(net, x, mode="train"):
    """Run ``x`` (M x in_dim) through ``net``.

    In train mode batch-norm layers normalise with batch statistics and update
    their running estimates; eval mode uses the running estimates and leaves
    the net untouched.
    """
    if mode not in ("train", "eval"):
        raise UsageError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ConfigError(f"input shape {x.shape} does not match network input dim {net.in_dim}")
    if x.shape[0] < 1:
        raise ConfigError("empty batch")
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite values in network input")
    cache = Cache(id(net), mode)
    h = x
    for layer, p, s in zip(net.layers, net.params, net.bn_state):
        kind = layer.kind
        if kind == "affine":
            out = h @ p["W"]
            if "b" in p:
                out = out + p["b"]
            cache.entries.append(h)
        elif kind == "relu":
            out = np.maximum(h, 0.0)
            cache.entries.append(h > 0)
        elif kind == "tanh":
            out = np.tanh(h)
            cache.entries.append(out)
        elif kind == "sigmoid":
            out = _sigmoid(h)
            cache.entries.append(out)
        else:
            if mode == "train":
                if h.shape[0] < 2:
                    raise ConfigError("batch norm in train mode needs a batch of at least 2")
                mu = h.mean(axis=0)
                var = h.var(axis=0)
                m = net.bn_momentum
                s["running_mean"] *= m
                s["running_mean"] += (1.0 - m) * mu
                s["running_var"] *= m
                s["running_var"] += (1.0 - m) * var
            else:
                mu, var = s["running_mean"], s["running_var"]
            inv_std = 1.0 / np.sqrt(var + net.bn_eps)
            xhat = (h - mu) * inv_std
            out = p["gamma"] * xhat + p["beta"]
            cache.entries.append((xhat, inv_std))
        h = out
    return h, cache


def backward(net, cache, output_grad):
    """Gradients of ``sum(output * output_grad)`` w.r.t. parameters and input."""
    if not isinstance(cache, Cache) or cache.net_id != id(net) or len(cache.entries) != len(net.layers):
        raise UsageError("cache was not produced by a forward pass of this network")
    g = np.asarray(output_grad, dtype=np.float64)
    grads = [dict() for _ in net.layers]
    for k in range(len(net.layers) - 1, -1, -1):
        layer, p, c = net.layers[k], net.params[k], cache.entries[k]
        kind = layer.kind
        if kind == "affine":
            grads[k]["W"] = c.T @ g
            if "b" in p:
                grads[k]["b"] = g.sum(axis=0)
            g = g @ p["W"].T
        elif kind == "relu":
            g = g * c
        elif kind == "tanh":
            g = g * (1.0 - c * c)
        elif kind == "sigmoid":
            g = g * c * (1.0 - c)
        else:
            xhat, inv_std = c
            grads[k]["gamma"] = (g * xhat).sum(axis=0)
            grads[k]["beta"] = g.sum(axis=0)
            gx = g * p["gamma"]
            if cache.mode == "train":
                m = g.shape[0]
                g = (inv_std / m) * (m * gx - gx.sum(axis=0) - xhat * (gx * xhat).sum(axis=0))
            else:
                g = gx * inv_std
    return grads, g


def add_grads(a, b):
    """Elementwise sum of two gradient lists."""
    return [{name: ga[name] + gb[name] for name in ga} for ga, gb in zip(a, b)]


@dataclass
class OptimizerState:
    m: list
    v: list
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(net, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    if lr <= 0:
        raise ConfigError("learning rate must be positive")
    m = [{name: np.zeros_like(a) for name, a in p.items()} for p in net.params]
    v = [{name: np.zeros_like(a) for name, a in p.items()} for p in net.params]
    return OptimizerState(m, v, 0, float(lr), float(beta1), float(beta2), float(eps))


def adam_step(net, param_grads, state):
    """One bias-corrected Adam update, in place. Returns ``(net, state)``."""
    if len(param_grads) != len(net.params):
        raise UsageError("gradient list does not match network layers")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(net.params, param_grads, state.m, state.v):
        if set(g) != set(p):
            raise UsageError("gradient keys do not match parameter keys")
        for name in p:
            if g[name].shape != p[name].shape:
                raise UsageError(f"gradient for {name} has shape {g[name].shape}, expected {p[name].shape}")
            m[name] *= b1
            m[name] += (1.0 - b1) * g[name]
            v[name] *= b2
            v[name] += (1.0 - b2) * g[name] ** 2
            p[name] -= state.lr * (m[name] / c1) / (np.sqrt(v[name] / c2) + state.eps)
    return net, state


def finite_diff_check(net, scalar_loss, probe_input, epsilon=1e-5, mode="train", analytic=None):
    """Max relative error between analytic and central-difference parameter gradients.

    ``scalar_loss(output)`` must return ``(loss, d_loss/d_output)``. The error
    for each entry is ``|analytic - numeric| / max(1e-12, |numeric|)``.
    ``analytic`` may be passed to check a precomputed gradient list instead of
    the one from ``backward``. The network is left unmodified.
    """
    work = net.copy()
    x = np.asarray(probe_input, dtype=np.float64)
    if analytic is None:
        out, cache = forward(work, x, mode)
        _, dout = scalar_loss(out)
        analytic, _ = backward(work, cache, dout)

    # train-mode outputs never read the running statistics that forward updates
    def loss_at():
        return scalar_loss(forward(work, x, mode)[0])[0]

    worst = 0.0
    for k, name, arr in work.named_params():
        flat = arr.reshape(-1)
        an = analytic[k][name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            lp = loss_at()
            flat[i] = orig - epsilon
            lm = loss_at()
            flat[i] = orig
            num = (lp - lm) / (2.0 * epsilon)
            err = abs(an[i] - num) / max(1e-12, abs(num))
            worst = max(worst, err)
    return worst
