"""A small tanh MLP velocity model with hand-written backpropagation and AdamW.

Inputs are the noisy point, sinusoidal features of t and (for conditional
models) a learned class embedding with one extra row for the null class. All
parameters live in one flat float64 vector; layer weights are views into it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class Architecture:
    dim: int
    hidden: tuple = (256, 256, 256)
    time_features: int = 16
    num_classes: int = 0
    embed_dim: int = 16
    rep_layer: int | None = None  # None: second hidden layer, or the only one
    max_frequency: float = 64.0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.dim < 1 or not self.hidden or min(self.hidden) < 1:
            raise ConfigError("dim and hidden widths must be positive")
        if self.rep_layer is None:
            object.__setattr__(self, "rep_layer", min(1, len(self.hidden) - 1))
        if not 0 <= self.rep_layer < len(self.hidden):
            raise ConfigError(f"rep_layer must index a hidden layer, got {self.rep_layer}")

    @property
    def conditional(self) -> bool:
        return self.num_classes > 0

    @property
    def input_width(self) -> int:
        return self.dim + 2 * self.time_features + (self.embed_dim if self.conditional else 0)

    def layer_shapes(self):
        widths = (self.input_width,) + self.hidden + (self.dim,)
        return list(zip(widths[:-1], widths[1:]))

    def param_count(self) -> int:
        n = (self.num_classes + 1) * self.embed_dim if self.conditional else 0
        return n + sum(i * o + o for i, o in self.layer_shapes())

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "hidden": list(self.hidden),
            "time_features": self.time_features,
            "num_classes": self.num_classes,
            "embed_dim": self.embed_dim,
            "rep_layer": self.rep_layer,
            "max_frequency": self.max_frequency,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(**{k: (tuple(v) if k == "hidden" else v) for k, v in d.items()})


class VelocityModel:
    def __init__(self, arch: Architecture, theta=None, rng=None):
        self.arch = arch
        if theta is None:
            theta = np.zeros(arch.param_count())
            self._views(theta)
            if rng is not None:
                self._init(rng)
        else:
            theta = np.array(theta, dtype=np.float64)
            if theta.shape != (arch.param_count(),):
                raise ConfigError(f"expected {arch.param_count()} parameters, got {theta.shape}")
            self._views(theta)
        self.freqs = np.pi * np.geomspace(1.0, arch.max_frequency, arch.time_features) if arch.time_features else np.zeros(0)

    def _views(self, theta):
        self.theta = theta
        a = self.arch
        off = 0
        self.embedding = None
        if a.conditional:
            n = (a.num_classes + 1) * a.embed_dim
            self.embedding = theta[off:off + n].reshape(a.num_classes + 1, a.embed_dim)
            off += n
        self.weights, self.biases = [], []
        for i, o in a.layer_shapes():
            self.weights.append(theta[off:off + i * o].reshape(i, o))
            off += i * o
            self.biases.append(theta[off:off + o])
            off += o

    def _init(self, rng):
        # scaled-uniform hidden layers, zero output layer
        for W in self.weights[:-1]:
            bound = np.sqrt(6.0 / (W.shape[0] + W.shape[1]))
            W[...] = rng.uniform(-bound, bound, W.shape)
        if self.embedding is not None:
            self.embedding[...] = rng.standard_normal(self.embedding.shape)

    @property
    def null_label(self) -> int:
        return self.arch.num_classes

    def time_embedding(self, t, batch: int):
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,))
        ang = t[:, None] * self.freqs[None, :]
        return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)

    def _inputs(self, x, t, labels):
        parts = [x, self.time_embedding(t, x.shape[0])]
        if self.arch.conditional:
            if labels is None:
                labels = np.full(x.shape[0], self.null_label)
            labels = np.broadcast_to(np.asarray(labels, dtype=np.int64), (x.shape[0],))
            if labels.min() < 0 or labels.max() > self.arch.num_classes:
                raise ConfigError(f"labels must lie in [0, {self.arch.num_classes}]")
            parts.append(self.embedding[labels])
        elif labels is not None:
            raise ConfigError("labels given to an unconditional model")
        return np.concatenate(parts, axis=1), labels

    def forward(self, x, t, labels=None, cache: bool = False):
        """Return ``(v, representation)``; with ``cache`` also the activations."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None]
        if x.shape[1] != self.arch.dim:
            raise ConfigError(f"model expects dim {self.arch.dim}, got {x.shape[1]}")
        h, labels = self._inputs(x, t, labels)
        acts = [h]
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ W + b)
            acts.append(h)
        v = h @ self.weights[-1] + self.biases[-1]
        rep = acts[self.arch.rep_layer + 1]
        if squeeze:
            v, rep = v[0], rep[0]
        if cache:
            return v, rep, (acts, labels)
        return v, rep

    def velocity(self, x, t, labels=None):
        return self.forward(x, t, labels)[0]

    __call__ = velocity

    def backward(self, acts, labels, grad_v, grad_rep=None):
        """Gradient of a scalar loss w.r.t. theta given dL/dv (and dL/drep)."""
        grad = np.zeros_like(self.theta)
        gm = VelocityModel.__new__(VelocityModel)
        gm.arch = self.arch
        gm._views(grad)
        g = grad_v
        n_layers = len(self.weights)
        for i in range(n_layers - 1, -1, -1):
            h_in = acts[i]
            gm.weights[i][...] = h_in.T @ g
            gm.biases[i][...] = g.sum(axis=0)
            g = g @ self.weights[i].T
            if i == 0:
                break
            if grad_rep is not None and i - 1 == self.arch.rep_layer:
                g = g + grad_rep
            g = g * (1.0 - h_in * h_in)
        if self.arch.conditional:
            e0 = self.arch.dim + 2 * self.arch.time_features
            np.add.at(gm.embedding, labels, g[:, e0:])
        return grad


def loss_and_grad(model: VelocityModel, xt, target, t, labels=None, main_weight=None, aux=None):
    """Mean squared velocity error plus an optional weighted auxiliary term.

    ``aux`` is a dict with ``x0``, ``teacher``, ``w`` (per-sample weights) and
    ``lambda_ra``; its term is lambda_ra * sum(w * l) / sum(w) with l the cosine
    alignment loss of the representation layer against ``x0 @ teacher``.
    Returns ``(loss, grad, parts)`` where ``parts`` holds the main and aux terms.
    """
    from . import varepa

    xt = np.atleast_2d(np.asarray(xt, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    B = xt.shape[0]
    if B == 0:
        raise DataError("empty batch")
    bad = ~np.all(np.isfinite(target), axis=1)
    if bad.any():
        raise DataError(f"non-finite target at batch index {int(np.argmax(bad))}")
    lam = np.ones(B) if main_weight is None else np.broadcast_to(np.asarray(main_weight, dtype=np.float64), (B,))
    v, rep, (acts, labs) = model.forward(xt, t, labels, cache=True)
    r = v - target
    per = np.sum(r * r, axis=1)
    main = float(np.mean(lam * per))
    grad_v = (2.0 / B) * lam[:, None] * r
    grad_rep = None
    aux_val = 0.0
    if aux is not None:
        l_ra, g_h = varepa.toy_alignment_loss(rep, aux["x0"], aux["teacher"], return_grad=True)
        coef = varepa.aux_grad_coefficients(aux["w"])
        aux_val = float(aux["lambda_ra"] * np.dot(coef, l_ra))
        grad_rep = aux["lambda_ra"] * coef[:, None] * g_h
    grad = model.backward(acts, labs, grad_v, grad_rep)
    return main + aux_val, grad, {"main": main, "aux": aux_val}


@dataclass
class AdamW:
    """Decoupled-weight-decay Adam with bias correction."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)
    step_count: int = 0

    def step(self, params: np.ndarray, grads: np.ndarray, lr: float | None = None) -> np.ndarray:
        """Update ``params`` in place and return it."""
        lr = self.lr if lr is None else lr
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        if grads.shape != params.shape:
            raise ValueError("gradient shape does not match parameters")
        self.step_count += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grads
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grads * grads
        m_hat = self.m / (1.0 - self.beta1 ** self.step_count)
        v_hat = self.v / (1.0 - self.beta2 ** self.step_count)
        params -= lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * params)
        return params


def adamw_step(state: AdamW, params, grads, lr=None):
    return state.step(params, grads, lr)
