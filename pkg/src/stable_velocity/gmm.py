"""Diagonal Gaussian mixtures with closed-form corrupted marginals.

Under x_t = alpha x0 + sigma eps, a mixture component N(mu_k, diag(s_k^2))
maps to N(alpha mu_k, diag(alpha^2 s_k^2 + sigma^2)), and the posterior over x0
given x_t is again a mixture with per-component Gaussian posteriors. Everything
here (density, velocity, score, posterior sampling) follows from those two facts
and is the ground truth the Monte Carlo estimators are tested against.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .schedules import Schedule, _col, cond_velocity

_LOG_2PI = float(np.log(2.0 * np.pi))
_CHUNK = 1024


@dataclass(frozen=True, eq=False)
class GmmSpec:
    """Mixture with ``K`` diagonal components in ``dim`` dimensions.

    ``labels`` (optional) assigns each component a class id; conditioning on a
    class keeps only that class's components, reweighted.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        var = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        if mu.shape != var.shape or mu.shape[0] != w.shape[0]:
            raise ValueError(f"inconsistent shapes: weights {w.shape}, means {mu.shape}, variances {var.shape}")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        if np.any(var <= 0):
            raise ValueError("variances must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if lab.shape != w.shape:
                raise ValueError("labels must have one entry per component")
            if lab.min() < 0 or set(np.unique(lab)) != set(range(int(lab.max()) + 1)):
                raise ValueError("every class id in [0, C) must own at least one component")
            object.__setattr__(self, "labels", lab)
        for arr in (self.weights, self.means, self.variances):
            arr.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def modes(self) -> int:
        return self.means.shape[0]

    @property
    def num_classes(self) -> int:
        return 0 if self.labels is None else int(self.labels.max()) + 1

    def condition(self, label: int) -> "GmmSpec":
        """Restrict to the components of class ``label`` with renormalized weights."""
        if self.labels is None:
            raise ValueError("spec has no labels")
        keep = self.labels == label
        if not keep.any():
            raise ValueError(f"no component carries label {label}")
        w = self.weights[keep]
        return GmmSpec(w / w.sum(), self.means[keep], self.variances[keep])

    def to_dict(self) -> dict:
        d = {
            "dim": self.dim,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }
        d["labels"] = None if self.labels is None else self.labels.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GmmSpec":
        w = np.asarray(d["weights"], dtype=np.float64)
        spec = cls(w, d["means"], d["variances"], d.get("labels"))
        if "dim" in d and int(d["dim"]) != spec.dim:
            raise ValueError(f"dim field {d['dim']} disagrees with means of width {spec.dim}")
        return spec

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "GmmSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def single_gaussian(mean, variance) -> GmmSpec:
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    var = np.broadcast_to(np.asarray(variance, dtype=np.float64), mean.shape)
    return GmmSpec(np.ones(1), mean[None], var[None].copy())


def random_spec(dim: int, modes: int, rng, classes: int = 0) -> GmmSpec:
    """Random mixture: means ~ U[-1, 1], variances ~ U[0.01, 0.1] per
    coordinate, weights ~ U(0.1, 1) normalized.

    With ``classes > 0`` component ``k`` is labelled ``k % classes``.
    """
    if dim < 1 or modes < 1:
        raise ValueError("dim and modes must be >= 1")
    means = rng.uniform(-1.0, 1.0, size=(modes, dim))
    variances = rng.uniform(1e-2, 1e-1, size=(modes, dim))
    w = rng.uniform(0.1, 1.0, size=modes)
    w = w / w.sum()
    labels = None
    if classes:
        if classes > modes:
            raise ValueError("need at least one component per class")
        labels = np.arange(modes) % classes
    return GmmSpec(w, means, variances, labels)


def sample(spec: GmmSpec, rng, count: int, return_labels: bool = False):
    """Draw ``count`` points: component k ~ weights, then mu_k + s_k * eps.

    Returns ``points`` or ``(points, labels)``; labels are the class ids of the
    drawn components (``None`` for unlabelled specs).
    """
    k = rng.choice(spec.modes, size=count, p=spec.weights)
    eps = rng.standard_normal((count, spec.dim))
    x = spec.means[k] + np.sqrt(spec.variances[k]) * eps
    if not return_labels:
        return x
    return x, (None if spec.labels is None else spec.labels[k])


def _component_logpdf(spec: GmmSpec, schedule: Schedule, xt, t):
    """log N(xt; alpha mu_k, alpha^2 s_k^2 + sigma^2) without the 2pi term,
    plus the corrupted component variances. Shapes (B, K) and (B, K, d)."""
    a = _col(schedule.alpha(t), xt)[..., None, :] if np.ndim(t) else schedule.alpha(t)
    s = _col(schedule.sigma(t), xt)[..., None, :] if np.ndim(t) else schedule.sigma(t)
    var = a * a * spec.variances + s * s
    diff = xt[..., None, :] - a * spec.means
    logp = -0.5 * np.sum(diff * diff / var + np.log(var), axis=-1)
    return logp, var, diff


def _log_resp(spec, schedule, xt, t):
    logp, var, diff = _component_logpdf(spec, schedule, xt, t)
    logp = logp + np.log(spec.weights)
    lse = logsumexp(logp, axis=-1, keepdims=True)
    return logp - lse, lse[..., 0], var, diff


def _chunked(fn, xt, t, *args):
    """Apply ``fn(xt_chunk, t_chunk)`` over leading-axis chunks of a batch."""
    xt = np.asarray(xt, dtype=np.float64)
    if xt.ndim == 1:
        return fn(xt[None], t if np.ndim(t) == 0 else np.asarray(t)[None])[0]
    out = []
    for i in range(0, xt.shape[0], _CHUNK):
        tc = t if np.ndim(t) == 0 else np.asarray(t)[i:i + _CHUNK]
        out.append(fn(xt[i:i + _CHUNK], tc))
    return np.concatenate(out, axis=0)


def responsibilities(spec: GmmSpec, schedule: Schedule, xt, t):
    """Posterior component probabilities r_k(xt) under the corrupted mixture."""
    t = schedule.check(t)
    return _chunked(lambda x, tt: np.exp(_log_resp(spec, schedule, x, tt)[0]), xt, t)


def marginal_log_density(spec: GmmSpec, schedule: Schedule, xt, t):
    t = schedule.check(t)

    def f(x, tt):
        return _log_resp(spec, schedule, x, tt)[1] - 0.5 * spec.dim * _LOG_2PI

    return _chunked(f, xt, t)


def log_density(spec: GmmSpec, x):
    """log q(x) of the clean mixture."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = np.empty(x.shape[0])
    for i in range(0, x.shape[0], _CHUNK):
        diff = x[i:i + _CHUNK, None, :] - spec.means
        logp = -0.5 * np.sum(diff * diff / spec.variances + np.log(spec.variances), axis=-1)
        out[i:i + _CHUNK] = logsumexp(logp + np.log(spec.weights), axis=-1)
    return out - 0.5 * spec.dim * _LOG_2PI


def posterior_components(spec: GmmSpec, schedule: Schedule, xt, t):
    """Per-component posterior over x0: (responsibilities, means, variances).

    m_k = (sigma^2 mu_k + alpha s_k^2 xt) / (alpha^2 s_k^2 + sigma^2),
    v_k = s_k^2 sigma^2 / (alpha^2 s_k^2 + sigma^2).
    """
    t = schedule.check(t)
    xt = np.asarray(xt, dtype=np.float64)
    squeeze = xt.ndim == 1
    x = xt[None] if squeeze else xt
    tt = t if np.ndim(t) == 0 else np.asarray(t)
    lr, _, var, _ = _log_resp(spec, schedule, x, tt)
    a = _col(schedule.alpha(tt), x)[..., None, :] if np.ndim(tt) else schedule.alpha(tt)
    s2 = (_col(schedule.sigma(tt), x)[..., None, :] if np.ndim(tt) else schedule.sigma(tt)) ** 2
    m = (s2 * spec.means + a * spec.variances * x[..., None, :]) / var
    v = np.broadcast_to(spec.variances * s2 / var, m.shape)
    r = np.exp(lr)
    if squeeze:
        return r[0], m[0], v[0]
    return r, m, v


def posterior_mean(spec: GmmSpec, schedule: Schedule, xt, t):
    """E[x0 | xt]."""
    t = schedule.check(t)

    def f(x, tt):
        r, m, _ = posterior_components(spec, schedule, x, tt)
        return np.einsum("bk,bkd->bd", r, m)

    return _chunked(f, xt, t)


def exact_velocity(spec: GmmSpec, schedule: Schedule, xt, t):
    """Marginal velocity: the conditional velocity at the posterior mean of x0
    (the conditional velocity is affine in x0)."""
    xbar = posterior_mean(spec, schedule, xt, t)
    return cond_velocity(schedule, xt, xbar, t)


def exact_score(spec: GmmSpec, schedule: Schedule, xt, t):
    """Gradient of :func:`marginal_log_density` in ``xt``."""
    t = schedule.check(t)

    def f(x, tt):
        lr, _, var, diff = _log_resp(spec, schedule, x, tt)
        return -np.einsum("bk,bkd->bd", np.exp(lr), diff / var)

    return _chunked(f, xt, t)


def sample_posterior(spec: GmmSpec, schedule: Schedule, xt, t, rng, count: int = 1):
    """``count`` exact draws from p_t(x0 | xt) for a single ``xt`` of shape (d,)."""
    r, m, v = posterior_components(spec, schedule, np.asarray(xt, dtype=np.float64), t)
    r = r / r.sum()
    k = rng.choice(spec.modes, size=count, p=r)
    return m[k] + np.sqrt(v[k]) * rng.standard_normal((count, spec.dim))
