"""Variance-aware weighting of an auxiliary per-sample loss.

The auxiliary term is gated by a time weight w(t) in [0, 1] that is large at
small t (where the posterior over x0 is concentrated) and normalized by the
minibatch's effective sample mass sum(w).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ShapeError
from .schedules import Schedule

log = logging.getLogger(__name__)

WEIGHTING_KINDS = ("hard", "sigmoid", "snr")


@dataclass(frozen=True)
class WeightingFn:
    kind: str = "sigmoid"
    xi: float = 0.7
    k: float = 20.0

    def __post_init__(self):
        if self.kind not in WEIGHTING_KINDS:
            raise ValueError(f"unknown weighting {self.kind!r}")
        if not 0.0 < self.xi < 1.0:
            raise ValueError("xi must lie in (0, 1)")
        if self.k <= 0:
            raise ValueError("k must be positive")

    def __call__(self, schedule: Schedule, t):
        return weight(self, schedule, t)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "xi": self.xi, "k": self.k}

    @classmethod
    def from_dict(cls, d: dict) -> "WeightingFn":
        return cls(kind=d.get("kind", "sigmoid"), xi=float(d.get("xi", 0.7)), k=float(d.get("k", 20.0)))


def weight(fn: WeightingFn, schedule: Schedule, t):
    """hard: 1[t < xi]; sigmoid: logistic(k (xi - t)); snr: SNR(t) / (SNR(t) + SNR(xi))."""
    t = schedule.check(t)
    if fn.kind == "hard":
        return np.where(t < fn.xi, 1.0, 0.0)
    if fn.kind == "sigmoid":
        return expit(fn.k * (fn.xi - t))
    # alpha_t^2 sigma_xi^2 / (alpha_t^2 sigma_xi^2 + alpha_xi^2 sigma_t^2): same ratio, no 0/0 at the ends
    at2, st2 = schedule.alpha(t) ** 2, schedule.sigma(t) ** 2
    ax2, sx2 = schedule.alpha(fn.xi) ** 2, schedule.sigma(fn.xi) ** 2
    return at2 * sx2 / (at2 * sx2 + ax2 * st2)


def combined_loss(main, aux, w, lambda_ra: float = 0.5):
    """mean(main) + lambda_ra * sum(w * aux) / sum(w); the auxiliary term is 0
    when sum(w) == 0."""
    main = np.asarray(main, dtype=np.float64).reshape(-1)
    aux = np.asarray(aux, dtype=np.float64).reshape(-1)
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if not (main.shape == aux.shape == w.shape) or main.size == 0:
        raise ShapeError(f"need equal nonempty lengths, got {main.shape}, {aux.shape}, {w.shape}")
    if lambda_ra < 0:
        raise ValueError("lambda_ra must be nonnegative")
    return float(np.mean(main) + lambda_ra * aux_term(aux, w))


def aux_term(aux, w):
    total = np.sum(w)
    if total == 0.0:
        return 0.0
    return float(np.dot(w, aux) / total)


def aux_grad_coefficients(w):
    """d(aux term)/d(aux_i) = w_i / sum(w) (zeros when sum(w) == 0)."""
    w = np.asarray(w, dtype=np.float64)
    total = w.sum()
    return np.zeros_like(w) if total == 0.0 else w / total


def make_teacher(in_dim: int, feature_dim: int, rng) -> np.ndarray:
    """Fixed random projection x0 -> features, shape (in_dim, feature_dim)."""
    return rng.standard_normal((in_dim, feature_dim)) / np.sqrt(in_dim)


def toy_alignment_loss(hidden, x0, teacher, return_grad: bool = False):
    """Per-sample 1 - cos(hidden_i, teacher(x0_i)).

    A zero-norm vector on either side gives loss 1 (and zero gradient).
    With ``return_grad`` also returns d loss_i / d hidden_i.
    """
    h = np.atleast_2d(np.asarray(hidden, dtype=np.float64))
    f = np.atleast_2d(np.asarray(x0, dtype=np.float64)) @ teacher
    if h.shape != f.shape:
        raise ShapeError(f"hidden {h.shape} vs teacher features {f.shape}")
    hn = np.linalg.norm(h, axis=1)
    fn = np.linalg.norm(f, axis=1)
    zero = (hn == 0) | (fn == 0)
    if zero.any():
        log.warning("%d zero-norm feature vectors; using loss 1", int(zero.sum()))
    safe_h = np.where(zero, 1.0, hn)
    safe_f = np.where(zero, 1.0, fn)
    cos = np.sum(h * f, axis=1) / (safe_h * safe_f)
    cos = np.where(zero, 0.0, cos)
    loss = 1.0 - cos
    if not return_grad:
        return loss
    # d cos / d h = f / (|h||f|) - cos * h / |h|^2
    g = -(f / (safe_h * safe_f)[:, None] - cos[:, None] * h / (safe_h ** 2)[:, None])
    g[zero] = 0.0
    return loss, g
