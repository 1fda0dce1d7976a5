"""Interpolant schedules x_t = alpha_t * x0 + sigma_t * eps and the pointwise
quantities derived from them.

Times may be scalars or arrays. A time array of shape ``(B,)`` pairs with
vectors of shape ``(B, d)``; coefficients are broadcast over the trailing
(feature) axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ScheduleRangeError, ShapeError, SingularityError

KINDS = ("linear", "vp-cosine")

_HALF_PI = 0.5 * np.pi
# slack for grid endpoints produced by linspace/arithmetic
_RANGE_SLACK = 1e-12


@dataclass(frozen=True)
class Schedule:
    """Interpolant schedule.

    ``linear``: alpha = 1 - t, sigma = t.
    ``vp-cosine``: alpha = cos(pi t / 2), sigma = sin(pi t / 2).

    ``t_min``/``t_max`` clamp the times at which the checked operations may be
    evaluated; the raw coefficient methods accept the full closed interval.
    """

    kind: str = "linear"
    t_min: float = 1e-3
    t_max: float = 1.0 - 1e-3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}; expected one of {KINDS}")
        if not (0.0 < self.t_min < 0.5):
            raise ValueError(f"t_min must lie in (0, 0.5), got {self.t_min}")
        if not (0.5 < self.t_max < 1.0):
            raise ValueError(f"t_max must lie in (0.5, 1), got {self.t_max}")

    # raw coefficients, no range check

    def alpha(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "linear":
            return 1.0 - t
        return np.cos(_HALF_PI * t)

    def sigma(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "linear":
            return t.copy() if t.ndim else t + 0.0
        return np.sin(_HALF_PI * t)

    def alpha_dot(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "linear":
            return np.full_like(t, -1.0)
        return -_HALF_PI * np.sin(_HALF_PI * t)

    def sigma_dot(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "linear":
            return np.full_like(t, 1.0)
        return _HALF_PI * np.cos(_HALF_PI * t)

    def check(self, t):
        """Return ``t`` as a float array, raising if any entry is out of range."""
        t = np.asarray(t, dtype=np.float64)
        if np.any(~np.isfinite(t)) or np.any(t < self.t_min - _RANGE_SLACK) or np.any(t > self.t_max + _RANGE_SLACK):
            bad = t if t.ndim == 0 else t[(t < self.t_min - _RANGE_SLACK) | (t > self.t_max + _RANGE_SLACK) | ~np.isfinite(t)][0]
            raise ScheduleRangeError(float(bad), self.t_min, self.t_max)
        return t

    def eval(self, t) -> "ScheduleEval":
        return evaluate(self, t)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "t_min": self.t_min, "t_max": self.t_max}

    @classmethod
    def from_dict(cls, d: dict) -> "Schedule":
        return cls(kind=d.get("kind", "linear"), t_min=float(d.get("t_min", 1e-3)), t_max=float(d.get("t_max", 1.0 - 1e-3)))


@dataclass(frozen=True)
class ScheduleEval:
    alpha: np.ndarray
    sigma: np.ndarray
    alpha_dot: np.ndarray
    sigma_dot: np.ndarray
    snr: np.ndarray


@dataclass(frozen=True)
class PathSample:
    """One draw (or a batch of draws) of the corruption path.

    ``index`` records which reference row produced ``x0`` when the path was
    sampled from a reference mixture; it is ``None`` otherwise.
    """

    x0: np.ndarray
    eps: np.ndarray
    t: np.ndarray
    xt: np.ndarray
    index: np.ndarray | None = None


def evaluate(schedule: Schedule, t) -> ScheduleEval:
    """alpha, sigma, their time derivatives and SNR = alpha^2 / sigma^2 at ``t``."""
    t = schedule.check(t)
    a, s = schedule.alpha(t), schedule.sigma(t)
    return ScheduleEval(a, s, schedule.alpha_dot(t), schedule.sigma_dot(t), (a * a) / (s * s))


def snr(schedule: Schedule, t):
    t = schedule.check(t)
    return schedule.alpha(t) ** 2 / schedule.sigma(t) ** 2


def _col(c, x):
    """Broadcast a per-sample coefficient against vectors ``x`` of shape (..., d)."""
    c = np.asarray(c)
    if c.ndim == 0:
        return c
    return c.reshape(c.shape + (1,) * (np.ndim(x) - c.ndim))


def _same_dim(a, b, names):
    if np.shape(a)[-1:] != np.shape(b)[-1:]:
        raise ShapeError(f"{names[0]} has shape {np.shape(a)}, {names[1]} has shape {np.shape(b)}")


def cond_velocity(schedule: Schedule, xt, x0, t):
    """Conditional velocity (sigma'/sigma)(xt - alpha x0) + alpha' x0."""
    xt = np.asarray(xt, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    _same_dim(xt, x0, ("xt", "x0"))
    e = evaluate(schedule, t)
    a, s, ad, sd = (_col(c, xt) for c in (e.alpha, e.sigma, e.alpha_dot, e.sigma_dot))
    return (sd / s) * (xt - a * x0) + ad * x0


def _score_denominator(schedule: Schedule, e: ScheduleEval, t):
    den = e.alpha_dot * e.sigma - e.alpha * e.sigma_dot
    if np.any(np.abs(den) < 1e-300):
        raise SingularityError("alpha' sigma - alpha sigma'", float(np.asarray(t).ravel()[0]))
    return den


def score_from_velocity(schedule: Schedule, xt, v, t):
    """Score of the marginal implied by a velocity field:
    sigma^-1 (alpha v - alpha' xt) / (alpha' sigma - alpha sigma')."""
    xt = np.asarray(xt, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _same_dim(xt, v, ("xt", "v"))
    e = evaluate(schedule, t)
    den = _score_denominator(schedule, e, t)
    a, s, ad, den = (_col(c, xt) for c in (e.alpha, e.sigma, e.alpha_dot, den))
    return (a * v - ad * xt) / (s * den)


def velocity_from_score(schedule: Schedule, xt, score, t):
    """Inverse of :func:`score_from_velocity`."""
    xt = np.asarray(xt, dtype=np.float64)
    score = np.asarray(score, dtype=np.float64)
    _same_dim(xt, score, ("xt", "score"))
    e = evaluate(schedule, t)
    den = _score_denominator(schedule, e, t)
    if np.any(np.abs(e.alpha) < 1e-300):
        raise SingularityError("alpha", float(np.asarray(t).ravel()[0]))
    a, s, ad, den = (_col(c, xt) for c in (e.alpha, e.sigma, e.alpha_dot, den))
    return (score * s * den + ad * xt) / a


def corrupt(schedule: Schedule, x0, eps, t) -> PathSample:
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ShapeError(f"x0 has shape {x0.shape}, eps has shape {eps.shape}")
    t = schedule.check(t)
    xt = _col(schedule.alpha(t), x0) * x0 + _col(schedule.sigma(t), x0) * eps
    return PathSample(x0=x0, eps=eps, t=t, xt=xt)
