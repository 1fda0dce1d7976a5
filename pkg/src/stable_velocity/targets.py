"""Training targets: single-sample CFM, the multi-reference self-normalized
target, the STF baseline, the SNIS marginal-velocity estimator, and exact
posterior reference sampling used by the unbiasedness checks.

Self-normalized weights use log p_t(xt | x0^k) = -|xt - alpha x0^k|^2 / (2 sigma^2);
the Gaussian normalizer is shared by all references and cancels. Because the
conditional velocity is affine in x0, the weighted average of conditional
velocities equals the conditional velocity at the weighted average of the
references, which is how the targets are evaluated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gmm
from .schedules import PathSample, Schedule, _col, cond_velocity, corrupt

SNIS_CHUNK = 8192
_PROBE_CHUNK = 512


@dataclass
class ReferenceBatch:
    """``n`` reference points (rows of ``points``) plus a log-weight scratch
    buffer. ``points`` may also be a stack of per-probe reference sets of
    shape ``(P, n, d)``."""

    points: np.ndarray
    log_weight_workspace: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim not in (2, 3) or pts.shape[-2] < 1:
            raise ValueError(f"reference batch must be non-empty (n >= 1), got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("reference points must be finite")
        self.points = pts
        if self.log_weight_workspace is None:
            self.log_weight_workspace = np.empty(pts.shape[:-1])

    @property
    def n(self) -> int:
        return self.points.shape[-2]

    @property
    def dim(self) -> int:
        return self.points.shape[-1]


def _as_batch(refs) -> ReferenceBatch:
    return refs if isinstance(refs, ReferenceBatch) else ReferenceBatch(refs)


def sample_gmm_path(batch, schedule: Schedule, t, rng, size: int | None = None) -> PathSample:
    """Draw xt from the uniform mixture of conditional paths over the references.

    With ``size=None`` a single path of shape (d,) is drawn; otherwise ``size``
    independent paths sharing the same references.
    """
    batch = _as_batch(batch)
    if batch.points.ndim != 2:
        raise ValueError("sample_gmm_path needs a single reference set of shape (n, d)")
    shape = () if size is None else (size,)
    idx = rng.integers(0, batch.n, size=shape)
    x0 = batch.points[idx]
    eps = rng.standard_normal(x0.shape)
    p = corrupt(schedule, x0, eps, t)
    return PathSample(x0=p.x0, eps=p.eps, t=p.t, xt=p.xt, index=np.asarray(idx))


def cfm_sample(x0, schedule: Schedule, t, rng):
    """Single-sample CFM pair: (xt, conditional velocity target)."""
    x0 = np.asarray(x0, dtype=np.float64)
    p = corrupt(schedule, x0, rng.standard_normal(x0.shape), t)
    return p.xt, cond_velocity(schedule, p.xt, x0, t)


def log_weights(points, schedule: Schedule, xt, t):
    """Unnormalized log p_t(xt | x0^k) (constants dropped).

    ``points`` (n, d) with ``xt`` (d,) -> (n,); with ``xt`` (M, d) -> (M, n).
    ``points`` (P, n, d) with ``xt`` (P, d) -> (P, n).
    """
    schedule.check(t)
    points = np.asarray(points, dtype=np.float64)
    xt = np.asarray(xt, dtype=np.float64)
    a = schedule.alpha(t)
    s2 = schedule.sigma(t) ** 2
    if points.ndim == 3:
        a = _col(a, xt)
        s2 = _col(s2, xt)
        diff = xt[:, None, :] - (a[..., None] if np.ndim(a) else a) * points
        return -0.5 * np.sum(diff * diff, axis=-1) / s2
    if xt.ndim == 1:
        diff = xt - a * points
        return -0.5 * np.sum(diff * diff, axis=-1) / s2
    # (M, d) against shared (n, d): expand |xt|^2 - 2 a xt.x0 + a^2 |x0|^2 and drop |xt|^2
    a_col = _col(a, xt)
    cross = (a_col * xt) @ points.T
    sq = np.sum(points * points, axis=-1)
    logits = cross - 0.5 * (a_col * a_col) * sq[None, :]
    return logits / _col(s2, xt) if np.ndim(s2) else logits / s2


def softmax_weights(logits):
    """Max-shifted softmax over the last axis."""
    logits = np.asarray(logits, dtype=np.float64)
    m = np.max(logits, axis=-1, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise FloatingPointError("all self-normalized log-weights are -inf")
    w = np.exp(logits - m)
    return w / np.sum(w, axis=-1, keepdims=True)


def stable_weights(batch, schedule: Schedule, xt, t):
    batch = _as_batch(batch)
    lw = log_weights(batch.points, schedule, xt, t)
    if lw.shape == batch.log_weight_workspace.shape:
        batch.log_weight_workspace[...] = lw
    return softmax_weights(lw)


def stablevm_target(batch, schedule: Schedule, xt, t):
    """Self-normalized weighted average of conditional velocities over the
    references. ``xt`` may be (d,), or (M, d) sharing one reference set, or
    (P, d) paired with per-probe sets of shape (P, n, d)."""
    batch = _as_batch(batch)
    xt = np.asarray(xt, dtype=np.float64)
    w = stable_weights(batch, schedule, xt, t)
    if batch.points.ndim == 3:
        xbar = np.einsum("pn,pnd->pd", w, batch.points)
    else:
        xbar = w @ batch.points
    return cond_velocity(schedule, xt, xbar, t)


def stf_target(batch, schedule: Schedule, t, rng, size: int | None = None):
    """STF baseline: xt is noised from the first reference only, the target is
    the same self-normalized average over all references."""
    batch = _as_batch(batch)
    shape = (batch.dim,) if size is None else (size, batch.dim)
    x0 = np.broadcast_to(batch.points[0], shape)
    xt = corrupt(schedule, np.array(x0), rng.standard_normal(shape), t).xt
    return xt, stablevm_target(batch, schedule, xt, t)


def snis_velocity(points, schedule: Schedule, xt, t, chunk: int = SNIS_CHUNK, return_stderr: bool = False):
    """Self-normalized importance-sampling estimate of the marginal velocity
    over a finite dataset, streamed over ``chunk`` rows with a running max.

    The optional standard error is the delta-method estimate
    |C_t| * sqrt(sum_i w_i^2 (x0_i - xbar)^2) per coordinate.
    """
    schedule.check(t)
    points = np.asarray(points, dtype=np.float64)
    xt = np.asarray(xt, dtype=np.float64)
    squeeze = xt.ndim == 1
    x = xt[None] if squeeze else xt
    tt = np.asarray(t, dtype=np.float64)
    xbar = np.empty_like(x)
    spread = np.empty_like(x)
    for p0 in range(0, x.shape[0], _PROBE_CHUNK):
        xp = x[p0:p0 + _PROBE_CHUNK]
        tp = tt if tt.ndim == 0 else tt[p0:p0 + _PROBE_CHUNK]
        m = np.full((xp.shape[0], 1), -np.inf)
        s0 = np.zeros((xp.shape[0], 1))
        s1 = np.zeros_like(xp)
        q0 = np.zeros((xp.shape[0], 1))
        q1 = np.zeros_like(xp)
        q2 = np.zeros_like(xp)
        for c0 in range(0, points.shape[0], chunk):
            pts = points[c0:c0 + chunk]
            lw = log_weights(pts, schedule, xp, tp)
            m_new = np.maximum(m, lw.max(axis=1, keepdims=True))
            scale = np.exp(m - m_new)
            e = np.exp(lw - m_new)
            e2 = e * e
            s0 = s0 * scale + e.sum(axis=1, keepdims=True)
            s1 = s1 * scale + e @ pts
            if return_stderr:
                scale2 = scale * scale
                q0 = q0 * scale2 + e2.sum(axis=1, keepdims=True)
                q1 = q1 * scale2 + e2 @ pts
                q2 = q2 * scale2 + e2 @ (pts * pts)
            m = m_new
        xb = s1 / s0
        xbar[p0:p0 + _PROBE_CHUNK] = xb
        if return_stderr:
            # sum_i w_i^2 (x_i - xb)^2 with w_i = e_i / s0
            var = (q2 - 2.0 * xb * q1 + xb * xb * q0) / (s0 * s0)
            spread[p0:p0 + _PROBE_CHUNK] = np.sqrt(np.maximum(var, 0.0))
    v = cond_velocity(schedule, x, xbar, tt)
    if not return_stderr:
        return v[0] if squeeze else v
    c = schedule.alpha_dot(tt) - schedule.sigma_dot(tt) / schedule.sigma(tt) * schedule.alpha(tt)
    se = np.abs(_col(c, x)) * spread
    return (v[0], se[0]) if squeeze else (v, se)


def sample_posterior_refs(spec: gmm.GmmSpec, schedule: Schedule, xt, t, n: int, rng, trials: int | None = None):
    """Reference set(s) drawn from the posterior of the reference mixture given xt.

    A uniform index I receives an exact draw from p_t(x0 | xt); every other row
    is an independent draw from the data distribution.

    ``xt`` of shape (d,) with ``trials=None`` gives one (n, d) batch; with
    ``trials=T`` a stack (T, n, d) for the same xt. ``xt`` of shape (P, d) gives
    one set per probe, (P, n, d).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    xt = np.asarray(xt, dtype=np.float64)
    if xt.ndim == 1:
        count = 1 if trials is None else trials
        post = gmm.sample_posterior(spec, schedule, xt, t, rng, count)
        sets = _fill_sets(spec, post, n, rng)
        return ReferenceBatch(sets[0] if trials is None else sets)
    r, m, v = gmm.posterior_components(spec, schedule, xt, t)
    cdf = np.cumsum(r, axis=1)
    u = rng.random((xt.shape[0], 1)) * cdf[:, -1:]
    k = np.minimum((u > cdf).sum(axis=1), spec.modes - 1)
    rows = np.arange(xt.shape[0])
    post = m[rows, k] + np.sqrt(v[rows, k]) * rng.standard_normal(xt.shape)
    return ReferenceBatch(_fill_sets(spec, post, n, rng))


def _fill_sets(spec, post, n, rng):
    count = post.shape[0]
    sets = gmm.sample(spec, rng, count * n).reshape(count, n, spec.dim)
    idx = rng.integers(0, n, size=count)
    sets[np.arange(count), idx] = post
    return sets
