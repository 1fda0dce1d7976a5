"""Monte Carlo profiles of training-target variance.

V_CFM(t) = E |v(xt | x0) - v(xt)|^2 over (x0, xt) drawn from the forward path,
and V_StableVM(t, n) = E |v(xt) - v_hat(xt; refs)|^2 with xt from the marginal
and the reference set drawn from its posterior. ``v(xt)`` comes either from the
closed-form mixture oracle or from SNIS over a finite dataset (empirical mode).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gmm, targets
from .errors import StableVelocityError
from .schedules import Schedule, cond_velocity, corrupt

ESTIMATORS = ("oracle", "empirical_snis")
_ALIASES = {"empirical": "empirical_snis"}
NORMALIZATIONS = ("raw", "sqrt_d")


class UndefinedSplitError(StableVelocityError, ValueError):
    pass


@dataclass
class VarianceCurve:
    t: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    q15: np.ndarray
    q85: np.ndarray
    normalization: str = "raw"
    estimator: str = "oracle"
    dim: int = 1
    n: int | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        if self.t.size and np.any(np.diff(self.t) <= 0):
            raise ValueError("curve grid must be strictly increasing")

    def rows(self):
        for i in range(self.t.size):
            yield {
                "t": float(self.t[i]),
                "value": float(self.values[i]),
                "stderr": float(self.stderr[i]),
                "q15": float(self.q15[i]),
                "q85": float(self.q85[i]),
                "normalization": self.normalization,
                "estimator": self.estimator,
                "d": self.dim,
                "n_if_stablevm": "" if self.n is None else self.n,
            }


def canonical_estimator(name: str) -> str:
    name = _ALIASES.get(name, name)
    if name not in ESTIMATORS:
        raise ValueError(f"unknown estimator {name!r}")
    return name


def _mean_se(vals):
    vals = np.asarray(vals, dtype=np.float64)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(vals.size))


def cfm_variance_samples(source, schedule: Schedule, t, probes: int, rng, estimator: str = "oracle", dataset=None):
    """Per-probe squared deviations |v(xt|x0) - v(xt)|^2.

    Oracle mode needs ``source`` to be a :class:`GmmSpec`. Empirical mode draws
    x0 from ``dataset`` (or ``source`` when it is an array) and replaces v(xt)
    by SNIS over that same dataset.
    """
    estimator = canonical_estimator(estimator)
    if estimator == "oracle":
        if not isinstance(source, gmm.GmmSpec):
            raise ValueError("oracle mode needs a GmmSpec")
        x0 = gmm.sample(source, rng, probes)
    else:
        data = np.asarray(source if dataset is None else dataset, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError("empirical mode needs a dataset of shape (N, d)")
        x0 = data[rng.integers(0, data.shape[0], size=probes)]
    xt = corrupt(schedule, x0, rng.standard_normal(x0.shape), t).xt
    v_cond = cond_velocity(schedule, xt, x0, t)
    if estimator == "oracle":
        v = gmm.exact_velocity(source, schedule, xt, t)
    else:
        v = targets.snis_velocity(data, schedule, xt, t)
    return np.sum((v_cond - v) ** 2, axis=1)


def variance_cfm(source, schedule: Schedule, t, rng, probes: int = 4096, estimator: str = "oracle", dataset=None):
    """(estimate, stderr) of V_CFM(t); stderr = sample SD / sqrt(probes)."""
    if probes < 2:
        raise ValueError("need at least 2 probes")
    return _mean_se(cfm_variance_samples(source, schedule, t, probes, rng, estimator, dataset))


def stablevm_variance_samples(spec: gmm.GmmSpec, schedule: Schedule, t, n: int, probes: int, rng):
    x0 = gmm.sample(spec, rng, probes)
    xt = corrupt(schedule, x0, rng.standard_normal(x0.shape), t).xt
    v = gmm.exact_velocity(spec, schedule, xt, t)
    out = np.empty(probes)
    step = max(1, int(4_000_000 // (n * spec.dim)))
    for i in range(0, probes, step):
        sl = slice(i, i + step)
        refs = targets.sample_posterior_refs(spec, schedule, xt[sl], t, n, rng)
        vhat = targets.stablevm_target(refs, schedule, xt[sl], t)
        out[sl] = np.sum((v[sl] - vhat) ** 2, axis=1)
    return out


def variance_stablevm(spec: gmm.GmmSpec, schedule: Schedule, t, n: int, rng, probes: int = 1024):
    """(estimate, stderr) of V_StableVM(t, n): a fresh posterior reference set per probe."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return _mean_se(stablevm_variance_samples(spec, schedule, t, n, probes, rng))


def variance_curve(source, schedule: Schedule, grid, rng, probes: int = 4096, normalization: str = "raw",
                   estimator: str = "oracle", dataset=None) -> VarianceCurve:
    """V_CFM over ``grid`` with per-point stderr and 15%/85% probe quantiles."""
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"unknown normalization {normalization!r}")
    estimator = canonical_estimator(estimator)
    grid = np.asarray(grid, dtype=np.float64)
    dim = source.dim if isinstance(source, gmm.GmmSpec) else np.asarray(source if dataset is None else dataset).shape[1]
    scale = 1.0 / np.sqrt(dim) if normalization == "sqrt_d" else 1.0
    vals, ses, q15, q85 = [], [], [], []
    for t in grid:
        s = cfm_variance_samples(source, schedule, float(t), probes, rng, estimator, dataset) * scale
        m, se = _mean_se(s)
        vals.append(m)
        ses.append(se)
        q15.append(np.quantile(s, 0.15))
        q85.append(np.quantile(s, 0.85))
    return VarianceCurve(grid, np.array(vals), np.array(ses), np.array(q15), np.array(q85), normalization, estimator, dim)


def split_point(curve: VarianceCurve, fraction: float = 0.2, interpolate: bool = True, atol: float = 1e-12) -> float:
    """Smallest t where value / max(value) reaches ``fraction``.

    With ``interpolate`` the crossing is located by linear interpolation
    between the bracketing grid points; otherwise the first grid time at or
    above the threshold is returned. A curve whose maximum is at most ``atol``
    counts as flat zero (its ratios would be round-off).
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    v = np.asarray(curve.values, dtype=np.float64)
    if v.size == 0:
        raise UndefinedSplitError("empty curve")
    top = v.max()
    if not top > atol:
        raise UndefinedSplitError(f"curve is flat zero (max {top:.3g})")
    r = v / top
    i = int(np.argmax(r >= fraction))
    if i == 0 or not interpolate:
        return float(curve.t[i])
    t0, t1 = curve.t[i - 1], curve.t[i]
    r0, r1 = r[i - 1], r[i]
    return float(t0 + (fraction - r0) * (t1 - t0) / (r1 - r0))


def decay_slope(ns, values) -> float:
    """Least-squares slope of log(values) against log(ns)."""
    return float(np.polyfit(np.log(np.asarray(ns, dtype=np.float64)), np.log(np.asarray(values, dtype=np.float64)), 1)[0])


def second_moment_mse(model, oracle: gmm.GmmSpec, schedule: Schedule, t, probes=None, rng=None, count: int = 2048,
                      labels=None):
    """0.5 * E_{xt ~ p_t} |v_model(xt, t) - v(xt)|^2 against the exact velocity.

    ``model`` is any callable ``(x, t) -> v``; pass ``probes`` to reuse the
    same xt samples across models.
    """
    if probes is None:
        x0 = gmm.sample(oracle, rng, count)
        probes = corrupt(schedule, x0, rng.standard_normal(x0.shape), t).xt
    v_true = gmm.exact_velocity(oracle, schedule, probes, t)
    v_model = model(probes, t) if labels is None else model(probes, t, labels)
    v_model = np.asarray(v_model, dtype=np.float64)
    return float(0.5 * np.mean(np.sum((v_model - v_true) ** 2, axis=1)))
