"""Reverse-time samplers.

All steps integrate from ``t`` down to ``tau < t``. The large-step
"StableVS" updates are exact whenever the velocity field equals the
conditional velocity of a single data point, which is what the marginal
velocity approaches in the low-variance regime (small t).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import SingularityError, StableVelocityError, TimeOrderError
from .schedules import Schedule, score_from_velocity

BASE_KINDS = ("euler_ode", "euler_maruyama")


class VelocitySourceError(StableVelocityError, RuntimeError):
    def __init__(self, step, t, cause):
        self.step = step
        self.t = t
        super().__init__(f"velocity source failed at step {step} (t={t:.6g}): {cause!r}")


def _order(schedule: Schedule, t, tau):
    schedule.check(t)
    schedule.check(tau)
    if not tau < t:
        raise TimeOrderError(t, tau)


def c_coef(schedule: Schedule, t):
    """C_t = alpha'_t - alpha_t sigma'_t / sigma_t."""
    return schedule.alpha_dot(t) - schedule.alpha(t) * schedule.sigma_dot(t) / schedule.sigma(t)


def diffusion_coefficient(schedule: Schedule, t, kind="sigma"):
    """w_t for the reverse SDE: ``"sigma"`` (w_t = sigma_t), ``"zero"``, or a constant."""
    if kind == "sigma":
        return float(schedule.sigma(t))
    if kind == "zero":
        return 0.0
    w = float(kind)
    if w < 0:
        raise ValueError("diffusion strength must be >= 0")
    return w


def euler_step(schedule: Schedule, v, xt, t, tau):
    _order(schedule, t, tau)
    return np.asarray(xt) + (tau - t) * np.asarray(v)


def euler_maruyama_step(schedule: Schedule, v, xt, t, tau, rng, w_t_kind="sigma"):
    """x + dt (v - w s / 2) + sqrt(w |dt|) z with dt = tau - t < 0 and the score
    s recovered from the velocity."""
    _order(schedule, t, tau)
    xt = np.asarray(xt, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    w = diffusion_coefficient(schedule, t, w_t_kind)
    dt = tau - t
    if w == 0.0:
        return xt + dt * v
    s = score_from_velocity(schedule, xt, v, t)
    return xt + dt * (v - 0.5 * w * s) + np.sqrt(w * abs(dt)) * rng.standard_normal(xt.shape)


def psi_factor(schedule: Schedule, t, tau, method: str = "closed"):
    """Psi_{t,tau} = (1 / C_t) * integral_t^tau C(s) / sigma_s ds.

    Closed forms: linear 1 - t / tau; vp-cosine
    -(2/pi) sin(pi t / 2) (cot(pi tau / 2) - cot(pi t / 2)).
    ``method="quadrature"`` integrates numerically instead.
    """
    if method == "quadrature":
        f = lambda s: c_coef(schedule, s) / schedule.sigma(s)  # noqa: E731
        val, _ = integrate.quad(f, t, tau, epsabs=1e-14, epsrel=1e-13, limit=200)
        return val / c_coef(schedule, t)
    if method != "closed":
        raise ValueError(f"unknown method {method!r}")
    if schedule.kind == "linear":
        return 1.0 - t / tau
    h = 0.5 * np.pi
    return -np.sin(h * t) * (1.0 / np.tan(h * tau) - 1.0 / np.tan(h * t)) / h


def extract_x0(schedule: Schedule, v, xt, t):
    """Invert the conditional velocity for x0: (v - (sigma'/sigma) xt) / C_t."""
    schedule.check(t)
    c = c_coef(schedule, t)
    if abs(c) < 1e-300 or not np.isfinite(c):
        raise SingularityError("C_t", t)
    r = schedule.sigma_dot(t) / schedule.sigma(t)
    return (np.asarray(v) - r * np.asarray(xt)) / c


def stablevs_ode_step(schedule: Schedule, v, xt, t, tau, psi_method: str = "closed"):
    """Exact probability-flow step for a single-point velocity field:
    sigma_tau [(1/sigma_t - (sigma'_t/sigma_t) Psi) xt + Psi v]."""
    _order(schedule, t, tau)
    if schedule.kind == "linear" and psi_method == "closed":
        # sigma_t = t: the bracket collapses to xt + (tau - t) v algebraically
        return np.asarray(xt) + (tau - t) * np.asarray(v)
    psi = psi_factor(schedule, t, tau, psi_method)
    s_t, s_tau = schedule.sigma(t), schedule.sigma(tau)
    r = schedule.sigma_dot(t) / s_t
    return s_tau * ((1.0 / s_t - r * psi) * np.asarray(xt) + psi * np.asarray(v))


def sde_coefficients(schedule: Schedule, t, tau, f_beta):
    """(rho, lambda, beta) of the DDIM-style stochastic step."""
    if not 0.0 <= f_beta <= 1.0:
        raise ValueError(f"f_beta must lie in [0, 1], got {f_beta}")
    s_tau, s_t = schedule.sigma(tau), schedule.sigma(t)
    beta = f_beta * s_tau
    rho = np.sqrt(max(s_tau * s_tau - beta * beta, 0.0) / (s_t * s_t))
    lam = (schedule.alpha(tau) - schedule.alpha(t) * rho) / c_coef(schedule, t)
    return float(rho), float(lam), float(beta)


def stablevs_sde_step(schedule: Schedule, v, xt, t, tau, f_beta, rng=None):
    """(rho - lambda sigma'_t/sigma_t) xt + lambda v + beta z, beta = f_beta sigma_tau."""
    _order(schedule, t, tau)
    rho, lam, beta = sde_coefficients(schedule, t, tau, f_beta)
    xt = np.asarray(xt, dtype=np.float64)
    r = schedule.sigma_dot(t) / schedule.sigma(t)
    mean = (rho - lam * r) * xt + lam * np.asarray(v)
    if beta == 0.0:
        return mean
    return mean + beta * rng.standard_normal(xt.shape)


@dataclass(frozen=True)
class SolverPlan:
    """Two-regime plan: base solver on [xi, t_max], StableVS on [t_min, xi].

    ``stablevs=False`` runs the base solver on the low segment as well (same
    grid), which is the comparison baseline.
    """

    xi: float = 0.85
    high_steps: int = 19
    low_steps: int = 9
    base_kind: str = "euler_ode"
    f_beta: float = 0.0
    w_t_kind: str = "sigma"
    grid: str = "uniform"
    stablevs: bool = True

    def __post_init__(self):
        if not 0.0 < self.xi <= 1.0:
            raise ValueError("xi must lie in (0, 1]")
        if self.base_kind not in BASE_KINDS:
            raise ValueError(f"unknown base solver {self.base_kind!r}")
        if not 0.0 <= self.f_beta <= 1.0:
            raise ValueError("f_beta must lie in [0, 1]")
        if self.grid != "uniform":
            raise ValueError("only uniform grids are supported")
        if self.low_steps < 1 or self.high_steps < 0:
            raise ValueError("need low_steps >= 1 and high_steps >= 0")

    @property
    def total_steps(self) -> int:
        return self.high_steps + self.low_steps

    def time_grid(self, schedule: Schedule):
        """Decreasing grid and the index of xi on it."""
        xi = min(self.xi, schedule.t_max)
        low = np.linspace(xi, schedule.t_min, self.low_steps + 1)
        if xi >= schedule.t_max or self.high_steps == 0:
            return low, 0
        high = np.linspace(schedule.t_max, xi, self.high_steps + 1)
        return np.concatenate([high[:-1], low]), self.high_steps

    def to_dict(self) -> dict:
        return {
            "xi": self.xi,
            "high_steps": self.high_steps,
            "low_steps": self.low_steps,
            "base": self.base_kind,
            "f_beta": self.f_beta,
            "w_t": self.w_t_kind,
            "stablevs": self.stablevs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SolverPlan":
        return cls(
            xi=float(d.get("xi", 0.85)),
            high_steps=int(d.get("high_steps", 19)),
            low_steps=int(d.get("low_steps", 9)),
            base_kind=d.get("base", d.get("base_kind", "euler_ode")),
            f_beta=float(d.get("f_beta", 0.0)),
            w_t_kind=d.get("w_t", d.get("w_t_kind", "sigma")),
            stablevs=bool(d.get("stablevs", True)),
        )


def _velocity(source, x, t, step):
    try:
        v = source(x, t)
    except Exception as e:  # attach the step index, keep the cause
        raise VelocitySourceError(step, t, e) from e
    return np.asarray(v, dtype=np.float64)


def _base_step(plan, schedule, v, x, t, tau, rng):
    if plan.base_kind == "euler_ode":
        return euler_step(schedule, v, x, t, tau)
    return euler_maruyama_step(schedule, v, x, t, tau, rng, plan.w_t_kind)


def run_plan(plan: SolverPlan, schedule: Schedule, velocity_source, x_init, rng=None):
    """Integrate ``x_init`` (at t_max, or at xi when the plan has no high
    segment) down to t_min and finish with x0 extraction."""
    grid, split = plan.time_grid(schedule)
    x = np.asarray(x_init, dtype=np.float64)
    for i in range(len(grid) - 1):
        t, tau = float(grid[i]), float(grid[i + 1])
        v = _velocity(velocity_source, x, t, i)
        if i < split or not plan.stablevs:
            x = _base_step(plan, schedule, v, x, t, tau, rng)
        elif plan.f_beta > 0.0:
            x = stablevs_sde_step(schedule, v, x, t, tau, plan.f_beta, rng)
        else:
            x = stablevs_ode_step(schedule, v, x, t, tau)
    t_end = float(grid[-1])
    v = _velocity(velocity_source, x, t_end, len(grid) - 1)
    return extract_x0(schedule, v, x, t_end)


def prior_sample(schedule: Schedule, rng, count: int, dim: int):
    """Initial state sigma_{t_max} z with z standard normal."""
    return float(schedule.sigma(schedule.t_max)) * rng.standard_normal((count, dim))


def sample(plan: SolverPlan, schedule: Schedule, velocity_source, rng, count: int, dim: int):
    """Draw ``count`` endpoints; deterministic given ``rng``'s state."""
    x = prior_sample(schedule, rng, count, dim)
    return run_plan(plan, schedule, velocity_source, x, rng)


def integrate_reference(schedule: Schedule, velocity_source, x_init, steps: int = 10_000):
    """Classical RK4 on a uniform grid from t_max to t_min, then x0 extraction."""
    grid = np.linspace(schedule.t_max, schedule.t_min, steps + 1)
    x = np.asarray(x_init, dtype=np.float64)
    for i in range(steps):
        t, tau = float(grid[i]), float(grid[i + 1])
        h = tau - t
        k1 = velocity_source(x, t)
        k2 = velocity_source(x + 0.5 * h * k1, t + 0.5 * h)
        k3 = velocity_source(x + 0.5 * h * k2, t + 0.5 * h)
        k4 = velocity_source(x + h * k3, tau)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    t_end = float(grid[-1])
    return extract_x0(schedule, velocity_source(x, t_end), x, t_end)
