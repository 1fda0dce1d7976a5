"""Training loops: CFM, multi-reference StableVM (one shared reference batch
per iteration), the STF baseline, and the class-conditional variant drawing
references from a memory bank with classifier-free-guidance dropout.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import gmm, targets, varepa
from .bank import MemoryBank
from .errors import ConfigError, NumericError
from .nn import AdamW, Architecture, VelocityModel, loss_and_grad
from .profiler import second_moment_mse
from .rng import substream
from .schedules import Schedule

log = logging.getLogger(__name__)

LOSS_KINDS = ("cfm", "stablevm", "stf")


@dataclass(frozen=True)
class BankConfig:
    capacity: int = 256
    p_cfg: float = 0.1


@dataclass
class TrainConfig:
    loss: str = "stablevm"
    n_refs: int = 2048
    batch_size: int = 128
    iterations: int = 5000
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    time_range: tuple | None = None
    t_per_sample: bool = False
    hidden: tuple = (256, 256, 256)
    time_features: int = 16
    weighting: varepa.WeightingFn | None = None
    lambda_ra: float = 0.5
    bank: BankConfig | None = None
    probe_times: tuple = (0.2, 0.3, 0.4, 0.5)
    probe_interval: int = 250
    probe_count: int = 2048
    schedule: Schedule = field(default_factory=Schedule)

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.n_refs < 1 or self.batch_size < 1 or self.iterations < 0:
            raise ConfigError("n_refs and batch_size must be >= 1, iterations >= 0")
        lo, hi = self.t_range
        if not (self.schedule.t_min <= lo < hi <= self.schedule.t_max):
            raise ConfigError(f"time range [{lo}, {hi}] must lie within the schedule clamps")
        if self.bank is not None and self.loss != "stablevm":
            raise ConfigError("the memory bank is only used with the stablevm loss")

    @property
    def t_range(self):
        if self.time_range is None:
            return (self.schedule.t_min, self.schedule.t_max)
        return tuple(float(x) for x in self.time_range)


@dataclass
class TrainState:
    model: VelocityModel
    optimizer: AdamW
    iteration: int = 0
    metrics: list = field(default_factory=list)
    teacher: np.ndarray | None = None
    bank: MemoryBank | None = None


def make_probes(oracle: gmm.GmmSpec, schedule: Schedule, times, count: int, seed: int):
    out = {}
    for i, t in enumerate(times):
        rng = substream(seed, "probes", i)
        x0 = gmm.sample(oracle, rng, count)
        out[float(t)] = schedule.alpha(t) * x0 + schedule.sigma(t) * rng.standard_normal(x0.shape)
    return out


def init_state(config: TrainConfig, dim: int, num_classes: int = 0) -> TrainState:
    arch = Architecture(dim=dim, hidden=tuple(config.hidden), time_features=config.time_features, num_classes=num_classes)
    model = VelocityModel(arch, rng=substream(config.seed, "init"))
    opt = AdamW(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps, weight_decay=config.weight_decay)
    teacher = None
    if config.weighting is not None:
        teacher = varepa.make_teacher(dim, arch.hidden[arch.rep_layer], substream(config.seed, "teacher"))
    return TrainState(model=model, optimizer=opt, teacher=teacher)


def _draw_data(data, rng, count, with_labels=False):
    if isinstance(data, gmm.GmmSpec):
        return gmm.sample(data, rng, count, return_labels=with_labels)
    points, labels = data
    idx = rng.integers(0, points.shape[0], size=count)
    if with_labels:
        return points[idx], (None if labels is None else labels[idx])
    return points[idx]


def _times(config, rng, count):
    lo, hi = config.t_range
    if config.t_per_sample:
        return rng.uniform(lo, hi, size=count)
    return float(rng.uniform(lo, hi))


def build_batch(config: TrainConfig, data, rng):
    """One unconditional iteration's (xt, target, t, x0)."""
    sched = config.schedule
    M = config.batch_size
    t = _times(config, rng, M)
    if config.loss == "cfm":
        x0 = _draw_data(data, rng, M)
        xt, target = targets.cfm_sample(x0, sched, t, rng)
        return xt, target, t, x0
    refs = targets.ReferenceBatch(_draw_data(data, rng, config.n_refs))
    if config.loss == "stablevm":
        path = targets.sample_gmm_path(refs, sched, t, rng, size=M)
        return path.xt, targets.stablevm_target(refs, sched, path.xt, t), t, path.x0
    xt, target = targets.stf_target(refs, sched, t, rng, size=M)
    return xt, target, t, np.broadcast_to(refs.points[0], xt.shape)


def build_conditional_batch(config: TrainConfig, bank: MemoryBank, rng):
    """Per-sample times and labels; references come from the bank queue of
    each sample's (possibly dropped-out) label."""
    sched = config.schedule
    B = config.batch_size
    lo, hi = config.t_range
    t = rng.uniform(lo, hi, size=B)
    y = rng.integers(0, bank.num_classes, size=B)
    eff = np.empty(B, dtype=np.int64)
    xt = np.empty((B, bank.dim))
    target = np.empty((B, bank.dim))
    x0 = np.empty((B, bank.dim))
    views = {}
    for i in range(B):
        eff[i], refs = bank.draw(y[i], rng)
        views.setdefault(int(eff[i]), refs)
    for lab, refs in views.items():
        sel = np.flatnonzero(eff == lab)
        path = targets.sample_gmm_path(refs, sched, t[sel], rng, size=sel.size)
        xt[sel] = path.xt
        x0[sel] = path.x0
        target[sel] = targets.stablevm_target(refs, sched, path.xt, t[sel])
    return xt, target, t, x0, eff


def _prefill_dataset(spec: gmm.GmmSpec, capacity: int, seed: int):
    rng = substream(seed, "prefill")
    need = capacity * max(spec.num_classes, 1)
    pts, labs = gmm.sample(spec, rng, 4 * need, return_labels=True)
    while spec.num_classes and np.bincount(labs, minlength=spec.num_classes).min() < capacity:
        p2, l2 = gmm.sample(spec, rng, 4 * need, return_labels=True)
        pts, labs = np.concatenate([pts, p2]), np.concatenate([labs, l2])
    return pts, labs


def train(config: TrainConfig, data, oracle: gmm.GmmSpec | None = None, state: TrainState | None = None,
          callback=None) -> TrainState:
    """Run (or resume) training.

    ``data`` is a :class:`GmmSpec` (online sampling) or ``(points, labels)``.
    When ``oracle`` is given, L_MSE at ``config.probe_times`` is logged every
    ``probe_interval`` iterations (and at the final iteration). Each iteration
    draws from its own substream, so a resumed run reproduces an uninterrupted
    one.
    """
    conditional = config.bank is not None
    if isinstance(data, gmm.GmmSpec):
        dim, num_classes = data.dim, data.num_classes
    else:
        dim = data[0].shape[1]
        num_classes = 0 if data[1] is None else int(np.max(data[1])) + 1
    if conditional and num_classes == 0:
        raise ConfigError("conditional training needs labelled data")
    if state is None:
        state = init_state(config, dim, num_classes if conditional else 0)
    if conditional and state.bank is None:
        bank = MemoryBank(config.bank.capacity, num_classes, dim, config.bank.p_cfg)
        if isinstance(data, gmm.GmmSpec):
            pts, labs = _prefill_dataset(data, config.bank.capacity, config.seed)
        else:
            pts, labs = data
        state.bank = bank.prefill(pts, labs)
    probes = make_probes(oracle, config.schedule, config.probe_times, config.probe_count, config.seed) if oracle is not None else None
    model = state.model
    while state.iteration < config.iterations:
        it = state.iteration
        rng = substream(config.seed, "iter", it)
        labels = None
        if conditional:
            xt, target, t, x0, labels = build_conditional_batch(config, state.bank, rng)
        else:
            xt, target, t, x0 = build_batch(config, data, rng)
        aux = None
        if config.weighting is not None:
            w = np.broadcast_to(varepa.weight(config.weighting, config.schedule, t), (xt.shape[0],))
            aux = {"x0": x0, "teacher": state.teacher, "w": w, "lambda_ra": config.lambda_ra}
        loss, grad, _ = loss_and_grad(model, xt, target, t, labels=labels, aux=aux)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite loss at iteration {it}")
        state.optimizer.step(model.theta, grad)
        if conditional:
            new, new_labels = _draw_data(data, rng, config.batch_size, with_labels=True)
            state.bank.push_many(new, new_labels)
        state.iteration = it + 1
        if probes is not None and (state.iteration % config.probe_interval == 0 or state.iteration == config.iterations):
            row = {"iteration": state.iteration, "loss": loss}
            for t_p, xp in probes.items():
                row[f"lmse@{t_p:g}"] = second_moment_mse(_uncond(model), oracle, config.schedule, t_p, probes=xp)
            state.metrics.append(row)
            log.debug("iter %d loss %.4g", state.iteration, loss)
        elif probes is None and (state.iteration % config.probe_interval == 0 or state.iteration == config.iterations):
            state.metrics.append({"iteration": state.iteration, "loss": loss})
        if callback is not None:
            callback(state, loss)
    return state


def _uncond(model: VelocityModel):
    if model.arch.conditional:
        return lambda x, t: model.velocity(x, t, np.full(x.shape[0], model.null_label))
    return model.velocity
