"""Command-line front end.

Exit codes: 0 success, 1 usage or configuration error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import gmm, io, profiler, solvers, training, varepa
from .bank import MemoryBank
from .errors import ConfigError, NumericError, StableVelocityError
from .rng import substream
from .solvers import SolverPlan

log = logging.getLogger("stable_velocity")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

EPILOG = "exit codes: 0 success, 1 usage/config error, 2 numeric failure (NaN)"


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; this tool reserves 2 for NaNs
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def parse_grid(text: str) -> np.ndarray:
    """``"a:b:n"`` -> n evenly spaced points from a to b."""
    try:
        a, b, n = text.split(":")
        grid = np.linspace(float(a), float(b), int(n))
    except ValueError:
        raise ConfigError(f"grid must look like a:b:n, got {text!r}") from None
    if grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ConfigError("grid must be strictly increasing with at least 2 points")
    return grid


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


# make-gmm

def cmd_make_gmm(args) -> int:
    spec = gmm.random_spec(args.dim, args.modes, substream(args.seed, "make-gmm", "spec"), classes=args.classes)
    spec.save(args.out)
    if args.samples:
        if not args.dataset:
            raise ConfigError("--samples needs --dataset")
        pts, labs = gmm.sample(spec, substream(args.seed, "make-gmm", "data"), args.samples, return_labels=True)
        io.write_svl(args.dataset, pts, labs if args.classes else None, args.classes)
    return EXIT_OK


# variance-curve

def cmd_variance_curve(args) -> int:
    cfg = io.load_run_config(args.config, {"seed": args.seed})
    prof = cfg.profiler
    estimator = profiler.canonical_estimator(args.estimator or prof.get("estimator", "oracle"))
    grid = parse_grid(args.grid or prof.get("grid", "0.02:0.98:49"))
    probes = args.probes or int(prof.get("probes", 4096))
    norm = args.normalization or prof.get("normalization", "raw")
    rng = substream(cfg.seed, "variance-curve")
    if estimator == "oracle":
        source, data = cfg.load_gmm(), None
    else:
        if cfg.dataset is None:
            raise ConfigError("empirical estimator needs a dataset in the config")
        data = cfg.load_dataset()[0].astype(np.float64)
        source = data
    curve = profiler.variance_curve(source, cfg.schedule, grid, rng, probes=probes, normalization=norm,
                                    estimator=estimator, dataset=data)
    io.write_csv(args.out, curve.rows(), ["t", "value", "stderr", "q15", "q85", "normalization", "estimator", "d",
                                          "n_if_stablevm"])
    if args.svg:
        io.svg_chart(args.svg, [("V_CFM", curve.t, curve.values)], band=(curve.t, curve.q15, curve.q85),
                     title=f"V_CFM(t), {estimator}, {norm}", ylabel="variance")
    try:
        log.info("split point (20%%): %.4f", profiler.split_point(curve, 0.2))
    except profiler.UndefinedSplitError:
        log.info("split point undefined (flat-zero curve)")
    return EXIT_OK


# train

def train_config_from(cfg: io.RunConfig, iterations=None) -> training.TrainConfig:
    t = dict(cfg.targets)
    kw = {}
    keys = {"loss": str, "batch_size": int, "iterations": int, "lr": float, "weight_decay": float,
            "t_per_sample": bool, "time_features": int, "lambda_ra": float, "probe_interval": int, "probe_count": int}
    for k, conv in keys.items():
        if k in t:
            kw[k] = conv(t[k])
    if "n" in t or "n_refs" in t:
        kw["n_refs"] = int(t.get("n", t.get("n_refs")))
    if "hidden" in t:
        kw["hidden"] = tuple(int(h) for h in t["hidden"])
    if "time_range" in t:
        kw["time_range"] = tuple(float(x) for x in t["time_range"])
    if "probe_times" in t:
        kw["probe_times"] = tuple(float(x) for x in t["probe_times"])
    if iterations is not None:
        kw["iterations"] = iterations
    if cfg.weighting:
        kw["weighting"] = varepa.WeightingFn.from_dict(cfg.weighting)
    if cfg.bank:
        kw["bank"] = training.BankConfig(capacity=int(cfg.bank.get("capacity", 256)),
                                         p_cfg=float(cfg.bank.get("p_cfg", 0.1)))
    return training.TrainConfig(seed=cfg.seed, schedule=cfg.schedule, **kw)


def _train_data(cfg: io.RunConfig):
    if cfg.dataset is not None:
        pts, labs, _ = cfg.load_dataset()
        return (pts.astype(np.float64), labs)
    return cfg.load_gmm()


def metric_columns(tc: training.TrainConfig, with_oracle: bool):
    cols = ["iteration", "loss"]
    if with_oracle:
        cols += [f"lmse@{t:g}" for t in tc.probe_times]
    return cols


def cmd_train(args) -> int:
    cfg = io.load_run_config(args.config, {"seed": args.seed})
    tc = train_config_from(cfg, args.iterations)
    data = _train_data(cfg)
    oracle = cfg.load_gmm() if cfg.gmm is not None else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.svck"
    metrics_path = out / "metrics.csv"
    cols = metric_columns(tc, oracle is not None)
    state = None
    if args.resume:
        model, opt, header, arrays = io.load_checkpoint(args.resume)
        if header["seed"] != tc.seed:
            raise ConfigError(f"checkpoint seed {header['seed']} differs from config seed {tc.seed}")
        fresh = training.init_state(tc, model.arch.dim, model.arch.num_classes)
        state = training.TrainState(model=model, optimizer=opt, iteration=header["iteration"], teacher=fresh.teacher)
        if "bank" in arrays:
            state.bank = MemoryBank.from_state(arrays["bank"], arrays["bank_sizes"], tc.bank.p_cfg)
        log.info("resuming from iteration %d", state.iteration)
    append = bool(args.resume) and metrics_path.exists()
    written = 0

    def flush(st, loss):
        nonlocal written
        rows = st.metrics[written:]
        if rows:
            io.write_csv(metrics_path, rows, cols, append=append or written > 0)
            written = len(st.metrics)

    state = training.train(tc, data, oracle=oracle, state=state, callback=flush)
    arrays = {}
    if state.bank is not None:
        contents, sizes = state.bank.state()
        arrays = {"bank": contents, "bank_sizes": sizes}
    io.save_checkpoint(ckpt, state.model, state.optimizer, seed=tc.seed, iteration=state.iteration,
                       extra={"loss": tc.loss}, arrays=arrays)
    if written == 0 and not append:
        io.write_csv(metrics_path, [], cols)
    if args.svg and oracle is not None:
        rows = io.read_csv(metrics_path)
        it = [float(r["iteration"]) for r in rows]
        io.svg_chart(args.svg, [(c, it, [float(r[c]) for r in rows]) for c in cols[2:]],
                     title=f"L_MSE, {tc.loss}", xlabel="iteration", ylabel="L_MSE")
    return EXIT_OK


# sample

def _velocity_source(cfg: io.RunConfig, velocity: str, label):
    if velocity == "oracle":
        spec = cfg.load_gmm()
        if label is not None:
            spec = spec.condition(label)
        return spec.dim, (lambda x, t: gmm.exact_velocity(spec, cfg.schedule, x, t))
    model, _, _, _ = io.load_checkpoint(velocity)
    dim = model.arch.dim
    if cfg.gmm is not None and cfg.load_gmm().dim != dim:
        raise ConfigError(f"checkpoint dim {dim} does not match the spec dim {cfg.load_gmm().dim}")
    if model.arch.conditional:
        lab = model.null_label if label is None else int(label)
        return dim, (lambda x, t: model.velocity(x, t, np.full(x.shape[0], lab)))
    if label is not None:
        raise ConfigError("--label given for an unconditional checkpoint")
    return dim, model.velocity


def endpoint_summary(x, spec=None) -> dict:
    s = {"count": int(x.shape[0]), "mean": x.mean(axis=0).tolist(), "variance": x.var(axis=0, ddof=1).tolist()}
    if x.shape[1] > 1:
        s["covariance"] = np.cov(x, rowvar=False).tolist()
    if spec is not None:
        s["avg_log_likelihood"] = float(np.mean(gmm.log_density(spec, x)))
    return s


def cmd_sample(args) -> int:
    cfg = io.load_run_config(args.config, {"seed": args.seed})
    plan = cfg.solver
    if args.plan:
        plan = SolverPlan.from_dict({**plan.to_dict(), **json.loads(args.plan)})
    dim, source = _velocity_source(cfg, args.velocity, args.label)
    rng = substream(cfg.seed, "sample")
    x = solvers.sample(plan, cfg.schedule, source, rng, args.count, dim)
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite endpoints")
    io.write_svl(args.out, x)
    spec = cfg.load_gmm() if cfg.gmm is not None else None
    summary = endpoint_summary(x, spec)
    summary["plan"] = plan.to_dict()
    _write_json(args.summary or str(args.out) + ".json", summary)
    return EXIT_OK


# solver-bench

def load_plans(path):
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict):
        doc = doc.get("plans", [])
    plans = []
    for i, p in enumerate(doc):
        plans.append((str(p.get("id", f"plan{i}")), SolverPlan.from_dict(p)))
    if not plans:
        raise ConfigError(f"{path}: no plans")
    return plans


def bench(plans, schedule, source, x_init, reference, seed: int):
    rows = []
    for pid, plan in plans:
        x = solvers.run_plan(plan, schedule, source, x_init, substream(seed, "solver-bench", pid))
        err = np.linalg.norm(x - reference, axis=1)
        rows.append({"plan": pid, "total_steps": plan.total_steps, "mean_error": float(err.mean()),
                     "p95_error": float(np.quantile(err, 0.95))})
    return rows


def cmd_solver_bench(args) -> int:
    cfg = io.load_run_config(args.config, {"seed": args.seed})
    spec = cfg.load_gmm()
    plans = load_plans(args.plans)
    source = lambda x, t: gmm.exact_velocity(spec, cfg.schedule, x, t)  # noqa: E731
    x_init = solvers.prior_sample(cfg.schedule, substream(cfg.seed, "solver-bench", "init"), args.count, spec.dim)
    ref = solvers.integrate_reference(cfg.schedule, source, x_init, args.reference_steps)
    io.write_csv(args.out, bench(plans, cfg.schedule, source, x_init, ref, cfg.seed),
                 ["plan", "total_steps", "mean_error", "p95_error"])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stable-velocity", description="Variance-reduced flow matching toolkit.", epilog=EPILOG)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("make-gmm", help="write a random GMM spec (and optionally a dataset)", epilog=EPILOG)
    s.add_argument("--dim", type=int, required=True)
    s.add_argument("--modes", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True, help="spec JSON path")
    s.add_argument("--samples", type=int, default=0)
    s.add_argument("--dataset", help="SVL1 output path for --samples draws")
    s.add_argument("--classes", type=int, default=0)
    s.set_defaults(func=cmd_make_gmm)

    s = sub.add_parser("variance-curve", help="estimate V_CFM(t) over a grid", epilog=EPILOG)
    s.add_argument("--config", required=True)
    s.add_argument("--grid", help="a:b:n (default 0.02:0.98:49)")
    s.add_argument("--estimator", choices=["empirical", "empirical_snis", "oracle"])
    s.add_argument("--normalization", choices=list(profiler.NORMALIZATIONS))
    s.add_argument("--probes", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--svg")
    s.set_defaults(func=cmd_variance_curve)

    s = sub.add_parser("train", help="train a velocity model", epilog=EPILOG)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--iterations", type=int)
    s.add_argument("--resume", help="checkpoint to continue from")
    s.add_argument("--seed", type=int)
    s.add_argument("--svg")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="draw endpoints with a solver plan", epilog=EPILOG)
    s.add_argument("--config", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--velocity", default="oracle", help="'oracle' or a checkpoint path")
    s.add_argument("--label", type=int)
    s.add_argument("--plan", help="JSON object overriding solver plan fields")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--summary", help="summary JSON path (default OUT.json)")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("solver-bench", help="endpoint error of plans against a fine reference", epilog=EPILOG)
    s.add_argument("--config", required=True)
    s.add_argument("--plans", required=True)
    s.add_argument("--reference-steps", type=int, default=10_000)
    s.add_argument("--count", type=int, default=512)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_solver_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (StableVelocityError, ValueError, OSError, KeyError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
