"""File formats: SVL1 datasets, model checkpoints, CSV tables, tiny SVG charts
and the JSON run configuration shared by the CLI commands."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .gmm import GmmSpec
from .nn import AdamW, Architecture, VelocityModel
from .schedules import Schedule
from .solvers import SolverPlan

SVL_MAGIC = b"SVL1"
CKPT_MAGIC = b"SVCK"


# SVL1 datasets

def write_svl(path, points, labels=None, num_classes: int = 0):
    """Write ``points`` (n, d) as SVL1; labels are stored when num_classes > 0."""
    pts = np.asarray(points)
    if pts.ndim != 2:
        raise DataError(f"points must be 2-D, got shape {pts.shape}")
    n, d = pts.shape
    C = int(num_classes)
    if C > 0:
        if labels is None:
            raise DataError("labels required when num_classes > 0")
        labels = np.asarray(labels)
        if labels.shape != (n,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= C:
            raise DataError(f"labels must be {n} integers in [0, {C})")
    with open(path, "wb") as f:
        f.write(SVL_MAGIC)
        f.write(struct.pack("<III", n, d, C))
        if C > 0:
            f.write(labels.astype("<u4").tobytes())
        f.write(pts.astype("<f4").tobytes(order="C"))


def read_svl(path):
    """Return ``(points float32 (n, d), labels or None, num_classes)``."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != SVL_MAGIC:
        raise DataError(f"{path}: not an SVL1 file")
    n, d, C = struct.unpack_from("<III", raw, 4)
    expect = 16 + (4 * n if C > 0 else 0) + 4 * n * d
    if len(raw) != expect:
        raise DataError(f"{path}: expected {expect} bytes, found {len(raw)}")
    off = 16
    labels = None
    if C > 0:
        labels = np.frombuffer(raw, dtype="<u4", count=n, offset=off).astype(np.int64)
        off += 4 * n
        if n and labels.max() >= C:
            raise DataError(f"{path}: label out of range")
    pts = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off).reshape(n, d).astype(np.float32)
    return pts, labels, C


# checkpoints: magic, u32 header length, JSON header, float64 LE blocks

def save_checkpoint(path, model: VelocityModel, optimizer: AdamW | None = None, seed: int = 0, iteration: int = 0,
                    extra: dict | None = None, arrays: dict | None = None):
    """Write architecture, seed and iteration as a JSON header followed by
    little-endian float64 blocks: parameters, Adam moments, then ``arrays``."""
    blocks = [("theta", model.theta)]
    opt = None
    if optimizer is not None:
        opt = {k: getattr(optimizer, k) for k in ("lr", "beta1", "beta2", "eps", "weight_decay", "step_count")}
        if optimizer.m is not None:
            blocks += [("adam_m", optimizer.m), ("adam_v", optimizer.v)]
    blocks += [(k, np.asarray(v)) for k, v in (arrays or {}).items()]
    header = {
        "architecture": model.arch.to_dict(),
        "seed": int(seed),
        "iteration": int(iteration),
        "optimizer": opt,
        "blocks": [{"name": name, "shape": list(np.shape(a))} for name, a in blocks],
        "extra": extra or {},
    }
    h = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", len(h)))
        f.write(h)
        for _, arr in blocks:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Return ``(model, optimizer or None, header, arrays)``; ``arrays`` holds
    every block besides the parameters and Adam moments."""
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise DataError(f"{path}: not a checkpoint")
    (hl,) = struct.unpack_from("<I", raw, 4)
    header = json.loads(raw[8:8 + hl])
    arch = Architecture.from_dict(header["architecture"])
    off = 8 + hl
    blocks = {}
    for b in header["blocks"]:
        count = int(np.prod(b["shape"], dtype=np.int64))
        if off + 8 * count > len(raw):
            raise DataError(f"{path}: truncated checkpoint")
        blocks[b["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(b["shape"]).copy()
        off += 8 * count
    if off != len(raw):
        raise DataError(f"{path}: trailing bytes in checkpoint")
    model = VelocityModel(arch, theta=blocks.pop("theta"))
    opt = None
    if header.get("optimizer") is not None:
        o = header["optimizer"]
        opt = AdamW(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"], weight_decay=o["weight_decay"])
        opt.step_count = o["step_count"]
        if "adam_m" in blocks:
            opt.m, opt.v = blocks.pop("adam_m"), blocks.pop("adam_v")
    return model, opt, header, blocks


# CSV

def write_csv(path, rows, columns=None, append: bool = False):
    rows = list(rows)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    mode = "a" if append else "w"
    with open(path, mode, newline="") as f:
        w = csv.DictWriter(f, fieldnames=columns, lineterminator="\n")
        if not append:
            w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in columns})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


# SVG

def svg_chart(path, series, band=None, title: str = "", xlabel: str = "t", ylabel: str = "",
              width: int = 640, height: int = 400):
    """Line chart. ``series`` is a list of ``(label, x, y)``; ``band`` an
    optional ``(x, lo, hi)`` shaded under the first series."""
    pad = 56
    xs = np.concatenate([np.asarray(s[1], float) for s in series])
    ys = np.concatenate([np.asarray(s[2], float) for s in series])
    if band is not None:
        ys = np.concatenate([ys, np.asarray(band[1], float), np.asarray(band[2], float)])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = min(0.0, float(ys.min())), float(ys.max())
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def px(x):
        return pad + (np.asarray(x, float) - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        return height - pad - (np.asarray(y, float) - y0) / (y1 - y0) * (height - 2 * pad)

    def pts(x, y):
        return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px(x), py(y)))

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>']
    if band is not None:
        bx = np.asarray(band[0], float)
        poly = pts(np.concatenate([bx, bx[::-1]]), np.concatenate([band[1], np.asarray(band[2])[::-1]]))
        out.append(f'<polygon points="{poly}" fill="{colors[0]}" fill-opacity="0.2" stroke="none"/>')
    for i, (label, x, y) in enumerate(series):
        c = colors[i % len(colors)]
        out.append(f'<polyline points="{pts(x, y)}" fill="none" stroke="{c}" stroke-width="1.5"/>')
        out.append(f'<text x="{width - pad - 120}" y="{pad + 16 * i}" fill="{c}">{label}</text>')
    out.append(f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>')
    out.append(f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>')
    for v in np.linspace(x0, x1, 5):
        out.append(f'<text x="{px(v):.2f}" y="{height - pad + 16}" text-anchor="middle">{v:.3g}</text>')
    for v in np.linspace(y0, y1, 5):
        out.append(f'<text x="{pad - 6}" y="{py(v):.2f}" text-anchor="end">{v:.3g}</text>')
    out.append(f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="14" y="{height / 2}" transform="rotate(-90 14 {height / 2})" text-anchor="middle">{ylabel}</text>')
    if title:
        out.append(f'<text x="{width / 2}" y="20" text-anchor="middle">{title}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


# run configuration

@dataclass
class RunConfig:
    seed: int
    schedule: Schedule = field(default_factory=Schedule)
    gmm: Path | None = None
    dataset: Path | None = None
    targets: dict = field(default_factory=dict)
    bank: dict | None = None
    weighting: dict | None = None
    solver: SolverPlan = field(default_factory=SolverPlan)
    profiler: dict = field(default_factory=dict)
    output: Path | None = None

    def load_gmm(self) -> GmmSpec:
        if self.gmm is None:
            raise ConfigError("config has no gmm spec")
        return GmmSpec.load(self.gmm)

    def load_dataset(self):
        if self.dataset is None:
            raise ConfigError("config has no dataset")
        return read_svl(self.dataset)


def load_run_config(path, overrides: dict | None = None) -> RunConfig:
    """Read a run config; ``overrides`` (flag values, None = unset) win over the
    file. Relative paths resolve against the config file's directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config {path} not found") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path}: {e}") from None
    for k, v in (overrides or {}).items():
        if v is not None:
            doc[k] = v
    if "seed" not in doc:
        raise ConfigError("config must set a seed")
    base = path.parent

    def resolve(key):
        p = doc.get(key)
        if p is None:
            return None
        p = Path(p)
        p = p if p.is_absolute() else base / p
        if not p.exists():
            raise ConfigError(f"{key} file {p} does not exist")
        return p

    try:
        return RunConfig(
            seed=int(doc["seed"]),
            schedule=Schedule.from_dict(doc.get("schedule", {})),
            gmm=resolve("gmm"),
            dataset=resolve("dataset"),
            targets=dict(doc.get("targets", {})),
            bank=doc.get("bank"),
            weighting=doc.get("weighting"),
            solver=SolverPlan.from_dict(doc.get("solver", {})),
            profiler=dict(doc.get("profiler", {})),
            output=None if doc.get("output") is None else base / doc["output"],
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"config {path}: {e}") from None
