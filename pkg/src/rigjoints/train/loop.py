"""Epoch loop, validation and the checkpointed ``fit`` driver."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .. import __version__
from ..eval import MetricReport, mpjpe
from ..geometry import atomic_write_bytes
from ..model import JointLocalizer, joint_loss, load_checkpoint, save_model
from ..numcore import AdamW, PlateauScheduler, Tape, backward
from ..numcore.optim import PlateauSchedulerState
from ..rigdata import DataError, Sample, augment, config_hash, load_manifest, load_sample
from .config import ConfigError, TrainConfig

LOG_COLUMNS = ("epoch", "train_loss", "val_mpjpe", "lr", "seconds")


class TrainingError(RuntimeError):
    """Training cannot continue (for example a non-finite loss)."""


@dataclass
class EpochResult:
    mean_loss: float
    steps: int


def train_epoch(model: JointLocalizer, samples: list[Sample], optimizer: AdamW, rng: np.random.Generator,
                config: TrainConfig | None = None, epoch: int = 0) -> EpochResult:
    """One pass over ``samples`` in seeded random order; batch size one."""
    config = config or TrainConfig()
    model.train()
    names = list(model.params)
    tensors = [model.params[n] for n in names]
    losses = []
    for step, i in enumerate(rng.permutation(len(samples))):
        s = samples[int(i)]
        cloud, joints = s.cloud, s.joints
        if config.augment:
            cloud, joints = augment(cloud, joints, rng, (config.scale_min, config.scale_max),
                                    config.jitter_sigma, config.jitter_clip)
        with Tape() as tape:
            out = model.forward(cloud)
            loss = joint_loss(out.joints, joints)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss on sample {s.source_id} (epoch {epoch}, step {step})")
        grads = backward(tape, loss, tensors)
        optimizer.step(dict(zip(names, grads)))
        losses.append(value)
    return EpochResult(float(np.mean(losses)) if losses else math.nan, len(losses))


def predict_all(model: JointLocalizer, samples: list[Sample]) -> np.ndarray:
    return np.stack([model.predict(s.cloud) for s in samples])


def validate(model: JointLocalizer, samples: list[Sample], categories: list[str] | None = None) -> MetricReport:
    """MPJPE of eval-mode predictions; parameters and running statistics are untouched."""
    if not samples:
        raise DataError("validation needs at least one sample")
    cats = categories or samples[0].skeleton.categories
    preds = predict_all(model, samples)
    return mpjpe(preds, np.stack([s.joints for s in samples]), cats)


def load_split(root: str | Path, split: str) -> list[Sample]:
    root = Path(root)
    manifest = load_manifest(root)
    return [load_sample(root / sid) for sid in manifest.splits.get(split, [])]


def _optimizer_arrays(opt: AdamW) -> dict[str, np.ndarray]:
    out = {}
    for name in opt.params:
        out[f"adam.m.{name}"] = opt.state.exp_avg[name]
        out[f"adam.v.{name}"] = opt.state.exp_avg_sq[name]
    return out


def _scheduler_json(s: PlateauSchedulerState) -> dict:
    d = dict(vars(s))
    d["best_metric"] = None if math.isinf(d["best_metric"]) else d["best_metric"]
    return d


@dataclass
class FitResult:
    best_path: Path
    last_path: Path
    log_path: Path
    rows: list[dict] = field(default_factory=list)
    best_metric: float = math.inf


def _log_csv(rows: list[dict], cfg_hash: str) -> bytes:
    buf = io.StringIO()
    buf.write(f"# rigjoints {__version__} config={cfg_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for r in rows:
        w.writerow([r["epoch"], f"{r['train_loss']:.10g}", f"{r['val_mpjpe']:.10g}", f"{r['lr']:.10g}",
                    f"{r['seconds']:.3f}"])
    return buf.getvalue().encode("utf-8")


def _read_log(path: Path, upto: int) -> list[dict]:
    if not path.is_file():
        return []
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if not ln.startswith("#")]
    rows = []
    for r in csv.DictReader(lines):
        if int(r["epoch"]) <= upto:
            rows.append({"epoch": int(r["epoch"]), "train_loss": float(r["train_loss"]),
                         "val_mpjpe": float(r["val_mpjpe"]), "lr": float(r["lr"]), "seconds": float(r["seconds"])})
    return rows


def fit(config: TrainConfig, resume: str | Path | None = None, train_samples: list[Sample] | None = None,
        val_samples: list[Sample] | None = None, log: Callable[[str], None] | None = None) -> FitResult:
    """Train for ``config.epochs`` epochs, validating and checkpointing after each one.

    ``last.ckpt`` is rewritten every epoch; ``best.ckpt`` whenever the
    validation MPJPE improves. With ``resume`` the run continues from the
    given checkpoint's model, optimizer, scheduler and RNG state.
    """
    config.validate()
    if train_samples is None or val_samples is None:
        if not config.data_dir or not Path(config.data_dir, "manifest.json").is_file():
            raise ConfigError(f"data_dir {config.data_dir!r} is not a conditioned dataset (manifest.json missing)")
        train_samples = load_split(config.data_dir, config.train_split) if train_samples is None else train_samples
        val_samples = load_split(config.data_dir, config.val_split) if val_samples is None else val_samples
    if not train_samples or not val_samples:
        raise DataError("training and validation splits must both be non-empty")
    skel = train_samples[0].skeleton
    if len(train_samples[0].joints) != config.joint_count:
        raise ConfigError(f"dataset has {len(train_samples[0].joints)} joints, config joint_count={config.joint_count}")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    # paths are left out so identical runs in different directories write identical bytes
    cfg_json = {k: v for k, v in config.to_json().items() if k not in ("out_dir", "data_dir")}
    cfg_hash = config_hash({k: v for k, v in cfg_json.items() if k != "epochs"})

    model = JointLocalizer(config.model_config(), seed=config.seed)
    optimizer = AdamW(model.params, lr=config.initial_lr, weight_decay=config.weight_decay)
    scheduler = PlateauScheduler(config.initial_lr, config.patience, config.decay, config.warmup)
    rng = np.random.default_rng(config.seed)
    start, best = 0, math.inf
    log_path = out / "train_log.csv"
    rows: list[dict] = []
    if resume is not None:
        header, arrays = load_checkpoint(resume)
        model.load_state_arrays(arrays)
        opt_h = header["optimizer"]
        optimizer.state.step = int(opt_h["step"])
        optimizer.lr = float(opt_h["lr"])
        for name in model.params:
            optimizer.state.exp_avg[name] = arrays[f"adam.m.{name}"].copy()
            optimizer.state.exp_avg_sq[name] = arrays[f"adam.v.{name}"].copy()
        sch = dict(header["scheduler"])
        sch["best_metric"] = math.inf if sch["best_metric"] is None else sch["best_metric"]
        scheduler.state = PlateauSchedulerState(**sch)
        rng.bit_generator.state = header["rng_state"]
        start = int(header["epoch"])
        best = math.inf if header["best_metric"] is None else float(header["best_metric"])
        rows = _read_log(log_path, start)

    best_path, last_path = out / "best.ckpt", out / "last.ckpt"
    for epoch in range(start, config.epochs):
        t0 = time.perf_counter()
        lr = scheduler.lr_for_epoch(epoch)
        optimizer.lr = lr
        res = train_epoch(model, train_samples, optimizer, rng, config, epoch)
        val = validate(model, val_samples, skel.categories).mean
        metric = val if config.scheduler_metric == "val_mpjpe" else res.mean_loss
        scheduler.step(metric)
        improved = val < best
        best = min(best, val)
        header = {
            "train_config": cfg_json, "config_hash": cfg_hash, "epoch": epoch + 1, "val_mpjpe": val,
            "best_metric": best, "rng_state": rng.bit_generator.state,
            "optimizer": {"step": optimizer.state.step, "lr": optimizer.lr, "betas": [optimizer.state.beta1,
                          optimizer.state.beta2], "eps": optimizer.state.epsilon,
                          "weight_decay": optimizer.state.weight_decay},
            "scheduler": _scheduler_json(scheduler.state),
        }
        save_model(last_path, model, skel, header, _optimizer_arrays(optimizer))
        if improved:
            save_model(best_path, model, skel, header, _optimizer_arrays(optimizer))
        rows.append({"epoch": epoch + 1, "train_loss": res.mean_loss, "val_mpjpe": val, "lr": lr,
                     "seconds": time.perf_counter() - t0})
        atomic_write_bytes(log_path, _log_csv(rows, cfg_hash))
        if log is not None:
            log(f"epoch {epoch + 1}/{config.epochs} loss={res.mean_loss:.6g} val_mpjpe={val:.4f}% lr={lr:.3g}")
    return FitResult(best_path, last_path, log_path, rows, best)
