"""Training loop, schedule, stage runner, and the ablation driver.

The schedule follows the published recipe shape: linear warmup over a fixed
iteration count to the base rate, then multiplicative drops at epoch
milestones. The optimizer is Adam with bias correction and no weight decay.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .data import SceneSpec, SyntheticDataset
from .errors import InvalidSpec, NonFiniteLoss
from .layers import save_checkpoint
from .pose import (Keypoints, PoseModel, PoseModelConfig, build_pose_model, decode_keypoints,
                   mse_loss, pck, render_targets)
from .stem import StemConfig, StemVariant
from .tensor import Tape, Tensor

__all__ = [
    "TrainConfig", "RunRecord", "AblationRecord", "REFERENCE_AP",
    "lr_at", "AdamState", "Batch", "make_batch", "train_step",
    "evaluate_pck", "run_stage", "run_ablation",
    "OVERFIT_STEPS", "OVERFIT_SAMPLES", "overfit_train_config", "smoke_train_config",
    "SMOKE_TRAIN_SAMPLES", "SMOKE_EVAL_SAMPLES",
]

# Published full-scale AP per stage configuration; reference metadata only,
# never recomputed at desk scale.
REFERENCE_AP = {
    "s0": 72.5, "s1": 73.3, "s2": 74.0, "s3": 74.1,
    "s4": 74.5, "s5": 73.8, "s6": 74.3,
}


@dataclass
class TrainConfig:
    base_lr: float = 1e-4
    warmup_iters: int = 500
    milestones: tuple = (34, 40)
    total_epochs: int = 42
    batch_size: int = 8
    lr_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    eval_every: int = 1

    def validate(self) -> None:
        if self.warmup_iters < 0:
            raise InvalidSpec("warmup_iters must be >= 0")
        ms = list(self.milestones)
        if ms != sorted(set(ms)):
            raise InvalidSpec(f"milestones must increase strictly: {self.milestones}")
        if ms and ms[-1] >= self.total_epochs:
            raise InvalidSpec("milestones must fall before total_epochs")
        if self.batch_size < 1 or self.total_epochs < 1:
            raise InvalidSpec("batch_size and total_epochs must be positive")


@dataclass
class RunRecord:
    stage: str
    epoch: int
    loss: float
    pck05: float
    pck10: float
    params: int
    seconds: float


@dataclass
class AblationRecord:
    stage: str
    reference_ap: float
    pck05: float
    pck10: float
    params: int
    error: str = ""


# Mode presets. Smoke is a wiring test: one epoch over a handful of samples.
# Overfit memorizes a fixed 16-sample set within a step budget, so it swaps
# the long-haul schedule for a short warmup, no decay, and a hotter rate.
SMOKE_TRAIN_SAMPLES = 8
SMOKE_EVAL_SAMPLES = 4
OVERFIT_STEPS = 2000
OVERFIT_SAMPLES = 16


def smoke_train_config(base: TrainConfig) -> TrainConfig:
    return replace(base, total_epochs=1, milestones=(), eval_every=1)


def overfit_train_config(base: TrainConfig) -> TrainConfig:
    steps_per_epoch = -(-OVERFIT_SAMPLES // base.batch_size)
    epochs = -(-OVERFIT_STEPS // steps_per_epoch)
    return replace(base, total_epochs=epochs, milestones=(), warmup_iters=100,
                   base_lr=1e-3, eval_every=25)


def lr_at(step: int, epoch: int, cfg: TrainConfig) -> float:
    """Linear warmup to base_lr, then stepwise decay at epoch milestones."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if cfg.warmup_iters > 0 and step < cfg.warmup_iters:
        return cfg.base_lr * step / cfg.warmup_iters
    passed = sum(1 for m in cfg.milestones if epoch >= m)
    return cfg.base_lr * cfg.lr_decay ** passed


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params, grads: dict, lr: float, cfg: TrainConfig) -> None:
        self.t += 1
        b1, b2 = cfg.beta1, cfg.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p in params:
            if not p.trainable:
                continue
            g = grads.get(p.name)
            if g is None:
                g = np.zeros_like(p.value.data)
            m = self.m.get(p.name)
            if m is None:
                m = np.zeros_like(p.value.data)
                self.m[p.name] = m
                self.v[p.name] = np.zeros_like(p.value.data)
            v = self.v[p.name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + cfg.eps)
            p.value = Tensor(p.value.data - lr * update.astype(p.value.dtype))


@dataclass
class Batch:
    images: Tensor                 # [B, 3, H, W]
    keypoints: list
    visible: np.ndarray            # [B, K]


def make_batch(samples: Sequence) -> Batch:
    images = Tensor(np.stack([s.image.data for s in samples]))
    kps = [s.keypoints for s in samples]
    visible = np.stack([k.visible for k in kps])
    return Batch(images=images, keypoints=kps, visible=visible)


def train_step(model: PoseModel, batch: Batch, opt: AdamState, cfg: TrainConfig,
               step: int, epoch: int) -> float:
    """One forward/backward/update; returns the loss value."""
    tape = Tape()
    pmap = model.params.tracked(tape)
    pred = model.forward(batch.images, pmap)
    target = render_targets(batch.keypoints, model.cfg.heatmap_extent,
                            model.cfg.heatmap_stride, model.cfg.sigma)
    loss = mse_loss(pred, target, batch.visible)
    value = loss.item()
    if not np.isfinite(value):
        raise NonFiniteLoss(f"loss became {value} at step {step} (epoch {epoch})")
    grads = tape.backward(loss)
    by_name = {}
    for name, t in pmap.items():
        g = grads.get(t)
        if g is not None:
            by_name[name] = g.data
    opt.step(model.params, by_name, lr_at(step, epoch, cfg), cfg)
    return value


def evaluate_pck(model: PoseModel, dataset: SyntheticDataset, indices, batch_size: int,
                 taus=(0.05, 0.1)) -> tuple:
    preds: list[Keypoints] = []
    gts: list[Keypoints] = []
    for lo in range(0, len(indices), batch_size):
        chunk = [dataset[i] for i in indices[lo:lo + batch_size]]
        batch = make_batch(chunk)
        heat = model.forward(batch.images)
        preds.extend(decode_keypoints(heat, model.cfg.heatmap_stride))
        gts.extend(batch.keypoints)
    return tuple(pck(preds, gts, tau, model.cfg.input_extent) for tau in taus)


def run_stage(variant: StemVariant, train_cfg: TrainConfig, scene: SceneSpec,
              pose_cfg: PoseModelConfig = None, stem_cfg: StemConfig = None,
              train_samples: int = 64, eval_samples: int = 16,
              out_dir: str = "runs", eval_on_train: bool = False) -> list:
    """Train one stage and emit metrics.csv plus a final checkpoint."""
    train_cfg.validate()
    scene.validate()
    pose_cfg = pose_cfg or PoseModelConfig(input_extent=scene.extent)
    model = build_pose_model(variant, pose_cfg, stem_cfg, seed=train_cfg.seed)

    total = train_samples + (0 if eval_on_train else eval_samples)
    dataset = SyntheticDataset(scene, total, cache=True)
    train_ids = list(range(train_samples))
    eval_ids = train_ids if eval_on_train else list(range(train_samples, total))

    stage_dir = os.path.join(out_dir, variant.value)
    os.makedirs(stage_dir, exist_ok=True)
    csv_path = os.path.join(stage_dir, "metrics.csv")

    rng = np.random.default_rng(train_cfg.seed)
    opt = AdamState()
    records: list[RunRecord] = []
    step = 0
    n_params = model.param_count
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "epoch", "loss", "pck05", "pck10", "params", "seconds"])
        fh.flush()
        for epoch in range(train_cfg.total_epochs):
            t0 = time.perf_counter()
            order = rng.permutation(train_ids)
            losses = []
            for lo in range(0, len(order), train_cfg.batch_size):
                chunk = [dataset[int(i)] for i in order[lo:lo + train_cfg.batch_size]]
                losses.append(train_step(model, make_batch(chunk), opt, train_cfg, step, epoch))
                step += 1
            last = epoch == train_cfg.total_epochs - 1
            if last or epoch % train_cfg.eval_every == 0:
                pck05, pck10 = evaluate_pck(model, dataset, eval_ids, train_cfg.batch_size)
                rec = RunRecord(variant.value, epoch, float(np.mean(losses)), pck05, pck10,
                                n_params, time.perf_counter() - t0)
                records.append(rec)
                writer.writerow([rec.stage, rec.epoch, f"{rec.loss:.8f}", f"{rec.pck05:.4f}",
                                 f"{rec.pck10:.4f}", rec.params, f"{rec.seconds:.3f}"])
                fh.flush()
    save_checkpoint(model.params, os.path.join(stage_dir, "final.ckpt"))
    return records


def run_ablation(stages: Sequence[StemVariant], train_cfg: TrainConfig, scene: SceneSpec,
                 pose_cfg: PoseModelConfig = None, stem_cfg: StemConfig = None,
                 train_samples: int = 64, eval_samples: int = 16,
                 out_dir: str = "runs") -> list:
    """Run each requested stage with a shared seed and data; isolate failures."""
    if not stages:
        raise InvalidSpec("ablation needs at least one stage")
    table: list[AblationRecord] = []
    for variant in stages:
        ref = REFERENCE_AP[variant.value]
        try:
            base_stem = replace(stem_cfg) if stem_cfg is not None else None
            records = run_stage(variant, replace(train_cfg), replace(scene), pose_cfg,
                                base_stem, train_samples, eval_samples, out_dir)
            final = records[-1]
            table.append(AblationRecord(variant.value, ref, final.pck05, final.pck10,
                                        final.params))
        except Exception as exc:   # a broken stage must not sink the others
            table.append(AblationRecord(variant.value, ref, float("nan"), float("nan"),
                                        0, error=f"{type(exc).__name__}: {exc}"))
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "ablation.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "reference_ap", "pck05", "pck10", "params", "error"])
        for rec in table:
            writer.writerow([rec.stage, rec.reference_ap, f"{rec.pck05:.4f}",
                             f"{rec.pck10:.4f}", rec.params, rec.error])
    return table
