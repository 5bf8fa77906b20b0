"""Training: multi-stage sequence loss, augmentation, Adam, epoch loop.

The loss is the stage-weighted sum over frames of squared Euclidean
distance between predicted and target joint vectors.  One clip forms one
optimizer step; gradients flow through all stages and frames.  Runs are
fully determined by (seed, config, data): shuffling, augmentation draws
and parameter updates all come from one seeded generator.
"""

import dataclasses
import json
import time

import numpy as np

from rpsm import evaluation
from rpsm.data import (Clip, NormalizationStats, decompose_clips,  # noqa: F401 (re-exported)
                       denormalize_pose, normalize_pose)
from rpsm.data import bilinear_gather
from rpsm.model import save_model
from rpsm.tensor import Tensor


@dataclasses.dataclass
class TrainConfig:
    lr: float = 1e-3
    decay: float = 1e-4
    alphas: tuple = ()          # empty means 1.0 per stage
    epochs: int = 1
    seed: int = 0
    scale_min: float = 0.9
    scale_max: float = 1.1
    augment: bool = True
    eval_every: int = 1         # epochs between eval passes, 0 disables
    max_steps: int = 0          # optional hard step budget, 0 = unlimited
    checkpoint_path: str = ""
    log_path: str = ""

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if any(a <= 0 for a in self.alphas):
            raise ValueError("stage weights must be positive")
        if not 0 < self.scale_min <= self.scale_max:
            raise ValueError("bad scale range [%r, %r]" % (self.scale_min, self.scale_max))


class TrainAbort(RuntimeError):
    """Raised when the loss goes non-finite; the iteration is recorded."""

    def __init__(self, message, iteration):
        super().__init__(message)
        self.iteration = iteration


def sequence_loss(preds, target, alphas):
    """Stage-weighted sum over frames of squared joint-vector distance."""
    if not isinstance(target, Tensor):
        target = np.asarray(target, dtype=np.float64)
        if target.ndim == 3:
            target = target.reshape(target.shape[0], -1)
        target = Tensor(target)
    if len(alphas) != len(preds):
        raise ValueError("%d stage weights for %d predictions" % (len(alphas), len(preds)))
    total = None
    for alpha, pred in zip(alphas, preds):
        if pred.shape != target.shape:
            raise ValueError("prediction %r vs target %r" % (pred.shape, target.shape))
        diff = pred - target
        term = (diff * diff).sum() * float(alpha)
        total = term if total is None else total + term
    return total


def augment_scale(frame, pose_mm, factor, scale_range=(0.9, 1.1)):
    """Zoom the image about its center by ``factor`` (same extent out),
    scaling pose x,y by the factor and leaving depth unchanged."""
    if not scale_range[0] <= factor <= scale_range[1]:
        raise ValueError("scale factor %r outside [%r, %r]" % (factor, *scale_range))
    c, h, w = frame.shape
    ys = (np.arange(h) + 0.5 - h / 2.0) / factor + h / 2.0 - 0.5
    xs = (np.arange(w) + 0.5 - w / 2.0) / factor + w / 2.0 - 0.5
    out = bilinear_gather(frame, ys, xs)
    pose = np.array(pose_mm, dtype=np.float64, copy=True)
    pose[:, 0] *= factor
    pose[:, 1] *= factor
    return out, pose


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params):
        self.m = {name: np.zeros_like(p.data) for name, p in params}
        self.v = {name: np.zeros_like(p.data) for name, p in params}
        self.t = 0


def adam_step(params, state, lr, decay, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected adaptive-moment update; decay enters as L2 on grads."""
    state.t += 1
    t = state.t
    for name, p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.isfinite(g).all():
            raise FloatingPointError("non-finite gradient in %s" % name)
        if decay:
            g = g + decay * p.data
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + eps)


def resolve_alphas(cfg, stages):
    alphas = tuple(cfg.alphas) if cfg.alphas else (1.0,) * stages
    if len(alphas) != stages:
        raise ValueError("%d stage weights for %d stages" % (len(alphas), stages))
    return alphas


def train(model, clips, stats, cfg, eval_clips=None):
    """Run the epoch loop; returns the metric history (list of dicts).

    Writes one JSON object per line to cfg.log_path and a checkpoint per
    epoch to cfg.checkpoint_path when set.  A non-finite loss aborts with
    the last epoch's checkpoint left on disk.
    """
    if stats is not None and stats.source != "train":
        raise ValueError("normalization stats must come from the training split, got %r"
                         % stats.source)
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    opt = AdamState(params)
    alphas = resolve_alphas(cfg, model.cfg.stages)
    history = []
    log_fh = open(cfg.log_path, "w") if cfg.log_path else None

    def emit(rec):
        history.append(rec)
        if log_fh:
            log_fh.write(json.dumps(rec) + "\n")
            log_fh.flush()

    step = 0
    try:
        for epoch in range(cfg.epochs):
            for idx in rng.permutation(len(clips)):
                clip = clips[int(idx)]
                frames, poses_norm = clip.frames, clip.poses_norm
                if cfg.augment:
                    factor = float(rng.uniform(cfg.scale_min, cfg.scale_max))
                    scaled = [augment_scale(f, p, factor, (cfg.scale_min, cfg.scale_max))
                              for f, p in zip(clip.frames, clip.poses_mm)]
                    frames = np.stack([s[0] for s in scaled])
                    poses_norm = np.stack([normalize_pose(s[1], stats) for s in scaled])
                t0 = time.perf_counter()
                preds = model.forward_clip(frames)
                loss = sequence_loss(preds, poses_norm, alphas)
                loss_val = float(loss.data)
                step += 1
                if not np.isfinite(loss_val):
                    emit({"epoch": epoch, "iter": step, "loss": loss_val,
                          "eval_error_mm": None, "stage_errors": None, "wall_ms": None})
                    raise TrainAbort("non-finite loss at iteration %d" % step, step)
                model.zero_grads()
                loss.backward()
                adam_step(params, opt, cfg.lr, cfg.decay)
                wall_ms = (time.perf_counter() - t0) * 1000.0
                emit({"epoch": epoch, "iter": step, "loss": loss_val,
                      "eval_error_mm": None, "stage_errors": None, "wall_ms": wall_ms})
                if cfg.max_steps and step >= cfg.max_steps:
                    break
            if eval_clips and cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
                report = evaluation.evaluate(model, eval_clips, stats)
                emit({"epoch": epoch, "iter": step, "loss": None,
                      "eval_error_mm": report.mean_mm,
                      "stage_errors": list(report.per_stage_mm), "wall_ms": None})
            if cfg.checkpoint_path:
                save_model(cfg.checkpoint_path, model, stats)
            if cfg.max_steps and step >= cfg.max_steps:
                break
    finally:
        if log_fh:
            log_fh.close()
    return history
