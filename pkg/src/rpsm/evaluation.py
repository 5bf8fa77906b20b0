"""Pose error metric and aggregated reporting.

The metric is the mean per-joint Euclidean distance in millimeters after
removing translation (root-joint subtraction by default, centroid as an
alternative).  Reports aggregate per stage, per action, and per joint;
the headline number is the final stage's mean.
"""

import dataclasses
import json
import os

import numpy as np

from rpsm.data import denormalize_pose, write_ppm
from rpsm.tensor import no_grad


def pose_error(pred, gt, alignment="root"):
    """Translation-aligned mean per-joint distance between (P,3) poses."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ValueError("pose extents differ or malformed: %r vs %r" % (pred.shape, gt.shape))
    if alignment == "root":
        pred = pred - pred[0]
        gt = gt - gt[0]
    elif alignment == "centroid":
        pred = pred - pred.mean(axis=0)
        gt = gt - gt.mean(axis=0)
    else:
        raise ValueError("unknown alignment %r" % alignment)
    return float(np.linalg.norm(pred - gt, axis=1).mean())


@dataclasses.dataclass
class EvalReport:
    mean_mm: float
    per_stage_mm: list
    per_action_mm: dict
    per_joint_mm: list
    frame_count: int
    frame_errors: list  # final-stage error per counted frame, report order

    def to_dict(self):
        return dataclasses.asdict(self)

    def table(self):
        """Human-readable summary with action columns."""
        lines = []
        actions = sorted(self.per_action_mm)
        header = "  ".join("%10s" % a for a in actions + ["mean"])
        values = "  ".join("%10.2f" % self.per_action_mm[a] for a in actions)
        lines.append(header)
        lines.append(values + "  %10.2f" % self.mean_mm)
        lines.append("per-stage mm: " + ", ".join("%.2f" % v for v in self.per_stage_mm))
        lines.append("frames: %d" % self.frame_count)
        return "\n".join(lines)


def evaluate(model, clips, stats, alignment="root", oracle=False, workers=1):
    """Score a model over clips; padding repeats are skipped.

    Predictions are denormalized with the training-split stats before
    scoring; stats from any other source are rejected to keep test data
    out of the normalization.  ``workers`` caps concurrent clip forwards;
    aggregation stays in clip order, so the report is identical for any
    worker count.
    """
    if not clips:
        raise ValueError("empty evaluation split")
    if stats.source != "train":
        raise ValueError("normalization stats must come from the training split, got %r"
                         % stats.source)

    def forward(clip):
        with no_grad():
            return [out.data for out in model.forward_clip(clip.frames)]

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            clip_outs = list(pool.map(forward, clips))
    else:
        clip_outs = [forward(clip) for clip in clips]

    stages = model.cfg.stages
    joints = model.cfg.joints
    stage_sums = np.zeros(stages)
    joint_sums = np.zeros(joints)
    action_sums, action_counts = {}, {}
    frame_errors = []
    count = 0
    for clip, outs in zip(clips, clip_outs):
        for t in range(clip.n_valid):
            gt = clip.poses_mm[t]
            for k in range(stages):
                pred = gt if oracle else denormalize_pose(outs[k][t], stats)
                err = pose_error(pred, gt, alignment)
                stage_sums[k] += err
                if k == stages - 1:
                    frame_errors.append(err)
                    action_sums[clip.action] = action_sums.get(clip.action, 0.0) + err
                    action_counts[clip.action] = action_counts.get(clip.action, 0) + 1
                    if alignment == "root":
                        a, b = pred - pred[0], gt - gt[0]
                    else:
                        a, b = pred - pred.mean(axis=0), gt - gt.mean(axis=0)
                    joint_sums += np.linalg.norm(a - b, axis=1)
            count += 1
    if count == 0:
        raise ValueError("no valid frames in evaluation split")
    per_stage = [float(s / count) for s in stage_sums]
    per_action = {a: float(action_sums[a] / action_counts[a]) for a in action_sums}
    return EvalReport(mean_mm=per_stage[-1],
                      per_stage_mm=per_stage,
                      per_action_mm=per_action,
                      per_joint_mm=[float(v / count) for v in joint_sums],
                      frame_count=count,
                      frame_errors=frame_errors)


def export_skeletons(preds, gts, out_dir, parents=None, extent=96):
    """Dump predicted vs ground-truth joints plus front/side/top renders.

    preds and gts are (T,P,3) millimeters.  Writes ``skeletons.jsonl``
    (one frame per line, values round-trip exactly) and one PPM per frame
    with the three views side by side: predictions in the red channel,
    ground truth in the green channel.
    """
    from rpsm.synth import _draw_segment, default_skeleton

    preds = np.asarray(preds, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    if preds.shape != gts.shape or preds.ndim != 3:
        raise ValueError("extent mismatch: %r vs %r" % (preds.shape, gts.shape))
    n_joints = preds.shape[1]
    if parents is None:
        parents = default_skeleton().parents if n_joints == 17 else \
            tuple([0] + list(range(n_joints - 1)))
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "skeletons.jsonl"), "w") as fh:
        for t in range(len(preds)):
            row = {"frame": t,
                   "pred": [[float(v) for v in j] for j in preds[t]],
                   "gt": [[float(v) for v in j] for j in gts[t]]}
            fh.write(json.dumps(row) + "\n")

    both = np.concatenate([preds, gts], axis=0).reshape(-1, 3)
    lo, hi = both.min(axis=0), both.max(axis=0)
    span = float(max((hi - lo).max(), 1.0))
    scale = (extent - 8) / span
    mid = (lo + hi) / 2.0

    def project(pose, ax_u, ax_v):
        u = extent / 2.0 + scale * (pose[:, ax_u] - mid[ax_u])
        v = extent / 2.0 - scale * (pose[:, ax_v] - mid[ax_v])
        return np.stack([u, v], axis=1)

    views = ((0, 1), (2, 1), (0, 2))  # front, side, top
    for t in range(len(preds)):
        img = np.zeros((3, extent, extent * len(views)))
        for vi, (ax_u, ax_v) in enumerate(views):
            off = vi * extent
            for chan, pose in ((0, preds[t]), (1, gts[t])):
                pix = project(pose, ax_u, ax_v)
                pix[:, 0] += off
                for j, p in enumerate(parents):
                    if j == 0:
                        continue
                    _draw_segment(img[chan], pix[p], pix[j], 0.8, 1.0)
        write_ppm(os.path.join(out_dir, "frame_%04d.ppm" % t), img)
    return os.path.join(out_dir, "skeletons.jsonl")
