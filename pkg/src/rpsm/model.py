"""Multi-stage recurrent 3D pose model.

Three sub-networks per stage: a 2D pose module (15 shared convs + 3
pools, then 2 stage-specialized convs over the concatenation of shared
features and the previous stage's output features), a feature adaption
module (two strided convs with pooling into a fully-connected vector),
and a recurrent module (LSTM + linear head, carried across frames).
Stage k consumes stage k-1's features and pose estimate; stage 1 gets
zeros.  The full-scale preset follows the published layer table; the
desk preset shrinks extents so the whole pipeline trains in minutes.
"""

import dataclasses
import json

import numpy as np

from rpsm import checkpoint as ckpt
from rpsm import tensor
from rpsm.data import NormalizationStats
from rpsm.kernels import conv_out_extent
from rpsm.layers import Conv2d, Linear, LstmCell
from rpsm.tensor import Tensor

SHARED_CHANNELS_FULL = (64, 64, 128, 128, 256, 256, 256, 256, 512, 512, 256, 256, 256, 256, 128)
POOL_AFTER = (2, 4, 8)  # pool follows these 1-based shared-conv indices


@dataclasses.dataclass
class ModelConfig:
    preset: str = "desk"
    stages: int = 3
    clip_len: int = 5
    joints: int = 17
    share_recurrent_across_stages: bool = True
    share_all_2d_layers: bool = False
    # geometry, filled by the preset constructors
    input_hw: int = 64
    shared_channels: tuple = tuple(c // 8 for c in SHARED_CHANNELS_FULL)
    pool_after: tuple = POOL_AFTER
    f2d_channels: int = 16
    adapt_channels: int = 16
    adapt_kernel: int = 3
    adapt_stride: int = 1
    adapt_pad: int = 1
    adapt_dim: int = 128
    hidden_dim: int = 128

    def __post_init__(self):
        if isinstance(self.shared_channels, list):
            self.shared_channels = tuple(self.shared_channels)
        if isinstance(self.pool_after, list):
            self.pool_after = tuple(self.pool_after)
        if self.stages < 1:
            raise ValueError("stages must be >= 1, got %d" % self.stages)
        if self.clip_len < 1:
            raise ValueError("clip_len must be >= 1, got %d" % self.clip_len)
        if self.joints < 2:
            raise ValueError("joints must be >= 2, got %d" % self.joints)

    @property
    def out_dim(self):
        return 3 * self.joints

    @property
    def feat_hw(self):
        hw = self.input_hw
        for _ in self.pool_after:
            hw = conv_out_extent(hw, 2, 2, 0)
        return hw

    @classmethod
    def full(cls, **kw):
        base = dict(preset="full", input_hw=368, shared_channels=SHARED_CHANNELS_FULL,
                    f2d_channels=128, adapt_channels=128, adapt_kernel=5, adapt_stride=2,
                    adapt_pad=0, adapt_dim=1024, hidden_dim=1024)
        base.update(kw)
        return cls(**base)

    @classmethod
    def desk(cls, **kw):
        kw.setdefault("preset", "desk")
        return cls(**kw)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class PoseModule:
    """2D pose-aware feature extractor (shared stack + per-stage tail)."""

    def __init__(self, cfg, rng):
        self.cfg = cfg
        self.shared = []
        in_ch = 3
        for i, ch in enumerate(cfg.shared_channels, 1):
            self.shared.append(Conv2d("p2d.shared.conv%02d" % i, in_ch, ch, 3, 1, 1, rng))
            in_ch = ch
        concat_ch = cfg.shared_channels[-1] + cfg.f2d_channels
        n_distinct = 1 if cfg.share_all_2d_layers else cfg.stages
        distinct = []
        for k in range(1, n_distinct + 1):
            distinct.append((
                Conv2d("p2d.spec%d.conv1" % k, concat_ch, cfg.f2d_channels, 3, 1, 1, rng),
                Conv2d("p2d.spec%d.conv2" % k, cfg.f2d_channels, cfg.f2d_channels, 3, 1, 1, rng),
            ))
        self.specialized = [distinct[0 if cfg.share_all_2d_layers else k] for k in range(cfg.stages)]

    def shared_forward(self, frames):
        """Run the shared conv stack over (N,3,H,W) frames."""
        x = frames
        for i, conv in enumerate(self.shared, 1):
            x = conv(x).relu()
            if i in self.cfg.pool_after:
                x = tensor.maxpool2d(x, 2, 2)
        return x

    def specialize(self, shared_feat, f2d_prev, stage):
        if not 0 <= stage < self.cfg.stages:
            raise ValueError("stage index %d out of range for %d stages" % (stage, self.cfg.stages))
        c1, c2 = self.specialized[stage]
        x = tensor.concat([shared_feat, f2d_prev], axis=1)
        return c2(c1(x).relu()).relu()

    def __call__(self, frames, f2d_prev, stage):
        return self.specialize(self.shared_forward(frames), f2d_prev, stage)

    def parameters(self):
        out = [p for conv in self.shared for p in conv.parameters()]
        seen = set()
        for pair in self.specialized:
            if id(pair[0]) in seen:
                continue
            seen.add(id(pair[0]))
            for conv in pair:
                out.extend(conv.parameters())
        return out


class AdaptionModule:
    """Maps 2D pose-aware feature maps to a flat adapted vector."""

    def __init__(self, cfg, rng, name="adapt"):
        k, s, p = cfg.adapt_kernel, cfg.adapt_stride, cfg.adapt_pad
        self.conv1 = Conv2d(name + ".conv1", cfg.f2d_channels, cfg.adapt_channels, k, s, p, rng)
        self.conv2 = Conv2d(name + ".conv2", cfg.adapt_channels, cfg.adapt_channels, k, s, p, rng)
        hw = cfg.feat_hw
        for _ in range(2):
            hw = conv_out_extent(hw, k, s, p)
            hw = conv_out_extent(hw, 2, 2, 0)
            if hw < 1:
                raise ValueError("adaption extents collapse below 1 pixel; check config")
        self.fc_hw = hw
        self.fc = Linear(name + ".fc", cfg.adapt_channels * hw * hw, cfg.adapt_dim, rng)

    def __call__(self, f2d):
        x = tensor.maxpool2d(self.conv1(f2d).relu(), 2, 2)
        x = tensor.maxpool2d(self.conv2(x).relu(), 2, 2)
        return self.fc(x.reshape(x.shape[0], -1))

    def parameters(self):
        return self.conv1.parameters() + self.conv2.parameters() + self.fc.parameters()


class RecurrentModule:
    """LSTM over frames plus a linear head to 3P joint coordinates."""

    def __init__(self, cfg, rng, name="rec"):
        in_dim = cfg.adapt_dim + cfg.hidden_dim + cfg.out_dim
        self.cell = LstmCell(name + ".lstm", in_dim, cfg.hidden_dim, rng)
        self.head = Linear(name + ".head", cfg.hidden_dim, cfg.out_dim, rng)

    def step(self, f3d, pose_prev, h, c):
        x = tensor.concat([f3d, h, pose_prev], axis=1)
        h, c = self.cell.step(x, h, c)
        return self.head(h), h, c

    def parameters(self):
        return self.cell.parameters() + self.head.parameters()


class PoseSequenceModel:
    """The full K-stage model over a frame sequence."""

    def __init__(self, cfg, rng=None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.cfg = cfg
        self.pose2d = PoseModule(cfg, rng)
        if cfg.share_recurrent_across_stages:
            adapt = AdaptionModule(cfg, rng)
            rec = RecurrentModule(cfg, rng)
            self.adapt = [adapt] * cfg.stages
            self.rec = [rec] * cfg.stages
        else:
            self.adapt = [AdaptionModule(cfg, rng, "adapt%d" % (k + 1)) for k in range(cfg.stages)]
            self.rec = [RecurrentModule(cfg, rng, "rec%d" % (k + 1)) for k in range(cfg.stages)]

    def forward_clip(self, frames):
        """Run all stages over (T,3,H,W) frames; returns K tensors (T, 3P).

        Training consumes every stage's output for the loss; inference
        takes the last entry.  Shared conv features are computed once and
        reused across stages (their parameters are stage-independent).
        """
        if not isinstance(frames, Tensor):
            frames = Tensor(frames)
        if frames.data.ndim != 4 or frames.shape[0] < 1:
            raise ValueError("expected non-empty (T,3,H,W) frames, got %r" % (frames.shape,))
        cfg = self.cfg
        if frames.shape[1] != 3 or frames.shape[2] != cfg.input_hw or frames.shape[3] != cfg.input_hw:
            raise ValueError("frame extents %r do not match config input 3x%dx%d"
                             % (frames.shape[1:], cfg.input_hw, cfg.input_hw))
        t_len = frames.shape[0]
        shared = self.pose2d.shared_forward(frames)
        f2d_prev = Tensor(np.zeros((t_len, cfg.f2d_channels, cfg.feat_hw, cfg.feat_hw)))
        zero_pose = Tensor(np.zeros((1, cfg.out_dim)))
        outputs = []
        for k in range(cfg.stages):
            f2d = self.pose2d.specialize(shared, f2d_prev, k)
            f3d = self.adapt[k](f2d)
            h = Tensor(np.zeros((1, cfg.hidden_dim)))
            c = Tensor(np.zeros((1, cfg.hidden_dim)))
            poses = []
            for t in range(t_len):
                x3 = tensor.narrow(f3d, 0, t, 1)
                pose_prev = zero_pose if k == 0 else tensor.narrow(outputs[k - 1], 0, t, 1)
                pose, h, c = self.rec[k].step(x3, pose_prev, h, c)
                poses.append(pose)
            outputs.append(tensor.concat(poses, axis=0))
            f2d_prev = f2d
        return outputs

    def parameters(self):
        out = list(self.pose2d.parameters())
        seen = set()
        for mod in list(self.adapt) + list(self.rec):
            if id(mod) in seen:
                continue
            seen.add(id(mod))
            out.extend(mod.parameters())
        return out

    def param_dict(self):
        return dict(self.parameters())

    def zero_grads(self):
        for _, p in self.parameters():
            p.grad = None


def expected_param_tensor_count(cfg):
    """Distinct trainable tensors predicted from the sharing flags."""
    shared = 2 * len(cfg.shared_channels)
    spec = 4 * (1 if cfg.share_all_2d_layers else cfg.stages)
    per_stage_tail = 6 + 5  # adaption convs+fc, lstm+head
    tail = per_stage_tail if cfg.share_recurrent_across_stages else cfg.stages * per_stage_tail
    return shared + spec + tail


def save_model(path, model, stats=None):
    """Write parameters (plus normalization stats) and a sidecar config."""
    records = [(name, p.data) for name, p in model.parameters()]
    meta = {"config": model.cfg.to_dict(), "stats_source": None}
    if stats is not None:
        records.append(("stats.min", stats.mins))
        records.append(("stats.max", stats.maxs))
        meta["stats_source"] = stats.source
    ckpt.save_records(path, records)
    with open(str(path) + ".json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path):
    """Rebuild (model, stats) from a checkpoint and its sidecar config."""
    with open(str(path) + ".json") as fh:
        meta = json.load(fh)
    cfg = ModelConfig.from_dict(meta["config"])
    records = ckpt.load_records(path)
    stats = None
    if "stats.min" in records:
        stats = NormalizationStats(records.pop("stats.min"), records.pop("stats.max"),
                                   meta.get("stats_source") or "train")
    model = PoseSequenceModel(cfg)
    expected = dict(model.parameters())
    missing = sorted(set(expected) - set(records))
    unexpected = sorted(set(records) - set(expected))
    if missing or unexpected:
        raise ValueError("checkpoint/config mismatch: missing %r, unexpected %r"
                         % (missing, unexpected))
    for name, arr in records.items():
        p = expected[name]
        if p.data.shape != arr.shape:
            raise ValueError("checkpoint shape mismatch for %s: %r vs %r"
                             % (name, arr.shape, p.data.shape))
        p.data = arr.astype(np.float64)
    return model, stats
