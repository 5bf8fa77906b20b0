"""End-to-end acceptance checks, one per shipping criterion.

Each test registers a PASS/FAIL line (printed as a block after the run)
and then asserts, so a red criterion still reports its numbers.  Wall
budgets are asserted alongside correctness so speed regressions fail
loudly rather than silently eating CI time.
"""

import json
import math
import time

import numpy as np
import pytest

from conftest import record_acceptance
from rpsm.data import (Clip, NormalizationStats, crop_square_resize, decompose_clips,
                       denormalize_pose, load_clipset, normalize_pose)
from rpsm.evaluation import evaluate, pose_error
from rpsm.gradcheck import check_layers, check_model
from rpsm.model import ModelConfig, PoseSequenceModel, load_model, save_model
from rpsm.synth import (MotionParams, default_skeleton, fit_camera,
                        forward_kinematics, generate_dataset, generate_sequence,
                        max_frame_displacement)
from rpsm.tensor import Tensor
from rpsm.training import TrainConfig, sequence_loss, train

# Shared recipe for the two trend criteria.  Augmentation stays off (the
# scale jitter adds gradient noise that can mask the small between-config
# gaps these criteria measure) and the dataset uses energetic motion so
# consecutive frames actually look different at desk resolution.  All
# configs train for the same number of optimizer steps: an epoch of
# 1-frame clips holds 5x as many steps as an epoch of 5-frame clips, so
# equalizing epochs would hand the short-clip model 5x the updates.
TREND_EPOCHS = 24
TREND_LR = 1e-3
TREND_DECAY = 1e-4
TREND_SEEDS = (0, 1, 2)
TREND_SPEED = 3.0


@pytest.fixture(scope="session")
def synth_splits(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept_data")
    t0 = time.time()
    generate_dataset(str(root / "train"), 16, 40, seed=200, speed=TREND_SPEED)
    generate_dataset(str(root / "test"), 4, 40, seed=201, speed=TREND_SPEED)
    return {"root": root, "gen_s": time.time() - t0}


@pytest.fixture(scope="session")
def trained_grid(synth_splits):
    """Desk models over (stages, clip_len) x seed, scored on the held-out split."""
    grid = {}
    for seed in TREND_SEEDS:
        for stages, clen in ((3, 5), (1, 5), (1, 1)):
            t0 = time.time()
            train_clips, stats = load_clipset(str(synth_splits["root"] / "train"), clen, 64)
            test_clips, _ = load_clipset(str(synth_splits["root"] / "test"), clen, 64,
                                         stats=stats)
            model = PoseSequenceModel(ModelConfig.desk(stages=stages, clip_len=clen),
                                      np.random.default_rng(seed))
            budget = TREND_EPOCHS * (len(train_clips) * clen) // 5
            tcfg = TrainConfig(lr=TREND_LR, decay=TREND_DECAY,
                               epochs=-(-budget // len(train_clips)),
                               max_steps=budget, seed=seed, augment=False, eval_every=0)
            train(model, train_clips, stats, tcfg)
            report = evaluate(model, test_clips, stats)
            grid[(stages, clen, seed)] = {"report": report, "wall": time.time() - t0}
    return grid


def energetic_clip():
    """One desk-scale clip whose frames differ strongly, plus its stats.

    Sampled dataset motion is deliberately smooth, which leaves nearly
    identical consecutive frames; memorizing such a clip is gated on the
    recurrent path alone.  Here the joint swings are scaled up to 90% of
    the per-frame speed limit so the conv features separate the frames.
    """
    skel = default_skeleton()
    names = {n: i for i, n in enumerate(skel.names)}
    n = skel.n_joints
    amp = np.zeros((n, 3, 1))
    freq = np.zeros((n, 3, 1))
    phase = np.zeros((n, 3, 1))

    def swing(joint, axis, a, f, ph):
        j = names[joint]
        amp[j, axis, 0] = a
        freq[j, axis, 0] = f
        phase[j, axis, 0] = ph

    f0 = 0.10
    swing("l_hip", 0, 0.45, f0, 0.3)
    swing("r_hip", 0, 0.45, f0, 0.3 + np.pi)
    swing("l_knee", 0, 0.5, f0, 1.8)
    swing("r_knee", 0, 0.5, f0, 1.8 + np.pi)
    swing("l_shoulder", 0, 0.5, f0, np.pi)
    swing("r_shoulder", 0, 0.5, f0, 0.0)
    swing("l_elbow", 2, 0.45, 0.13, 0.9)
    swing("r_elbow", 2, 0.45, 0.13, 2.1)
    swing("spine", 2, 0.12, f0, 0.5)
    root_amp = np.array([40.0, 15.0, 25.0])
    root_freq = np.array([f0, 2 * f0, f0])

    limit = 0.10 * skel.height
    lo, hi = 0.1, 4.0
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        m = MotionParams(amp * mid, freq, phase, root_amp * mid, root_freq, "walk")
        pos = np.stack([forward_kinematics(skel, m.angles_at(t), m.root_at(t))
                        for t in range(6)])
        if max_frame_displacement(pos) < 0.90 * limit:
            lo = mid
        else:
            hi = mid
    motion = MotionParams(amp * lo, freq, phase, root_amp * lo, root_freq, "walk")

    camera = fit_camera(skel, 96)
    frames_raw, poses_mm, bboxes = generate_sequence(skel, motion, 5, camera, 96)
    frames = np.stack([crop_square_resize(f, b, 64) for f, b in zip(frames_raw, bboxes)])
    stats = NormalizationStats.from_poses(poses_mm.reshape(-1, n, 3), source="train")
    poses_norm = np.stack([normalize_pose(p, stats) for p in poses_mm])
    return Clip(frames=frames, poses_norm=poses_norm, poses_mm=poses_mm, n_valid=5), stats


def overfit_run(clip, stats, phases):
    model = PoseSequenceModel(ModelConfig.desk(stages=3, clip_len=5),
                              np.random.default_rng(0))
    losses = []
    for lr, steps in phases:
        tcfg = TrainConfig(lr=lr, decay=0.0, epochs=steps, seed=0,
                           augment=False, eval_every=0)
        losses += [r["loss"] for r in train(model, [clip], stats, tcfg)]
    return losses


def test_gradients_match_finite_differences():
    t0 = time.time()
    layer_groups = check_layers(seed=0)
    model_report = check_model(min_coords=64, seed=0)
    elapsed = time.time() - t0
    worst = max(max(g.worst_rel for g in layer_groups), model_report.worst())
    ok = (all(g.passed for g in layer_groups) and model_report.passed
          and worst < 1e-4 and elapsed < 300)
    record_acceptance(1, "gradient correctness",
                      ok, "worst rel %.2e over %d layer groups + %d model coords, %.0fs"
                      % (worst, len(layer_groups), model_report.total_checked, elapsed))
    assert all(g.passed for g in layer_groups)
    assert model_report.passed
    assert worst < 1e-4
    assert elapsed < 300


def test_full_scale_shape_contract():
    t0 = time.time()
    cfg = ModelConfig.full(stages=1, clip_len=1)
    model = PoseSequenceModel(cfg, np.random.default_rng(0))
    frames = Tensor(np.random.default_rng(1).random((1, 3, 368, 368)))
    shared = model.pose2d.shared_forward(frames)
    f2d = model.pose2d.specialize(
        shared, Tensor(np.zeros((1, cfg.f2d_channels, cfg.feat_hw, cfg.feat_hw))), 0)
    f3d = model.adapt[0](f2d)
    pose, _, _ = model.rec[0].step(f3d, Tensor(np.zeros((1, cfg.out_dim))),
                                   Tensor(np.zeros((1, cfg.hidden_dim))),
                                   Tensor(np.zeros((1, cfg.hidden_dim))))
    elapsed = time.time() - t0
    ok = (f2d.shape == (1, 128, 46, 46) and f3d.shape == (1, 1024)
          and pose.shape == (1, 51) and elapsed < 60)
    record_acceptance(2, "full-scale shape contract",
                      ok, "f2d %r, f3d %r, pose %r, %.1fs"
                      % (f2d.shape, f3d.shape, pose.shape, elapsed))
    assert f2d.shape == (1, 128, 46, 46)
    assert f3d.shape == (1, 1024)
    assert pose.shape == (1, 51)
    assert elapsed < 60


def test_single_clip_overfit():
    t0 = time.time()
    clip, stats = energetic_clip()
    # flat run: loss should shrink steadily (medians of disjoint 50-step
    # windows never rise; 5% slack absorbs step-to-step noise)
    flat = overfit_run(clip, stats, ((2e-3, 500),))
    medians = [float(np.median(flat[i:i + 50])) for i in range(0, 500, 50)]
    trend_ok = all(medians[i + 1] <= medians[i] * 1.05 for i in range(len(medians) - 1))
    # phased run: warmup avoids the early saturation basin, the 3e-3 leg
    # does the fitting, the taper settles below threshold
    phased = overfit_run(clip, stats, ((1e-3, 50), (3e-3, 250), (1e-3, 120), (3e-4, 80)))
    best = min(phased)
    first = next((i + 1 for i, v in enumerate(phased) if v < 1e-3), None)
    elapsed = time.time() - t0
    ok = best < 1e-3 and len(phased) == 500 and trend_ok and elapsed < 600
    record_acceptance(3, "single-clip overfit",
                      ok, "loss %.2e (first <1e-3 at step %s of 500), medians %s, %.0fs"
                      % (best, first, "monotone" if trend_ok else "RISING", elapsed))
    assert trend_ok, "windowed medians rose: %s" % (["%.3g" % m for m in medians],)
    assert best < 1e-3, "best loss %.3e after 500 steps" % best
    assert first is not None and first <= 500
    assert elapsed < 600


def test_stage_refinement_trend(synth_splits, trained_grid):
    votes = []
    details = []
    for seed in TREND_SEEDS:
        r3 = trained_grid[(3, 5, seed)]["report"]
        r1 = trained_grid[(1, 5, seed)]["report"]
        refines = r3.per_stage_mm[-1] <= r3.per_stage_mm[0]
        beats_single = r3.mean_mm <= r1.mean_mm * 1.02
        votes.append(refines and beats_single)
        details.append("s%d %.1f->%.1f vs %.1f" % (seed, r3.per_stage_mm[0],
                                                   r3.per_stage_mm[-1], r1.mean_mm))
    spent = (synth_splits["gen_s"]
             + sum(trained_grid[(s, c, sd)]["wall"]
                   for s, c in ((3, 5), (1, 5)) for sd in TREND_SEEDS))
    ok = sum(votes) >= 2 and spent < 7200
    record_acceptance(4, "stage refinement trend",
                      ok, "%d/3 seeds (%s), %.0fs" % (sum(votes), "; ".join(details), spent))
    assert sum(votes) >= 2, details
    assert spent < 7200


def test_temporal_context_trend(trained_grid):
    wins = []
    details = []
    for seed in TREND_SEEDS:
        seq = trained_grid[(1, 5, seed)]["report"].mean_mm
        single = trained_grid[(1, 1, seed)]["report"].mean_mm
        wins.append(seq < single)
        details.append("s%d %.1f vs %.1f" % (seed, seq, single))
    spent = sum(trained_grid[(1, c, sd)]["wall"] for c in (5, 1) for sd in TREND_SEEDS)
    ok = sum(wins) >= 2 and spent < 3600
    record_acceptance(5, "temporal context trend",
                      ok, "%d/3 seeds (%s), %.0fs" % (sum(wins), "; ".join(details), spent))
    assert sum(wins) >= 2, details
    assert spent < 3600


def test_error_metric_properties():
    t0 = time.time()
    rng = np.random.default_rng(7)
    pose = rng.normal(0.0, 100.0, (17, 3))
    other = rng.normal(0.0, 100.0, (17, 3))
    zero_ok = pose_error(pose, pose) == 0.0
    shift_a = abs(pose_error(pose + np.array([5.0, -3.0, 11.0]), other)
                  - pose_error(pose, other))
    shift_b = abs(pose_error(pose, other + np.array([-40.0, 8.0, 2.5]))
                  - pose_error(pose, other))
    pair = pose_error([[0.0, 0.0, 0.0], [3.0, 4.0, 0.0]],
                      [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    elapsed = time.time() - t0
    ok = (zero_ok and shift_a <= 1e-9 and shift_b <= 1e-9
          and abs(pair - 2.5) <= 1e-12 and elapsed < 1)
    record_acceptance(6, "metric properties",
                      ok, "zero %s, shifts %.1e/%.1e, pair %.4f, %.2fs"
                      % (zero_ok, shift_a, shift_b, pair, elapsed))
    assert zero_ok
    assert shift_a <= 1e-9 and shift_b <= 1e-9
    assert abs(pair - 2.5) <= 1e-12
    assert elapsed < 1


def test_loss_matches_independent_sum():
    t0 = time.time()
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        k = int(rng.integers(1, 5))
        t_len = int(rng.integers(1, 7))
        joints = int(rng.integers(2, 11))
        dim = 3 * joints
        preds = [Tensor(rng.standard_normal((t_len, dim))) for _ in range(k)]
        flat_target = bool(rng.integers(2))
        target = (rng.standard_normal((t_len, dim)) if flat_target
                  else rng.standard_normal((t_len, joints, 3)))
        alphas = rng.uniform(0.1, 2.0, k)
        got = float(sequence_loss(preds, target, alphas).data)
        tgt2d = target if flat_target else target.reshape(t_len, -1)
        want = math.fsum(
            alphas[i] * math.fsum(
                (float(preds[i].data[t, d]) - float(tgt2d[t, d])) ** 2
                for t in range(t_len) for d in range(dim))
            for i in range(k))
        worst = max(worst, abs(got - want) / max(1.0, abs(want)))
    elapsed = time.time() - t0
    ok = worst <= 1e-9 and elapsed < 1
    record_acceptance(7, "loss oracle",
                      ok, "worst rel %.2e over 100 instances, %.2fs" % (worst, elapsed))
    assert worst <= 1e-9
    assert elapsed < 1


def test_normalization_and_decomposition_invariants():
    t0 = time.time()
    rng = np.random.default_rng(13)
    for case in range(1000):
        t_len = int(rng.integers(1, 9))
        joints = int(rng.integers(2, 9))
        poses = rng.normal(0.0, rng.uniform(0.1, 500.0), (t_len, joints, 3))
        if rng.random() < 0.3:  # pin one coordinate so its span degenerates
            poses[:, int(rng.integers(joints)), int(rng.integers(3))] = rng.normal()
        stats = NormalizationStats.from_poses(poses, source="train")
        live = stats.span() > 0  # stats are flat (3P,), poses (P,3)
        for p in poses:
            back = denormalize_pose(normalize_pose(p, stats), stats).reshape(-1)
            flat = p.reshape(-1)
            scale = np.maximum(1.0, np.abs(flat))
            assert np.all(np.abs(back - flat)[live] <= 1e-9 * scale[live])
            assert np.array_equal(back[~live], stats.mins[~live])

        clip_len = int(rng.integers(1, 9))
        frames = np.arange(t_len, dtype=np.float64).reshape(t_len, 1, 1, 1)
        norm = np.stack([normalize_pose(p, stats) for p in poses])
        clips = decompose_clips(frames, norm, poses, clip_len)
        assert len(clips) == -(-t_len // clip_len)
        seen = np.concatenate([c.frames[:c.n_valid, 0, 0, 0] for c in clips])
        assert np.array_equal(seen, np.arange(t_len, dtype=np.float64))
        for c in clips:  # padding repeats the last real frame
            assert np.all(c.frames[c.n_valid:] == c.frames[c.n_valid - 1])
    elapsed = time.time() - t0
    ok = elapsed < 10
    record_acceptance(8, "normalization + decomposition",
                      ok, "1000 cases, %.1fs" % elapsed)
    assert elapsed < 10


def test_seeded_training_is_bitwise_deterministic(synth_splits, tmp_path):
    t0 = time.time()
    root = str(synth_splits["root"] / "test")  # small split keeps this quick

    def run(tag):
        clips, stats = load_clipset(root, 5, 64)
        model = PoseSequenceModel(ModelConfig.desk(stages=2, clip_len=5),
                                  np.random.default_rng(3))
        tcfg = TrainConfig(lr=1e-3, decay=1e-4, epochs=2, seed=3,
                           augment=True, eval_every=0)
        history = train(model, clips, stats, tcfg)
        path = tmp_path / ("det_%s.ckpt" % tag)
        save_model(str(path), model, stats)
        return path, [h["loss"] for h in history]

    path_a, losses_a = run("a")
    path_b, losses_b = run("b")
    bytes_a = path_a.read_bytes()
    bytes_b = path_b.read_bytes()
    elapsed = time.time() - t0
    ok = bytes_a == bytes_b and losses_a == losses_b and elapsed < 1200
    record_acceptance(9, "seeded training determinism",
                      ok, "%d-byte checkpoints identical %s, %d losses identical %s, %.0fs"
                      % (len(bytes_a), bytes_a == bytes_b, len(losses_a),
                         losses_a == losses_b, elapsed))
    assert bytes_a == bytes_b
    assert losses_a == losses_b
    assert elapsed < 1200


def test_checkpoint_roundtrip_preserves_outputs(synth_splits, tmp_path):
    t0 = time.time()
    clips, stats = load_clipset(str(synth_splits["root"] / "test"), 5, 64)
    model = PoseSequenceModel(ModelConfig.desk(stages=3, clip_len=5),
                              np.random.default_rng(5))
    before = model.forward_clip(clips[0].frames)
    path = tmp_path / "roundtrip.ckpt"
    save_model(str(path), model, stats)
    loaded, loaded_stats = load_model(str(path))
    after = loaded.forward_clip(clips[0].frames)
    same = all(np.array_equal(b.data, a.data) for b, a in zip(before, after))
    stats_same = (np.array_equal(loaded_stats.mins, stats.mins)
                  and np.array_equal(loaded_stats.maxs, stats.maxs))
    elapsed = time.time() - t0
    ok = same and stats_same and elapsed < 60
    record_acceptance(10, "checkpoint round-trip",
                      ok, "%d stage outputs bitwise equal %s, stats equal %s, %.1fs"
                      % (len(before), same, stats_same, elapsed))
    assert same
    assert stats_same
    assert elapsed < 60
