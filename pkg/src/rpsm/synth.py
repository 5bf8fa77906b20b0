"""Synthetic articulated-skeleton sequences: kinematics plus rendering.

A 17-joint tree (pelvis root, spine, neck, two-segment head, two arms,
two legs) is animated with per-joint sinusoidal Euler angles, projected
orthographically and rasterized into 3-channel frames (bone map, joint
map, depth-shaded bone map).  Sequences are written in the documented
dataset layout: manifest.json, seq_<id>/frame_<t>.ppm, seq_<id>/poses.jsonl.
"""

import dataclasses
import json
import os

import numpy as np

from rpsm import data as dataio

JOINT_NAMES = (
    "pelvis", "spine", "neck", "head", "head_top",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_hip", "l_knee", "l_ankle",
    "r_hip", "r_knee", "r_ankle",
)

_PARENTS = (0, 0, 1, 2, 3, 2, 5, 6, 2, 8, 9, 0, 11, 12, 0, 14, 15)

_REST_OFFSETS = (
    (0.0, 0.0, 0.0),       # pelvis (root)
    (0.0, 250.0, 0.0),     # spine
    (0.0, 250.0, 0.0),     # neck
    (0.0, 110.0, 0.0),     # head
    (0.0, 120.0, 0.0),     # head_top
    (160.0, -10.0, 0.0),   # l_shoulder
    (30.0, -280.0, 0.0),   # l_elbow
    (0.0, -250.0, 0.0),    # l_wrist
    (-160.0, -10.0, 0.0),  # r_shoulder
    (-30.0, -280.0, 0.0),  # r_elbow
    (0.0, -250.0, 0.0),    # r_wrist
    (90.0, -60.0, 0.0),    # l_hip
    (0.0, -420.0, 0.0),    # l_knee
    (0.0, -400.0, 0.0),    # l_ankle
    (-90.0, -60.0, 0.0),   # r_hip
    (0.0, -420.0, 0.0),    # r_knee
    (0.0, -400.0, 0.0),    # r_ankle
)

ACTIONS = ("walk", "wave", "box")


class Skeleton:
    """Joint tree with fixed bone offsets (millimeters)."""

    def __init__(self, parents, rest_offsets, names=None):
        self.parents = tuple(int(p) for p in parents)
        self.rest_offsets = np.asarray(rest_offsets, dtype=np.float64)
        self.names = tuple(names) if names else tuple("j%d" % i for i in range(len(parents)))
        if self.parents[0] != 0:
            raise ValueError("joint 0 must be the root (its own parent)")
        for j, p in enumerate(self.parents[1:], 1):
            if not 0 <= p < len(self.parents):
                raise ValueError("joint %d has out-of-range parent %d" % (j, p))
        # every joint must reach the root; a hop count bounded walk detects cycles
        for j in range(1, len(self.parents)):
            seen, cur = 0, j
            while cur != 0:
                cur = self.parents[cur]
                seen += 1
                if seen > len(self.parents):
                    raise ValueError("parent graph has a cycle through joint %d" % j)
        lengths = np.linalg.norm(self.rest_offsets[1:], axis=1)
        if (lengths <= 0).any():
            raise ValueError("bone lengths must be positive")
        self.bone_lengths = lengths

    @property
    def n_joints(self):
        return len(self.parents)

    @property
    def height(self):
        """Vertical extent of the rest pose (head top to ankle)."""
        pose = forward_kinematics(self, np.zeros((self.n_joints, 3)))
        return float(pose[:, 1].max() - pose[:, 1].min())

    def bones(self):
        return [(p, j) for j, p in enumerate(self.parents) if j != 0]


def default_skeleton():
    return Skeleton(_PARENTS, _REST_OFFSETS, JOINT_NAMES)


def _euler_matrix(rx, ry, rz):
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return mz @ my @ mx


def forward_kinematics(skel, angles, root_pos=(0.0, 0.0, 0.0)):
    """Compose per-joint Euler rotations parent-to-child; returns (P,3) mm.

    Positions are absolute (root at root_pos); subtract joint 0 for the
    root-relative convention used in the dataset files.
    """
    angles = np.asarray(angles, dtype=np.float64)
    if angles.shape != (skel.n_joints, 3):
        raise ValueError("expected (%d,3) rotations, got %r" % (skel.n_joints, angles.shape))
    pos = np.zeros((skel.n_joints, 3))
    rot = [None] * skel.n_joints
    pos[0] = root_pos
    rot[0] = _euler_matrix(*angles[0])
    for j in range(1, skel.n_joints):
        p = skel.parents[j]
        rot[j] = rot[p] @ _euler_matrix(*angles[j])
        pos[j] = pos[p] + rot[j] @ skel.rest_offsets[j]
    return pos


# -- motion ------------------------------------------------------------


@dataclasses.dataclass
class MotionParams:
    """Sinusoidal joint trajectories: angle[j,a](t) = sum_i A sin(2pi f t + phi).

    amplitudes/frequencies/phases have shape (P, 3, n_sin); frequencies in
    cycles per frame.  root_path gives a global sway (mm amplitudes and
    per-axis frequencies).  Amplitude-frequency products are kept small
    enough that no joint moves more than ~10% of skeleton height between
    frames.
    """

    amplitudes: np.ndarray
    frequencies: np.ndarray
    phases: np.ndarray
    root_amp: np.ndarray      # (3,) mm
    root_freq: np.ndarray     # (3,) cycles/frame
    action: str = ""

    def angles_at(self, t):
        arg = 2.0 * np.pi * self.frequencies * t + self.phases
        return (self.amplitudes * np.sin(arg)).sum(axis=-1)

    def root_at(self, t):
        return self.root_amp * np.sin(2.0 * np.pi * self.root_freq * t)


def _zero_motion(n_joints, n_sin=3):
    shape = (n_joints, 3, n_sin)
    return np.zeros(shape), np.zeros(shape), np.zeros(shape)


def sample_motion(rng, action, skel, speed=1.0):
    """Draw smooth motion parameters for one of the action families.

    speed scales every sinusoid frequency; the default draws are gentle
    (a few percent of a cycle per frame), so datasets meant to expose
    per-frame appearance change want speed well above 1.
    """
    n = skel.n_joints
    amp, freq, phase = _zero_motion(n)
    names = {name: i for i, name in enumerate(skel.names)}

    def swing(joint, axis, a, f, ph=None, slot=0):
        j = names[joint]
        amp[j, axis, slot] = a
        freq[j, axis, slot] = f
        phase[j, axis, slot] = rng.uniform(0, 2 * np.pi) if ph is None else ph

    base_f = rng.uniform(0.015, 0.03)  # cycles per frame, slow and smooth
    if action == "walk":
        ph = rng.uniform(0, 2 * np.pi)
        swing("l_hip", 0, rng.uniform(0.3, 0.5), base_f, ph)
        swing("r_hip", 0, rng.uniform(0.3, 0.5), base_f, ph + np.pi)
        swing("l_knee", 0, rng.uniform(0.2, 0.35), base_f, ph + np.pi / 2)
        swing("r_knee", 0, rng.uniform(0.2, 0.35), base_f, ph + 3 * np.pi / 2)
        swing("l_shoulder", 0, rng.uniform(0.2, 0.35), base_f, ph + np.pi)
        swing("r_shoulder", 0, rng.uniform(0.2, 0.35), base_f, ph)
        swing("spine", 2, rng.uniform(0.03, 0.08), base_f)
    elif action == "wave":
        side = rng.choice(["l", "r"])
        swing(side + "_shoulder", 2, rng.uniform(0.4, 0.55), base_f)
        swing(side + "_elbow", 2, rng.uniform(0.25, 0.4), 1.5 * base_f)
        swing(side + "_wrist", 2, rng.uniform(0.2, 0.4), 1.5 * base_f, slot=0)
        swing(("r" if side == "l" else "l") + "_shoulder", 0, rng.uniform(0.05, 0.15), base_f)
        swing("neck", 2, rng.uniform(0.04, 0.1), base_f)
    elif action == "box":
        ph = rng.uniform(0, 2 * np.pi)
        swing("l_shoulder", 0, rng.uniform(0.35, 0.55), base_f, ph)
        swing("r_shoulder", 0, rng.uniform(0.35, 0.55), base_f, ph + np.pi)
        swing("l_elbow", 0, rng.uniform(0.3, 0.5), base_f, ph + np.pi / 3)
        swing("r_elbow", 0, rng.uniform(0.3, 0.5), base_f, ph + np.pi + np.pi / 3)
        swing("spine", 1, rng.uniform(0.08, 0.15), base_f)
        swing("l_knee", 0, rng.uniform(0.05, 0.12), 1.5 * base_f, ph)
        swing("r_knee", 0, rng.uniform(0.05, 0.12), 1.5 * base_f, ph + np.pi)
    else:
        raise ValueError("unknown action family %r" % action)

    # mild secondary wobble on a few joints for variety
    for joint in rng.choice(len(skel.names), size=3, replace=False):
        amp[joint, rng.integers(3), 1] = rng.uniform(0.01, 0.05)
        freq[joint, rng.integers(3), 1] = rng.uniform(0.01, 0.03)
        phase[joint, 0, 1] = rng.uniform(0, 2 * np.pi)

    root_amp = np.array([rng.uniform(20, 70), rng.uniform(5, 25), rng.uniform(10, 40)])
    root_freq = np.array([base_f, 2 * base_f, base_f])
    return MotionParams(amp, freq * speed, phase, root_amp, root_freq * speed, action)


def max_frame_displacement(positions):
    """Largest single-joint move between consecutive frames (mm)."""
    if len(positions) < 2:
        return 0.0
    deltas = np.diff(positions, axis=0)
    return float(np.linalg.norm(deltas, axis=2).max())


# -- camera and rendering ------------------------------------------------


@dataclasses.dataclass
class Camera:
    """Orthographic projection: pixel = center + scale * (x, -y)."""

    scale: float          # pixels per millimeter
    center: tuple         # (cx, cy) pixels
    depth_range: float    # mm mapped onto shading

    def project(self, positions):
        u = self.center[0] + self.scale * positions[:, 0]
        v = self.center[1] - self.scale * positions[:, 1]
        return np.stack([u, v], axis=1)


def fit_camera(skel, extent, fill=0.72):
    span = skel.height / fill
    return Camera(scale=extent / span, center=(extent / 2.0, extent / 2.0),
                  depth_range=0.6 * skel.height)


def _draw_segment(plane, p0, p1, half_width, value):
    """Max-composite an anti-aliased segment of constant value."""
    h, w = plane.shape
    x_lo = int(max(0, np.floor(min(p0[0], p1[0]) - half_width - 1)))
    x_hi = int(min(w - 1, np.ceil(max(p0[0], p1[0]) + half_width + 1)))
    y_lo = int(max(0, np.floor(min(p0[1], p1[1]) - half_width - 1)))
    y_hi = int(min(h - 1, np.ceil(max(p0[1], p1[1]) + half_width + 1)))
    if x_lo > x_hi or y_lo > y_hi:
        return
    ys, xs = np.mgrid[y_lo:y_hi + 1, x_lo:x_hi + 1]
    d = np.stack([xs - p0[0], ys - p0[1]], axis=-1).astype(np.float64)
    seg = np.array([p1[0] - p0[0], p1[1] - p0[1]])
    denom = float(seg @ seg)
    if denom < 1e-12:
        t = np.zeros(d.shape[:2])
    else:
        t = np.clip((d @ seg) / denom, 0.0, 1.0)
    closest = t[..., None] * seg
    dist = np.linalg.norm(d - closest, axis=-1)
    cover = np.clip(half_width + 0.5 - dist, 0.0, 1.0) * value
    region = plane[y_lo:y_hi + 1, x_lo:x_hi + 1]
    np.maximum(region, cover, out=region)


def _draw_disc(plane, p, radius, value):
    _draw_segment(plane, p, p, radius, value)


def render_frame(positions, camera, extent, parents=_PARENTS):
    """Rasterize absolute (P,3) mm joints into a (3,extent,extent) image.

    Channel 0: bones with per-bone intensity; channel 1: joint discs;
    channel 2: bones shaded by depth (near bright).  Values in [0,1].
    """
    positions = np.asarray(positions, dtype=np.float64)
    if not np.isfinite(positions).all():
        raise ValueError("non-finite joint positions")
    pix = camera.project(positions)
    inside = ((pix[:, 0] >= 0) & (pix[:, 0] < extent)
              & (pix[:, 1] >= 0) & (pix[:, 1] < extent))
    if not inside.any():
        raise ValueError("degenerate camera: all joints project outside the frame")
    img = np.zeros((3, extent, extent))
    return _render_onto(img, positions, pix, camera, parents)


def _render_onto(img, positions, pix, camera, parents=_PARENTS):
    n_bones = sum(1 for j, p in enumerate(parents) if j != 0)
    z = positions[:, 2]
    shade = np.clip(0.5 + z / (2.0 * camera.depth_range), 0.15, 1.0)
    bone_i = 0
    for j, p in enumerate(parents):
        if j == 0:
            continue
        value = 0.45 + 0.55 * bone_i / max(1, n_bones - 1)
        _draw_segment(img[0], pix[p], pix[j], 1.0, value)
        depth_val = 0.5 * (shade[p] + shade[j])
        _draw_segment(img[2], pix[p], pix[j], 1.0, depth_val)
        bone_i += 1
    for j in range(len(positions)):
        _draw_disc(img[1], pix[j], 1.6, 1.0)
    np.clip(img, 0.0, 1.0, out=img)
    return img


def projected_bbox(pix, extent, pad=3.0):
    x0 = max(0.0, float(pix[:, 0].min()) - pad)
    y0 = max(0.0, float(pix[:, 1].min()) - pad)
    x1 = min(float(extent), float(pix[:, 0].max()) + pad)
    y1 = min(float(extent), float(pix[:, 1].max()) + pad)
    return [x0, y0, x1, y1]


# -- dataset generation ----------------------------------------------------


def generate_sequence(skel, motion, t_len, camera, extent):
    """Animate, render, annotate one sequence; returns (frames, poses, bboxes).

    poses are root-relative millimeters, (T,P,3).
    """
    frames, poses, bboxes = [], [], []
    limit = 0.10 * skel.height
    all_pos = []
    for t in range(t_len):
        pos = forward_kinematics(skel, motion.angles_at(t), motion.root_at(t))
        all_pos.append(pos)
    all_pos = np.stack(all_pos)
    disp = max_frame_displacement(all_pos)
    if disp >= limit:
        raise ValueError("motion too fast: %.1f mm/frame vs limit %.1f" % (disp, limit))
    for t in range(t_len):
        pos = all_pos[t]
        img = render_frame(pos, camera, extent, skel.parents)
        frames.append(img)
        poses.append(pos - pos[0])
        bboxes.append(projected_bbox(camera.project(pos), extent))
    return frames, np.stack(poses), bboxes


def generate_dataset(out_dir, n_sequences, t_len, seed, skel=None, extent=96, actions=ACTIONS,
                     speed=1.0):
    """Write a synthetic dataset; deterministic for a given seed.

    High speed values can push a draw over the per-frame displacement
    limit; those draws are discarded and redrawn (the rng stream makes
    the retries deterministic too).
    """
    if skel is None:
        skel = default_skeleton()
    rng = np.random.default_rng(seed)
    camera = fit_camera(skel, extent)
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i in range(n_sequences):
        action = actions[i % len(actions)]
        for _ in range(20):
            motion = sample_motion(rng, action, skel, speed)
            pos = np.stack([forward_kinematics(skel, motion.angles_at(t), motion.root_at(t))
                            for t in range(t_len)])
            if max_frame_displacement(pos) < 0.10 * skel.height:
                break
        else:
            raise ValueError("no draw under the displacement limit for %r at speed %g"
                             % (action, speed))
        frames, poses, bboxes = generate_sequence(skel, motion, t_len, camera, extent)
        seq_id = "%04d" % i
        seq_dir = os.path.join(out_dir, "seq_" + seq_id)
        os.makedirs(seq_dir, exist_ok=True)
        with open(os.path.join(seq_dir, "poses.jsonl"), "w") as fh:
            for t in range(t_len):
                row = {"seq": seq_id, "frame": t,
                       "joints": [[float(v) for v in joint] for joint in poses[t]],
                       "bbox": [float(v) for v in bboxes[t]]}
                fh.write(json.dumps(row) + "\n")
        for t, img in enumerate(frames):
            dataio.write_ppm(os.path.join(seq_dir, "frame_%04d.ppm" % t), img)
        entries.append({"id": seq_id, "action": action, "frames": t_len, "dir": "seq_" + seq_id})
    manifest = {"joints": skel.n_joints, "extent": extent,
                "joint_names": list(skel.names), "parents": list(skel.parents),
                "sequences": entries}
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest
