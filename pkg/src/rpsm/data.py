"""Dataset file formats, pose normalization, and clip decomposition.

On-disk layout: ``manifest.json`` at the dataset root, one directory per
sequence holding ``frame_<t>.ppm`` images (binary P6, maxval 255) and a
``poses.jsonl`` file with one frame per line: sequence id, frame index,
P x 3 root-relative joint millimeters, and the subject's projected pixel
bounding box used for square cropping.  Everything round-trips exactly:
JSON floats use shortest-repr encoding and images are 8-bit.
"""

import dataclasses
import json
import os

import numpy as np


# -- image files ------------------------------------------------------


def write_ppm(path, img):
    """Write a (3,H,W) float image in [0,1] as binary P6, maxval 255."""
    c, h, w = img.shape
    if c != 3:
        raise ValueError("write_ppm expects 3 channels, got %d" % c)
    u8 = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(u8.transpose(1, 2, 0).tobytes())


def read_ppm(path):
    """Read binary P6 back into a (3,H,W) float image in [0,1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P6" or len(parts) < 4:
        raise ValueError("%s: not a binary P6 pixmap" % path)
    w, h = (int(v) for v in parts[1].split())
    if parts[2] != b"255":
        raise ValueError("%s: expected maxval 255" % path)
    pix = np.frombuffer(parts[3], dtype=np.uint8, count=h * w * 3)
    return pix.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


# -- geometry ----------------------------------------------------------


def bilinear_gather(img, ys, xs):
    """Sample (3,H,W) at row coords ys and column coords xs (outer grid)."""
    c, h, w = img.shape
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[None, :, None]
    fx = (xs - x0)[None, None, :]
    p00 = img[:, y0][:, :, x0]
    p01 = img[:, y0][:, :, x1]
    p10 = img[:, y1][:, :, x0]
    p11 = img[:, y1][:, :, x1]
    top = p00 * (1 - fx) + p01 * fx
    bot = p10 * (1 - fx) + p11 * fx
    return top * (1 - fy) + bot * fy


def bilinear_resize(img, out_h, out_w):
    c, h, w = img.shape
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    return bilinear_gather(img, ys, xs)


def crop_square_resize(img, bbox, out_hw, margin=1.15):
    """Square crop around bbox (x0,y0,x1,y1 pixels), resized to out_hw.

    The crop side is the larger bbox extent times ``margin``, clamped to
    the image; with no bbox the full centered square is used.  Output is
    always out_hw x out_hw (aspect ratio 1:1).
    """
    c, h, w = img.shape
    if bbox is None:
        side = float(min(h, w))
        cy, cx = h / 2.0, w / 2.0
    else:
        x0, y0, x1, y1 = (float(v) for v in bbox)
        side = max(x1 - x0, y1 - y0) * margin
        side = min(max(side, 2.0), float(min(h, w)))
        cy, cx = (y0 + y1) / 2.0, (x0 + x1) / 2.0
    top = min(max(cy - side / 2.0, 0.0), h - side)
    left = min(max(cx - side / 2.0, 0.0), w - side)
    ys = top + (np.arange(out_hw) + 0.5) * (side / out_hw) - 0.5
    xs = left + (np.arange(out_hw) + 0.5) * (side / out_hw) - 0.5
    return bilinear_gather(img, ys, xs)


# -- normalization ------------------------------------------------------


@dataclasses.dataclass
class NormalizationStats:
    """Per-coordinate min/max over training frames; tags its origin so
    evaluation can assert it never recomputes stats from test data."""

    mins: np.ndarray
    maxs: np.ndarray
    source: str = "train"

    def __post_init__(self):
        self.mins = np.asarray(self.mins, dtype=np.float64).reshape(-1)
        self.maxs = np.asarray(self.maxs, dtype=np.float64).reshape(-1)
        if self.mins.shape != self.maxs.shape:
            raise ValueError("stats extents differ: %r vs %r" % (self.mins.shape, self.maxs.shape))
        if not (np.isfinite(self.mins).all() and np.isfinite(self.maxs).all()):
            raise ValueError("stats must be finite")
        if (self.maxs < self.mins).any():
            raise ValueError("stats max < min")

    @classmethod
    def from_poses(cls, poses, source="train"):
        """poses: (N,P,3) metric joints over all training frames."""
        flat = np.asarray(poses, dtype=np.float64).reshape(len(poses), -1)
        return cls(flat.min(axis=0), flat.max(axis=0), source)

    def span(self):
        """max - min per coordinate, with rounding-level spans zeroed.

        A coordinate that is constant up to arithmetic noise (a rigid
        joint axis) must count as degenerate, or dividing by its span
        blows a small off-extremum value up by ~1e13.
        """
        raw = self.maxs - self.mins
        tol = 1e-9 * np.maximum(1.0, np.maximum(np.abs(self.maxs), np.abs(self.mins)))
        return np.where(raw > tol, raw, 0.0)


def normalize_pose(pose, stats):
    """Map (P,3) metric joints into [0,1] per coordinate.

    Degenerate coordinates (max == min up to rounding) map to 0.
    """
    flat = np.asarray(pose, dtype=np.float64).reshape(-1)
    span = stats.span()
    out = np.where(span > 0, (flat - stats.mins) / np.where(span > 0, span, 1.0), 0.0)
    return out.reshape(-1, 3)


def denormalize_pose(pose, stats):
    """Inverse of normalize_pose; degenerate coordinates return min."""
    flat = np.asarray(pose, dtype=np.float64).reshape(-1)
    return (flat * stats.span() + stats.mins).reshape(-1, 3)


# -- clips ---------------------------------------------------------------


@dataclasses.dataclass
class Clip:
    """A fixed-length training/eval unit.  The final clip of a sequence
    may be padded by repeating its last frame; n_valid counts the real
    frames so metrics can skip the repeats."""

    frames: np.ndarray      # (C,3,H,W) in [0,1]
    poses_norm: np.ndarray  # (C,P,3) in [0,1]
    poses_mm: np.ndarray    # (C,P,3) metric
    n_valid: int
    seq_id: str = ""
    action: str = ""


def decompose_clips(frames, poses_norm, poses_mm, clip_len, seq_id="", action=""):
    """Split a sequence into floor(T/C) clips plus a padded remainder.

    A remainder of length r (0 < r < C) repeats its last frame C - r
    times; a sequence shorter than C becomes one padded clip.
    """
    t_len = len(frames)
    if t_len < 1:
        raise ValueError("empty sequence")
    if clip_len < 1:
        raise ValueError("clip_len must be >= 1")

    def pad(arr):
        reps = np.repeat(arr[-1:], clip_len - len(arr), axis=0)
        return np.concatenate([arr, reps], axis=0)

    clips = []
    for start in range(0, (t_len // clip_len) * clip_len, clip_len):
        sl = slice(start, start + clip_len)
        clips.append(Clip(frames[sl], poses_norm[sl], poses_mm[sl], clip_len, seq_id, action))
    rem = t_len % clip_len
    if rem:
        sl = slice(t_len - rem, t_len)
        clips.append(Clip(pad(frames[sl]), pad(poses_norm[sl]), pad(poses_mm[sl]),
                          rem, seq_id, action))
    return clips


# -- dataset loading -------------------------------------------------------


def load_manifest(root):
    path = os.path.join(root, "manifest.json")
    with open(path) as fh:
        manifest = json.load(fh)
    for seq in manifest["sequences"]:
        seq_dir = os.path.join(root, seq["dir"])
        if not os.path.isdir(seq_dir):
            raise FileNotFoundError("manifest references missing directory %s" % seq_dir)
    return manifest


def load_sequence(root, entry):
    """Read one sequence: raw frames, (T,P,3) mm poses, per-frame bboxes."""
    seq_dir = os.path.join(root, entry["dir"])
    rows = []
    with open(os.path.join(seq_dir, "poses.jsonl")) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    rows.sort(key=lambda r: r["frame"])
    if len(rows) != entry["frames"]:
        raise ValueError("sequence %s: manifest says %d frames, poses.jsonl has %d"
                         % (entry["id"], entry["frames"], len(rows)))
    frames, poses, bboxes = [], [], []
    for row in rows:
        img_path = os.path.join(seq_dir, "frame_%04d.ppm" % row["frame"])
        if not os.path.exists(img_path):
            raise FileNotFoundError("sequence %s: missing %s" % (entry["id"], img_path))
        frames.append(read_ppm(img_path))
        poses.append(np.asarray(row["joints"], dtype=np.float64))
        bboxes.append(row.get("bbox"))
    return frames, np.stack(poses), bboxes


def load_clipset(root, clip_len, input_hw, stats=None, margin=1.15):
    """Load a dataset into clips ready for the model.

    Frames are square-cropped around the stored bbox and resized to
    input_hw.  Without precomputed ``stats`` this is a training load:
    min/max normalization stats are computed from the loaded poses and
    returned tagged source="train".
    """
    manifest = load_manifest(root)
    sequences = []
    for entry in manifest["sequences"]:
        raw_frames, poses_mm, bboxes = load_sequence(root, entry)
        frames = np.stack([crop_square_resize(f, b, input_hw, margin)
                           for f, b in zip(raw_frames, bboxes)])
        sequences.append((entry, frames, poses_mm))
    if stats is None:
        all_poses = np.concatenate([p for _, _, p in sequences], axis=0)
        stats = NormalizationStats.from_poses(all_poses, source="train")
    clips = []
    for entry, frames, poses_mm in sequences:
        poses_norm = np.stack([normalize_pose(p, stats) for p in poses_mm])
        clips.extend(decompose_clips(frames, poses_norm, poses_mm, clip_len,
                                     seq_id=str(entry["id"]), action=entry.get("action", "")))
    return clips, stats
