"""Finite-difference verification of analytic gradients.

Central differences are only meaningful where the loss is locally smooth;
a step that pushes a ReLU input across zero or flips a pooling argmax
compares slopes of two different linear pieces.  Crossings are detected
two ways and the coordinate is resampled rather than miscounted as a
gradient bug:

* asymmetry of the one-sided differences d+ and d-.  A single crossing
  at offset d inside (x-h, x+h) biases the central difference by exactly
  half the slope jump times (h-|d|)/h, which is half the asymmetry, so
  any undetected single kink contributes less than the pass tolerance by
  construction (kink_atol <= 2*atol, kink_rtol <= 2*rtol).
* consistency of central differences at step h and h/8.  A coordinate of
  an early layer moves thousands of downstream units, and several may
  cross within +-h with jump contributions that cancel in the asymmetry
  while adding in the error.  The number of crossings inside the window
  scales with h, so the aggregate bias differs between the two step
  sizes and shows up as disagreement.

Pass rule per coordinate: |analytic - fd| <= atol + rtol * max(|analytic|,
|fd|); the absolute floor absorbs double-precision noise on coordinates
whose true gradient is essentially zero.
"""

import dataclasses

import numpy as np

from rpsm.model import ModelConfig, PoseSequenceModel
from rpsm.tensor import Tensor, no_grad
from rpsm.training import sequence_loss


@dataclasses.dataclass
class GroupResult:
    name: str
    checked: int
    skipped: int
    worst_rel: float
    passed: bool


@dataclasses.dataclass
class GradReport:
    groups: list
    passed: bool

    @property
    def total_checked(self):
        return sum(g.checked for g in self.groups)

    @property
    def total_skipped(self):
        return sum(g.skipped for g in self.groups)

    def worst(self):
        return max((g.worst_rel for g in self.groups), default=0.0)

    def failing(self):
        return [g.name for g in self.groups if not g.passed]

    def table(self):
        lines = ["%-28s %8s %8s %12s  %s" % ("group", "checked", "skipped", "worst_rel", "status")]
        for g in self.groups:
            lines.append("%-28s %8d %8d %12.3e  %s"
                         % (g.name, g.checked, g.skipped, g.worst_rel,
                            "ok" if g.passed else "FAIL"))
        lines.append("total coords checked: %d (kink-skipped %d), %s"
                     % (self.total_checked, self.total_skipped,
                        "all passed" if self.passed else "FAILURES: " + ", ".join(self.failing())))
        return "\n".join(lines)


def check_params(loss_fn, params, rng, min_coords=64, per_group=2, h=1e-5,
                 rtol=1e-4, atol=5e-6, kink_rtol=2e-4, kink_atol=2e-6,
                 cons_rtol=1e-4, cons_atol=4e-6, max_attempts=8, corrupt=None):
    """Compare analytic gradients of loss_fn against central differences.

    loss_fn must be a deterministic closure over the live parameter
    tensors.  At least ``per_group`` clean coordinates are checked per
    parameter tensor, and extra coordinates are drawn round-robin until
    ``min_coords`` clean checks accumulate.  ``corrupt`` names a group
    whose analytic gradient is deliberately scaled (negative control).
    """
    for _, p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    f0 = float(loss.data)
    grads = {}
    for name, p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        grads[name] = g.reshape(-1).copy()
        if name == corrupt:
            grads[name] = grads[name] * 1.5 + 1e-3

    h2 = h / 8

    def clean_fd(flat, i):
        """(fd, is_kink) via one-sided asymmetry plus two-step consistency."""
        old = flat[i]
        with no_grad():
            flat[i] = old + h
            fp = float(loss_fn().data)
            flat[i] = old - h
            fm = float(loss_fn().data)
            flat[i] = old + h2
            fp2 = float(loss_fn().data)
            flat[i] = old - h2
            fm2 = float(loss_fn().data)
            flat[i] = old
        dplus = (fp - f0) / h
        dminus = (f0 - fm) / h
        fd = (fp - fm) / (2 * h)
        fd2 = (fp2 - fm2) / (2 * h2)
        kink = (abs(dplus - dminus) > kink_atol + kink_rtol * max(abs(dplus), abs(dminus))
                or abs(fd - fd2) > cons_atol + cons_rtol * max(abs(fd), abs(fd2)))
        return fd, kink

    results = {name: GroupResult(name, 0, 0, 0.0, True) for name, _ in params}

    def check_coord(name, p, i):
        flat = p.data.reshape(-1)
        fd, kink = clean_fd(flat, i)
        res = results[name]
        if kink:
            res.skipped += 1
            return False
        a = grads[name][i]
        diff = abs(a - fd)
        rel = diff / max(abs(a), abs(fd), atol / rtol)
        res.checked += 1
        res.worst_rel = max(res.worst_rel, rel)
        if diff > atol + rtol * max(abs(a), abs(fd)):
            res.passed = False
        return True

    total_clean = 0
    for name, p in params:
        size = p.data.size
        attempts = 0
        clean = 0
        while clean < min(per_group, size) and attempts < max_attempts:
            i = int(rng.integers(size))
            attempts += 1
            if check_coord(name, p, i):
                clean += 1
                total_clean += 1
    order = [(name, p) for name, p in params]
    guard = 0
    while total_clean < min_coords and guard < 10 * min_coords:
        name, p = order[guard % len(order)]
        guard += 1
        if check_coord(name, p, int(rng.integers(p.data.size))):
            total_clean += 1
    groups = [results[name] for name, _ in params]
    return GradReport(groups, all(g.passed for g in groups))


def build_model_check(cfg=None, seed=0, t_len=2):
    """Seeded desk-scale model plus a deterministic loss closure.

    Parameters are jittered off the init point: zero biases plus dead
    ReLU windows put many preactivations exactly at zero, i.e. the init
    sits on kinks, while a generic point has almost none nearby.
    """
    if cfg is None:
        cfg = ModelConfig.desk()
    rng = np.random.default_rng(seed)
    model = PoseSequenceModel(cfg, np.random.default_rng(seed + 1))
    jitter = np.random.default_rng(seed + 3)
    for _, p in model.parameters():
        p.data += jitter.normal(0.0, 0.02, size=p.data.shape)
    frames = rng.random((t_len, 3, cfg.input_hw, cfg.input_hw))
    target = rng.random((t_len, cfg.out_dim))
    alphas = (1.0,) * cfg.stages

    def loss_fn():
        return sequence_loss(model.forward_clip(frames), target, alphas)

    return model, loss_fn


def check_model(cfg=None, seed=0, min_coords=64, corrupt=None, **kw):
    """End-to-end gradient check of the full multi-stage model."""
    model, loss_fn = build_model_check(cfg, seed)
    rng = np.random.default_rng(seed + 2)
    return check_params(loss_fn, model.parameters(), rng,
                        min_coords=min_coords, corrupt=corrupt, **kw)


def _projection_check(name, build, arrs, rng, h=1e-5, rtol=1e-4, atol=1e-8):
    """Dense FD over every coordinate of every input, projection loss."""
    ts = [Tensor(a, requires_grad=True) for a in arrs]
    out = build(*ts)
    proj = rng.standard_normal(out.data.shape)

    def loss_fn():
        return (build(*ts) * Tensor(proj)).sum()

    loss = loss_fn()
    loss.backward()
    worst = 0.0
    for t in ts:
        flat = t.data.reshape(-1)
        g = (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            with no_grad():
                flat[i] = old + h
                fp = float(loss_fn().data)
                flat[i] = old - h
                fm = float(loss_fn().data)
                flat[i] = old
            fd = (fp - fm) / (2 * h)
            diff = abs(g[i] - fd)
            worst = max(worst, diff / max(abs(g[i]), abs(fd), atol / rtol))
            if diff > atol + rtol * max(abs(g[i]), abs(fd)):
                return GroupResult(name, i + 1, 0, worst, False)
    n = sum(a.size for a in arrs)
    return GroupResult(name, n, 0, worst, True)


def check_layers(seed=0):
    """Small dense gradient checks, one per op/layer kind.

    Inputs are nudged away from ReLU kinks and pooling ties so central
    differences are valid everywhere.
    """
    from rpsm import tensor
    from rpsm.layers import LstmCell

    rng = np.random.default_rng(seed)

    def away_from_zero(shape, margin=0.05):
        x = rng.standard_normal(shape)
        return x + np.sign(x) * margin

    results = []

    def run(name, build, arrs):
        results.append(_projection_check(name, build, arrs, rng))

    a34 = rng.standard_normal((3, 4))
    b34 = rng.standard_normal((3, 4))
    run("add", lambda x, y: x + y, [a34, b34])
    run("sub", lambda x, y: x - y, [a34, b34])
    run("mul", lambda x, y: x * y, [a34, b34])
    run("scalar_mul", lambda x: x * 2.5, [a34])
    run("matmul", lambda x, y: x @ y, [rng.standard_normal((4, 3)), rng.standard_normal((3, 5))])
    run("concat", lambda x, y: tensor.concat([x, y], 1), [a34, rng.standard_normal((3, 2))])
    run("narrow", lambda x: tensor.narrow(x, 1, 1, 2), [a34])
    run("reshape", lambda x: x.reshape(4, 3), [a34])
    run("sum", lambda x: x.sum().reshape(1), [a34])
    run("relu", lambda x: x.relu(), [away_from_zero((3, 4))])
    run("sigmoid", lambda x: x.sigmoid(), [a34])
    run("tanh", lambda x: x.tanh(), [a34])
    run("linear", lambda x, w, b: tensor.linear(x, w, b),
        [rng.standard_normal((3, 4)), rng.standard_normal((5, 4)), rng.standard_normal(5)])
    run("conv2d_3x3", lambda x, w, b: tensor.conv2d(x, w, b, 1, 1).relu(),
        [away_from_zero((2, 3, 6, 6)), rng.standard_normal((4, 3, 3, 3)) * 0.5,
         rng.standard_normal(4)])
    run("conv2d_5x5_s2", lambda x, w, b: tensor.conv2d(x, w, b, 2, 0),
        [rng.standard_normal((1, 2, 9, 9)), rng.standard_normal((3, 2, 5, 5)),
         rng.standard_normal(3)])
    # pooling: well-separated values keep every window's argmax stable
    pool_in = rng.permutation(np.arange(2 * 2 * 6 * 6, dtype=np.float64)).reshape(2, 2, 6, 6) * 0.1
    run("maxpool2d", lambda x: tensor.maxpool2d(x, 2, 2), [pool_in])

    hd, xd = 4, 5
    cell = LstmCell("cell", xd, hd, rng)
    x = rng.standard_normal((1, xd))
    hp = rng.standard_normal((1, hd)) * 0.5
    cp = rng.standard_normal((1, hd)) * 0.5

    def lstm_all(wx, wh, b, xi, hi, ci):
        cell.w_x, cell.w_h, cell.bias = wx, wh, b
        h, c = cell.step(xi, hi, ci)
        return tensor.concat([h, c], 1)

    results.append(_projection_check(
        "lstm_step", lstm_all,
        [cell.w_x.data.copy(), cell.w_h.data.copy(), cell.bias.data.copy(), x, hp, cp], rng))
    return results
