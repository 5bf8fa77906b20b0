"""Command-line interface.

Subcommands: synth (generate a dataset), train, eval, predict (export
one sequence's skeletons), gradcheck.  Runs are reproducible: the seed,
config and data fully determine every output.  Settings layer as
defaults < config file < --set overrides < explicit flags.  Exit codes:
0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import dataclasses
import json
import os
import struct
import sys

import numpy as np

from rpsm import config as run_config
from rpsm import gradcheck
from rpsm.data import denormalize_pose, load_clipset, load_manifest
from rpsm.evaluation import evaluate, export_skeletons, pose_error
from rpsm.model import PoseSequenceModel, expected_param_tensor_count, load_model
from rpsm.synth import generate_dataset
from rpsm.tensor import no_grad
from rpsm.training import train


def _env_seed():
    raw = os.environ.get("RPSM_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ValueError("RPSM_SEED must be an integer, got %r" % raw)


def _resolve_seed(explicit):
    if explicit is not None:
        return explicit
    env = _env_seed()
    return 0 if env is None else env


def _merged_settings(args):
    """Config file, then --set pairs, then explicit flags."""
    settings = {}
    if getattr(args, "config", None):
        settings.update(run_config.load_config(args.config))
    settings.update(run_config.parse_overrides(getattr(args, "set", None) or []))
    for key in ("preset", "stages", "clip_len", "joints", "lr", "decay",
                "epochs", "eval_every", "max_steps"):
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    if getattr(args, "alphas", None) is not None:
        settings["alphas"] = run_config.parse_value("alphas", args.alphas)
    if getattr(args, "no_augment", False):
        settings["augment"] = False
    if getattr(args, "seed", None) is not None:
        settings["seed"] = args.seed
    elif "seed" not in settings:
        env = _env_seed()
        if env is not None:
            settings["seed"] = env
    return settings


def cmd_synth(args):
    seed = _resolve_seed(args.seed)
    manifest = generate_dataset(args.out, args.sequences, args.frames, seed)
    entries = manifest["sequences"]
    by_action = {}
    for entry in entries:
        by_action[entry["action"]] = by_action.get(entry["action"], 0) + 1
    print("wrote %d sequences x %d frames to %s (%d joints, seed %d)"
          % (len(entries), args.frames, args.out, manifest["joints"], seed))
    print("actions: " + ", ".join("%s x%d" % (a, by_action[a]) for a in sorted(by_action)))
    return 0


def cmd_train(args):
    settings = _merged_settings(args)
    mcfg, tcfg = run_config.make_configs(settings)
    log_path = args.log or args.checkpoint + ".log.jsonl"
    tcfg = dataclasses.replace(tcfg, checkpoint_path=args.checkpoint, log_path=log_path)
    clips, stats = load_clipset(args.data, mcfg.clip_len, mcfg.input_hw)
    eval_clips = None
    if args.eval_data:
        eval_clips, _ = load_clipset(args.eval_data, mcfg.clip_len, mcfg.input_hw, stats=stats)
    model = PoseSequenceModel(mcfg, np.random.default_rng(tcfg.seed))
    n_scalars = sum(p.data.size for _, p in model.parameters())
    print("model: %s preset, %d stages, clip length %d, %d parameter tensors (%d scalars)"
          % (mcfg.preset, mcfg.stages, mcfg.clip_len,
             expected_param_tensor_count(mcfg), n_scalars))
    print("training on %d clips for %d epochs (seed %d)"
          % (len(clips), tcfg.epochs, tcfg.seed))
    history = train(model, clips, stats, tcfg, eval_clips=eval_clips)
    losses = [rec["loss"] for rec in history if rec.get("loss") is not None]
    print("final loss %.6g after %d steps" % (losses[-1], len(losses)))
    evals = [rec for rec in history if rec.get("eval_error_mm") is not None]
    if evals:
        print("final eval error %.2f mm" % evals[-1]["eval_error_mm"])
    print("checkpoint: %s" % tcfg.checkpoint_path)
    print("log: %s" % tcfg.log_path)
    return 0


def cmd_eval(args):
    model, stats = load_model(args.checkpoint)
    if stats is None:
        raise ValueError("checkpoint %s carries no normalization stats" % args.checkpoint)
    requested = {}
    if args.config:
        requested.update(run_config.load_config(args.config))
    requested.update(run_config.parse_overrides(args.set or []))
    mismatched = []
    for key, value in requested.items():
        if key == "preset":
            if value != model.cfg.preset:
                mismatched.append(key)
        elif key in run_config.MODEL_FIELDS:
            if value != getattr(model.cfg, run_config.MODEL_FIELDS[key]):
                mismatched.append(key)
    if mismatched:
        raise ValueError("config/checkpoint mismatch: " + ", ".join(sorted(mismatched)))
    clips, _ = load_clipset(args.data, model.cfg.clip_len, model.cfg.input_hw, stats=stats)
    report = evaluate(model, clips, stats, alignment=args.alignment,
                      oracle=args.oracle, workers=args.workers)
    print(report.table())
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        print("report: %s" % args.report)
    return 0


def cmd_predict(args):
    model, stats = load_model(args.checkpoint)
    if stats is None:
        raise ValueError("checkpoint %s carries no normalization stats" % args.checkpoint)
    clips, _ = load_clipset(args.data, model.cfg.clip_len, model.cfg.input_hw, stats=stats)
    chosen = [c for c in clips if c.seq_id == args.sequence]
    if not chosen:
        known = sorted({c.seq_id for c in clips})
        raise ValueError("unknown sequence id %r (dataset has: %s)"
                         % (args.sequence, ", ".join(known)))
    preds, gts = [], []
    for clip in chosen:
        with no_grad():
            final = model.forward_clip(clip.frames)[-1].data
        for t in range(clip.n_valid):
            preds.append(denormalize_pose(final[t], stats))
            gts.append(clip.poses_mm[t])
    preds, gts = np.stack(preds), np.stack(gts)
    parents = load_manifest(args.data).get("parents")
    export_skeletons(preds, gts, args.out, parents=parents)
    mean = float(np.mean([pose_error(p, g) for p, g in zip(preds, gts)]))
    print("exported %d frames of sequence %s to %s (mean error %.2f mm)"
          % (len(preds), args.sequence, args.out, mean))
    return 0


def cmd_gradcheck(args):
    seed = _resolve_seed(args.seed)
    layer_results = gradcheck.check_layers(seed=seed)
    print("layer checks (seed %d):" % seed)
    for res in layer_results:
        print("  %-14s %-4s worst rel %.3e"
              % (res.name, "ok" if res.passed else "FAIL", res.worst_rel))
    report = gradcheck.check_model(seed=seed, min_coords=args.min_coords,
                                   corrupt=args.corrupt)
    print("model check (seed %d):" % seed)
    print(report.table())
    return 0 if report.passed and all(r.passed for r in layer_results) else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rpsm",
        description="Recurrent multi-stage 3D pose estimation from image sequences.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("synth", help="generate a synthetic motion-capture dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--sequences", type=int, default=8, help="number of sequences (default 8)")
    p.add_argument("--frames", type=int, default=40, help="frames per sequence (default 40)")
    p.add_argument("--seed", type=int, default=None, help="rng seed (default $RPSM_SEED or 0)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", required=True, help="training dataset directory")
    p.add_argument("--eval-data", default=None, help="held-out dataset for periodic evaluation")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one documented config key (repeatable)")
    p.add_argument("--preset", choices=("desk", "full"), default=None)
    p.add_argument("--stages", type=int, default=None, help="refinement stages (default 3)")
    p.add_argument("--clip-len", dest="clip_len", type=int, default=None,
                   help="frames per training clip (default 5)")
    p.add_argument("--joints", type=int, default=None)
    p.add_argument("--lr", type=float, default=None, help="learning rate (default 1e-3)")
    p.add_argument("--decay", type=float, default=None, help="weight decay (default 1e-4)")
    p.add_argument("--alphas", default=None, help="comma-separated stage loss weights")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--eval-every", dest="eval_every", type=int, default=None,
                   help="epochs between evaluations, 0 disables")
    p.add_argument("--max-steps", dest="max_steps", type=int, default=None,
                   help="stop after this many optimizer steps")
    p.add_argument("--no-augment", action="store_true", help="disable scale augmentation")
    p.add_argument("--seed", type=int, default=None, help="rng seed (default $RPSM_SEED or 0)")
    p.add_argument("--checkpoint", default="model.ckpt", help="checkpoint output path")
    p.add_argument("--log", default=None, help="JSONL metric log (default <checkpoint>.log.jsonl)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--data", required=True, help="evaluation dataset directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", default=None,
                   help="config file to cross-check against the checkpoint")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="config key to cross-check against the checkpoint (repeatable)")
    p.add_argument("--alignment", choices=("root", "centroid"), default="root")
    p.add_argument("--oracle", action="store_true",
                   help="score ground truth against itself (sanity path)")
    p.add_argument("--report", default=None, help="write the report as JSON here")
    p.add_argument("--workers", type=int, default=1, help="concurrent clip forwards")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="export one sequence's predicted skeletons")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sequence", required=True, help="sequence id, e.g. 0003")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--seed", type=int, default=None, help="rng seed (default $RPSM_SEED or 0)")
    p.add_argument("--min-coords", dest="min_coords", type=int, default=64,
                   help="minimum clean coordinates for the model check")
    p.add_argument("--corrupt", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError, struct.error) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
