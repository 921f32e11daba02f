"""Command-line surface: gen-data, train, infer, eval, convert, plot.

A run is configured by an optional JSON config file plus flag overrides;
flags win. All randomness flows from --seed. The default output root comes
from the EMOANIM_OUT_ROOT environment variable when --out is relative.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import data, rig as rig_module, training
from .decoder import FusionConfig
from .encoders import EncoderConfig
from .losses import LossWeights
from .training import TrainConfig

OUT_ROOT_ENV = "EMOANIM_OUT_ROOT"


def _resolve_out(path: str) -> str:
    root = os.environ.get(OUT_ROOT_ENV)
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as f:
        return json.load(f)


def _section(config: dict, name: str, cls, **overrides):
    merged = dict(config.get(name, {}))
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**merged)


def cmd_gen_data(args) -> int:
    config = _load_config(args.config)
    spec = _section(config, "data", data.DatasetSpec,
                    n_contents=args.contents, n_emotions=args.emotions,
                    n_speakers=args.speakers, clips_per_cell=args.clips_per_cell,
                    duration_s=args.duration, seed=args.seed)
    out = _resolve_out(args.out)
    manifest = data.write_dataset(out, spec, smooth=args.smooth)
    print(f"wrote {len(manifest['clips'])} clips to {out}")
    print(f"manifest hash: {data.manifest_hash(manifest)}")
    return 0


def _build_state(config: dict, args) -> training.TrainState:
    encoder_config = _section(config, "encoder", EncoderConfig,
                              d_model=args.d_model, n_emotions=args.emotions)
    fusion_config = _section(config, "fusion", FusionConfig)
    train_config = _section(config, "train", TrainConfig,
                            learning_rate=args.learning_rate,
                            batch_size=args.batch_size, seed=args.seed)
    return training.TrainState.create(encoder_config, fusion_config, train_config)


def cmd_train(args) -> int:
    config = _load_config(args.config)
    dataset, manifest = data.load_dataset(args.data)
    if args.emotions is None:
        args.emotions = manifest["spec"]["n_emotions"]
    out = _resolve_out(args.out)
    os.makedirs(out, exist_ok=True)
    state = _build_state(config, args)

    if args.holdout > 0:
        train_set, test_set = dataset.split(holdout_per_cell=args.holdout)
    else:
        train_set, test_set = dataset, dataset

    log_path = os.path.join(out, "metrics.jsonl")
    reports = training.train(state, train_set, args.steps, log_path=log_path)
    checkpoint = os.path.join(out, "checkpoint.pt")
    training.save_checkpoint(checkpoint, state)

    rig = rig_module.make_synthetic_rig(V=args.rig_vertices, seed=args.seed)
    rig_module.save_rig(os.path.join(out, "rig.npz"), rig)
    rig_module.write_mask_files(out, rig)
    metrics = training.evaluate(state.model, test_set, rig)
    with open(os.path.join(out, "eval.json"), "w") as f:
        json.dump(metrics, f, indent=2, sort_keys=True)
    print(f"final loss: {reports[-1].total:.6f} after {state.step} steps")
    print(f"held-out metrics: {json.dumps(metrics, sort_keys=True)}")
    return 0


def cmd_infer(args) -> int:
    state = training.load_checkpoint(args.checkpoint)
    clip = data.read_wav(args.wav)
    pred = training.infer(state.model, clip, args.level, args.style,
                          clamp=args.clamp)
    out = _resolve_out(args.out)
    data.write_blendshape_csv(out, pred)
    print(f"wrote {pred.n_frames} frames to {out}")
    if args.rig:
        rig = rig_module.load_rig(args.rig)
        obj_dir = args.obj_dir or os.path.splitext(out)[0] + "_obj"
        paths = rig_module.export_obj_sequence(obj_dir, rig, pred)
        print(f"wrote {len(paths)} OBJ frames to {obj_dir}")
    return 0


def cmd_eval(args) -> int:
    state = training.load_checkpoint(args.checkpoint)
    dataset, _ = data.load_dataset(args.data)
    rig = rig_module.load_rig(args.rig, lip_mask_file=args.lip_mask,
                              eye_mask_file=args.eye_mask)
    metrics = training.evaluate(state.model, dataset, rig)
    out = _resolve_out(args.out)
    with open(out, "w") as f:
        json.dump(metrics, f, indent=2, sort_keys=True)
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_convert(args) -> int:
    seq = data.read_blendshape_csv(args.csv)
    rig = rig_module.load_rig(args.rig, lip_mask_file=args.lip_mask,
                              eye_mask_file=args.eye_mask)
    out = _resolve_out(args.out)
    paths = rig_module.export_obj_sequence(out, rig, seq, mode=args.mode)
    print(f"wrote {len(paths)} OBJ frames to {out}")
    return 0


def cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = _resolve_out(args.out)
    os.makedirs(out, exist_ok=True)
    written = []
    if args.csv:
        seq = data.read_blendshape_csv(args.csv)
        t = np.arange(seq.n_frames) / seq.fps
        fig, ax = plt.subplots(figsize=(10, 6))
        for k in args.channels or range(0, data.N_CHANNELS, 8):
            ax.plot(t, seq.coeffs[:, k], label=data.CHANNEL_NAMES[k])
        ax.set_xlabel("time (s)")
        ax.set_ylabel("coefficient")
        ax.legend(loc="upper right", fontsize=8)
        path = os.path.join(out, "coefficients.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    if args.metrics_log:
        steps, totals = [], []
        with open(args.metrics_log) as f:
            for line in f:
                record = json.loads(line)
                steps.append(record["step"])
                totals.append(record["total"])
        fig, ax = plt.subplots(figsize=(8, 5))
        ax.plot(steps, totals)
        ax.set_xlabel("step")
        ax.set_ylabel("total loss")
        ax.set_yscale("log")
        path = os.path.join(out, "loss_curve.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    if not written:
        print("nothing to plot: pass --csv and/or --metrics-log", file=sys.stderr)
        return 1
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emoanim",
        description="Speech-driven emotional blendshape animation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--contents", type=int)
    p.add_argument("--emotions", type=int)
    p.add_argument("--speakers", type=int)
    p.add_argument("--clips-per-cell", type=int)
    p.add_argument("--duration", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--smooth", action="store_true",
                   help="apply Savitzky-Golay smoothing to ground truth")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--holdout", type=int, default=1,
                   help="clips per factor cell held out for evaluation")
    p.add_argument("--d-model", type=int)
    p.add_argument("--emotions", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--rig-vertices", type=int, default=600)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="run inference on a WAV file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--wav", required=True)
    p.add_argument("--level", type=int, default=0)
    p.add_argument("--style", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--clamp", action="store_true",
                   help="clamp exported coefficients to [0, 1]")
    p.add_argument("--rig", help="rig .npz; also export per-frame OBJ meshes")
    p.add_argument("--obj-dir")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--rig", required=True)
    p.add_argument("--lip-mask")
    p.add_argument("--eye-mask")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("convert", help="convert a blendshape CSV to OBJ frames")
    p.add_argument("--csv", required=True)
    p.add_argument("--rig", required=True)
    p.add_argument("--mode", choices=["delta", "literal"], default="delta")
    p.add_argument("--lip-mask")
    p.add_argument("--eye-mask")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("plot", help="plot coefficients and/or loss curves")
    p.add_argument("--csv")
    p.add_argument("--metrics-log")
    p.add_argument("--channels", type=int, nargs="*")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
