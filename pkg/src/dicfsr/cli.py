"""Command-line surface: data preparation, training, evaluation,
inference, component-ablation rendering, and model-variant ablations."""

import argparse
import json
import sys
from pathlib import Path

import torch

from .collaboration import VARIANTS
from .data.dataset import (
    load_cached_samples,
    load_image,
    load_samples,
    read_landmarks,
    read_manifest,
    build_sample,
    save_image,
    save_sample_cache,
)
from .fusion import COMPONENT_NAMES, component_groups_json, normalize_keep
from .train import TrainConfig, Trainer, evaluate, load_model

SPLITS = ("train", "test")


def load_split(source, split, sigma=1.0):
    """Samples from either a manifest file or a prepared-cache directory."""
    source = Path(source)
    if source.is_dir():
        split_dir = source / split
        return load_cached_samples(split_dir if split_dir.is_dir() else source)
    return load_samples(source, split, sigma=sigma)


def cmd_prepare_data(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "component_groups.json").write_text(component_groups_json())
    counts = {split: 0 for split in SPLITS}
    for entry in read_manifest(args.manifest):
        image = load_image(entry.image_path)
        landmarks = read_landmarks(entry.landmark_path)
        sample = build_sample(
            image, landmarks, entry.image_path.stem,
            margin=args.margin, sigma=args.sigma,
        )
        save_sample_cache(sample, out / entry.split)
        counts[entry.split] += 1
    print(json.dumps({"out": str(out), **counts}))


def cmd_train(args):
    config = TrainConfig.from_json(args.config)
    if args.phase:
        config.phase = args.phase
    if config.phase == "gan" and args.init_ckpt is None and args.resume is None:
        raise ValueError("gan phase requires --init-ckpt")
    samples = load_split(config.manifest, config.split, sigma=config.sigma)
    if args.resume:
        trainer = Trainer.from_checkpoint(args.resume, samples,
                                          init_ckpt=args.init_ckpt)
    else:
        trainer = Trainer(config, samples, init_ckpt=args.init_ckpt)
    final = trainer.run()
    print(json.dumps({"checkpoint": str(final), "iterations": trainer.iteration}))


def cmd_eval(args):
    model, config = load_model(args.ckpt)
    samples = load_split(args.manifest, args.split, sigma=config.sigma)
    reports, agg = evaluate(
        model, samples,
        per_step=args.per_step,
        nrmse_source=args.nrmse_source,
        detector_dir=args.detector_landmarks,
    )
    for report in reports:
        print(report.to_json())
    print(json.dumps({"aggregate": agg}))


def _load_lr_tensor(path):
    image = load_image(path)
    return torch.from_numpy(image.transpose(2, 0, 1).copy()).unsqueeze(0)


def cmd_infer(args):
    model, _ = load_model(args.ckpt)
    sr = model.infer(_load_lr_tensor(args.input))
    save_image(args.out, sr.squeeze(0).permute(1, 2, 0).numpy())
    print(json.dumps({"out": args.out}))


def cmd_render_components(args):
    model, _ = load_model(args.ckpt)
    lr = _load_lr_tensor(args.input)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.keep == "all":
        names = list(COMPONENT_NAMES)
    else:
        indices = normalize_keep(args.keep.split(","))
        names = [COMPONENT_NAMES[i] for i in indices]
    written = []
    full = model.infer(lr)
    save_image(out_dir / "full.png", full.squeeze(0).permute(1, 2, 0).numpy())
    for name in names:
        sr = model.component_ablation_render(lr, keep=[name])
        path = out_dir / f"{name}.png"
        save_image(path, sr.squeeze(0).permute(1, 2, 0).numpy())
        written.append(str(path))
    print(json.dumps({"out_dir": str(out_dir), "images": written}))


def cmd_ablate(args):
    config = TrainConfig.from_json(args.config)
    config.variant = args.variant
    config.out_dir = str(Path(config.out_dir).with_name(
        Path(config.out_dir).name + "_" + args.variant
    ))
    samples = load_split(config.manifest, config.split, sigma=config.sigma)
    trainer = Trainer(config, samples)
    final = trainer.run()
    print(json.dumps({
        "variant": args.variant,
        "checkpoint": str(final),
        "iterations": trainer.iteration,
    }))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dicfsr",
        description="Iterative-collaboration face super-resolution (x8).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", help="crop, degrade, and cache samples")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--margin", type=float, default=0.25)
    p.add_argument("--sigma", type=float, default=1.0)
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("train", help="run one training phase")
    p.add_argument("--config", required=True)
    p.add_argument("--phase", choices=["psnr", "gan"])
    p.add_argument("--init-ckpt")
    p.add_argument("--resume")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="PSNR/SSIM/NRMSE on a sample set")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=SPLITS)
    p.add_argument("--per-step", action="store_true")
    p.add_argument("--nrmse-source", default="branch",
                   choices=["branch", "gt-detector"])
    p.add_argument("--detector-landmarks")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="super-resolve one LR image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("render-components",
                       help="render with single facial components kept")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--keep", default="all",
                   help="comma-separated component names/indices, or 'all'")
    p.set_defaults(func=cmd_render_components)

    p = sub.add_parser("ablate", help="train a model variant")
    p.add_argument("--config", required=True)
    p.add_argument("--variant", required=True, choices=list(VARIANTS))
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except Exception as err:  # noqa: BLE001 - single CLI failure surface
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
