"""Command-line surface for the try-on pipeline."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np
from PIL import Image

from . import metrics, pipeline, stages
from .config import load_config
from .data import load_dataset, to_metric
from .errors import VtonError


def _common(parser):
    parser.add_argument("--config", default=None, help="TOML config file")
    parser.add_argument("--seed", type=int, default=None, help="override root seed")


def _load_cfg(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.values["seed"] = args.seed
    return cfg


def _save_png(path, chw_network):
    arr = np.transpose(np.clip(to_metric(chw_network), 0, 1), (1, 2, 0))
    Image.fromarray((arr * 255).round().astype(np.uint8)).save(path)


def _save_mask_png(path, mask):
    Image.fromarray((np.asarray(mask) * 255).astype(np.uint8), mode="L").save(path)


def build_parser():
    parser = argparse.ArgumentParser(prog="vton", description="virtual try-on pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-fixtures", help="write a synthetic fixture dataset")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=4)

    for stage in ("fabricator", "segmenter", "warper", "fuser"):
        p = sub.add_parser(f"train-{stage}", help=f"train the {stage} stage")
        _common(p)
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True, help="experiment directory")

    p = sub.add_parser("run-all", help="train all stages then evaluate")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--subset-easy", default=None)
    p.add_argument("--subset-medium", default=None)
    p.add_argument("--subset-hard", default=None)

    p = sub.add_parser("infer", help="synthesize a try-on image")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--person", required=True, help="sample id")
    p.add_argument("--cloth", default=None, help="cloth image file (defaults to the pair's cloth)")
    p.add_argument("--ckpt-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-intermediates", action="store_true")
    p.add_argument("--dump-masks", action="store_true")

    p = sub.add_parser("evaluate", help="compute SSIM/FID over the test split")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt-dir", required=True)
    p.add_argument("--subset-easy", default=None)
    p.add_argument("--subset-medium", default=None)
    p.add_argument("--subset-hard", default=None)
    p.add_argument("--features", choices=("stub", "canonical"), default=None)
    p.add_argument("--out", default=None, help="report file (default stdout)")
    return parser


def _subsets(args):
    out = {}
    for name in ("easy", "medium", "hard"):
        path = getattr(args, f"subset_{name}")
        if path:
            with open(path, "r", encoding="utf-8") as f:
                out[name] = [line.strip() for line in f if line.strip()]
    return out or None


def _run_single_stage(stage, args):
    cfg = _load_cfg(args)
    paths = pipeline.experiment_dirs(args.out)
    samples = load_dataset(args.data, "train", resolution=cfg.resolution)
    upstream = {}
    for up in {"fabricator": (), "segmenter": (), "warper": ("fabricator",), "fuser": ("fabricator", "segmenter", "warper")}[stage]:
        upstream[up] = pipeline._load_stage(paths, up)
    pipeline.run_stage(stage, cfg, samples, paths, upstream=upstream)
    print(f"{stage} checkpoint(s) written to {paths['ckpt']}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "make-fixtures":
            cfg = _load_cfg(args)
            pipeline.make_fixtures(args.out, args.n, cfg.seed, resolution=cfg.resolution)
            print(f"wrote {args.n} fixtures to {args.out}")
        elif args.command.startswith("train-"):
            _run_single_stage(args.command[len("train-"):], args)
        elif args.command == "run-all":
            cfg = _load_cfg(args)
            result = pipeline.run_all(
                cfg, args.data, args.out, subsets=_subsets(args), progress=lambda m: print(m)
            )
            print(f"report written to {result['report']}")
        elif args.command == "infer":
            cfg = _load_cfg(args)
            paths = pipeline.experiment_dirs(args.ckpt_dir)
            ckpts = pipeline.checkpoint_map(paths)
            descriptors = {d.id: d for d in load_dataset(args.data, "test", resolution=cfg.resolution)}
            if args.person not in descriptors:
                raise VtonError(f"unknown sample id '{args.person}'")
            sample = descriptors[args.person].load()
            cloth = None
            if args.cloth:
                from .data import _load_image

                cloth = _load_image(args.cloth, *cfg.resolution)
            result = stages.infer_tryon(
                ckpts, sample, target_cloth=cloth, pose_radius=cfg["data"]["pose_radius"]
            )
            os.makedirs(args.out, exist_ok=True)
            _save_png(os.path.join(args.out, f"{args.person}_tryon.png"), result["i_t"])
            if args.dump_intermediates:
                for key in ("t_warped", "t_refined", "i_nc"):
                    _save_png(os.path.join(args.out, f"{args.person}_{key}.png"), result[key])
            if args.dump_intermediates or args.dump_masks:
                for key in ("m_bp", "m_cloth", "m_comp"):
                    _save_mask_png(os.path.join(args.out, f"{args.person}_{key}.png"), result[key])
            print(f"try-on image written to {args.out}")
        elif args.command == "evaluate":
            cfg = _load_cfg(args)
            paths = pipeline.experiment_dirs(args.ckpt_dir)
            ckpts = pipeline.checkpoint_map(paths)
            samples = load_dataset(args.data, "test", resolution=cfg.resolution)
            features = args.features or cfg["eval"]["features"]
            report = metrics.evaluate(
                samples,
                lambda s: stages.infer_tryon(
                    ckpts, s, pose_radius=cfg["data"]["pose_radius"]
                )["i_t"],
                subsets=_subsets(args),
                extractor=metrics.make_feature_extractor(
                    features, cfg["eval"]["inception_weights_path"] or None
                ),
            )
            text = metrics.format_report(report)
            if args.out:
                with open(args.out, "w", encoding="utf-8") as f:
                    f.write(text)
            else:
                sys.stdout.write(text)
    except VtonError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
