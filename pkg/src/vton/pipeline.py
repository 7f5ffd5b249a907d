"""Experiment orchestration: run the stages in dependency order with
hash-based resume, and assemble the evaluation report."""

from __future__ import annotations

import os

from . import fabricator as fabricator_mod
from . import metrics, stages
from .checkpoint import load_checkpoint, save_checkpoint
from .config import PipelineConfig, derive_seed
from .data import load_dataset, write_fixture_dataset
from .mask_ops import OcclusionMaskParams

CKPT_FILES = {
    "fabricator": ("fabricator.ckpt",),
    "segmenter": ("segmenter_bp.ckpt", "segmenter_cloth.ckpt"),
    "warper": ("warper.ckpt",),
    "fuser": ("fuser.ckpt",),
}


def experiment_dirs(out_dir):
    paths = {
        "root": out_dir,
        "ckpt": os.path.join(out_dir, "ckpt"),
        "logs": os.path.join(out_dir, "logs"),
        "intermediates": os.path.join(out_dir, "intermediates"),
        "report": os.path.join(out_dir, "report.txt"),
    }
    for key in ("ckpt", "logs", "intermediates"):
        os.makedirs(paths[key], exist_ok=True)
    return paths


def _stage_current(paths, stage, want_hash):
    for fname in CKPT_FILES[stage]:
        fpath = os.path.join(paths["ckpt"], fname)
        if not os.path.exists(fpath):
            return False
        try:
            if load_checkpoint(fpath).config_hash != want_hash:
                return False
        except Exception:
            return False
    return True


def _load_stage(paths, stage):
    return [
        load_checkpoint(os.path.join(paths["ckpt"], fname)) for fname in CKPT_FILES[stage]
    ]


def make_fixtures(out_dir, n, seed, resolution=(256, 192)):
    """Write a synthetic VITON-layout fixture dataset."""
    return write_fixture_dataset(out_dir, n, seed, resolution)


def fabricator_config(cfg: PipelineConfig):
    sec = cfg["fabricator"]
    nets = cfg["nets"]
    return fabricator_mod.FabricatorConfig(
        iterations=sec["iterations"],
        batch_size=sec["batch_size"],
        learning_rate=sec["learning_rate"],
        seed=derive_seed(cfg.seed, "fabricator"),
        mask_params=cfg.mask_params(),
        base_width=nets["base_width"],
        depth=nets["depth"],
        mask_region=cfg["mask"]["region"],
    )


def run_stage(stage, cfg: PipelineConfig, samples, paths, upstream=None):
    """Train one stage and persist its checkpoint(s)."""
    shash = cfg.stage_hash(stage)
    log_path = os.path.join(paths["logs"], f"{stage}.jsonl")
    if stage == "fabricator":
        ckpts = [
            fabricator_mod.train_fabricator(
                samples, fabricator_config(cfg), log_path=log_path, config_hash=shash
            )
        ]
    elif stage == "segmenter":
        ckpts = list(
            stages.train_segmenter(
                samples,
                stages.StagePlan.from_config(cfg, "segmenter"),
                stages.TrainSettings.from_config(cfg, "segmenter"),
                log_path=log_path,
                config_hash=shash,
            )
        )
    elif stage == "warper":
        ckpts = [
            stages.train_warper(
                samples,
                stages.StagePlan.from_config(cfg, "warper"),
                stages.TrainSettings.from_config(cfg, "warper"),
                fabricator_ckpt=upstream["fabricator"][0],
                log_path=log_path,
                config_hash=shash,
            )
        ]
    elif stage == "fuser":
        ckpts = [
            stages.train_fuser(
                samples,
                stages.StagePlan.from_config(cfg, "fuser"),
                stages.TrainSettings.from_config(cfg, "fuser"),
                segmenter_ckpts=upstream["segmenter"],
                warper_ckpt=upstream["warper"][0],
                log_path=log_path,
                config_hash=shash,
            )
        ]
    else:
        raise ValueError(f"unknown stage '{stage}'")
    for fname, ckpt in zip(CKPT_FILES[stage], ckpts):
        save_checkpoint(os.path.join(paths["ckpt"], fname), ckpt)
    return ckpts


def checkpoint_map(paths):
    """Load the four inference checkpoints from an experiment directory."""
    out = {}
    for stage in ("segmenter", "warper", "fuser"):
        ckpts = _load_stage(paths, stage)
        if stage == "segmenter":
            out["segmenter_bp"], out["segmenter_cloth"] = ckpts
        else:
            out[stage] = ckpts[0]
    return out


def run_all(cfg: PipelineConfig, data_root, out_dir, subsets=None, progress=None):
    """Execute fabricator -> segmenter -> warper -> fuser -> evaluate, skipping
    stages whose checkpoints already match their config hash."""
    paths = experiment_dirs(out_dir)
    samples = load_dataset(data_root, "train", resolution=cfg.resolution)
    done = {}
    executed = []
    for stage in stages.STAGE_ORDER:
        shash = cfg.stage_hash(stage)
        if _stage_current(paths, stage, shash):
            done[stage] = _load_stage(paths, stage)
            continue
        if progress:
            progress(f"training {stage}")
        done[stage] = run_stage(stage, cfg, samples, paths, upstream=done)
        executed.append(stage)

    # evaluation (resumable via the hash line in the report)
    eval_hash = cfg.stage_hash("evaluate")
    report_path = paths["report"]
    if os.path.exists(report_path):
        with open(report_path, "r", encoding="utf-8") as f:
            if f"config_hash {eval_hash}" in f.read():
                return {"paths": paths, "executed": executed, "report": report_path}
    if progress:
        progress("evaluating")
    test_samples = load_dataset(data_root, "test", resolution=cfg.resolution)
    ckpts = checkpoint_map(paths)
    pose_radius = cfg["data"]["pose_radius"]
    report = metrics.evaluate(
        test_samples,
        lambda s: stages.infer_tryon(ckpts, s, pose_radius=pose_radius)["i_t"],
        subsets=subsets,
        extractor=metrics.make_feature_extractor(
            cfg["eval"]["features"], cfg["eval"]["inception_weights_path"] or None
        ),
    )
    with open(report_path, "w", encoding="utf-8") as f:
        f.write(f"config_hash {eval_hash}\n")
        f.write(metrics.format_report(report))
    executed.append("evaluate")
    return {"paths": paths, "executed": executed, "report": report_path}
