"""Supervised try-on pipeline: layout prediction (two conditional GANs),
constrained TPS warping with transferred reconstruction features, and final
mask-algebra compositing plus synthesis. Each stage has a training loop and
a deterministic inference path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import fabricator as fabricator_mod
from .checkpoint import Checkpoint, load_params_into, state_dict_to_params
from .data import LabelSchema, fuse_body_labels, render_pose_heatmap, to_metric
from .errors import CheckpointMismatchError, DivergenceError, ShapeError, TransferError
from .losses import (
    RandomConvExtractor,
    VggExtractor,
    adversarial_loss,
    combine,
    cross_entropy_loss,
    ms_ssim_loss,
    perceptual_loss,
)
from .losses import second_order_constraint
from .mask_ops import binarize, compose_body_mask, mask_person_image
from .nets import (
    MultiScaleDiscriminator,
    MultiScaleDiscriminatorSpec,
    ResidualUNet,
    ResidualUNetSpec,
    StnRegressor,
    TpsControlGrid,
    grid_sample,
    init_module,
    tps_grid,
)

POSE_CHANNELS = 18
SEG_COND_CHANNELS = 1 + POSE_CHANNELS + 3  # mask + pose heatmap + cloth
FUSER_IN_CHANNELS = 3 + 1 + 1 + 3  # refined cloth + cloth mask + comp mask + masked person

STAGE_ORDER = ("fabricator", "segmenter", "warper", "fuser")


@dataclass
class StagePlan:
    """Architecture and loss settings for one training stage."""

    stage: str
    base_width: int = 64
    depth: int = 4
    disc_scales: int = 2
    disc_width: int = 64
    tps_grid_size: int = 5
    stn_width: int = 32
    max_offset: float = 0.4
    adv_mode: str = "lsgan"
    formula: str = "mask"
    upstream: tuple = ()

    @classmethod
    def from_config(cls, cfg, stage):
        nets = cfg["nets"]
        formula = {"segmenter": "mask", "warper": "refined", "fuser": "fuser"}[stage]
        upstream = {"segmenter": (), "warper": ("fabricator",), "fuser": ("segmenter", "warper")}[
            stage
        ]
        return cls(
            stage=stage,
            base_width=nets["base_width"],
            depth=nets["depth"],
            disc_scales=nets["disc_scales"],
            disc_width=nets["disc_width"],
            tps_grid_size=nets["tps_grid_size"],
            stn_width=nets["stn_width"],
            max_offset=cfg["warp"]["max_offset"],
            adv_mode=cfg["loss"]["adv_mode"],
            formula=formula,
            upstream=upstream,
        )


@dataclass
class TrainSettings:
    iterations: int
    batch_size: int = 4
    learning_rate: float = 2e-4
    seed: int = 0
    pose_radius: int = 4
    weights: object = None  # LossWeights
    perceptual: object = None  # feature extractor

    @classmethod
    def from_config(cls, cfg, stage):
        sec = cfg[stage]
        from .config import derive_seed

        return cls(
            iterations=sec["iterations"],
            batch_size=sec["batch_size"],
            learning_rate=sec["learning_rate"],
            seed=derive_seed(cfg.seed, stage),
            pose_radius=cfg["data"]["pose_radius"],
            weights=cfg.loss_weights(),
            perceptual=make_perceptual(cfg),
        )


def make_perceptual(cfg):
    mode = cfg["loss"]["perceptual"]
    if mode == "stub":
        return RandomConvExtractor(seed=0)
    if mode == "vgg":
        return VggExtractor(cfg["loss"]["vgg_weights_path"])
    raise ValueError(f"unknown perceptual mode '{mode}'")


# ---------------------------------------------------------------------------
# Per-sample tensor preparation
# ---------------------------------------------------------------------------


def stage_inputs(sample, pose_radius=4):
    """All per-sample arrays the training loops consume. For same-cloth
    training pairs the ground-truth target clothing region coincides with the
    worn upper-clothes mask."""
    h, w = sample.parse.shape
    m_oc = sample.parse.clothes_mask()
    return {
        "person": np.asarray(sample.person, dtype=np.float32),
        "cloth": np.asarray(sample.cloth, dtype=np.float32),
        "labels": sample.parse.labels.astype(np.int64),
        "pose": render_pose_heatmap(sample.pose, h, w, pose_radius),
        "m_fused": fuse_body_labels(sample.parse),
        "m_obp": sample.parse.body_part_mask(),
        "m_oc": m_oc,
        "m_cloth_gt": m_oc,
        "m_bp_gt": sample.parse.body_part_mask(),
        "id": sample.id,
    }


def _stack(prepped, key):
    return torch.from_numpy(np.stack([p[key] for p in prepped]))


def _batch_indices(iteration, batch_size, n):
    return [(iteration * batch_size + j) % n for j in range(batch_size)]


class _JsonlLog:
    def __init__(self, path):
        self.f = open(path, "w", encoding="utf-8") if path else None

    def write(self, record):
        if self.f:
            self.f.write(json.dumps(record, sort_keys=True) + "\n")

    def close(self):
        if self.f:
            self.f.close()


def _check_finite(loss, it, stage, snapshot, config_hash, meta):
    if not torch.isfinite(loss):
        raise DivergenceError(
            f"divergence in {stage} at iteration {it}",
            checkpoint=Checkpoint(stage, config_hash, snapshot, meta),
        )


def require_upstream(ckpt, stage, expected_hash=None):
    if ckpt is None:
        raise CheckpointMismatchError(f"checkpoint mismatch: missing upstream stage '{stage}'")
    ckpt.require_stage(stage)
    if expected_hash and ckpt.config_hash and ckpt.config_hash != expected_hash:
        raise CheckpointMismatchError(
            f"checkpoint mismatch: stage '{stage}' config hash differs"
        )
    return ckpt


# ---------------------------------------------------------------------------
# Forward paths
# ---------------------------------------------------------------------------


def predict_body_mask(gp_net, m_fused, pose_hm, cloth, schema=None):
    """Full semantic layout (softmax over K classes) and the body-part mask
    derived from its arm and torso-skin channels."""
    schema = schema or LabelSchema()
    batched = torch.is_tensor(cloth) and cloth.dim() == 4
    mf = torch.as_tensor(np.asarray(m_fused, dtype=np.float32))
    ph = torch.as_tensor(np.asarray(pose_hm, dtype=np.float32))
    tc = torch.as_tensor(np.asarray(cloth, dtype=np.float32)) if not torch.is_tensor(cloth) else cloth
    if not batched:
        mf, ph, tc = mf.unsqueeze(0), ph.unsqueeze(0), tc.unsqueeze(0)
    if mf.dim() == 3:
        mf = mf.unsqueeze(1)
    x = torch.cat([mf, ph, tc], dim=1)
    if x.shape[1] != gp_net.spec.in_channels:
        raise ShapeError(
            f"layout net expects {gp_net.spec.in_channels} channels, got {x.shape[1]}"
        )
    layout = torch.softmax(gp_net(x), dim=1)
    ids = []
    for g in ("left_arm", "right_arm", "torso_skin"):
        ids.extend(schema.ids(g))
    m_bp = binarize(layout[:, ids].sum(dim=1).detach().numpy(), 0.5)
    if not batched:
        layout = layout.squeeze(0)
        m_bp = m_bp[0]
    return layout, m_bp


def predict_cloth_mask(gc_net, m_bp, pose_hm, cloth):
    """Soft target clothing-region map plus its 0.5-binarized mask."""
    batched = torch.is_tensor(cloth) and cloth.dim() == 4
    mb = torch.as_tensor(np.asarray(m_bp, dtype=np.float32))
    ph = torch.as_tensor(np.asarray(pose_hm, dtype=np.float32))
    tc = torch.as_tensor(np.asarray(cloth, dtype=np.float32)) if not torch.is_tensor(cloth) else cloth
    if not batched:
        mb, ph, tc = mb.unsqueeze(0), ph.unsqueeze(0), tc.unsqueeze(0)
    if mb.dim() == 3:
        mb = mb.unsqueeze(1)
    x = torch.cat([mb, ph, tc], dim=1)
    if x.shape[1] != gc_net.spec.in_channels:
        raise ShapeError(
            f"cloth-mask net expects {gc_net.spec.in_channels} channels, got {x.shape[1]}"
        )
    soft = torch.sigmoid(gc_net(x)).squeeze(1)
    hard = binarize(soft.detach().numpy(), 0.5)
    if not batched:
        soft = soft.squeeze(0)
        hard = hard[0]
    return soft, hard


def warp(regressor, cloth, m_cloth):
    """TPS-warp the cloth toward the target clothing region; returns the
    warped cloth and the control grid (for the smoothness constraint)."""
    tc = cloth if torch.is_tensor(cloth) else torch.as_tensor(np.asarray(cloth, dtype=np.float32))
    mc = torch.as_tensor(np.asarray(m_cloth, dtype=np.float32))
    batched = tc.dim() == 4
    offsets = regressor(tc, mc)
    if not batched:
        control = TpsControlGrid(offsets=offsets, grid_size=regressor.grid_size)
        grid = tps_grid(control, tc.shape[-2], tc.shape[-1])
        return grid_sample(tc, grid), control
    warped, controls = [], []
    for b in range(tc.shape[0]):
        control = TpsControlGrid(offsets=offsets[b], grid_size=regressor.grid_size)
        grid = tps_grid(control, tc.shape[-2], tc.shape[-1])
        warped.append(grid_sample(tc[b], grid))
        controls.append(control)
    return torch.stack(warped), controls


def refine(refiner_net, t_warped, m_cloth, force_alpha=None):
    """Refinement network output composited with the warped cloth through a
    learned alpha; masked to the clothing region with zero fill outside."""
    tw = t_warped if torch.is_tensor(t_warped) else torch.as_tensor(np.asarray(t_warped, dtype=np.float32))
    mc = torch.as_tensor(np.asarray(m_cloth, dtype=np.float32))
    batched = tw.dim() == 4
    if not batched:
        tw = tw.unsqueeze(0)
    if mc.dim() == 2:
        mc = mc.unsqueeze(0)
    mcb = mc.unsqueeze(1).to(tw.dtype)
    out = refiner_net(torch.cat([tw, mcb], dim=1))
    rendered = torch.tanh(out[:, :3])
    alpha = torch.sigmoid(out[:, 3:4]) if force_alpha is None else torch.full_like(out[:, 3:4], force_alpha)
    refined = (alpha * tw + (1.0 - alpha) * rendered) * mcb
    if not batched:
        refined = refined.squeeze(0)
        alpha = alpha.squeeze(0)
    return refined, alpha


def fuse(gm_net, t_refined, m_cloth, m_comp, i_nc):
    """Synthesize the final try-on image from the compositing operands."""
    tr = t_refined if torch.is_tensor(t_refined) else torch.as_tensor(np.asarray(t_refined, dtype=np.float32))
    batched = tr.dim() == 4
    mc = torch.as_tensor(np.asarray(m_cloth, dtype=np.float32))
    mp = torch.as_tensor(np.asarray(m_comp, dtype=np.float32))
    nc = i_nc if torch.is_tensor(i_nc) else torch.as_tensor(np.asarray(i_nc, dtype=np.float32))
    if not batched:
        tr, nc = tr.unsqueeze(0), nc.unsqueeze(0)
    if mc.dim() == 2:
        mc, mp = mc.unsqueeze(0), mp.unsqueeze(0)
    x = torch.cat([tr, mc.unsqueeze(1).to(tr.dtype), mp.unsqueeze(1).to(tr.dtype), nc], dim=1)
    if x.shape[1] != gm_net.spec.in_channels:
        raise ShapeError(f"fuser expects {gm_net.spec.in_channels} channels, got {x.shape[1]}")
    out = torch.tanh(gm_net(x))
    return out if batched else out.squeeze(0)


def init_refiner_from_fabricator(fab_ckpt: Checkpoint):
    """Build the 4-out refiner with the reconstruction trunk transferred by
    name; the output head (3 vs 4 channels) is freshly initialized."""
    fab_ckpt.require_stage(fabricator_mod.STAGE)
    bw, depth = fab_ckpt.meta["base_width"], fab_ckpt.meta["depth"]
    refiner = ResidualUNet(ResidualUNetSpec(4, 4, bw, depth))
    init_module(refiner, 7)
    trunk_names = {k for k in fab_ckpt.params if k.startswith("backbone.")}
    expected = {"backbone." + k for k in refiner.backbone.state_dict()}
    if trunk_names != expected:
        raise TransferError(
            "transfer incompatibility: trunk parameter names differ",
            names=sorted(trunk_names.symmetric_difference(expected)),
        )
    load_params_into(
        refiner.backbone, {k[len("backbone."):]: v for k, v in fab_ckpt.params.items() if k in trunk_names}
    )
    fresh = sorted("head." + k for k in refiner.head.state_dict())
    return refiner, sorted(trunk_names), fresh


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------


def _build_seg_nets(plan, n_labels, out_channels, seed):
    gen = init_module(
        ResidualUNet(ResidualUNetSpec(SEG_COND_CHANNELS, out_channels, plan.base_width, plan.depth)),
        seed,
    )
    disc = init_module(
        MultiScaleDiscriminator(
            MultiScaleDiscriminatorSpec(
                condition_channels=SEG_COND_CHANNELS,
                candidate_channels=out_channels,
                n_scales=plan.disc_scales,
                base_width=plan.disc_width,
            )
        ),
        seed + 1,
    )
    return gen, disc


def train_segmenter(samples, plan: StagePlan, settings: TrainSettings, log_path=None, config_hash=""):
    """Train the layout CGAN then the cloth-region CGAN (sequentially), each
    with weighted adversarial + pixelwise cross-entropy objectives."""
    prepped = [stage_inputs(s.load() if hasattr(s, "load") else s, settings.pose_radius) for s in samples]
    n = len(prepped)
    n_labels = int(max(p["labels"].max() for p in prepped)) + 1
    n_labels = max(n_labels, LabelSchema().n_labels)
    torch.manual_seed(settings.seed)

    meta = {
        "base_width": plan.base_width,
        "depth": plan.depth,
        "disc_scales": plan.disc_scales,
        "disc_width": plan.disc_width,
        "n_labels": n_labels,
    }
    log = _JsonlLog(log_path)
    ckpts = []
    try:
        for which in ("bp", "cloth"):
            out_ch = n_labels if which == "bp" else 1
            gen, disc = _build_seg_nets(plan, n_labels, out_ch, settings.seed + (0 if which == "bp" else 100))
            g_opt = torch.optim.Adam(gen.parameters(), lr=settings.learning_rate, betas=(0.5, 0.999))
            d_opt = torch.optim.Adam(disc.parameters(), lr=settings.learning_rate, betas=(0.5, 0.999))
            snapshot = {"gen/" + k: v for k, v in state_dict_to_params(gen).items()}
            for it in range(settings.iterations):
                idx = _batch_indices(it, settings.batch_size, n)
                batch = [prepped[i] for i in idx]
                pose = _stack(batch, "pose")
                cloth = _stack(batch, "cloth")
                if which == "bp":
                    cond_mask = _stack(batch, "m_fused").unsqueeze(1)
                    target_labels = _stack(batch, "labels")
                    real = torch.from_numpy(
                        np.stack([np.eye(n_labels, dtype=np.float32)[p["labels"]] for p in batch])
                    ).permute(0, 3, 1, 2)
                else:
                    cond_mask = _stack(batch, "m_bp_gt").unsqueeze(1)
                    target_mask = _stack(batch, "m_cloth_gt")
                    real = target_mask.unsqueeze(1)
                cond = torch.cat([cond_mask, pose, cloth], dim=1)
                logits = gen(cond)
                fake = torch.softmax(logits, dim=1) if which == "bp" else torch.sigmoid(logits)

                d_loss = adversarial_loss(
                    plan.adv_mode,
                    "discriminator",
                    real_scores=disc(real, cond),
                    fake_scores=disc(fake.detach(), cond),
                )
                d_opt.zero_grad()
                d_loss.backward()
                d_opt.step()

                l_cgan = adversarial_loss(plan.adv_mode, "generator", fake_scores=disc(fake, cond))
                if which == "bp":
                    l_ce = cross_entropy_loss(logits, target_labels)
                else:
                    l_ce = F.binary_cross_entropy_with_logits(logits.squeeze(1), target_mask)
                g_loss = combine({"cgan": l_cgan, "ce": l_ce}, settings.weights, formula=plan.formula)
                _check_finite(g_loss + d_loss, it, f"segmenter_{which}", snapshot, config_hash, meta)
                g_opt.zero_grad()
                g_loss.backward()
                g_opt.step()
                if it % 25 == 0 or it == settings.iterations - 1:
                    snapshot = {
                        **{"gen/" + k: v for k, v in state_dict_to_params(gen).items()},
                        **{"disc/" + k: v for k, v in state_dict_to_params(disc).items()},
                    }
                log.write(
                    {
                        "net": which,
                        "iteration": it,
                        "d_loss": float(d_loss.detach()),
                        "g_loss": float(g_loss.detach()),
                        "cgan": float(l_cgan.detach()),
                        "ce": float(l_ce.detach()),
                    }
                )
            ckpts.append(
                Checkpoint(stage=f"segmenter_{which}", config_hash=config_hash, params=snapshot, meta=meta)
            )
    finally:
        log.close()
    return tuple(ckpts)


def train_warper(
    samples,
    plan: StagePlan,
    settings: TrainSettings,
    fabricator_ckpt: Checkpoint,
    log_path=None,
    config_hash="",
):
    """Train the TPS regressor (adversarial + second-order smoothness, summed
    unweighted) jointly with the transferred refinement network (weighted
    adversarial + perceptual + multi-scale structural objectives), supervised
    by the ground-truth worn-cloth region."""
    require_upstream(fabricator_ckpt, fabricator_mod.STAGE)
    prepped = [stage_inputs(s.load() if hasattr(s, "load") else s, settings.pose_radius) for s in samples]
    n = len(prepped)
    torch.manual_seed(settings.seed)

    refiner, transferred, fresh = init_refiner_from_fabricator(fabricator_ckpt)
    regressor = init_module(
        StnRegressor(plan.tps_grid_size, plan.stn_width, plan.max_offset), settings.seed + 1
    )
    disc = init_module(
        MultiScaleDiscriminator(
            MultiScaleDiscriminatorSpec(
                condition_channels=4,  # cloth + target region mask
                candidate_channels=3,
                n_scales=plan.disc_scales,
                base_width=plan.disc_width,
            )
        ),
        settings.seed + 2,
    )
    g_opt = torch.optim.Adam(
        list(regressor.parameters()) + list(refiner.parameters()),
        lr=settings.learning_rate,
        betas=(0.5, 0.999),
    )
    d_opt = torch.optim.Adam(disc.parameters(), lr=settings.learning_rate, betas=(0.5, 0.999))

    meta = {
        "base_width": fabricator_ckpt.meta["base_width"],
        "depth": fabricator_ckpt.meta["depth"],
        "tps_grid_size": plan.tps_grid_size,
        "stn_width": plan.stn_width,
        "max_offset": plan.max_offset,
        "disc_scales": plan.disc_scales,
        "disc_width": plan.disc_width,
        "transferred": transferred,
        "fresh": fresh,
    }

    def _snapshot():
        return {
            **{"stn/" + k: v for k, v in state_dict_to_params(regressor).items()},
            **{"refiner/" + k: v for k, v in state_dict_to_params(refiner).items()},
            **{"disc/" + k: v for k, v in state_dict_to_params(disc).items()},
        }

    log = _JsonlLog(log_path)
    snapshot = _snapshot()
    try:
        for it in range(settings.iterations):
            idx = _batch_indices(it, settings.batch_size, n)
            batch = [prepped[i] for i in idx]
            cloth = _stack(batch, "cloth")
            m_cloth = _stack(batch, "m_cloth_gt")
            person = _stack(batch, "person")
            real = person * m_cloth.unsqueeze(1)  # worn-cloth region, zero fill
            cond = torch.cat([cloth, m_cloth.unsqueeze(1)], dim=1)

            t_warped, controls = warp(regressor, cloth, m_cloth)
            t_refined, _ = refine(refiner, t_warped, m_cloth)

            d_loss = adversarial_loss(
                plan.adv_mode,
                "discriminator",
                real_scores=disc(real, cond),
                fake_scores=disc(t_refined.detach(), cond),
            )
            d_opt.zero_grad()
            d_loss.backward()
            d_opt.step()

            stn_cgan = adversarial_loss(plan.adv_mode, "generator", fake_scores=disc(t_warped, cond))
            smooth = sum(second_order_constraint(c) for c in controls) / len(controls)
            stn_loss = stn_cgan + smooth

            l_cgan = adversarial_loss(plan.adv_mode, "generator", fake_scores=disc(t_refined, cond))
            l_vgg = perceptual_loss(settings.perceptual, to_metric(t_refined), to_metric(real))
            l_ms = ms_ssim_loss(to_metric(t_refined), to_metric(real))
            ref_loss = combine(
                {"cgan": l_cgan, "vgg": l_vgg, "ms_ssim": l_ms}, settings.weights, formula=plan.formula
            )
            g_loss = stn_loss + ref_loss
            _check_finite(g_loss + d_loss, it, "warper", snapshot, config_hash, meta)
            g_opt.zero_grad()
            g_loss.backward()
            g_opt.step()
            if it % 25 == 0 or it == settings.iterations - 1:
                snapshot = _snapshot()
            log.write(
                {
                    "iteration": it,
                    "d_loss": float(d_loss.detach()),
                    "g_loss": float(g_loss.detach()),
                    "stn_cgan": float(stn_cgan.detach()),
                    "smooth": float(smooth.detach()),
                    "cgan": float(l_cgan.detach()),
                    "vgg": float(l_vgg.detach()),
                    "ms_ssim": float(l_ms.detach()),
                }
            )
    finally:
        log.close()
    return Checkpoint(stage="warper", config_hash=config_hash, params=snapshot, meta=meta)


def _load_warper(ckpt):
    ckpt.require_stage("warper")
    m = ckpt.meta
    regressor = StnRegressor(m["tps_grid_size"], m["stn_width"], m["max_offset"])
    refiner = ResidualUNet(ResidualUNetSpec(4, 4, m["base_width"], m["depth"]))
    load_params_into(
        regressor, {k[len("stn/"):]: v for k, v in ckpt.params.items() if k.startswith("stn/")}
    )
    load_params_into(
        refiner,
        {k[len("refiner/"):]: v for k, v in ckpt.params.items() if k.startswith("refiner/")},
    )
    regressor.eval()
    refiner.eval()
    return regressor, refiner


def _load_seg_net(ckpt, which):
    ckpt.require_stage(f"segmenter_{which}")
    m = ckpt.meta
    out_ch = m["n_labels"] if which == "bp" else 1
    net = ResidualUNet(ResidualUNetSpec(SEG_COND_CHANNELS, out_ch, m["base_width"], m["depth"]))
    load_params_into(
        net, {k[len("gen/"):]: v for k, v in ckpt.params.items() if k.startswith("gen/")}
    )
    net.eval()
    return net


def _load_fuser(ckpt):
    ckpt.require_stage("fuser")
    m = ckpt.meta
    net = ResidualUNet(ResidualUNetSpec(FUSER_IN_CHANNELS, 3, m["base_width"], m["depth"]))
    load_params_into(
        net, {k[len("gen/"):]: v for k, v in ckpt.params.items() if k.startswith("gen/")}
    )
    net.eval()
    return net


def train_fuser(
    samples,
    plan: StagePlan,
    settings: TrainSettings,
    segmenter_ckpts,
    warper_ckpt: Checkpoint,
    log_path=None,
    config_hash="",
):
    """Train the synthesis CGAN on compositing operands built with the mask
    algebra (composited body mask, clothing-removed person image) and the
    frozen warper's refined cloth; supervision target is the person image."""
    require_upstream(segmenter_ckpts[0], "segmenter_bp")
    require_upstream(segmenter_ckpts[1], "segmenter_cloth")
    require_upstream(warper_ckpt, "warper")
    regressor, refiner = _load_warper(warper_ckpt)
    prepped = [stage_inputs(s.load() if hasattr(s, "load") else s, settings.pose_radius) for s in samples]
    n = len(prepped)
    torch.manual_seed(settings.seed)

    # precompute frozen-warper outputs and mask-algebra operands (all ground
    # truth masks: teacher forcing)
    with torch.no_grad():
        for p in prepped:
            t_warped, _ = warp(regressor, p["cloth"], p["m_cloth_gt"])
            t_refined, _ = refine(refiner, t_warped, p["m_cloth_gt"])
            p["t_refined"] = t_refined.numpy()
            p["m_comp"] = compose_body_mask(
                p["m_bp_gt"], p["m_oc"], p["m_obp"], p["m_cloth_gt"]
            )
            p["i_nc"] = mask_person_image(p["person"], p["m_oc"], p["m_cloth_gt"])

    gen = init_module(
        ResidualUNet(ResidualUNetSpec(FUSER_IN_CHANNELS, 3, plan.base_width, plan.depth)),
        settings.seed,
    )
    disc = init_module(
        MultiScaleDiscriminator(
            MultiScaleDiscriminatorSpec(
                condition_channels=1 + 1 + 3,  # cloth mask + comp mask + masked person
                candidate_channels=3,
                n_scales=plan.disc_scales,
                base_width=plan.disc_width,
            )
        ),
        settings.seed + 1,
    )
    g_opt = torch.optim.Adam(gen.parameters(), lr=settings.learning_rate, betas=(0.5, 0.999))
    d_opt = torch.optim.Adam(disc.parameters(), lr=settings.learning_rate, betas=(0.5, 0.999))
    meta = {
        "base_width": plan.base_width,
        "depth": plan.depth,
        "disc_scales": plan.disc_scales,
        "disc_width": plan.disc_width,
    }

    def _snapshot():
        return {
            **{"gen/" + k: v for k, v in state_dict_to_params(gen).items()},
            **{"disc/" + k: v for k, v in state_dict_to_params(disc).items()},
        }

    log = _JsonlLog(log_path)
    snapshot = _snapshot()
    try:
        for it in range(settings.iterations):
            idx = _batch_indices(it, settings.batch_size, n)
            batch = [prepped[i] for i in idx]
            person = _stack(batch, "person")
            t_refined = _stack(batch, "t_refined")
            m_cloth = _stack(batch, "m_cloth_gt")
            m_comp = _stack(batch, "m_comp")
            i_nc = _stack(batch, "i_nc")
            cond = torch.cat([m_cloth.unsqueeze(1), m_comp.unsqueeze(1), i_nc], dim=1)

            i_t = fuse(gen, t_refined, m_cloth, m_comp, i_nc)

            d_loss = adversarial_loss(
                plan.adv_mode,
                "discriminator",
                real_scores=disc(person, cond),
                fake_scores=disc(i_t.detach(), cond),
            )
            d_opt.zero_grad()
            d_loss.backward()
            d_opt.step()

            l_cgan = adversarial_loss(plan.adv_mode, "generator", fake_scores=disc(i_t, cond))
            l_vgg = perceptual_loss(settings.perceptual, to_metric(i_t), to_metric(person))
            g_loss = combine({"cgan": l_cgan, "vgg": l_vgg}, settings.weights, formula=plan.formula)
            _check_finite(g_loss + d_loss, it, "fuser", snapshot, config_hash, meta)
            g_opt.zero_grad()
            g_loss.backward()
            g_opt.step()
            if it % 25 == 0 or it == settings.iterations - 1:
                snapshot = _snapshot()
            log.write(
                {
                    "iteration": it,
                    "d_loss": float(d_loss.detach()),
                    "g_loss": float(g_loss.detach()),
                    "cgan": float(l_cgan.detach()),
                    "vgg": float(l_vgg.detach()),
                }
            )
    finally:
        log.close()
    return Checkpoint(stage="fuser", config_hash=config_hash, params=snapshot, meta=meta)


# ---------------------------------------------------------------------------
# End-to-end inference
# ---------------------------------------------------------------------------


def infer_tryon(checkpoints, sample, target_cloth=None, pose_radius=4, schema=None):
    """Run the full pipeline with predicted (not ground-truth) masks.

    `checkpoints` maps {segmenter_bp, segmenter_cloth, warper, fuser} to
    loaded checkpoints. The parse is used only for the input-state masks
    (fused body map, original body parts, worn clothing); the target clothing
    region and new body layout are predicted.
    """
    for name in ("segmenter_bp", "segmenter_cloth", "warper", "fuser"):
        require_upstream(checkpoints.get(name), name)
    schema = schema or LabelSchema()
    gp = _load_seg_net(checkpoints["segmenter_bp"], "bp")
    gc = _load_seg_net(checkpoints["segmenter_cloth"], "cloth")
    regressor, refiner = _load_warper(checkpoints["warper"])
    gm = _load_fuser(checkpoints["fuser"])

    person = np.asarray(sample.person, dtype=np.float32)
    cloth = np.asarray(target_cloth if target_cloth is not None else sample.cloth, dtype=np.float32)
    h, w = person.shape[-2:]
    pose_hm = render_pose_heatmap(sample.pose, h, w, pose_radius)
    m_fused = fuse_body_labels(sample.parse)
    m_obp = sample.parse.body_part_mask()
    m_oc = sample.parse.clothes_mask()

    with torch.no_grad():
        layout, m_bp = predict_body_mask(gp, m_fused, pose_hm, cloth, schema)
        _, m_cloth = predict_cloth_mask(gc, m_bp, pose_hm, cloth)
        t_warped, control = warp(regressor, cloth, m_cloth)
        t_refined, _ = refine(refiner, t_warped, m_cloth)
        m_comp = compose_body_mask(m_bp, m_oc, m_obp, m_cloth)
        i_nc = mask_person_image(person, m_oc, m_cloth)
        i_t = fuse(gm, t_refined, m_cloth, m_comp, i_nc)

    return {
        "layout": layout.numpy(),
        "m_bp": m_bp,
        "m_cloth": m_cloth,
        "t_warped": t_warped.numpy(),
        "t_refined": t_refined.numpy(),
        "m_comp": m_comp,
        "i_nc": i_nc,
        "i_t": i_t.numpy(),
        "control": control,
    }
