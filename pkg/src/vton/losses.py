"""Training objectives: conditional adversarial losses, pixelwise cross
entropy, perceptual feature loss, multi-scale structural similarity,
the second-order warp smoothness constraint, L1 reconstruction, and the
per-stage weighted combinations.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import LabelDomainError, LossAssemblyError, NumericalError

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
PERCEPTUAL_LAYER_WEIGHTS = (1 / 32, 1 / 16, 1 / 8, 1 / 4, 1.0)
C1 = 0.01**2
C2 = 0.03**2


@dataclass(frozen=True)
class LossWeights:
    """Per-stage combination coefficients (defaults from the training recipe:
    layout 1/10, warp refinement 0.2/20/15, fusion 1/10)."""

    alpha1: float = 1.0
    alpha2: float = 10.0
    beta1: float = 0.2
    beta2: float = 20.0
    beta3: float = 15.0
    gamma1: float = 1.0
    gamma2: float = 10.0

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "beta1", "beta2", "beta3", "gamma1", "gamma2"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be nonnegative")


def _as_score_list(scores):
    if scores is None:
        return None
    if isinstance(scores, (list, tuple)):
        out = list(scores)
    else:
        out = [scores]
    for s in out:
        if not torch.isfinite(s).all():
            raise NumericalError("numerical: non-finite discriminator scores")
    return out


def adversarial_loss(mode, role, real_scores=None, fake_scores=None):
    """Conditional GAN objective on raw critic scores, averaged over scales.

    vanilla: log-loss on sigmoid(score), with the non-saturating generator
    form -log D(fake). lsgan: least-squares targets 1 (real) / 0 (fake).
    """
    if mode not in ("vanilla", "lsgan"):
        raise ValueError(f"unknown adversarial mode '{mode}'")
    if role not in ("generator", "discriminator"):
        raise ValueError(f"unknown role '{role}'")
    fake = _as_score_list(fake_scores)
    real = _as_score_list(real_scores)
    if fake is None:
        raise ValueError("fake_scores required")
    if role == "discriminator" and real is None:
        raise ValueError("real_scores required for the discriminator role")

    terms = []
    if role == "generator":
        for f in fake:
            if mode == "lsgan":
                terms.append(((f - 1.0) ** 2).mean())
            else:
                terms.append(F.softplus(-f).mean())  # -log sigmoid(f)
    else:
        for r, f in zip(real, fake):
            if mode == "lsgan":
                terms.append(((r - 1.0) ** 2).mean() + (f**2).mean())
            else:
                terms.append(F.softplus(-r).mean() + F.softplus(f).mean())
    return torch.stack(terms).mean()


def cross_entropy_loss(logits, target):
    """Mean per-pixel -log softmax(logits)[target]. Target is an integer
    label map (H, W) or (B, H, W)."""
    if logits.dim() == 3:
        logits = logits.unsqueeze(0)
    if not torch.is_tensor(target):
        target = torch.as_tensor(target)
    if target.dim() == 2:
        target = target.unsqueeze(0)
    target = target.long()
    k = logits.shape[1]
    if target.min() < 0 or target.max() >= k:
        raise LabelDomainError(
            f"label domain: labels must lie in [0, {k - 1}], got "
            f"[{int(target.min())}, {int(target.max())}]"
        )
    return F.cross_entropy(logits, target)


def perceptual_loss(extractor, a, b):
    """Weighted mean absolute feature difference across the extractor's
    depth levels. Inputs are metric-domain images."""
    fa = extractor.extract(a)
    fb = extractor.extract(b)
    total = 0.0
    for w, xa, xb in zip(extractor.weights, fa, fb):
        total = total + w * (xa - xb).abs().mean()
    return total


class RandomConvExtractor(nn.Module):
    """Deterministic frozen random conv stack standing in for pretrained
    classification features; lets the suite run fully offline."""

    def __init__(self, seed=0, weights=PERCEPTUAL_LAYER_WEIGHTS):
        super().__init__()
        self.weights = tuple(weights)
        gen = torch.Generator().manual_seed(seed)
        chans = [3, 8, 16, 32, 64, 64]
        self.convs = nn.ModuleList()
        for cin, cout in zip(chans[:-1], chans[1:]):
            conv = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.normal_(0.0, 1.0 / math.sqrt(cin * 9), generator=gen)
                conv.bias.zero_()
            conv.weight.requires_grad_(False)
            conv.bias.requires_grad_(False)
            self.convs.append(conv)

    def extract(self, x):
        if x.dim() == 3:
            x = x.unsqueeze(0)
        feats = []
        h = x
        for conv in self.convs:
            h = F.relu(conv(h.to(conv.weight.dtype)))
            feats.append(h)
        return feats


class IdentityExtractor:
    """Returns the raw image at every depth; with weights (1,0,0,0,0) the
    perceptual loss reduces to mean absolute pixel difference."""

    def __init__(self, weights=(1.0, 0.0, 0.0, 0.0, 0.0)):
        self.weights = tuple(weights)

    def extract(self, x):
        return [x] * len(self.weights)


class VggExtractor(nn.Module):
    """Pretrained 19-layer classification-network features, loaded from a
    local weights file (acquired out of band)."""

    _SLICES = (2, 7, 12, 21, 30)  # relu1_1 .. relu5_1 boundaries

    def __init__(self, weights_path, weights=PERCEPTUAL_LAYER_WEIGHTS):
        super().__init__()
        from torchvision.models import vgg19

        self.weights = tuple(weights)
        net = vgg19()
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        net.load_state_dict(state)
        self.features = net.features.eval()
        for p in self.features.parameters():
            p.requires_grad_(False)

    def extract(self, x):
        if x.dim() == 3:
            x = x.unsqueeze(0)
        feats, h, prev = [], x, 0
        for end in self._SLICES:
            for layer in self.features[prev:end]:
                h = layer(h)
            feats.append(h)
            prev = end
        return feats


def _gaussian_window(window, sigma, dtype, device):
    half = (window - 1) / 2.0
    coords = torch.arange(window, dtype=dtype, device=device) - half
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    g = g / g.sum()
    return (g[:, None] * g[None, :]).reshape(1, 1, window, window)


def _ssim_maps(a, b, window, sigma):
    """(luminance, contrast-structure) maps via valid windowed statistics."""
    c = a.shape[1]
    win = _gaussian_window(window, sigma, a.dtype, a.device).expand(c, 1, -1, -1)
    mu1 = F.conv2d(a, win, groups=c)
    mu2 = F.conv2d(b, win, groups=c)
    s11 = F.conv2d(a * a, win, groups=c) - mu1**2
    s22 = F.conv2d(b * b, win, groups=c) - mu2**2
    s12 = F.conv2d(a * b, win, groups=c) - mu1 * mu2
    lum = (2 * mu1 * mu2 + C1) / (mu1**2 + mu2**2 + C1)
    cs = (2 * s12 + C2) / (s11 + s22 + C2)
    return lum, cs


def ms_ssim_loss(a, b, scales=5, window=11, sigma=1.5):
    """1 - MS-SSIM with the canonical scale weights; luminance enters only at
    the coarsest scale. Scales auto-reduce (with a warning) on small images.
    """
    if a.dim() == 3:
        a = a.unsqueeze(0)
    if b.dim() == 3:
        b = b.unsqueeze(0)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    min_dim = min(a.shape[-2:])
    usable = 0
    for j in range(scales):
        if min_dim // (2**j) >= window:
            usable = j + 1
    if usable < 1:
        raise ValueError(f"image too small: min dim {min_dim} < window {window}")
    if usable < scales:
        warnings.warn(
            f"ms_ssim_loss: reducing scales {scales} -> {usable} for {tuple(a.shape[-2:])} input"
        )
    w = torch.tensor(MS_SSIM_WEIGHTS[:usable], dtype=a.dtype, device=a.device)
    w = w / w.sum()

    value = torch.ones((), dtype=a.dtype, device=a.device)
    x, y = a, b
    for j in range(usable):
        lum, cs = _ssim_maps(x, y, window, sigma)
        if j == usable - 1:
            value = value * (lum * cs).mean().clamp_min(0.0) ** w[j]
        else:
            value = value * cs.mean().clamp_min(0.0) ** w[j]
            x = F.avg_pool2d(x, 2)
            y = F.avg_pool2d(y, 2)
    return 1.0 - value


def second_order_constraint(control):
    """Sum of squared second differences of the warped lattice positions over
    rows, columns and both diagonals; vanishes exactly for affine warps."""
    from .nets import _lattice

    g = control.grid_size
    if g < 3:
        raise ValueError("grid_size must be >= 3")
    off = control.offsets
    pos = _lattice(g, off.dtype, off.device).reshape(g, g, 2) + off
    inner = slice(1, g - 1)
    row = pos[inner, :-2] - 2 * pos[inner, inner] + pos[inner, 2:]
    col = pos[:-2, inner] - 2 * pos[inner, inner] + pos[2:, inner]
    diag = pos[:-2, :-2] - 2 * pos[inner, inner] + pos[2:, 2:]
    anti = pos[:-2, 2:] - 2 * pos[inner, inner] + pos[2:, :-2]
    total = 0.0
    for d in (row, col, diag, anti):
        total = total + (d**2).sum()
    return total


def l1_loss(a, b):
    """Mean absolute difference."""
    return (a - b).abs().mean()


_FORMULAS = {
    "mask": (("cgan", "alpha1"), ("ce", "alpha2")),
    "refined": (("cgan", "beta1"), ("vgg", "beta2"), ("ms_ssim", "beta3")),
    "fuser": (("cgan", "gamma1"), ("vgg", "gamma2")),
}


def combine(terms, weights=None, formula="mask"):
    """Weighted sum of named loss terms per the stage formula."""
    weights = weights or LossWeights()
    if formula not in _FORMULAS:
        raise LossAssemblyError(f"loss assembly: unknown formula '{formula}'")
    total = 0.0
    for term, wname in _FORMULAS[formula]:
        if term not in terms:
            raise LossAssemblyError(f"loss assembly: formula '{formula}' missing term '{term}'")
        total = total + getattr(weights, wname) * terms[term]
    return total
