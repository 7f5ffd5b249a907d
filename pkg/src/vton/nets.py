"""Parametric function families: residual U-Net generators, the
encoder-decoder reconstruction trunk, multi-scale patch discriminators, and
the thin-plate-spline spatial transformer (control-point regressor, dense
grid solver, differentiable sampler).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError, SingularWarpError

DEFAULT_TPS_GRID = 5
DEFAULT_MAX_OFFSET = 0.4


@dataclass(frozen=True)
class ResidualUNetSpec:
    in_channels: int
    out_channels: int
    base_width: int = 64
    depth: int = 4


@dataclass(frozen=True)
class MultiScaleDiscriminatorSpec:
    condition_channels: int
    candidate_channels: int
    n_scales: int = 2
    base_width: int = 64


class ResBlock(nn.Module):
    """Two 3x3 convs with instance norm and an identity/projection shortcut."""

    def __init__(self, cin, cout):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.norm1 = nn.InstanceNorm2d(cout, affine=True)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.norm2 = nn.InstanceNorm2d(cout, affine=True)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x):
        h = F.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return F.relu(h + self.skip(x))


class ResidualUNetBackbone(nn.Module):
    """U-shaped encoder-decoder of residual blocks; emits base_width channels
    at input resolution."""

    def __init__(self, in_channels, base_width=64, depth=4):
        super().__init__()
        self.depth = depth
        widths = [base_width * 2**i for i in range(depth + 1)]
        self.enc = nn.ModuleList([ResBlock(in_channels, widths[0])])
        for i in range(1, depth + 1):
            self.enc.append(ResBlock(widths[i - 1], widths[i]))
        self.dec = nn.ModuleList(
            [ResBlock(widths[i] + widths[i - 1], widths[i - 1]) for i in range(depth, 0, -1)]
        )

    def forward(self, x):
        h, w = x.shape[-2:]
        div = 2**self.depth
        if h % div or w % div:
            raise ShapeError(
                f"input spatial dims {h}x{w} must be divisible by 2^depth = {div}"
            )
        skips = []
        h = self.enc[0](x)
        for block in self.enc[1:]:
            skips.append(h)
            h = block(F.avg_pool2d(h, 2))
        for block, skip in zip(self.dec, reversed(skips)):
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = block(torch.cat([h, skip], dim=1))
        return h


class ResidualUNet(nn.Module):
    """Backbone plus a 1x1 output head. The output activation (tanh, sigmoid,
    softmax over logits) is chosen by the caller."""

    def __init__(self, spec: ResidualUNetSpec):
        super().__init__()
        self.spec = spec
        self.backbone = ResidualUNetBackbone(spec.in_channels, spec.base_width, spec.depth)
        self.head = nn.Conv2d(spec.base_width, spec.out_channels, 1)

    def forward(self, x):
        return self.head(self.backbone(x))


class PatchDiscriminator(nn.Module):
    """70x70-style patch critic: strided convs, no norm on the first layer."""

    def __init__(self, in_channels, base_width=64, n_layers=3):
        super().__init__()
        layers = [nn.Conv2d(in_channels, base_width, 4, 2, 1), nn.LeakyReLU(0.2)]
        w = base_width
        for _ in range(n_layers - 1):
            layers += [
                nn.Conv2d(w, w * 2, 4, 2, 1),
                nn.InstanceNorm2d(w * 2, affine=True),
                nn.LeakyReLU(0.2),
            ]
            w *= 2
        layers.append(nn.Conv2d(w, 1, 4, 1, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class MultiScaleDiscriminator(nn.Module):
    """Independent patch critics at successively halved resolutions; each
    scores the channel-concatenation of candidate and condition."""

    def __init__(self, spec: MultiScaleDiscriminatorSpec):
        super().__init__()
        self.spec = spec
        cin = spec.candidate_channels + spec.condition_channels
        self.scales = nn.ModuleList(
            [PatchDiscriminator(cin, spec.base_width) for _ in range(spec.n_scales)]
        )

    def forward(self, candidate, condition):
        if candidate.shape[-2:] != condition.shape[-2:]:
            raise ShapeError(
                f"candidate {tuple(candidate.shape[-2:])} vs condition "
                f"{tuple(condition.shape[-2:])} spatial mismatch"
            )
        x = torch.cat([candidate, condition], dim=1)
        outs = []
        for i, critic in enumerate(self.scales):
            outs.append(critic(x))
            if i + 1 < len(self.scales):
                x = F.avg_pool2d(x, 2)
        return outs


# ---------------------------------------------------------------------------
# Thin-plate-spline warping
# ---------------------------------------------------------------------------


@dataclass
class TpsControlGrid:
    """G x G lattice of 2D control-point offsets in normalized coordinates."""

    offsets: torch.Tensor  # (G, G, 2), clamped to [-1, 1]
    grid_size: int = DEFAULT_TPS_GRID

    def __post_init__(self):
        off = torch.as_tensor(self.offsets)
        if off.shape != (self.grid_size, self.grid_size, 2):
            raise ShapeError(
                f"offsets shape {tuple(off.shape)} != ({self.grid_size}, {self.grid_size}, 2)"
            )
        self.offsets = off.clamp(-1.0, 1.0)

    @classmethod
    def identity(cls, grid_size=DEFAULT_TPS_GRID, dtype=torch.float32):
        return cls(offsets=torch.zeros(grid_size, grid_size, 2, dtype=dtype), grid_size=grid_size)


def _lattice(grid_size, dtype, device):
    """(G*G, 2) regular lattice over [-1, 1]^2 in (x, y) order."""
    line = torch.linspace(-1.0, 1.0, grid_size, dtype=dtype, device=device)
    gy, gx = torch.meshgrid(line, line, indexing="ij")
    return torch.stack([gx, gy], dim=-1).reshape(-1, 2)


def _tps_kernel(r2):
    # U(r) = r^2 log r^2, continuous at r = 0
    return torch.where(r2 > 0, r2 * torch.log(r2.clamp_min(1e-38)), torch.zeros_like(r2))


def tps_grid(control: TpsControlGrid, height, width):
    """Dense H x W x 2 sampling grid interpolating lattice -> lattice+offsets.

    Solved with the radial basis U(r) = r^2 log r^2 plus affine terms; the
    interpolant reproduces affine control displacements exactly, so zero
    offsets give the identity grid.
    """
    g = control.grid_size
    if g < 3:
        raise ValueError("grid_size must be >= 3")
    off = control.offsets
    device = off.device
    src = _lattice(g, torch.float64, device)
    dst = src + off.reshape(-1, 2).to(torch.float64)
    n = src.shape[0]

    d2 = torch.cdist(src, src).pow(2)
    k = _tps_kernel(d2)
    p = torch.cat([torch.ones(n, 1, dtype=torch.float64, device=device), src], dim=1)
    top = torch.cat([k, p], dim=1)
    bottom = torch.cat([p.t(), torch.zeros(3, 3, dtype=torch.float64, device=device)], dim=1)
    l_mat = torch.cat([top, bottom], dim=0)
    rhs = torch.cat([dst, torch.zeros(3, 2, dtype=torch.float64, device=device)], dim=0)
    try:
        coef = torch.linalg.solve(l_mat, rhs)
    except Exception as exc:  # singular system
        raise SingularWarpError(f"singular warp: TPS system unsolvable ({exc})") from exc
    if not torch.isfinite(coef).all():
        raise SingularWarpError("singular warp: non-finite TPS coefficients")
    w_coef, a_coef = coef[:n], coef[n:]

    ys = torch.linspace(-1.0, 1.0, height, dtype=torch.float64, device=device)
    xs = torch.linspace(-1.0, 1.0, width, dtype=torch.float64, device=device)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    pts = torch.stack([gx, gy], dim=-1).reshape(-1, 2)
    a = _tps_kernel(torch.cdist(pts, src).pow(2))
    ones = torch.ones(pts.shape[0], 1, dtype=torch.float64, device=device)
    dense = a @ w_coef + torch.cat([ones, pts], dim=1) @ a_coef
    # stay at float64: casting the grid down perturbs border samples enough
    # to bleed zero fill into an identity warp
    return dense.reshape(height, width, 2)


def grid_sample(image, grid):
    """Bilinear resampling through an H x W x 2 normalized grid; out-of-range
    samples read the zero border fill."""
    batched = image.dim() == 4
    img = image if batched else image.unsqueeze(0)
    g = grid if grid.dim() == 4 else grid.unsqueeze(0).expand(img.shape[0], -1, -1, -1)
    # interpolate at float64 so near-integer sample positions stay exact
    out = F.grid_sample(
        img.double(), g.double(), mode="bilinear", padding_mode="zeros", align_corners=True
    ).to(image.dtype)
    return out if batched else out.squeeze(0)


class _ConvFeatures(nn.Module):
    """Four stride-2 conv stages used by the warp regressor's twin encoders."""

    def __init__(self, in_channels, base_width=32):
        super().__init__()
        widths = [base_width, base_width * 2, base_width * 2, base_width * 4]
        layers = []
        cin = in_channels
        for w in widths:
            layers += [
                nn.Conv2d(cin, w, 4, 2, 1),
                nn.InstanceNorm2d(w, affine=True),
                nn.ReLU(),
            ]
            cin = w
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class StnRegressor(nn.Module):
    """Predicts TPS control offsets from the cloth image and the target
    clothing-region mask.

    Twin convolutional encoders feed a feature correlation map, a small conv
    head pools it to a fixed size, and a zero-initialized linear layer
    regresses tanh-bounded offsets — so a fresh regressor starts at the
    identity warp.
    """

    def __init__(self, grid_size=DEFAULT_TPS_GRID, base_width=32, max_offset=DEFAULT_MAX_OFFSET):
        super().__init__()
        self.grid_size = grid_size
        self.max_offset = max_offset
        self.cloth_enc = _ConvFeatures(3, base_width)
        self.mask_enc = _ConvFeatures(1, base_width)
        # correlation channels depend on the encoder output extent, which is
        # resolution dependent; pool the correlation volume to a fixed extent
        # first so the head is resolution independent.
        self.pool_extent = (6, 5)
        corr_ch = self.pool_extent[0] * self.pool_extent[1]
        self.corr_head = nn.Sequential(
            nn.Conv2d(corr_ch, 64, 3, padding=1),
            nn.InstanceNorm2d(64, affine=True),
            nn.ReLU(),
        )
        self.fc = nn.Linear(64 * self.pool_extent[0] * self.pool_extent[1], grid_size**2 * 2)
        nn.init.zeros_(self.fc.weight)
        nn.init.zeros_(self.fc.bias)

    def forward(self, cloth, target_mask):
        batched = cloth.dim() == 4
        c = cloth if batched else cloth.unsqueeze(0)
        m = target_mask
        if m.dim() == 2:
            m = m.unsqueeze(0).unsqueeze(0)
        elif m.dim() == 3:
            m = m.unsqueeze(1) if batched else m.unsqueeze(0)
        fa = F.adaptive_avg_pool2d(self.cloth_enc(c), self.pool_extent)
        fb = F.adaptive_avg_pool2d(self.mask_enc(m.to(c.dtype)), self.pool_extent)
        fa = F.normalize(fa, dim=1)
        fb = F.normalize(fb, dim=1)
        b, ch, hh, ww = fa.shape
        corr = torch.einsum("bcn,bcm->bnm", fa.reshape(b, ch, -1), fb.reshape(b, ch, -1))
        corr = corr.reshape(b, hh * ww, hh, ww)
        h = self.corr_head(corr)
        off = torch.tanh(self.fc(h.flatten(1))) * self.max_offset
        off = off.reshape(b, self.grid_size, self.grid_size, 2)
        if not batched:
            off = off.squeeze(0)
        return off


def control_grid_from_offsets(offsets, grid_size=DEFAULT_TPS_GRID):
    return TpsControlGrid(offsets=offsets, grid_size=grid_size)


def parameter_count(module):
    return sum(p.numel() for p in module.parameters())


def seed_everything(seed):
    torch.manual_seed(seed)


def init_module(module, seed):
    """Deterministically (re)initialize a module's parameters from a seed."""
    gen = torch.Generator().manual_seed(seed)

    def _init(m):
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight.shape[1] * (
                m.weight.shape[2] * m.weight.shape[3] if m.weight.dim() == 4 else 1
            )
            bound = 1.0 / math.sqrt(max(fan_in, 1))
            with torch.no_grad():
                m.weight.uniform_(-bound, bound, generator=gen)
                if m.bias is not None:
                    m.bias.uniform_(-bound, bound, generator=gen)

    module.apply(_init)
    # keep the warp regressor's identity-at-init contract
    if isinstance(module, StnRegressor):
        nn.init.zeros_(module.fc.weight)
        nn.init.zeros_(module.fc.bias)
    return module
