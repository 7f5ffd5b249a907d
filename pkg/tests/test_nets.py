import numpy as np
import pytest
import torch

from vton.errors import ShapeError, SingularWarpError
from vton.nets import (
    MultiScaleDiscriminator,
    MultiScaleDiscriminatorSpec,
    ResidualUNet,
    ResidualUNetSpec,
    StnRegressor,
    TpsControlGrid,
    grid_sample,
    init_module,
    parameter_count,
    tps_grid,
)


def small_unet(cin=4, cout=3):
    return ResidualUNet(ResidualUNetSpec(cin, cout, base_width=8, depth=2))


def test_unet_shapes_and_divisibility():
    net = small_unet()
    y = net(torch.zeros(2, 4, 32, 24))
    assert y.shape == (2, 3, 32, 24)
    with pytest.raises(ShapeError, match="divisible"):
        net(torch.zeros(1, 4, 30, 24))


def test_unet_backbone_head_split():
    net = small_unet()
    names = dict(net.named_parameters())
    assert any(n.startswith("backbone.") for n in names)
    assert any(n.startswith("head.") for n in names)
    feats = net.backbone(torch.zeros(1, 4, 16, 16))
    assert feats.shape == (1, 8, 16, 16)


def test_init_module_deterministic():
    a = init_module(small_unet(), 7)
    b = init_module(small_unet(), 7)
    c = init_module(small_unet(), 8)
    for (na, pa), (_, pb), (_, pc) in zip(
        a.named_parameters(), b.named_parameters(), c.named_parameters()
    ):
        assert torch.equal(pa, pb), na
    assert any(
        not torch.equal(pa, pc)
        for (_, pa), (_, pc) in zip(a.named_parameters(), c.named_parameters())
    )


def test_discriminator_scales_and_shape_check():
    disc = MultiScaleDiscriminator(
        MultiScaleDiscriminatorSpec(condition_channels=4, candidate_channels=3, base_width=8)
    )
    outs = disc(torch.zeros(2, 3, 64, 64), torch.zeros(2, 4, 64, 64))
    assert len(outs) == 2
    assert outs[0].shape[-2:] != outs[1].shape[-2:]
    with pytest.raises(ShapeError):
        disc(torch.zeros(1, 3, 64, 64), torch.zeros(1, 4, 32, 32))


def test_discriminator_first_layer_has_no_norm():
    disc = MultiScaleDiscriminator(
        MultiScaleDiscriminatorSpec(condition_channels=1, candidate_channels=1, base_width=8)
    )
    first = disc.scales[0].net
    assert isinstance(first[0], torch.nn.Conv2d)
    assert not isinstance(first[1], torch.nn.InstanceNorm2d)


def test_tps_identity_grid():
    control = TpsControlGrid.identity()
    grid = tps_grid(control, 40, 30)
    ys = torch.linspace(-1, 1, 40)
    xs = torch.linspace(-1, 1, 30)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    expect = torch.stack([gx, gy], dim=-1)
    assert (grid - expect).abs().max() < 1e-6


def test_tps_affine_reproduction():
    # offsets that are an affine function of lattice position must be
    # reproduced exactly by the interpolant (affine term absorbs them)
    g = 5
    line = torch.linspace(-1, 1, g, dtype=torch.float64)
    gy, gx = torch.meshgrid(line, line, indexing="ij")
    a = torch.tensor([[0.1, -0.05], [0.02, 0.08]], dtype=torch.float64)
    b = torch.tensor([0.03, -0.02], dtype=torch.float64)
    off = torch.stack([gx, gy], dim=-1) @ a.T + b
    grid = tps_grid(TpsControlGrid(offsets=off), 32, 32)
    ys = torch.linspace(-1, 1, 32, dtype=torch.float64)
    gy2, gx2 = torch.meshgrid(ys, ys, indexing="ij")
    pts = torch.stack([gx2, gy2], dim=-1)
    expect = pts + pts @ a.T + b
    assert (grid - expect).abs().max() < 1e-5


def test_tps_clamps_offsets():
    off = torch.full((5, 5, 2), 3.0)
    control = TpsControlGrid(offsets=off)
    assert control.offsets.max() <= 1.0


def test_tps_bad_shape_and_singular():
    with pytest.raises(ShapeError):
        TpsControlGrid(offsets=torch.zeros(4, 4, 2))
    with pytest.raises(ValueError):
        tps_grid(TpsControlGrid(offsets=torch.zeros(2, 2, 2), grid_size=2), 8, 8)


def test_grid_sample_identity_and_shift():
    img = torch.rand(3, 16, 12)
    grid = tps_grid(TpsControlGrid.identity(), 16, 12)
    out = grid_sample(img, grid)
    assert (out - img).abs().max() < 1e-6
    # integer-pixel horizontal shift: sample one column to the right
    shift = grid.clone()
    shift[..., 0] += 2.0 / (12 - 1)
    out = grid_sample(img, shift)
    assert (out[:, :, :-1] - img[:, :, 1:]).abs().max() < 1e-6
    # out-of-range reads hit the zero border
    assert out[:, :, -1].abs().max() < 1e-6


def test_stn_identity_at_init():
    stn = StnRegressor(base_width=8)
    off = stn(torch.rand(2, 3, 64, 64), torch.rand(2, 1, 64, 64))
    assert off.shape == (2, 5, 5, 2)
    assert off.abs().max() == 0.0
    # stays identity after the shared deterministic init pass
    init_module(stn, 3)
    off = stn(torch.rand(1, 3, 64, 64), torch.rand(1, 1, 64, 64))
    assert off.abs().max() == 0.0


def test_stn_offsets_bounded_after_training_step():
    stn = StnRegressor(base_width=8, max_offset=0.4)
    init_module(stn, 0)
    with torch.no_grad():
        stn.fc.weight.normal_(0, 5.0)
        stn.fc.bias.normal_(0, 5.0)
    off = stn(torch.rand(1, 3, 64, 64), torch.rand(1, 1, 64, 64))
    assert off.abs().max() <= 0.4


def test_parameter_count():
    net = small_unet()
    assert parameter_count(net) == sum(p.numel() for p in net.parameters())
