"""Pure mask algebra: random occlusion masks for cloth-reconstruction
pretraining, partial-cloth construction, and the compositing equations used
by the final synthesis stage. Everything here is a deterministic function of
its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MaskDomainError, MaskSamplingError, ShapeError

FILL_VALUE = 0.0  # network-domain fill for removed/masked pixels (mid-gray)
MAX_MASK_RETRIES = 64


@dataclass
class OcclusionMaskParams:
    """Sampling ranges for random streak-and-hole occlusion masks.

    All ranges are inclusive. `hole_size`, when given, fixes every hole to an
    exact (h, w) rectangle (used for count-exact tests and debugging).
    """

    n_streaks: tuple = (1, 4)
    streak_width: tuple = (8, 32)
    streak_points: tuple = (3, 6)
    n_holes: tuple = (1, 3)
    hole_area_fraction: tuple = (0.02, 0.12)
    hole_shape: str = "ellipse"  # "ellipse" | "rect"
    hole_size: tuple | None = None
    fraction_bounds: tuple = (0.1, 0.6)


def _draw_disc(canvas, cy, cx, r):
    h, w = canvas.shape
    y0, y1 = max(int(cy - r), 0), min(int(cy + r) + 1, h)
    x0, x1 = max(int(cx - r), 0), min(int(cx + r) + 1, w)
    if y0 >= y1 or x0 >= x1:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1]
    canvas[y0:y1, x0:x1] |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def _draw_streak(canvas, rng, width_px, n_points, bbox):
    y0, x0, y1, x1 = bbox
    pts = np.stack(
        [rng.uniform(y0, y1, size=n_points), rng.uniform(x0, x1, size=n_points)], axis=1
    )
    r = width_px / 2.0
    for (ay, ax), (by, bx) in zip(pts[:-1], pts[1:]):
        steps = max(int(np.hypot(by - ay, bx - ax)), 1)
        for t in np.linspace(0.0, 1.0, steps + 1):
            _draw_disc(canvas, ay + t * (by - ay), ax + t * (bx - ax), r)


def _draw_hole(canvas, rng, params, region_area, bbox):
    y0, x0, y1, x1 = bbox
    if params.hole_size is not None:
        hh, hw = params.hole_size
    else:
        frac = rng.uniform(*params.hole_area_fraction)
        area = max(frac * region_area, 4.0)
        aspect = rng.uniform(0.5, 2.0)
        hh = max(int(round(np.sqrt(area * aspect))), 2)
        hw = max(int(round(area / hh)), 2)
    cy = rng.uniform(y0 + hh / 2, max(y1 - hh / 2, y0 + hh / 2))
    cx = rng.uniform(x0 + hw / 2, max(x1 - hw / 2, x0 + hw / 2))
    t0, t1 = int(round(cy - hh / 2)), int(round(cx - hw / 2))
    t0 = min(max(t0, 0), canvas.shape[0] - hh)
    t1 = min(max(t1, 0), canvas.shape[1] - hw)
    if params.hole_shape == "rect" or params.hole_size is not None:
        canvas[t0 : t0 + hh, t1 : t1 + hw] = True
    else:
        yy, xx = np.mgrid[0 : canvas.shape[0], 0 : canvas.shape[1]]
        canvas |= ((yy - cy) / (hh / 2)) ** 2 + ((xx - cx) / (hw / 2)) ** 2 <= 1.0


def random_cloth_mask(seed, height, width, params=None, region=None):
    """Binary keep-mask (1 = keep, 0 = masked) of random streaks and holes.

    The masked fraction, accounted over `region`'s bounding box (or the full
    frame when region is None), is resampled until it falls inside
    `params.fraction_bounds`. Deterministic in (seed, dims, params).
    """
    params = params or OcclusionMaskParams()
    if height < 64 or width < 64:
        raise ValueError("mask canvas must be at least 64x64")
    if region is not None:
        ys, xs = np.nonzero(region)
        if len(ys) == 0:
            raise MaskSamplingError("mask sampling failed: empty region", seed=seed)
        bbox = (ys.min(), xs.min(), ys.max() + 1, xs.max() + 1)
    else:
        bbox = (0, 0, height, width)
    bbox_area = (bbox[2] - bbox[0]) * (bbox[3] - bbox[1])

    rng = np.random.default_rng(seed)
    lo, hi = params.fraction_bounds
    for _ in range(MAX_MASK_RETRIES):
        masked = np.zeros((height, width), dtype=bool)
        for _ in range(int(rng.integers(params.n_streaks[0], params.n_streaks[1] + 1))):
            wpx = int(rng.integers(params.streak_width[0], params.streak_width[1] + 1))
            npts = int(rng.integers(params.streak_points[0], params.streak_points[1] + 1))
            _draw_streak(masked, rng, wpx, npts, bbox)
        for _ in range(int(rng.integers(params.n_holes[0], params.n_holes[1] + 1))):
            _draw_hole(masked, rng, params, bbox_area, bbox)
        inside = masked[bbox[0] : bbox[2], bbox[1] : bbox[3]]
        frac = inside.sum() / bbox_area
        if lo <= frac <= hi:
            return (~masked).astype(np.float32)
    raise MaskSamplingError(
        f"mask sampling failed: coverage outside [{lo}, {hi}] after "
        f"{MAX_MASK_RETRIES} retries (seed={seed})",
        seed=seed,
    )


def apply_mask(cloth, keep_mask):
    """Zero out masked pixels of a network-domain cloth image.

    Returns (partial_cloth, keep_mask) so the mask can ride along as an extra
    input channel. Idempotent for a fixed mask.
    """
    cloth = np.asarray(cloth)
    keep_mask = np.asarray(keep_mask)
    if cloth.shape[-2:] != keep_mask.shape[-2:]:
        raise ShapeError(f"cloth {cloth.shape} vs mask {keep_mask.shape} spatial mismatch")
    partial = np.where(keep_mask[None, :, :] > 0, cloth, FILL_VALUE).astype(cloth.dtype)
    return partial, keep_mask.astype(np.float32)


def _check_binary(name, m):
    m = np.asarray(m)
    if not np.isin(m, (0, 1)).all():
        raise MaskDomainError(f"mask domain: '{name}' contains values outside {{0, 1}}")
    return m.astype(np.float32)


def compose_body_mask(m_bp, m_oc, m_obp, m_cloth):
    """Composited body-part mask: ((m_bp * m_oc) + m_obp) * (1 - m_cloth).

    The sum is clamped to [0, 1] so overlapping predicted masks still yield a
    binary output; the result is always disjoint from m_cloth.
    """
    m_bp = _check_binary("m_bp", m_bp)
    m_oc = _check_binary("m_oc", m_oc)
    m_obp = _check_binary("m_obp", m_obp)
    m_cloth = _check_binary("m_cloth", m_cloth)
    if not (m_bp.shape == m_oc.shape == m_obp.shape == m_cloth.shape):
        raise ShapeError("compose_body_mask: operand shapes differ")
    comp = np.clip(m_bp * m_oc + m_obp, 0.0, 1.0) * (1.0 - m_cloth)
    return comp.astype(np.float32)


def mask_person_image(person, m_oc, m_cloth):
    """Person image with the worn-clothing region removed.

    Pixels under m_oc or m_cloth are set to the fill value; everything else
    passes through untouched.
    """
    person = np.asarray(person)
    m_oc = _check_binary("m_oc", m_oc)
    m_cloth = _check_binary("m_cloth", m_cloth)
    if person.shape[-2:] != m_oc.shape or m_oc.shape != m_cloth.shape:
        raise ShapeError("mask_person_image: shape mismatch")
    keep = (1.0 - m_oc) * (1.0 - m_cloth)
    out = np.where(keep[None, :, :] > 0, person, FILL_VALUE)
    return out.astype(person.dtype)


def binarize(soft, threshold=0.5):
    """1 where soft > threshold, else 0 (strict inequality breaks ties to 0)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return (np.asarray(soft) > threshold).astype(np.float32)
