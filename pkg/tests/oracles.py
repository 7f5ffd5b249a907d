"""Independent reference implementations used as test oracles.

These are written directly from the defining formulas (numpy/scipy only,
no shared code with the package) so they stay independent of the paths
they check.
"""

import numpy as np
from scipy.signal import convolve

C1 = 0.01**2
C2 = 0.03**2
MS_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def gaussian_kernel_2d(window=11, sigma=1.5):
    half = (window - 1) / 2.0
    x = np.arange(window) - half
    g = np.exp(-(x**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _window_stats(a, b, kernel):
    mu1 = convolve(a, kernel, mode="valid")
    mu2 = convolve(b, kernel, mode="valid")
    s11 = convolve(a * a, kernel, mode="valid") - mu1**2
    s22 = convolve(b * b, kernel, mode="valid") - mu2**2
    s12 = convolve(a * b, kernel, mode="valid") - mu1 * mu2
    return mu1, mu2, s11, s22, s12


def ssim_reference(a, b, window=11, sigma=1.5):
    """Channel-averaged single-scale SSIM, direct formula."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a, b = a[None], b[None]
    kernel = gaussian_kernel_2d(window, sigma)
    vals = []
    for c in range(a.shape[0]):
        mu1, mu2, s11, s22, s12 = _window_stats(a[c], b[c], kernel)
        num = (2 * mu1 * mu2 + C1) * (2 * s12 + C2)
        den = (mu1**2 + mu2**2 + C1) * (s11 + s22 + C2)
        vals.append(num / den)
    return float(np.mean(vals))


def _avg_pool2(x):
    h, w = x.shape[-2:]
    h2, w2 = h // 2, w // 2
    x = x[..., : h2 * 2, : w2 * 2]
    return (
        x[..., 0::2, 0::2] + x[..., 1::2, 0::2] + x[..., 0::2, 1::2] + x[..., 1::2, 1::2]
    ) / 4.0


def ms_ssim_loss_reference(a, b, scales=5, window=11, sigma=1.5):
    """1 - MS-SSIM: product of per-scale mean contrast/structure terms (each
    clipped at 0) with luminance entering only at the coarsest scale; scale
    weights are the canonical five, renormalized when the image only
    supports fewer scales."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a, b = a[None], b[None]
    min_dim = min(a.shape[-2:])
    usable = 0
    for j in range(scales):
        if min_dim // (2**j) >= window:
            usable = j + 1
    if usable < 1:
        raise ValueError("image too small")
    weights = np.asarray(MS_WEIGHTS[:usable])
    weights = weights / weights.sum()
    kernel = gaussian_kernel_2d(window, sigma)

    value = 1.0
    x, y = a, b
    for j in range(usable):
        lum_all, cs_all = [], []
        for c in range(x.shape[0]):
            mu1, mu2, s11, s22, s12 = _window_stats(x[c], y[c], kernel)
            lum_all.append((2 * mu1 * mu2 + C1) / (mu1**2 + mu2**2 + C1))
            cs_all.append((2 * s12 + C2) / (s11 + s22 + C2))
        if j == usable - 1:
            term = max(float(np.mean(np.asarray(lum_all) * np.asarray(cs_all))), 0.0)
        else:
            term = max(float(np.mean(cs_all)), 0.0)
        value *= term ** weights[j]
        x, y = _avg_pool2(x), _avg_pool2(y)
    return 1.0 - value


def composited_mask_scalar(m_bp, m_oc, m_obp, m_cloth):
    """Scalar compositing formula: ((m_bp*m_oc) + m_obp, clamped) * (1 - m_cloth)."""
    return min(max(m_bp * m_oc + m_obp, 0.0), 1.0) * (1.0 - m_cloth)


def masked_person_pixel(value, m_oc, m_cloth, fill=0.0):
    """Region-removal semantics: fill where m_oc or m_cloth covers the pixel."""
    return fill if (m_oc == 1 or m_cloth == 1) else value


def second_diff_sum_reference(positions):
    """Sum of squared second differences over rows, columns and diagonals at
    interior lattice points; `positions` is (G, G, 2)."""
    p = np.asarray(positions, dtype=np.float64)
    g = p.shape[0]
    total = 0.0
    for i in range(1, g - 1):
        for j in range(1, g - 1):
            for di, dj in ((0, 1), (1, 0), (1, 1), (1, -1)):
                d = p[i - di, j - dj] - 2 * p[i, j] + p[i + di, j + dj]
                total += float((d**2).sum())
    return total


def finite_difference_grad(f, x, eps=1e-6):
    """Central-difference gradient of scalar f at x (flat iteration)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += eps
        xm = x.copy()
        xm[idx] -= eps
        grad[idx] = (f(xp) - f(xm)) / (2 * eps)
        it.iternext()
    return grad


def grad_check_coords(f_scalar, tensor, coords, eps=1e-6, rtol=1e-3, atol=1e-8):
    """Check autograd against central differences at the given flat coords.

    f_scalar: callable taking a torch tensor (requires_grad) -> scalar tensor.
    Returns the worst relative error observed.
    """
    import torch

    x = tensor.detach().double().clone().requires_grad_(True)
    out = f_scalar(x)
    out.backward()
    analytic = x.grad.reshape(-1)
    worst = 0.0
    flat = x.detach().reshape(-1)
    for c in coords:
        orig = float(flat[c])
        xp = flat.clone()
        xp[c] = orig + eps
        xm = flat.clone()
        xm[c] = orig - eps
        fp = float(f_scalar(xp.reshape(x.shape)).detach())
        fm = float(f_scalar(xm.reshape(x.shape)).detach())
        numeric = (fp - fm) / (2 * eps)
        a = float(analytic[c])
        denom = max(abs(a), abs(numeric), atol / rtol)
        err = abs(a - numeric) / denom if denom > 0 else 0.0
        worst = max(worst, err)
        assert err < rtol or abs(a - numeric) < atol, (
            f"gradient mismatch at coord {c}: analytic {a}, numeric {numeric}"
        )
    return worst
