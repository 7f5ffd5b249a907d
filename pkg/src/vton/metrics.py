"""Evaluation: windowed SSIM, Fréchet distance between Gaussian feature
statistics, pluggable feature extractors, and the batch evaluation harness
with optional easy/medium/hard subset breakdowns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .data import to_metric
from .errors import EvaluationError, ShapeError
from .losses import C1, C2, _gaussian_window

REPORT_SCHEMA_VERSION = 1
# Full-scale benchmark figures, kept as reference constants in reports;
# not reproducible at desk scale.
REFERENCE_SSIM = 0.886
REFERENCE_FID = 13.46


def ssim(a, b, window=11, sigma=1.5):
    """Channel-averaged structural similarity of two metric-domain images."""
    ta = torch.as_tensor(np.asarray(a), dtype=torch.float64)
    tb = torch.as_tensor(np.asarray(b), dtype=torch.float64)
    if ta.dim() == 2:
        ta, tb = ta.unsqueeze(0), tb.unsqueeze(0)
    if ta.shape != tb.shape:
        raise ShapeError(f"ssim: shape mismatch {tuple(ta.shape)} vs {tuple(tb.shape)}")
    ta, tb = ta.unsqueeze(0), tb.unsqueeze(0)
    c = ta.shape[1]
    win = _gaussian_window(window, sigma, torch.float64, ta.device).expand(c, 1, -1, -1)
    mu1 = F.conv2d(ta, win, groups=c)
    mu2 = F.conv2d(tb, win, groups=c)
    s11 = F.conv2d(ta * ta, win, groups=c) - mu1**2
    s22 = F.conv2d(tb * tb, win, groups=c) - mu2**2
    s12 = F.conv2d(ta * tb, win, groups=c) - mu1 * mu2
    num = (2 * mu1 * mu2 + C1) * (2 * s12 + C2)
    den = (mu1**2 + mu2**2 + C1) * (s11 + s22 + C2)
    return float((num / den).mean())


@dataclass
class GaussianStats:
    mean: np.ndarray  # (D,)
    cov: np.ndarray  # (D, D), symmetric
    count: int


def gaussian_stats(features):
    """Sample mean and unbiased covariance of an N x D feature matrix."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need an N x D matrix with N >= 2")
    mean = x.mean(axis=0)
    cov = np.cov(x, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    return GaussianStats(mean=mean, cov=(cov + cov.T) / 2.0, count=x.shape[0])


def _psd_sqrt(mat):
    """Symmetric PSD square root via eigendecomposition with clipping."""
    sym = (mat + mat.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(p: GaussianStats, q: GaussianStats):
    """||mu_p - mu_q||^2 + Tr(S_p + S_q - 2 (S_p S_q)^{1/2}).

    The cross term uses Tr((S_p^{1/2} S_q S_p^{1/2})^{1/2}), computed by
    eigendecomposition with negative eigenvalues clipped at zero.
    """
    if p.mean.shape != q.mean.shape:
        raise ValueError("feature dimensions differ")
    diff = p.mean - q.mean
    sp_half = _psd_sqrt(p.cov)
    cross = _psd_sqrt(sp_half @ q.cov @ sp_half)
    dist = float(diff @ diff + np.trace(p.cov) + np.trace(q.cov) - 2.0 * np.trace(cross))
    return max(dist, 0.0)


class RandomProjectionFeatures:
    """Deterministic fixed-seed feature extractor: images are pooled to a
    fixed extent and linearly projected. Offline stand-in for pretrained
    embedding features."""

    def __init__(self, seed=0, dim=64, pool=(16, 12)):
        self.dim = dim
        self.pool = pool
        rng = np.random.default_rng(seed)
        self.proj = rng.standard_normal((3 * pool[0] * pool[1], dim)) / np.sqrt(dim)

    def __call__(self, metric_images):
        """metric_images: iterable of (3, H, W) metric-domain arrays -> N x D."""
        rows = []
        for img in metric_images:
            t = torch.as_tensor(np.asarray(img), dtype=torch.float64).unsqueeze(0)
            pooled = F.adaptive_avg_pool2d(t, self.pool).numpy().reshape(-1)
            rows.append(pooled @ self.proj)
        return np.stack(rows)


class InceptionFeatures:
    """Pretrained Inception pool features loaded from a local weights file."""

    def __init__(self, weights_path):
        from torchvision.models import inception_v3

        net = inception_v3(init_weights=False, aux_logits=True)
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        net.load_state_dict(state)
        net.fc = torch.nn.Identity()
        self.net = net.eval()

    @torch.no_grad()
    def __call__(self, metric_images):
        rows = []
        for img in metric_images:
            t = torch.as_tensor(np.asarray(img), dtype=torch.float32).unsqueeze(0)
            t = F.interpolate(t, size=(299, 299), mode="bilinear", align_corners=False)
            rows.append(self.net(t * 2.0 - 1.0).squeeze(0).numpy())
        return np.stack(rows)


def make_feature_extractor(mode, weights_path=None, seed=0):
    if mode == "stub":
        return RandomProjectionFeatures(seed=seed)
    if mode == "canonical":
        if not weights_path:
            raise EvaluationError("canonical features require a weights path")
        return InceptionFeatures(weights_path)
    raise EvaluationError(f"unknown feature mode '{mode}'")


def evaluate(samples, pipeline_fn, subsets=None, extractor=None):
    """Run the pipeline over same-cloth pairs and report SSIM / FID.

    samples: sequence of TryOnSample or lazily-loadable descriptors.
    pipeline_fn: sample -> generated (3, H, W) network-domain image.
    subsets: optional {name: [ids]} for per-subset SSIM rows.
    """
    extractor = extractor or RandomProjectionFeatures()
    loaded = [s.load() if hasattr(s, "load") else s for s in samples]
    ids = [s.id for s in loaded]
    if subsets:
        known = set(ids)
        for name, wanted in subsets.items():
            unknown = [i for i in wanted if i not in known]
            if unknown:
                raise EvaluationError(
                    f"subset '{name}' references unknown ids: {', '.join(unknown)}"
                )

    per_sample_ssim = {}
    gen_metric, real_metric = [], []
    for s in loaded:
        gen = np.asarray(pipeline_fn(s))
        gm, rm = to_metric(gen), to_metric(s.person)
        gen_metric.append(gm)
        real_metric.append(rm)
        per_sample_ssim[s.id] = ssim(gm, rm)

    rows = {"all": float(np.mean([per_sample_ssim[i] for i in ids]))}
    if subsets:
        for name, wanted in subsets.items():
            rows[name] = float(np.mean([per_sample_ssim[i] for i in wanted]))

    if len(loaded) >= 2:
        fid = frechet_distance(
            gaussian_stats(extractor(gen_metric)), gaussian_stats(extractor(real_metric))
        )
    else:
        fid = float("nan")

    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "reference_ssim": REFERENCE_SSIM,
        "reference_fid": REFERENCE_FID,
        "reference_note": "full-scale benchmark figures; not reproducible at desk scale",
        "n_samples": len(loaded),
        "ssim": rows,
        "fid": fid,
        "per_sample_ssim": per_sample_ssim,
    }


def format_report(report):
    """Stable key-value text rendering of an evaluation report."""
    lines = [
        f"schema_version {report['schema_version']}",
        f"reference_ssim {report['reference_ssim']}",
        f"reference_fid {report['reference_fid']}",
        f"reference_note {report['reference_note']}",
        f"n_samples {report['n_samples']}",
        f"fid {report['fid']:.6f}",
    ]
    for name in sorted(report["ssim"]):
        lines.append(f"ssim[{name}] {report['ssim'][name]:.6f}")
    return "\n".join(lines) + "\n"
