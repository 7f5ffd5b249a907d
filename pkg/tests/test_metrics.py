import numpy as np
import pytest

from vton.data import synth_fixture, to_metric
from vton.errors import EvaluationError, ShapeError
from vton.metrics import (
    GaussianStats,
    RandomProjectionFeatures,
    evaluate,
    format_report,
    frechet_distance,
    gaussian_stats,
    make_feature_extractor,
    ssim,
)

from .oracles import ssim_reference


def test_ssim_self_and_constant():
    a = np.random.default_rng(0).uniform(0, 1, (3, 32, 32))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-6)
    # constant images at distance d: luminance term only
    x = np.full((1, 32, 32), 0.5)
    y = np.full((1, 32, 32), 0.5)
    assert ssim(x, y) == pytest.approx(1.0, abs=1e-12)
    z = np.zeros((1, 32, 32))
    c1 = 0.01**2
    # mu1=0.5, mu2=0 -> (2*0*0.5 + C1)/(0.25 + C1), cs term is exactly 1
    assert ssim(x, z) == pytest.approx(c1 / (0.25 + c1), abs=1e-9)


def test_ssim_matches_reference(rng):
    a = rng.uniform(0, 1, (3, 40, 36))
    b = np.clip(a + rng.normal(0, 0.2, a.shape), 0, 1)
    assert ssim(a, b) == pytest.approx(ssim_reference(a, b), abs=1e-9)


def test_ssim_shape_mismatch():
    with pytest.raises(ShapeError):
        ssim(np.zeros((3, 32, 32)), np.zeros((3, 32, 16)))


def test_gaussian_stats_unbiased(rng):
    x = rng.standard_normal((50, 4))
    st = gaussian_stats(x)
    np.testing.assert_allclose(st.mean, x.mean(axis=0))
    np.testing.assert_allclose(st.cov, np.cov(x, rowvar=False, ddof=1), atol=1e-12)
    assert st.count == 50
    with pytest.raises(ValueError):
        gaussian_stats(x[:1])


def test_frechet_closed_forms():
    eye = np.eye(3)
    p = GaussianStats(mean=np.zeros(3), cov=eye, count=10)
    assert frechet_distance(p, p) == pytest.approx(0.0, abs=1e-6)
    # equal covariance, mean offset d: distance = ||d||^2
    q = GaussianStats(mean=np.array([2.0, 0.0, 0.0]), cov=eye, count=10)
    assert frechet_distance(p, q) == pytest.approx(4.0, abs=1e-6)
    # zero means, covs I and 4I: 3 + 12 - 2*tr(2I) = 3
    r = GaussianStats(mean=np.zeros(3), cov=4 * eye, count=10)
    assert frechet_distance(p, r) == pytest.approx(3.0, abs=1e-6)
    # 1-D closed form: (s1 - s2)^2 with unit variances 1 and 4 -> (1-2)^2 = 1
    a = GaussianStats(mean=np.zeros(1), cov=np.eye(1), count=10)
    b = GaussianStats(mean=np.zeros(1), cov=4 * np.eye(1), count=10)
    assert frechet_distance(a, b) == pytest.approx(1.0, abs=1e-6)


def test_frechet_symmetry(rng):
    a = rng.standard_normal((40, 5))
    b = rng.standard_normal((40, 5)) * 1.5 + 0.3
    p, q = gaussian_stats(a), gaussian_stats(b)
    assert frechet_distance(p, q) == pytest.approx(frechet_distance(q, p), rel=1e-8)


def test_feature_extractor_modes():
    ext = make_feature_extractor("stub")
    feats = ext([np.zeros((3, 64, 64)), np.ones((3, 64, 64))])
    assert feats.shape == (2, 64)
    again = make_feature_extractor("stub")([np.zeros((3, 64, 64)), np.ones((3, 64, 64))])
    np.testing.assert_array_equal(feats, again)
    with pytest.raises(EvaluationError):
        make_feature_extractor("canonical")
    with pytest.raises(EvaluationError):
        make_feature_extractor("nope")


def test_evaluate_identity_pipeline(fixture_samples):
    report = evaluate(fixture_samples, lambda s: s.person)
    assert report["ssim"]["all"] == pytest.approx(1.0, abs=1e-6)
    assert report["fid"] == pytest.approx(0.0, abs=1e-6)
    assert report["n_samples"] == len(fixture_samples)


def test_evaluate_subsets_and_unknown_ids(fixture_samples):
    ids = [s.id for s in fixture_samples]
    subsets = {"easy": ids[:2], "hard": ids[2:]}
    report = evaluate(fixture_samples, lambda s: s.person, subsets=subsets)
    assert set(report["ssim"]) == {"all", "easy", "hard"}
    easy = np.mean([report["per_sample_ssim"][i] for i in ids[:2]])
    assert report["ssim"]["easy"] == pytest.approx(easy)
    with pytest.raises(EvaluationError, match="unknown ids"):
        evaluate(fixture_samples, lambda s: s.person, subsets={"easy": ["nope"]})


def test_format_report_stable(fixture_samples):
    report = evaluate(fixture_samples, lambda s: s.person)
    text = format_report(report)
    assert text == format_report(report)
    assert "ssim[all]" in text
    assert "fid" in text
    assert text.endswith("\n")
