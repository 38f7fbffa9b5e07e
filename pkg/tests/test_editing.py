import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from olr.decoder import DecoderModel
from olr.editing import (RIDGE, Edit, apply_edit, edit_and_decode, edit_vector, fit_all,
                         fit_gaussian, parse_edit, sample_attribute)
from olr.siamese import SiameseConfig, SiameseModel


def textbook_fit(rows):
    n = len(rows)
    mu = [sum(r[i] for r in rows) / n for i in range(len(rows[0]))]
    cov = [[sum((r[i] - mu[i]) * (r[j] - mu[j]) for r in rows) / n for j in range(len(mu))]
           for i in range(len(mu))]
    return np.array(mu), np.array(cov)


def _single_label(rows):
    e = np.asarray(rows)[:, None, :]
    return e, np.ones((len(rows), 1), np.int8)


def test_fit_matches_two_pass_oracle(rng):
    rows = rng.standard_normal((50, 4)) * [1, 2, 3, 4] + [5, -1, 0, 2]
    g = fit_gaussian(*_single_label(rows), 0)
    mu, cov = textbook_fit(rows.tolist())
    np.testing.assert_allclose(g.mean, mu, atol=1e-10)
    np.testing.assert_allclose(g.covariance, cov, atol=1e-10)
    assert np.abs(g.covariance - g.covariance.T).max() <= 1e-12
    np.testing.assert_allclose(g.chol @ g.chol.T, g.covariance + RIDGE * np.eye(4), atol=1e-8)
    assert g.count == 50


def test_fit_uses_only_positive_images(rng):
    e = rng.standard_normal((10, 2, 3))
    y = np.zeros((10, 2), np.int8)
    y[[1, 4], 1] = 1
    g = fit_gaussian(e, y, 1)
    np.testing.assert_allclose(g.mean, e[[1, 4], 1].mean(axis=0))


def test_single_sample_fit():
    v = np.array([1.0, -2.0, 0.5])
    g = fit_gaussian(*_single_label([v]), 0)
    np.testing.assert_array_equal(g.mean, v)
    np.testing.assert_allclose(g.covariance, 0, atol=1e-15)
    np.testing.assert_allclose(g.chol, np.sqrt(RIDGE) * np.eye(3), atol=1e-15)


def test_symmetric_pair_fit():
    u = np.array([1.0, 2.0])
    g = fit_gaussian(*_single_label([u, -u]), 0)
    np.testing.assert_allclose(g.mean, 0, atol=1e-15)
    np.testing.assert_allclose(g.covariance, np.outer(u, u))


def test_no_positives_names_label(rng):
    with pytest.raises(ValueError, match="label 1"):
        fit_gaussian(rng.standard_normal((3, 2, 2)), np.zeros((3, 2)), 1)
    assert list(fit_all(rng.standard_normal((3, 2, 2)), np.array([[1, 0]] * 3))) == [0]


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 100), st.integers(0, 2**31))
def test_scaling_identity_is_exact(s, seed):
    rng = np.random.default_rng(seed)
    g = fit_gaussian(*_single_label(rng.standard_normal((8, 4))), 0)
    assert np.array_equal(sample_attribute(g, s, seed), s * sample_attribute(g, 1.0, seed))


def test_sample_mean_within_clt_bound(rng):
    rows = rng.standard_normal((30, 3)) * [0.5, 1, 2]
    g = fit_gaussian(*_single_label(rows), 0)
    samples = np.stack([sample_attribute(g, 1.0, i) for i in range(10_000)])
    sigma = np.sqrt(np.diag(g.covariance + RIDGE * np.eye(3)))
    assert (np.abs(samples.mean(axis=0) - g.mean) < 4 * sigma.max() / 100).all()


def test_degenerate_gaussian_samples_near_mean():
    g = fit_gaussian(*_single_label([[1.0, 2.0]]), 0)
    x = sample_attribute(g, 1.0, 3)
    z = np.random.default_rng(3).standard_normal(2)
    assert np.linalg.norm(x - g.mean) <= np.sqrt(RIDGE) * np.linalg.norm(z) + 1e-15


def test_sample_scale_must_be_positive(rng):
    g = fit_gaussian(*_single_label(rng.standard_normal((3, 2))), 0)
    with pytest.raises(ValueError):
        sample_attribute(g, 0.0, 0)


def test_apply_edit_is_row_local(rng):
    e = rng.standard_normal((5, 4))
    v = rng.standard_normal(4)
    out = apply_edit(e, 2, v)
    diff = np.any(out != e, axis=1)
    assert diff.tolist() == [False, False, True, False, False]
    np.testing.assert_array_equal(out[2], v)
    removed = apply_edit(out, 2)
    assert not removed[2].any()
    np.testing.assert_array_equal(np.delete(removed, 2, 0), np.delete(e, 2, 0))
    np.testing.assert_array_equal(apply_edit(removed, 2), removed)


def test_apply_edit_errors(rng):
    with pytest.raises(IndexError):
        apply_edit(np.zeros((3, 2)), 3)
    with pytest.raises(ValueError, match="length 2"):
        apply_edit(np.zeros((3, 2)), 0, np.zeros(3))


def test_parse_edit():
    assert parse_edit("+smile:1.5") == Edit("smile", "+", 1.5)
    assert parse_edit("+3") == Edit(3, "+", 1.0)
    assert parse_edit("-hat") == Edit("hat", "-", 1.0)
    for bad in ("smile", "-hat:2", "*x", "+:1"):
        with pytest.raises(ValueError):
            parse_edit(bad)


def test_shrink_removal_uses_small_scale(rng):
    g = fit_all(rng.standard_normal((6, 2, 3)), np.ones((6, 2)))
    v = edit_vector(Edit(0, "-", removal="shrink"), g, 0, seed=4)
    np.testing.assert_allclose(v, 0.1 * sample_attribute(g[0], 1.0, 4))
    assert edit_vector(Edit(0, "-"), g, 0, seed=4) is None


def test_empty_edit_list_gives_identical_reconstructions(rng):
    siamese = SiameseModel.create((16, 16, 3), SiameseConfig(2, 3, 2, (4, 4, 4)), seed=0)
    decoder = DecoderModel.create(2, 3, (16, 16, 3), seed=0, channels=(4, 4), base_channels=4)
    image = rng.random((16, 16, 3))
    rec, edited = edit_and_decode(siamese, decoder, image, [], {})
    np.testing.assert_array_equal(rec, edited)
    g = fit_all(rng.standard_normal((4, 2, 3)), np.ones((4, 2)))
    rec2, edited2 = edit_and_decode(siamese, decoder, image, ["+b:2"], g, label_names=["a", "b"])
    np.testing.assert_array_equal(rec2, rec)
    assert edited2.shape == rec.shape
    with pytest.raises(KeyError):
        edit_and_decode(siamese, decoder, image, ["-zzz"], g, label_names=["a", "b"])
