import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import finite_difference_error
from olr import tensor as T
from olr.checkpoint import load_checkpoint, save_checkpoint
from olr.decoder import (DecoderModel, SsimParams, center_crop, combined_loss, compression_ratio,
                         decode, decoder_specs, effective_compression_ratio, minmax_rescale,
                         montage, ssim, ssim_channels, ssim_rgb, train_decoder)
from olr.dataset import DatasetConfig, generate_synthetic
from olr.siamese import SiameseConfig, SiameseModel

C1, C2 = 1e-4, 9e-4


def brute_ssim(x, y, win=8):
    """Literal sliding-window SSIM: loop over every window, unbiased (co)variances."""
    vals = []
    for i in range(x.shape[0] - win + 1):
        for j in range(x.shape[1] - win + 1):
            a = x[i:i + win, j:j + win].ravel()
            b = y[i:i + win, j:j + win].ravel()
            ma, mb = a.mean(), b.mean()
            va = ((a - ma) ** 2).sum() / (a.size - 1)
            vb = ((b - mb) ** 2).sum() / (b.size - 1)
            cov = ((a - ma) * (b - mb)).sum() / (a.size - 1)
            vals.append((2 * ma * mb + C1) * (2 * cov + C2) / ((ma ** 2 + mb ** 2 + C1) * (va + vb + C2)))
    return float(np.mean(vals))


def test_matches_brute_force_window_loop(rng):
    for _ in range(5):
        x, y = rng.random((2, 13, 11))
        assert ssim(x, y) == pytest.approx(brute_ssim(x, y), abs=1e-12)


def test_identity_and_symmetry(rng):
    x, y = rng.random((2, 16, 16))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    assert ssim(x, y) == ssim(y, x)


def test_constant_images_reduce_to_luminance_term():
    # zero variance everywhere: SSIM = (2ab + C1) / (a^2 + b^2 + C1)
    assert ssim(np.zeros((8, 8)), np.ones((8, 8))) == pytest.approx(C1 / (1 + C1), abs=1e-15)
    a, b = 0.3, 0.7
    assert ssim(np.full((9, 9), a), np.full((9, 9), b)) == pytest.approx(
        (2 * a * b + C1) / (a * a + b * b + C1), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (2, 10, 10), elements=st.floats(0, 1)))
def test_bounded(pair):
    assert -1 - 1e-12 <= ssim(pair[0], pair[1]) <= 1 + 1e-12


def test_rgb_is_channel_mean(rng):
    x, y = rng.random((2, 12, 12, 3))
    assert ssim_rgb(x, y) == pytest.approx(np.mean([ssim(x[..., c], y[..., c]) for c in range(3)]))


def test_rejects_small_images_and_2d_misuse(rng):
    with pytest.raises(ValueError, match="window"):
        ssim(np.zeros((4, 4)), np.zeros((4, 4)))
    with pytest.raises(ValueError):
        ssim(rng.random((8, 8, 3)), rng.random((8, 8, 3)))
    with pytest.raises(ValueError):
        SsimParams(c1=0)


def test_ssim_gradient(rng):
    x, y = rng.random((2, 1, 9, 9, 2))
    err = finite_difference_error(lambda a, b: ssim_channels(a, b), [x, y])
    assert err < 1e-5


def test_minmax_rescale_per_image(rng):
    x = rng.standard_normal((3, 4, 4, 3)) * np.array([1, 10, 100])[:, None, None, None]
    out = minmax_rescale(x)
    np.testing.assert_allclose(out.min(axis=(1, 2, 3)), 0, atol=1e-12)
    np.testing.assert_allclose(out.max(axis=(1, 2, 3)), 1, atol=1e-6)
    assert isinstance(minmax_rescale(T.Tensor(x)), T.Tensor)
    np.testing.assert_allclose(minmax_rescale(T.Tensor(x)).data, out)


def test_combined_loss_endpoints(rng):
    x = rng.random((2, 8, 8, 3))
    pre = rng.random((2, 8, 8, 3))
    out = minmax_rescale(pre)
    only_ssim = float(combined_loss(x, pre, out, 1.0).data)
    only_mse = float(combined_loss(x, pre, out, 0.0).data)
    assert only_ssim == pytest.approx(1 - ssim_channels(x, pre).data.mean())
    assert only_mse == pytest.approx(((x - out) ** 2).mean())
    assert float(combined_loss(x, pre, out, 0.5).data) == pytest.approx((only_ssim + only_mse) / 2)
    assert float(combined_loss(x, x, x, 0.5).data) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError, match="a must"):
        combined_loss(x, pre, out, 1.5)


def test_combined_loss_gradient(rng):
    x = rng.random((2, 9, 9, 3))
    pre = rng.standard_normal((2, 9, 9, 3))
    err = finite_difference_error(lambda p: combined_loss(x, p, minmax_rescale(p), 0.5), [pre])
    assert err < 1e-4


def test_decoder_output_and_round_trip(tmp_path, rng):
    model = DecoderModel.create(3, 4, (16, 16, 3), seed=0, channels=(8, 8), base_channels=8)
    e = rng.standard_normal((2, 3, 4))
    rec = decode(model, e)
    assert rec.shape == (2, 16, 16, 3)
    assert rec.min() >= 0 and rec.max() <= 1 + 1e-6
    save_checkpoint(model.to_tensors(), tmp_path / "d.olr")
    back = DecoderModel.from_tensors(load_checkpoint(tmp_path / "d.olr"))
    np.testing.assert_array_equal(decode(back, e), rec)
    with pytest.raises(ValueError, match="12 values"):
        decode(model, rng.standard_normal((2, 4, 4)))


def test_specs_need_divisible_size():
    with pytest.raises(ValueError, match="divisible"):
        decoder_specs(3, 4, (20, 20, 3), channels=(8, 8, 8))


def test_training_lowers_loss():
    data = generate_synthetic(DatasetConfig(image_size=(16, 16, 3), num_images=32, num_labels=3))
    siamese = SiameseModel.create((16, 16, 3), SiameseConfig(3, 4, 2, (4, 4, 4)), seed=0)
    dec = train_decoder(siamese, data, 0.5, 5, 0, batch_size=8, learning_rate=1e-3,
                        channels=(8, 8), base_channels=8)
    assert dec.history[-1] < dec.history[0]


def test_crop_and_montage(rng):
    x = rng.random((2, 10, 12, 3))
    assert center_crop(x, (6, 8)).shape == (2, 6, 8, 3)
    np.testing.assert_array_equal(center_crop(x, (6, 8)), x[:, 2:8, 2:10])
    m = montage([x[0], x[1]], gap=2)
    assert m.shape == (10, 26, 3)
    assert (m[:, 12:14] == 1).all()


def test_compression_ratios():
    assert compression_ratio((32, 32, 3), 8, 8) == 48.0
    assert effective_compression_ratio((176, 176, 3), 32, 8) == pytest.approx(176 * 176 * 3 / 256)
