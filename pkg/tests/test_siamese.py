import numpy as np
import pytest

from conftest import finite_difference_error
from olr import tensor as T
from olr.checkpoint import load_checkpoint, save_checkpoint
from olr.classifier import ClassifierModel, predict_probs
from olr.dataset import DatasetConfig, OcclusionRule, generate_synthetic
from olr.siamese import (SiameseConfig, SiameseModel, build_triplet, build_triplets, embed,
                         group_pool, pair_error, siamese_loss, train_siamese)

SMALL = SiameseConfig(num_labels=3, k=4, f=2, channels=(4, 4, 4))


def test_loss_by_hand():
    e1 = np.array([[[1.0, 0.0], [0.5, 0.5]]])
    e2 = np.array([[[1.0, 2.0], [1.0, 1.0]]])
    p = np.array([[0.5, 1.0]])
    # dots are 1.0 and 1.0 -> errors 0.5 and 0 -> mean of squares 0.125
    assert float(siamese_loss(e1, e2, p).data) == pytest.approx(0.125)


def test_loss_is_symmetric(rng):
    e1, e2 = rng.standard_normal((2, 4, 3, 5))
    p = rng.random((4, 3))
    assert float(siamese_loss(e1, e2, p).data) == float(siamese_loss(e2, e1, p).data)


def test_loss_gradient(rng):
    e1, e2 = rng.standard_normal((2, 3, 4, 5))
    p = rng.random((3, 4))
    assert finite_difference_error(lambda a, b: siamese_loss(a, b, p), [e1, e2]) < 1e-6


def test_loss_shape_checks(rng):
    with pytest.raises(ValueError, match="differ"):
        siamese_loss(np.zeros((1, 2, 3)), np.zeros((1, 2, 4)), np.zeros((1, 2)))
    with pytest.raises(ValueError, match="joint probability"):
        siamese_loss(np.zeros((1, 2, 3)), np.zeros((1, 2, 3)), np.zeros((1, 3)))


def test_group_pool_is_groupwise_average(rng):
    maps = rng.standard_normal((2, 3, 3, 6))
    out = group_pool(maps, 2, 3).data
    np.testing.assert_allclose(out, maps.mean(axis=(1, 2)).reshape(2, 2, 3))


def test_config_validation():
    with pytest.raises(ValueError, match="smaller than the image"):
        SiameseConfig(num_labels=64, k=64, f=2, channels=(4,)).validate((8, 8, 3))
    with pytest.raises(ValueError, match="f=3"):
        SiameseConfig(num_labels=2, k=2, f=3, channels=(4, 4)).validate((16, 16, 3))


def test_shared_weights_give_identical_embeddings(rng):
    model = SiameseModel.create((16, 16, 3), SMALL, seed=0)
    x = rng.random((16, 16, 3))
    e = embed(model, np.stack([x, x]))
    assert e.shape == (2, 3, 4)
    np.testing.assert_array_equal(e[0], e[1])
    np.testing.assert_array_equal(embed(model, x), e[0])


def test_label_layer_has_lk_maps():
    model = SiameseModel.create((16, 16, 3), SMALL, seed=0)
    spec = model.network.specs[model.label_layer_index()]
    assert spec.kind == "conv2d" and spec.channels == 12


def test_triplet_target_is_product_of_occluded_probabilities(rng):
    clf = ClassifierModel.create((16, 16, 3), list("abc"), seed=0, channels=(4, 4, 4))
    a, b = rng.random((2, 16, 16, 3))
    t = build_triplet(a, b, clf, OcclusionRule(), np.random.default_rng(9))
    expected = predict_probs(clf, t.image_a) * predict_probs(clf, t.image_b)
    np.testing.assert_allclose(t.joint_p, expected)
    assert ((t.joint_p >= 0) & (t.joint_p <= 1)).all()
    assert (t.image_a != a).any()


def test_batched_triplets_with_temperature(rng):
    clf = ClassifierModel.create((16, 16, 3), list("abc"), seed=0, channels=(4, 4, 4))
    x = rng.random((4, 16, 16, 3))
    cool = build_triplets(x, x, clf, OcclusionRule(), np.random.default_rng(1), 1.0)
    hot = build_triplets(x, x, clf, OcclusionRule(), np.random.default_rng(1), 1e6)
    assert cool.joint_p.shape == (4, 3)
    np.testing.assert_allclose(hot.joint_p, 0.25, atol=1e-5)


def test_training_lowers_loss(tmp_path):
    data = generate_synthetic(DatasetConfig(image_size=(16, 16, 3), num_images=64, num_labels=3))
    clf = ClassifierModel.create((16, 16, 3), data.label_names, seed=0, channels=(4, 4, 4))
    model = train_siamese(clf, data, SMALL, epochs=6, seed=0, batch_size=16, learning_rate=3e-3)
    assert model.history[-1] < model.history[0]
    err = pair_error(model, clf, data, OcclusionRule(), 20, seed=1)
    assert 0 <= err < 1
    save_checkpoint(model.to_tensors(), tmp_path / "s.olr")
    back = SiameseModel.from_tensors(load_checkpoint(tmp_path / "s.olr"))
    np.testing.assert_array_equal(embed(back, data.images[:3]), embed(model, data.images[:3]))
