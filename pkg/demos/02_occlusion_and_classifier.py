"""
Occlusion and the multi-label classifier
========================================

The synthetic dataset renders simple scenes with eight binary attributes, a
few of which are deliberately correlated. A small convolutional classifier is
trained on images where a random rectangle (1/3 to 2/3 of each side) has been
blanked out. Occlusion makes its probabilities less certain, which is what
the embedding model later learns from.
"""

# %%
import numpy as np

from olr.classifier import label_accuracy, predict_probs, train_classifier
from olr.dataset import DatasetConfig, OcclusionRule, generate_synthetic, occlude, split

data = generate_synthetic(DatasetConfig(num_images=600, seed=1))
train, test = split(data, 0.9, seed=1)
print("labels:", data.label_names)
print("label frequencies:", data.labels.mean(axis=0).round(2))
print("label correlation (large, circle):",
      np.corrcoef(data.labels[:, 1], data.labels[:, 0])[0, 1].round(2))
print("label correlation (two_objects, large):",
      np.corrcoef(data.labels[:, 7], data.labels[:, 1])[0, 1].round(2))

# %%
# What an occlusion does
# ----------------------
rule = OcclusionRule()
rng = np.random.default_rng(0)
img = test.images[0]
hidden = occlude(img, rule, rng)
changed = np.any(hidden != img, axis=-1)
rows, cols = np.nonzero(changed)
print("rectangle side lengths allowed on 32 pixels:", rule.side_range(32))
print("this draw blanked", rows.max() - rows.min() + 1, "x", cols.max() - cols.min() + 1, "pixels")

# %%
# Train for a few epochs
# ----------------------
clf = train_classifier(train, rule, epochs=6, seed=0)
print("loss per epoch:", np.round(clf.history, 3))
print("test accuracy per label:", label_accuracy(clf, test).round(2))

# %%
# Occlusion lowers confidence
# ---------------------------
# Confidence here is the mean distance of each probability from 1/2.
clean = predict_probs(clf, test.images)
blocked = predict_probs(clf, np.stack([occlude(x, rule, rng) for x in test.images]))
print("mean |p - 0.5| clean   :", np.abs(clean - 0.5).mean().round(3))
print("mean |p - 0.5| occluded:", np.abs(blocked - 0.5).mean().round(3))
