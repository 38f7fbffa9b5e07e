"""Multi-label convolutional classifier trained on occluded images."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers as Ly
from . import tensor as T
from .dataset import Dataset, OcclusionRule, occlude_batch
from .optim import RmsPropState
from .training import batched, log, minibatches, step


def classifier_specs(num_labels: int, channels=(8, 16, 32)) -> list[Ly.LayerSpec]:
    specs = []
    for c in channels:
        specs += [Ly.conv(3, 3, c), Ly.relu(), Ly.max_pool(2)]
    return specs + [Ly.flatten(), Ly.dense(num_labels)]


@dataclass
class ClassifierModel:
    network: Ly.Network
    label_names: list[str]
    history: list[float] = field(default_factory=list)

    @classmethod
    def create(cls, image_size, label_names, seed: int = 0, channels=(8, 16, 32), dtype=np.float32):
        net = Ly.Network(classifier_specs(len(label_names), channels), image_size, seed, dtype)
        return cls(net, list(label_names))

    @property
    def image_size(self) -> tuple:
        return self.network.input_shape

    @property
    def num_labels(self) -> int:
        return len(self.label_names)

    def logits(self, images: np.ndarray) -> np.ndarray:
        images = self._check(images)
        return batched(lambda x: self.network(x).data, images)

    def _check(self, images) -> np.ndarray:
        images = np.asarray(images, dtype=self.network.dtype)
        if images.ndim == 3:
            images = images[None]
        if images.shape[1:] != self.image_size:
            raise ValueError(f"classifier expects images of shape {self.image_size}, "
                             f"got {images.shape[1:]}")
        return images

    def to_tensors(self) -> dict[str, np.ndarray]:
        out = {f"classifier.{k}": v for k, v in self.network.state_dict().items()}
        out["meta.image_size"] = np.asarray(self.image_size, np.float32)
        out["meta.channels"] = np.asarray([s.channels for s in self.network.specs
                                           if s.kind == "conv2d"], np.float32)
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray], label_names) -> "ClassifierModel":
        size = tuple(int(v) for v in tensors["meta.image_size"])
        channels = tuple(int(v) for v in tensors["meta.channels"])
        model = cls.create(size, label_names, channels=channels)
        model.network.load_state_dict({k[len("classifier."):]: v for k, v in tensors.items()
                                       if k.startswith("classifier.")})
        return model


def _squeeze(images, out: np.ndarray) -> np.ndarray:
    return out[0] if np.ndim(images) == 3 else out


def predict_probs(model: ClassifierModel, images) -> np.ndarray:
    """Per-label sigmoid probabilities for one image (H, W, C) or a batch."""
    return _squeeze(images, T.sigmoid_np(model.logits(images)))


def temperature_probs(model: ClassifierModel, images, temperature: float) -> np.ndarray:
    """Sigmoid of logits / T: the multi-label analogue of a softened softmax."""
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = model.logits(images)
    return _squeeze(images, T.sigmoid_np(z / np.asarray(temperature, dtype=z.dtype)))


def joint_probability(p_a, p_b) -> np.ndarray:
    p_a, p_b = np.asarray(p_a), np.asarray(p_b)
    if p_a.shape != p_b.shape:
        raise ValueError(f"probability vectors differ in shape: {p_a.shape} vs {p_b.shape}")
    return p_a * p_b


def label_accuracy(model: ClassifierModel, dataset: Dataset, threshold: float = 0.5) -> np.ndarray:
    probs = predict_probs(model, dataset.images)
    return ((probs > threshold) == (dataset.labels > 0)).mean(axis=0)


def train_classifier(train: Dataset, rule: OcclusionRule, epochs: int, seed: int,
                     batch_size: int = 32, learning_rate: float = 2e-3,
                     occlusion_probability: float = 0.5, channels=(8, 16, 32)) -> ClassifierModel:
    """Minimise mean per-label binary cross-entropy with RMSProp."""
    if len(train) == 0:
        raise ValueError("cannot train a classifier on an empty dataset")
    model = ClassifierModel.create(train.image_size, train.label_names, seed, channels)
    params = model.network.parameters()
    state = RmsPropState(learning_rate)
    rng = np.random.default_rng([seed, 1])
    images = train.images.astype(np.float32)
    targets = train.labels.astype(np.float32)
    for epoch in range(epochs):
        losses = []
        for idx in minibatches(len(train), batch_size, rng):
            x = occlude_batch(images[idx], rule, rng, occlusion_probability)
            loss = T.bce_with_logits(model.network(x), targets[idx]).mean()
            losses.append(step(loss, params, state))
        model.history.append(float(np.mean(losses)))
        log.info("classifier epoch %d/%d loss %.4f", epoch + 1, epochs, model.history[-1])
    return model
