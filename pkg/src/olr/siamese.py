"""Shared-weight network mapping an image to an L x k label-embedding matrix.

The last convolution emits L groups of k feature maps; global average pooling
turns each map into one number and a reshape arranges them as one row per
label. Training matches row-wise dot products of two embeddings to the
product of the classifier's label probabilities on the two occluded images.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers as Ly
from . import tensor as T
from .classifier import ClassifierModel, joint_probability, predict_probs, temperature_probs
from .dataset import Dataset, OcclusionRule, occlude, occlude_batch
from .optim import RmsPropState
from .tensor import Tensor
from .training import batched, log, step


@dataclass(frozen=True)
class SiameseConfig:
    num_labels: int = 8
    k: int = 8
    f: int = 4
    channels: tuple[int, ...] = (16, 32, 64)

    def backbone(self) -> list[Ly.LayerSpec]:
        specs = []
        for c in self.channels:
            specs += [Ly.conv(3, 3, c), Ly.relu(), Ly.max_pool(2)]
        return specs

    def specs(self) -> list[Ly.LayerSpec]:
        lk = self.num_labels * self.k
        return self.backbone() + [Ly.conv(3, 3, lk), Ly.avg_pool(self.f),
                                  Ly.reshape(self.num_labels, self.k)]

    def validate(self, image_size) -> None:
        h, w, c = image_size
        if self.num_labels * self.k >= h * w * c:
            raise ValueError(f"embedding size L*k = {self.num_labels * self.k} must be smaller "
                             f"than the image size {h * w * c}")
        spatial = h // 2 ** len(self.channels)
        if spatial != self.f:
            raise ValueError(f"backbone reduces {h}x{w} to {spatial}x{spatial}, "
                             f"but label-specific layer size f={self.f}")


@dataclass
class Triplet:
    image_a: np.ndarray
    image_b: np.ndarray
    joint_p: np.ndarray


@dataclass
class SiameseModel:
    network: Ly.Network
    config: SiameseConfig
    history: list[float] = field(default_factory=list)

    @classmethod
    def create(cls, image_size, config: SiameseConfig, seed: int = 0, dtype=np.float32):
        config.validate(image_size)
        return cls(Ly.Network(config.specs(), image_size, seed, dtype), config)

    @property
    def image_size(self) -> tuple:
        return self.network.input_shape

    def label_layer_index(self) -> int:
        return len(self.config.backbone())

    def to_tensors(self) -> dict[str, np.ndarray]:
        c = self.config
        out = {f"siamese.{k}": v for k, v in self.network.state_dict().items()}
        out["meta.image_size"] = np.asarray(self.image_size, np.float32)
        out["meta.siamese"] = np.asarray([c.num_labels, c.k, c.f], np.float32)
        out["meta.siamese_channels"] = np.asarray(c.channels, np.float32)
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "SiameseModel":
        size = tuple(int(v) for v in tensors["meta.image_size"])
        L, k, f = (int(v) for v in tensors["meta.siamese"])
        channels = tuple(int(v) for v in tensors["meta.siamese_channels"])
        model = cls.create(size, SiameseConfig(L, k, f, channels))
        model.network.load_state_dict({n[len("siamese."):]: v for n, v in tensors.items()
                                       if n.startswith("siamese.")})
        return model


def embed(model: SiameseModel, images) -> np.ndarray:
    """Embedding (L, k) of one image, or (N, L, k) for a batch."""
    x = np.asarray(images, dtype=model.network.dtype)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.shape[1:] != model.image_size:
        raise ValueError(f"siamese model expects images of shape {model.image_size}, "
                         f"got {x.shape[1:]}")
    out = batched(lambda b: model.network(b).data, x)
    return out[0] if single else out


def group_pool(feature_maps, num_labels: int, k: int) -> Tensor:
    """Average-pool (N, f, f, L*k) label-group maps and arrange as (N, L, k)."""
    x = T.as_tensor(feature_maps)
    pooled = T.avg_pool2d(x, x.shape[1], x.shape[1])
    return pooled.reshape(x.shape[0], num_labels, k)


def siamese_loss(e1, e2, joint_p) -> Tensor:
    """Mean over labels (and batch) of (e1^l . e2^l - joint_p_l)^2."""
    e1, e2 = T.as_tensor(e1), T.as_tensor(e2)
    p = np.asarray(joint_p.data if isinstance(joint_p, Tensor) else joint_p)
    if e1.shape != e2.shape:
        raise ValueError(f"embeddings differ in shape: {e1.shape} vs {e2.shape}")
    if e1.ndim < 2 or p.shape != e1.shape[:-1]:
        raise ValueError(f"joint probability shape {p.shape} does not match embeddings "
                         f"{e1.shape} (expected {e1.shape[:-1]})")
    v = (e1 * e2).sum(axis=-1)
    return ((v - p.astype(v.dtype)) ** 2).mean()


def build_triplet(image_a, image_b, classifier: ClassifierModel, rule: OcclusionRule,
                  rng: np.random.Generator) -> Triplet:
    a = occlude(image_a, rule, rng)
    b = occlude(image_b, rule, rng)
    p = joint_probability(predict_probs(classifier, a), predict_probs(classifier, b))
    return Triplet(a, b, p)


def build_triplets(images_a: np.ndarray, images_b: np.ndarray, classifier: ClassifierModel,
                   rule: OcclusionRule, rng: np.random.Generator,
                   temperature: float = 1.0) -> Triplet:
    """Batched ``build_triplet``: fields carry a leading batch axis."""
    a = occlude_batch(images_a, rule, rng)
    b = occlude_batch(images_b, rule, rng)
    if temperature == 1.0:
        pa, pb = predict_probs(classifier, a), predict_probs(classifier, b)
    else:
        pa = temperature_probs(classifier, a, temperature)
        pb = temperature_probs(classifier, b, temperature)
    return Triplet(a, b, joint_probability(pa, pb))


def train_siamese(classifier: ClassifierModel, train: Dataset, config: SiameseConfig,
                  epochs: int, seed: int, rule: OcclusionRule | None = None,
                  batch_size: int = 32, learning_rate: float = 1e-3,
                  temperature: float = 1.0) -> SiameseModel:
    """Fit the embedding network on freshly occluded random pairs.

    One epoch is ``len(train) // batch_size`` steps of ``batch_size`` ordered
    pairs drawn uniformly with replacement. The classifier stays frozen.
    """
    if len(train) == 0:
        raise ValueError("cannot train the siamese model on an empty dataset")
    rule = rule or OcclusionRule()
    model = SiameseModel.create(train.image_size, config, seed)
    params = model.network.parameters()
    state = RmsPropState(learning_rate)
    rng = np.random.default_rng([seed, 2])
    images = train.images.astype(np.float32)
    n = len(train)
    steps = max(n // batch_size, 1)
    for epoch in range(epochs):
        losses = []
        for _ in range(steps):
            ia = rng.integers(0, n, batch_size)
            ib = rng.integers(0, n, batch_size)
            trip = build_triplets(images[ia], images[ib], classifier, rule, rng, temperature)
            e1 = model.network(trip.image_a)
            e2 = model.network(trip.image_b)
            losses.append(step(siamese_loss(e1, e2, trip.joint_p), params, state))
        model.history.append(float(np.mean(losses)))
        log.info("siamese epoch %d/%d loss %.5f", epoch + 1, epochs, model.history[-1])
    return model


def pair_error(model: SiameseModel, classifier: ClassifierModel, dataset: Dataset,
               rule: OcclusionRule, num_triplets: int, seed: int) -> float:
    """Mean |e_A^l . e_B^l - joint_p_l| over fresh occluded pairs from ``dataset``."""
    rng = np.random.default_rng(seed)
    n = len(dataset)
    ia = rng.integers(0, n, num_triplets)
    ib = rng.integers(0, n, num_triplets)
    trip = build_triplets(dataset.images[ia], dataset.images[ib], classifier, rule, rng)
    v = (embed(model, trip.image_a) * embed(model, trip.image_b)).sum(axis=-1)
    return float(np.abs(v - trip.joint_p).mean())
