"""Decoder from label embeddings back to images.

The network ends in a linear 3-channel convolution (the pre-rescale output);
a per-image min-max layer maps it to [0, 1]. Training mixes a DSSIM term on
the pre-rescale output with an MSE term on the rescaled output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers as Ly
from . import tensor as T
from .dataset import Dataset
from .optim import RmsPropState
from .siamese import SiameseModel, embed
from .tensor import Tensor
from .training import batched, log, minibatches, step

RESCALE_EPS = 1e-8


@dataclass(frozen=True)
class SsimParams:
    c1: float = 0.01 ** 2
    c2: float = 0.03 ** 2
    window: int = 8

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 > 0):
            raise ValueError("c1 and c2 must be positive")
        if self.window < 2:
            raise ValueError("SSIM window must be at least 2 pixels wide")


def _as_batch(x) -> Tensor:
    x = T.as_tensor(x)
    if x.ndim == 3:
        x = x.reshape((1,) + x.shape)
    return x


def ssim_channels(x, y, params: SsimParams = SsimParams()) -> Tensor:
    """Window-averaged SSIM per (sample, channel) for NHWC batches.

    Uniform N x N windows at stride 1; means are plain averages and the
    (co)variances use the unbiased 1/(n - 1) estimator over the n = N*N pixels.
    """
    x, y = _as_batch(x), _as_batch(y)
    if x.shape != y.shape:
        raise ValueError(f"SSIM inputs differ in shape: {x.shape} vs {y.shape}")
    win = params.window
    if x.shape[1] < win or x.shape[2] < win:
        raise ValueError(f"image {x.shape[1]}x{x.shape[2]} smaller than SSIM window {win}")
    n = win * win
    unbias = n / (n - 1)
    mu_x = T.avg_pool2d(x, win, 1)
    mu_y = T.avg_pool2d(y, win, 1)
    mu_xx, mu_yy, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    var_x = (T.avg_pool2d(x * x, win, 1) - mu_xx) * unbias
    var_y = (T.avg_pool2d(y * y, win, 1) - mu_yy) * unbias
    cov = (T.avg_pool2d(x * y, win, 1) - mu_xy) * unbias
    num = (2.0 * mu_xy + params.c1) * (2.0 * cov + params.c2)
    den = (mu_xx + mu_yy + params.c1) * (var_x + var_y + params.c2)
    return (num / den).mean(axis=(1, 2))


def ssim(x, y, params: SsimParams = SsimParams()) -> float:
    """SSIM of two single-channel images (H, W), evaluated in float64."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2:
        raise ValueError("ssim expects single-channel (H, W) images; use ssim_rgb for colour")
    with T.no_grad():
        return float(ssim_channels(x[None, :, :, None], y[None, :, :, None], params).data[0, 0])


def ssim_rgb(x, y, params: SsimParams = SsimParams()) -> float:
    """Mean over colour channels of the per-channel SSIM of two (H, W, C) images."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"images differ in shape: {x.shape} vs {y.shape}")
    with T.no_grad():
        return float(ssim_channels(x, y, params).data.mean())


def ssim_rgb_batch(x: np.ndarray, y: np.ndarray, params: SsimParams = SsimParams(),
                   batch_size: int = 256) -> np.ndarray:
    """Per-image colour SSIM for two aligned batches."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"batches differ in shape: {x.shape} vs {y.shape}")
    out = []
    with T.no_grad():
        for i in range(0, len(x), batch_size):
            out.append(ssim_channels(x[i:i + batch_size], y[i:i + batch_size], params).data.mean(axis=1))
    return np.concatenate(out) if out else np.zeros(0)


def minmax_rescale(x):
    """(x - min) / (max - min + 1e-8), per image for NHWC batches, else over the whole array.

    Returns a Tensor for Tensor input and an ndarray otherwise.
    """
    if not isinstance(x, Tensor):
        arr = np.asarray(x, dtype=np.float64)
        axes = tuple(range(1, arr.ndim)) if arr.ndim == 4 else None
        lo = arr.min(axis=axes, keepdims=True)
        hi = arr.max(axis=axes, keepdims=True)
        return (arr - lo) / (hi - lo + RESCALE_EPS)
    axes = tuple(range(1, x.ndim)) if x.ndim == 4 else None
    lo = T.amin(x, axis=axes, keepdims=True)
    hi = T.amax(x, axis=axes, keepdims=True)
    return (x - lo) / (hi - lo + RESCALE_EPS)


def combined_loss(target, pre_out, out, a: float, params: SsimParams = SsimParams()) -> Tensor:
    """a * (1 - SSIM(target, pre_out)) + (1 - a) * MSE(target, out), averaged over the batch."""
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"loss weight a must lie in [0, 1], got {a}")
    pre_out, out = _as_batch(pre_out), _as_batch(out)
    target = _as_batch(np.asarray(target.data if isinstance(target, Tensor) else target,
                                  dtype=pre_out.dtype))
    if target.shape != pre_out.shape or target.shape != out.shape:
        raise ValueError(f"shape mismatch: target {target.shape}, pre_out {pre_out.shape}, "
                         f"out {out.shape}")
    dssim = 1.0 - ssim_channels(target, pre_out, params).mean()
    mse = ((target - out) ** 2).mean()
    return a * dssim + (1.0 - a) * mse


def center_crop(images: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Symmetric crop of NHWC (or HWC) images down to ``size`` = (height, width)."""
    h, w = images.shape[-3:-1]
    th, tw = size
    if th > h or tw > w:
        raise ValueError(f"cannot crop {h}x{w} to larger {th}x{tw}")
    top, left = (h - th) // 2, (w - tw) // 2
    return images[..., top:top + th, left:left + tw, :]


def decoder_specs(num_labels: int, k: int, image_size, channels=(64, 32, 16),
                  base_channels: int = 128) -> list[Ly.LayerSpec]:
    """Dense -> reshape -> (transposed conv x2 up, conv) per stage -> 3-channel conv."""
    h, w, c = image_size
    factor = 2 ** len(channels)
    if h % factor or w % factor:
        raise ValueError(f"output {h}x{w} not divisible by the upsampling factor {factor}")
    sh, sw = h // factor, w // factor
    specs = [Ly.flatten(), Ly.dense(sh * sw * base_channels), Ly.relu(),
             Ly.reshape(sh, sw, base_channels)]
    for ch in channels:
        specs += [Ly.conv_t(3, 3, ch, 2, "same"), Ly.relu(), Ly.conv(3, 3, ch, 1, "same"), Ly.relu()]
    return specs + [Ly.conv(3, 3, c, 1, "same")]


@dataclass
class DecoderModel:
    network: Ly.Network
    ssim_params: SsimParams = SsimParams()
    a: float = 0.5
    history: list[float] = field(default_factory=list)

    @classmethod
    def create(cls, num_labels: int, k: int, image_size, seed: int = 0, channels=(64, 32, 16),
               base_channels: int = 128, ssim_params: SsimParams = SsimParams(), a: float = 0.5,
               dtype=np.float32) -> "DecoderModel":
        specs = decoder_specs(num_labels, k, image_size, channels, base_channels)
        return cls(Ly.Network(specs, (num_labels, k), seed, dtype), ssim_params, a)

    @property
    def embedding_shape(self) -> tuple:
        return self.network.input_shape

    @property
    def output_size(self) -> tuple:
        return self.network.output_shape

    def pre_rescale(self, embeddings) -> Tensor:
        return self.network(embeddings)

    def forward(self, embeddings) -> tuple[Tensor, Tensor]:
        pre = self.network(embeddings)
        return pre, minmax_rescale(pre)

    def to_tensors(self) -> dict[str, np.ndarray]:
        out = {f"decoder.{k}": v for k, v in self.network.state_dict().items()}
        specs = self.network.specs
        channels = [s.channels for s in specs if s.kind == "conv_transpose2d"]
        base = [s.shape for s in specs if s.kind == "reshape"][0][-1]
        p = self.ssim_params
        out["meta.decoder"] = np.asarray(list(self.embedding_shape) + list(self.output_size)
                                         + [base], np.float32)
        out["meta.decoder_channels"] = np.asarray(channels, np.float32)
        out["meta.decoder_loss"] = np.asarray([self.a, p.c1, p.c2, p.window], np.float32)
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "DecoderModel":
        L, k, h, w, c, base = (int(v) for v in tensors["meta.decoder"])
        channels = tuple(int(v) for v in tensors["meta.decoder_channels"])
        a, c1, c2, window = (float(v) for v in tensors["meta.decoder_loss"])
        model = cls.create(L, k, (h, w, c), channels=channels, base_channels=base,
                           ssim_params=SsimParams(c1, c2, int(window)), a=a)
        model.network.load_state_dict({n[len("decoder."):]: v for n, v in tensors.items()
                                       if n.startswith("decoder.")})
        return model


def decode(model: DecoderModel, embeddings) -> np.ndarray:
    """Reconstruct images in [0, 1] from one (L, k) embedding or a batch (N, L, k)."""
    e = np.asarray(embeddings, dtype=model.network.dtype)
    single = e.ndim == 2
    if single:
        e = e[None]
    if e.shape[1:] != model.embedding_shape:
        raise ValueError(f"decoder expects embeddings of shape {model.embedding_shape} "
                         f"({int(np.prod(model.embedding_shape))} values), got {e.shape[1:]}")
    out = batched(lambda b: model.forward(b)[1].data, e)
    return out[0] if single else out


def train_decoder(siamese: SiameseModel, train: Dataset, a: float, epochs: int, seed: int,
                  batch_size: int = 32, learning_rate: float = 1e-4,
                  ssim_params: SsimParams = SsimParams(), channels=(64, 32, 16),
                  base_channels: int = 128, embeddings: np.ndarray | None = None) -> DecoderModel:
    """Fit the decoder on (clean-image embedding, image) pairs with the frozen siamese model."""
    if len(train) == 0:
        raise ValueError("cannot train the decoder on an empty dataset")
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"loss weight a must lie in [0, 1], got {a}")
    cfg = siamese.config
    model = DecoderModel.create(cfg.num_labels, cfg.k, train.image_size, seed, channels,
                                base_channels, ssim_params, a)
    if embeddings is None:
        embeddings = embed(siamese, train.images)
    targets = center_crop(train.images, model.output_size[:2]).astype(np.float32)
    params = model.network.parameters()
    state = RmsPropState(learning_rate)
    rng = np.random.default_rng([seed, 3])
    for epoch in range(epochs):
        losses = []
        for idx in minibatches(len(train), batch_size, rng):
            pre, out = model.forward(embeddings[idx])
            loss = combined_loss(targets[idx], pre, out, a, ssim_params)
            losses.append(step(loss, params, state))
        model.history.append(float(np.mean(losses)))
        log.info("decoder epoch %d/%d loss %.5f", epoch + 1, epochs, model.history[-1])
    return model


def mean_image(dataset: Dataset) -> np.ndarray:
    return dataset.images.astype(np.float64).mean(axis=0)


def compression_ratio(image_size, num_labels: int, k: int) -> float:
    h, w, c = image_size
    return h * w * c / (num_labels * k)


def effective_compression_ratio(image_size, k: int, mean_active_labels: float) -> float:
    """Pixel count over the numbers carried by the rows of active labels only."""
    h, w, c = image_size
    return h * w * c / (mean_active_labels * k)


def montage(images, gap: int = 1, fill: float = 1.0) -> np.ndarray:
    """Place (H, W, 3) images side by side separated by ``gap`` columns of ``fill``."""
    images = [np.asarray(im, dtype=np.float32) for im in images]
    h = max(im.shape[0] for im in images)
    parts = []
    for i, im in enumerate(images):
        if im.shape[0] < h:
            pad = h - im.shape[0]
            im = np.pad(im, ((pad // 2, pad - pad // 2), (0, 0), (0, 0)), constant_values=fill)
        if i:
            parts.append(np.full((h, gap, 3), fill, np.float32))
        parts.append(im)
    return np.concatenate(parts, axis=1)
