"""Attribute editing in embedding space.

A Gaussian is fitted to the rows of one label over the images that carry it.
Adding the attribute to an image replaces its row with a (scaled) sample;
removing it replaces the row with zeros.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .classifier import ClassifierModel, predict_probs
from .dataset import Dataset
from .decoder import DecoderModel, decode
from .siamese import SiameseModel, embed

RIDGE = 1e-6
SHRINK_SCALE = 0.1


@dataclass
class AttributeGaussian:
    label: int
    mean: np.ndarray
    covariance: np.ndarray
    chol: np.ndarray
    ridge: float = RIDGE
    count: int = 0


def fit_gaussian(embeddings: np.ndarray, labels: np.ndarray, label: int,
                 ridge: float = RIDGE) -> AttributeGaussian:
    """Mean and covariance E[XX^T] - E[X]E[X]^T of row ``label`` over images having it."""
    e = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    if not 0 <= label < e.shape[1]:
        raise IndexError(f"label index {label} out of range for {e.shape[1]} labels")
    x = e[y[:, label] > 0, label, :]
    if len(x) == 0:
        raise ValueError(f"label {label} has no positive samples to fit a Gaussian on")
    n = len(x)
    mu = x.sum(axis=0) / n
    second = np.einsum("ni,nj->ij", x, x) / n
    cov = second - np.outer(mu, mu)
    cov = (cov + cov.T) / 2
    k = len(mu)
    try:
        chol = np.linalg.cholesky(cov + ridge * np.eye(k))
    except np.linalg.LinAlgError:
        # cancellation can leave tiny negative eigenvalues; project onto the PSD cone
        w, v = np.linalg.eigh(cov)
        cov = (v * np.clip(w, 0.0, None)) @ v.T
        chol = np.linalg.cholesky(cov + ridge * np.eye(k))
    return AttributeGaussian(label, mu, cov, chol, ridge, n)


def fit_all(embeddings: np.ndarray, labels: np.ndarray) -> dict[int, AttributeGaussian]:
    out = {}
    for l in range(np.asarray(labels).shape[1]):
        if (np.asarray(labels)[:, l] > 0).any():
            out[l] = fit_gaussian(embeddings, labels, l)
    return out


def sample_attribute(g: AttributeGaussian, s: float, seed: int) -> np.ndarray:
    """s * (mu + chol @ z) with z ~ N(0, I) drawn from ``seed``."""
    if not s > 0:
        raise ValueError(f"scale s must be positive, got {s}")
    z = np.random.default_rng(seed).standard_normal(len(g.mean))
    return s * (g.mean + g.chol @ z)


def apply_edit(embedding: np.ndarray, label: int, vector: np.ndarray | None = None) -> np.ndarray:
    """Copy of ``embedding`` with row ``label`` replaced by ``vector`` (zeros when None)."""
    e = np.array(embedding, copy=True)
    if not 0 <= label < e.shape[0]:
        raise IndexError(f"label index {label} out of range for {e.shape[0]} rows")
    if vector is None:
        e[label] = 0
    else:
        v = np.asarray(vector)
        if v.shape != (e.shape[1],):
            raise ValueError(f"edit vector must have length {e.shape[1]}, got shape {v.shape}")
        e[label] = v
    return e


@dataclass(frozen=True)
class Edit:
    label: int | str
    op: str                  # "+" adds a sampled vector, "-" removes
    scale: float = 1.0
    removal: str = "zero"    # "zero" or "shrink"


_EDIT_RE = re.compile(r"^\s*([+-])\s*([^:\s]+)\s*(?::\s*([0-9.eE+-]+))?\s*$")


def parse_edit(text: str) -> Edit:
    """Parse ``+label:s`` (add with scale s, default 1) or ``-label`` (remove)."""
    m = _EDIT_RE.match(text)
    if not m:
        raise ValueError(f"bad edit {text!r}; expected '+<label>:<s>' or '-<label>'")
    op, label, scale = m.groups()
    label = int(label) if label.isdigit() else label
    if op == "-" and scale is not None:
        raise ValueError(f"removal edit {text!r} takes no scale")
    return Edit(label, op, float(scale) if scale else 1.0)


def edit_vector(edit: Edit, gaussians: dict[int, AttributeGaussian], label: int,
                seed: int) -> np.ndarray | None:
    if edit.op == "+":
        if label not in gaussians:
            raise KeyError(f"no fitted distribution for label {label}")
        return sample_attribute(gaussians[label], edit.scale, seed)
    if edit.removal == "shrink":
        return sample_attribute(gaussians[label], SHRINK_SCALE, seed)
    return None


def edit_and_decode(siamese: SiameseModel, decoder: DecoderModel, image: np.ndarray,
                    edits, gaussians: dict[int, AttributeGaussian], seed: int = 0,
                    label_names=None) -> tuple[np.ndarray, np.ndarray]:
    """Return (reconstruction, edited reconstruction) for one image."""
    e = embed(siamese, image)
    edited = e
    for i, edit in enumerate(edits):
        if isinstance(edit, str):
            edit = parse_edit(edit)
        label = edit.label
        if isinstance(label, str):
            if label_names is None or label not in label_names:
                raise KeyError(f"unknown label {label!r}")
            label = list(label_names).index(label)
        edited = apply_edit(edited, label, edit_vector(edit, gaussians, label, seed + i))
    both = decode(decoder, np.stack([e, edited]))
    return both[0], both[1]


@dataclass
class EditReport:
    op: str
    fraction_moved: float     # share of images where p(edited label) moved the intended way
    edited_shift: float       # mean |delta p| on the edited label
    other_shift: float        # mean |delta p| over the other labels
    count: int


def evaluate_edits(classifier: ClassifierModel, siamese: SiameseModel, decoder: DecoderModel,
                   dataset: Dataset, gaussians: dict[int, AttributeGaussian], op: str,
                   num_images: int = 100, scale: float = 1.0, seed: int = 0) -> EditReport:
    """Judge edits with the classifier: compare its output on edited vs plain reconstructions.

    For "+" each image gets one label it lacks added; for "-" one label it has removed.
    """
    rng = np.random.default_rng(seed)
    labels = dataset.labels > 0
    want = ~labels if op == "+" else labels
    candidates = [i for i in range(len(dataset)) if want[i].any()]
    chosen = rng.permutation(candidates)[:num_images]
    emb = embed(siamese, dataset.images[chosen])
    edited = np.empty_like(emb)
    targets = []
    for j, i in enumerate(chosen):
        label = int(rng.choice(np.flatnonzero(want[i])))
        vec = (sample_attribute(gaussians[label], scale, seed * 100003 + j)
               if op == "+" else None)
        edited[j] = apply_edit(emb[j], label, vec)
        targets.append(label)
    p0 = predict_probs(classifier, decode(decoder, emb))
    p1 = predict_probs(classifier, decode(decoder, edited))
    delta = p1 - p0
    rows = np.arange(len(chosen))
    targets = np.asarray(targets)
    moved = delta[rows, targets] > 0 if op == "+" else delta[rows, targets] < 0
    mask = np.ones_like(delta, dtype=bool)
    mask[rows, targets] = False
    return EditReport(op, float(moved.mean()), float(np.abs(delta[rows, targets]).mean()),
                      float(np.abs(delta[mask]).mean()), len(chosen))
