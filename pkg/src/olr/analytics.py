"""Evaluation of trained embeddings: row norms, correlations, per-label PCA, linear probe."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import layers as Ly
from . import tensor as T
from .optim import RmsPropState
from .training import minibatches, step


def row_norms(embedding: np.ndarray) -> np.ndarray:
    """Euclidean norm of every label row; works on (L, k) or (N, L, k)."""
    return np.linalg.norm(np.asarray(embedding, dtype=np.float64), axis=-1)


def norm_table(embeddings: np.ndarray) -> np.ndarray:
    e = np.asarray(embeddings)
    if e.ndim != 3:
        raise ValueError(f"expected (N, L, k) embeddings, got shape {e.shape}")
    return row_norms(e)


def pearson_matrix(norms: np.ndarray) -> np.ndarray:
    """Label-by-label Pearson correlation of an (N, L) norm table.

    Columns with zero variance give NaN rows/columns and a warning.
    """
    x = np.asarray(norms, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError(f"need an (N, L) table with N >= 2, got shape {x.shape}")
    centered = x - x.mean(axis=0)
    scale = np.sqrt((centered ** 2).sum(axis=0))
    dead = scale == 0
    if dead.any():
        warnings.warn(f"zero-variance columns {np.flatnonzero(dead).tolist()}: "
                      "their correlations are undefined (NaN)", RuntimeWarning, stacklevel=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = centered / scale
        r = z.T @ z
    r = np.clip(np.triu(r) + np.triu(r, 1).T, -1.0, 1.0)
    r[dead, :] = np.nan
    r[:, dead] = np.nan
    live = np.flatnonzero(~dead)
    r[live, live] = 1.0
    return r


@dataclass
class PcaResult:
    components: np.ndarray        # (k, k), one unit component per row, by decreasing variance
    explained_ratios: np.ndarray  # (k,)
    eigenvalues: np.ndarray       # (k,)
    mean: np.ndarray              # (k,)
    projections: np.ndarray       # (N,) projections of the centred rows on the first component

    def project(self, rows: np.ndarray, component: int = 0) -> np.ndarray:
        return (np.asarray(rows, dtype=np.float64) - self.mean) @ self.components[component]


def pca(rows: np.ndarray) -> PcaResult:
    """Covariance eigendecomposition of mean-centred rows.

    Components are oriented so that the dataset mean has a non-negative
    projection on each; a larger first-component projection then means a
    stronger version of the typical row.
    """
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError(f"PCA needs at least 2 rows of k-vectors, got shape {x.shape}")
    mu = x.mean(axis=0)
    centered = x - mu
    cov = centered.T @ centered / (len(x) - 1)
    values, vectors = np.linalg.eigh((cov + cov.T) / 2)
    order = np.argsort(values)[::-1]
    values = np.clip(values[order], 0.0, None)
    comps = vectors[:, order].T
    for i, c in enumerate(comps):
        if c @ mu < 0 or (c @ mu == 0 and c[np.argmax(np.abs(c))] < 0):
            comps[i] = -c
    total = values.sum()
    ratios = values / total if total > 0 else np.zeros_like(values)
    return PcaResult(comps, ratios, values, mu, centered @ comps[0])


def rank_by_projection(embeddings: np.ndarray, label: int, ids=None) -> list[tuple[int, float]]:
    """(image id, first-component projection) for label ``label``, ascending by projection."""
    e = np.asarray(embeddings)
    ids = np.arange(len(e)) if ids is None else np.asarray(ids)
    result = pca(e[:, label, :])
    order = np.argsort(result.projections, kind="stable")
    return [(int(ids[i]), float(result.projections[i])) for i in order]


def point_biserial(values: np.ndarray, binary: np.ndarray) -> float:
    """Pearson correlation between a continuous variable and a 0/1 variable."""
    v = np.asarray(values, dtype=np.float64)
    b = np.asarray(binary, dtype=np.float64)
    return float(pearson_matrix(np.stack([v, b], axis=1))[0, 1])


@dataclass
class ProbeResult:
    accuracy: float
    per_label: np.ndarray
    network: Ly.Network
    history: list[float]

    def predict_probs(self, embeddings: np.ndarray) -> np.ndarray:
        with T.no_grad():
            return T.sigmoid_np(self.network(np.asarray(embeddings, np.float32)).data)


def linear_probe(train_embeddings: np.ndarray, train_labels: np.ndarray,
                 test_embeddings: np.ndarray, test_labels: np.ndarray, epochs: int, seed: int,
                 learning_rate: float = 1e-4, batch_size: int = 32) -> ProbeResult:
    """One dense sigmoid layer on flattened embeddings, trained with binary cross-entropy.

    ``accuracy`` is the mean per-label test accuracy at threshold 0.5.
    """
    xtr = np.asarray(train_embeddings, dtype=np.float32)
    xte = np.asarray(test_embeddings, dtype=np.float32)
    ytr = np.asarray(train_labels, dtype=np.float32)
    yte = np.asarray(test_labels)
    if len(xtr) == 0 or len(xte) == 0:
        raise ValueError("linear probe needs non-empty train and test sets")
    num_labels = ytr.shape[1]
    net = Ly.Network([Ly.flatten(), Ly.dense(num_labels)], xtr.shape[1:], seed)
    params = net.parameters()
    state = RmsPropState(learning_rate)
    rng = np.random.default_rng([seed, 4])
    history = []
    for _ in range(epochs):
        losses = [step(T.bce_with_logits(net(xtr[idx]), ytr[idx]).mean(), params, state)
                  for idx in minibatches(len(xtr), batch_size, rng)]
        history.append(float(np.mean(losses)))
    with T.no_grad():
        logits = net(xte).data
    per_label = ((logits > 0) == (yte > 0)).mean(axis=0)
    return ProbeResult(float(per_label.mean()), per_label, net, history)
