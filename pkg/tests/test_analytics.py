import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from olr.analytics import (linear_probe, norm_table, pca, pearson_matrix, point_biserial,
                           rank_by_projection, row_norms)


def jacobi_eigenvalues(a, sweeps=100):
    """Cyclic Jacobi rotations on a symmetric matrix; returns eigenvalues sorted descending."""
    a = np.array(a, dtype=np.float64)
    n = len(a)
    for _ in range(sweeps):
        off = math.sqrt(sum(a[i, j] ** 2 for i in range(n) for j in range(n) if i != j))
        if off < 1e-14:
            break
        for p in range(n):
            for q in range(p + 1, n):
                if abs(a[p, q]) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2 * a[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1))
                c = 1 / math.sqrt(t * t + 1)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q], rot[q, p] = s, -s
                a = rot.T @ a @ rot
    return np.sort(np.diag(a))[::-1]


def two_pass_pearson(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def test_pearson_against_two_pass(rng):
    x = rng.standard_normal((40, 5))
    x[:, 1] += 2 * x[:, 0]
    x[:, 2] -= x[:, 3]
    r = pearson_matrix(x)
    for i in range(5):
        for j in range(5):
            assert r[i, j] == pytest.approx(two_pass_pearson(x[:, i].tolist(), x[:, j].tolist()),
                                            abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (12, 4), elements=st.floats(-100, 100)))
def test_pearson_structure(x):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        r = pearson_matrix(x)
    assert np.array_equal(r, r.T, equal_nan=True)
    live = ~np.isnan(np.diag(r))
    assert (np.diag(r)[live] == 1).all()
    finite = r[~np.isnan(r)]
    assert ((finite >= -1) & (finite <= 1)).all()


def test_zero_variance_column_warns(rng):
    x = rng.standard_normal((10, 3))
    x[:, 1] = 4.0
    with pytest.warns(RuntimeWarning, match=r"\[1\]"):
        r = pearson_matrix(x)
    assert np.isnan(r[1]).all() and np.isnan(r[:, 1]).all()
    assert r[0, 0] == 1.0


def test_norms(rng):
    e = rng.standard_normal((6, 3, 4))
    np.testing.assert_allclose(norm_table(e), np.sqrt((e ** 2).sum(-1)))
    assert row_norms(e[0]).shape == (3,)
    with pytest.raises(ValueError):
        norm_table(e[0])


def test_pca_matches_jacobi_oracle(rng):
    rows = rng.standard_normal((60, 4)) @ rng.standard_normal((4, 4))
    res = pca(rows)
    centered = rows - rows.mean(axis=0)
    oracle = jacobi_eigenvalues(centered.T @ centered / (len(rows) - 1))
    np.testing.assert_allclose(res.eigenvalues, oracle, rtol=1e-9, atol=1e-12)
    assert res.explained_ratios.sum() == pytest.approx(1.0)
    assert (np.diff(res.explained_ratios) <= 1e-15).all()
    np.testing.assert_allclose(res.components @ res.components.T, np.eye(4), atol=1e-12)


def test_pca_line_data_has_one_component(rng):
    t = rng.standard_normal(50)
    rows = np.outer(t, [3.0, 4.0]) + 10
    res = pca(rows)
    assert res.explained_ratios[0] == pytest.approx(1.0)
    np.testing.assert_allclose(np.abs(res.components[0]), [0.6, 0.8])
    assert res.components[0] @ res.mean >= 0
    np.testing.assert_allclose(res.projections, res.project(rows))


def test_pca_needs_two_rows():
    with pytest.raises(ValueError):
        pca(np.ones((1, 3)))


def test_ranking_orders_by_projection(rng):
    e = rng.standard_normal((20, 2, 3))
    ranking = rank_by_projection(e, 1, ids=np.arange(100, 120))
    proj = [p for _, p in ranking]
    assert proj == sorted(proj)
    assert sorted(i for i, _ in ranking) == list(range(100, 120))


def test_point_biserial_perfect_split():
    assert point_biserial([0.0, 0.0, 1.0, 1.0], [0, 0, 1, 1]) == pytest.approx(1.0)


def test_probe_learns_linearly_separable_labels(rng):
    x = rng.standard_normal((400, 3, 2))
    y = (x[:, :, 0] > 0).astype(np.int8)
    res = linear_probe(x[:300], y[:300], x[300:], y[300:], epochs=30, seed=0, learning_rate=1e-2)
    assert res.accuracy > 0.95
    assert res.history[-1] < res.history[0]
    assert res.predict_probs(x[:2]).shape == (2, 3)
