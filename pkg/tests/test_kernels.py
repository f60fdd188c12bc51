"""numba and numpy kernel paths agree with each other and with independent oracles."""
import numpy as np
import pytest
import scipy.signal
from hypothesis import given, settings
from hypothesis import strategies as st

from wipgest import kernels


def brute_knn(points, k):
    n = len(points)
    out = []
    for i in range(n):
        d = [(float(np.sum((points[j] - points[i]) ** 2)), j) for j in range(n) if j != i]
        d.sort()
        out.append([j for _, j in d[:k]])
    return np.array(out)


@pytest.mark.parametrize("impl", [kernels.knn_indices_numba, kernels.knn_indices_numpy])
def test_knn_matches_brute_force(impl, rng):
    for _ in range(20):
        pts = rng.random((18, 12))
        np.testing.assert_array_equal(impl(pts, 4), brute_knn(pts, 4))


def test_knn_rejects_large_k():
    with pytest.raises(ValueError):
        kernels.knn_indices(np.zeros((4, 2)), 4)


@pytest.mark.parametrize("impl", [kernels.nearest_neighbor_numba, kernels.nearest_neighbor_numpy])
def test_nearest_neighbor(impl, rng):
    train = rng.random((200, 30))
    test = rng.random((50, 30))
    dist = ((test[:, None, :] - train[None, :, :]) ** 2).sum(-1)
    np.testing.assert_array_equal(impl(train, test), dist.argmin(axis=1))


def test_nearest_neighbor_shape_errors():
    with pytest.raises(ValueError):
        kernels.nearest_neighbor(np.zeros((3, 2)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        kernels.nearest_neighbor(np.zeros((0, 2)), np.zeros((3, 2)))


def vote_oracle(row):
    counts = {}
    for v in row:
        counts[v] = counts.get(v, 0) + 1
    top = max(counts.values())
    return next(v for v in reversed(row) if counts[v] == top)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.lists(st.integers(0, 8), min_size=6, max_size=6), min_size=1, max_size=20))
def test_majority_vote_paths_agree(rows):
    arr = np.array(rows)
    expected = np.array([vote_oracle(r) for r in rows])
    np.testing.assert_array_equal(kernels.majority_vote_numba(arr, 9), expected)
    np.testing.assert_array_equal(kernels.majority_vote_numpy(arr, 9), expected)


def test_majority_vote_range_check():
    with pytest.raises(ValueError):
        kernels.majority_vote(np.array([[0, 9]]), 9)


@pytest.mark.parametrize("width", [1, 3, 5, 8])
def test_moving_average(width, rng):
    x = rng.random(40)
    expected = np.array([x[i : i + width].mean() for i in range(len(x) - width + 1)])
    np.testing.assert_allclose(kernels.moving_average_numba(x, width), expected, atol=1e-12)
    np.testing.assert_allclose(kernels.moving_average_numpy(x, width), expected, atol=1e-12)
    assert kernels.moving_average(x[:2], 5).shape == (0,)


def _signals(rng):
    t = np.arange(200) / 30.0
    yield np.sin(2 * np.pi * 2 * t) * 0.02 + rng.normal(0, 0.002, t.size)
    yield rng.random(150)
    yield np.round(rng.random(120) * 4) / 4  # plateaus
    yield np.repeat(rng.random(30), 3)
    yield np.zeros(10)


@pytest.mark.parametrize("impl", [kernels.find_peaks_numba, kernels.find_peaks_numpy])
@pytest.mark.parametrize("prominence,distance", [(0.0, 1), (0.005, 1), (0.005, 5), (0.2, 3), (0.0, 12)])
def test_find_peaks_matches_scipy(impl, prominence, distance, rng):
    for x in _signals(rng):
        expected, _ = scipy.signal.find_peaks(x, prominence=prominence, distance=distance)
        np.testing.assert_array_equal(impl(np.ascontiguousarray(x), prominence, distance), expected)


def test_env_flag_selects_numpy_path():
    import os
    import subprocess
    import sys

    code = "from wipgest import kernels; print(kernels.NUMBA_ENABLED)"
    for flag, expected in (("1", "False"), ("", "True")):
        env = {**os.environ, "WIPGEST_DISABLE_NUMBA": flag}
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        assert out.stdout.strip() == expected
