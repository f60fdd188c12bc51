"""Hot numeric loops with a numba path and a pure-numpy fallback.

The numba path is used when numba imports and ``WIPGEST_DISABLE_NUMBA`` is not
set to a truthy value. Both implementations are importable directly
(``*_numba`` / ``*_numpy``) so they can be cross-checked and benchmarked.
"""
from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    _HAVE_NUMBA = False

NUMBA_ENABLED = _HAVE_NUMBA and os.environ.get("WIPGEST_DISABLE_NUMBA", "").lower() not in (
    "1",
    "true",
    "yes",
)


def _njit(fn):
    if _HAVE_NUMBA:
        return numba.njit(cache=True, nogil=True)(fn)
    return fn


def _njit_fastmath(fn):
    if _HAVE_NUMBA:
        return numba.njit(cache=True, nogil=True, fastmath=True)(fn)
    return fn


# ---------------------------------------------------------------------------
# k nearest neighbours within one cloud (self excluded, ties -> lower index)
# ---------------------------------------------------------------------------


@_njit
def knn_indices_numba(points, k):
    n, c = points.shape
    out = np.empty((n, k), dtype=np.int64)
    dist = np.empty(n, dtype=np.float64)
    taken = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        for j in range(n):
            s = 0.0
            for d in range(c):
                diff = points[j, d] - points[i, d]
                s += diff * diff
            dist[j] = s
            taken[j] = False
        taken[i] = True
        for m in range(k):
            best = -1
            best_d = np.inf
            for j in range(n):
                if not taken[j] and dist[j] < best_d:
                    best_d = dist[j]
                    best = j
            taken[best] = True
            out[i, m] = best
    return out


def knn_indices_numpy(points, k):
    points = np.asarray(points, dtype=np.float64)
    diff = points[None, :, :] - points[:, None, :]
    dist = np.einsum("ijc,ijc->ij", diff, diff)
    np.fill_diagonal(dist, np.inf)
    return np.argsort(dist, axis=1, kind="stable")[:, :k].astype(np.int64)


def knn_indices(points, k):
    """Indices of the ``k`` nearest other points for every row of ``points``."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = points.shape[0]
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the number of points ({n})")
    if k < 1:
        raise ValueError("k must be at least 1")
    if NUMBA_ENABLED:
        return knn_indices_numba(points, k)
    return knn_indices_numpy(points, k)


# ---------------------------------------------------------------------------
# brute-force 1-nearest-neighbour classifier
# ---------------------------------------------------------------------------


@_njit_fastmath
def nearest_neighbor_numba(train, test):
    # direct differences; fastmath only lets the row sum vectorize
    m, d = train.shape
    q = test.shape[0]
    out = np.empty(q, dtype=np.int64)
    for i in range(q):
        best = 0
        best_d = np.inf
        for j in range(m):
            s = 0.0
            for c in range(d):
                diff = train[j, c] - test[i, c]
                s += diff * diff
            if s < best_d:
                best_d = s
                best = j
        out[i] = best
    return out


def nearest_neighbor_numpy(train, test, chunk=256):
    train_sq = np.einsum("ij,ij->i", train, train)
    out = np.empty(test.shape[0], dtype=np.int64)
    for lo in range(0, test.shape[0], chunk):
        block = test[lo : lo + chunk]
        dist = train_sq[None, :] - 2.0 * block @ train.T
        out[lo : lo + chunk] = np.argmin(dist, axis=1)
    return out


def nearest_neighbor(train, test):
    """Index into ``train`` of the closest row (squared Euclidean) for each test row."""
    train = np.ascontiguousarray(train, dtype=np.float64)
    test = np.ascontiguousarray(test, dtype=np.float64)
    if train.ndim != 2 or test.ndim != 2 or train.shape[1] != test.shape[1]:
        raise ValueError(f"incompatible shapes {train.shape} and {test.shape}")
    if train.shape[0] == 0:
        raise ValueError("empty reference set")
    if NUMBA_ENABLED:
        return nearest_neighbor_numba(train, test)
    return nearest_neighbor_numpy(train, test)


# ---------------------------------------------------------------------------
# majority vote per window, ties resolved toward the latest frame
# ---------------------------------------------------------------------------


@_njit
def majority_vote_numba(windows, n_classes):
    m, w = windows.shape
    out = np.empty(m, dtype=np.int64)
    counts = np.zeros(n_classes, dtype=np.int64)
    for i in range(m):
        counts[:] = 0
        top = 0
        for j in range(w):
            counts[windows[i, j]] += 1
        for c in range(n_classes):
            if counts[c] > top:
                top = counts[c]
        for j in range(w - 1, -1, -1):
            if counts[windows[i, j]] == top:
                out[i] = windows[i, j]
                break
    return out


def majority_vote_numpy(windows, n_classes):
    m, w = windows.shape
    counts = np.zeros((m, n_classes), dtype=np.int64)
    np.add.at(counts, (np.repeat(np.arange(m), w), windows.ravel()), 1)
    top = counts.max(axis=1)
    is_top = counts[np.arange(m)[:, None], windows] == top[:, None]
    last = w - 1 - np.argmax(is_top[:, ::-1], axis=1)
    return windows[np.arange(m), last]


def majority_vote(windows, n_classes):
    windows = np.ascontiguousarray(windows, dtype=np.int64)
    if windows.ndim != 2 or windows.shape[1] == 0:
        raise ValueError("majority vote needs a non-empty (n_windows, window) label array")
    if windows.min() < 0 or windows.max() >= n_classes:
        raise ValueError("label index out of range")
    if NUMBA_ENABLED:
        return majority_vote_numba(windows, n_classes)
    return majority_vote_numpy(windows, n_classes)


# ---------------------------------------------------------------------------
# moving average ('valid' mode)
# ---------------------------------------------------------------------------


@_njit
def moving_average_numba(x, width):
    n = x.shape[0] - width + 1
    out = np.empty(max(n, 0), dtype=np.float64)
    for i in range(n):
        s = 0.0
        for j in range(width):
            s += x[i + j]
        out[i] = s / width
    return out


def moving_average_numpy(x, width):
    if x.shape[0] < width:
        return np.empty(0, dtype=np.float64)
    return np.convolve(x, np.full(width, 1.0 / width), mode="valid")


def moving_average(x, width):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if width < 1:
        raise ValueError("width must be >= 1")
    if NUMBA_ENABLED:
        return moving_average_numba(x, width)
    return moving_average_numpy(x, width)


# ---------------------------------------------------------------------------
# peak finding: local maxima (plateau midpoints), height-priority distance
# filtering, then topographic prominence. Same semantics as
# scipy.signal.find_peaks(x, distance=..., prominence=...).
# ---------------------------------------------------------------------------


@_njit
def _local_maxima_numba(x):
    n = x.shape[0]
    out = np.empty(max(n // 2, 1), dtype=np.int64)
    m = 0
    i = 1
    i_max = n - 1
    while i < i_max:
        if x[i - 1] < x[i]:
            i_ahead = i + 1
            while i_ahead < i_max and x[i_ahead] == x[i]:
                i_ahead += 1
            if x[i_ahead] < x[i]:
                out[m] = (i + i_ahead - 1) // 2
                m += 1
                i = i_ahead
        i += 1
    return out[:m]


@_njit
def _select_by_distance_numba(peaks, order, distance):
    size = peaks.shape[0]
    keep = np.ones(size, dtype=np.bool_)
    for r in range(size - 1, -1, -1):
        j = order[r]
        if not keep[j]:
            continue
        k = j - 1
        while k >= 0 and peaks[j] - peaks[k] < distance:
            keep[k] = False
            k -= 1
        k = j + 1
        while k < size and peaks[k] - peaks[j] < distance:
            keep[k] = False
            k += 1
    return keep


@_njit
def _prominences_numba(x, peaks):
    n = x.shape[0]
    out = np.empty(peaks.shape[0], dtype=np.float64)
    for p in range(peaks.shape[0]):
        pk = peaks[p]
        left_min = x[pk]
        i = pk
        while i >= 0 and x[i] <= x[pk]:
            if x[i] < left_min:
                left_min = x[i]
            i -= 1
        right_min = x[pk]
        i = pk
        while i < n and x[i] <= x[pk]:
            if x[i] < right_min:
                right_min = x[i]
            i += 1
        out[p] = x[pk] - max(left_min, right_min)
    return out


def _priority_order(heights):
    # numpy's default sort kind, so equal-height peaks resolve exactly as in scipy
    return np.argsort(heights)


def find_peaks_numba(x, prominence, distance):
    peaks = _local_maxima_numba(x)
    if distance > 1 and peaks.shape[0] > 1:
        order = _priority_order(x[peaks])
        peaks = peaks[_select_by_distance_numba(peaks, order, distance)]
    prom = _prominences_numba(x, peaks)
    return peaks[prom >= prominence]


def find_peaks_numpy(x, prominence, distance):
    n = x.shape[0]
    if n < 3:
        return np.empty(0, dtype=np.int64)
    change = np.concatenate(([True], x[1:] != x[:-1]))
    starts = np.flatnonzero(change)
    ends = np.concatenate((starts[1:], [n])) - 1
    runs = x[starts]
    interior = np.arange(1, runs.shape[0] - 1)
    is_peak = (runs[interior - 1] < runs[interior]) & (runs[interior + 1] < runs[interior])
    j = interior[is_peak]
    peaks = ((starts[j] + ends[j]) // 2).astype(np.int64)

    if distance > 1 and peaks.shape[0] > 1:
        keep = np.ones(peaks.shape[0], dtype=bool)
        for j in _priority_order(x[peaks])[::-1]:
            if not keep[j]:
                continue
            near = np.abs(peaks - peaks[j]) < distance
            near[j] = False
            keep[near] = False
        peaks = peaks[keep]

    prom = np.empty(peaks.shape[0])
    for i, pk in enumerate(peaks):
        higher_left = np.flatnonzero(x[:pk] > x[pk])
        lo = higher_left[-1] + 1 if higher_left.size else 0
        higher_right = np.flatnonzero(x[pk + 1 :] > x[pk])
        hi = pk + 1 + higher_right[0] if higher_right.size else n
        prom[i] = x[pk] - max(x[lo : pk + 1].min(), x[pk:hi].min())
    return peaks[prom >= prominence]


def find_peaks(x, prominence=0.0, distance=1):
    """Indices of local maxima of ``x``.

    ``distance`` is the minimum index gap between kept peaks (taller peaks win);
    peaks whose prominence is below ``prominence`` are then discarded.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    distance = max(int(math.ceil(distance)), 1)
    if NUMBA_ENABLED:
        return find_peaks_numba(x, float(prominence), distance)
    return find_peaks_numpy(x, float(prominence), distance)
