"""Numeric inner loops, each in a numba and a pure-numpy flavour.

The numba versions are used when numba imports and ``DOCVAL_DISABLE_NUMBA``
is unset (or "0"). Both flavours stay importable under ``numba_impl`` and
``numpy_impl`` so tests and the benchmark can compare them directly.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_DISABLED = os.environ.get("DOCVAL_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")
HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not _DISABLED


# Distances below this are rounding noise from normalizing parallel vectors.
ROUNDING_FLOOR = 1e-14


def shapley_weights(n: int) -> np.ndarray:
    """w[s] = 1 / (n * C(n-1, s)), the Shapley weight of a coalition of size s."""
    w = np.empty(max(n, 1), dtype=np.float64)
    c = 1.0
    for s in range(n):
        w[s] = 1.0 / (n * c)
        c = c * (n - 1 - s) / (s + 1)
    return w


def popcounts(n: int) -> np.ndarray:
    pc = np.zeros(1 << n, dtype=np.int64)
    for i in range(n):
        pc[1 << i : 1 << (i + 1)] = pc[: 1 << i] + 1
    return pc


# --- numpy ---------------------------------------------------------------


def _np_shapley_from_table(values, n):
    w = shapley_weights(n)
    pc = popcounts(n)
    masks = np.arange(1 << n, dtype=np.int64)
    phi = np.zeros(n, dtype=np.float64)
    for i in range(n):
        bit = 1 << i
        s = masks[(masks & bit) == 0]
        phi[i] = np.sum(w[pc[s]] * (values[s | bit] - values[s]))
    return phi


def _np_cosine_distances(x):
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    u = x / norms[:, None]
    d = 1.0 - u @ u.T
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    d[d < ROUNDING_FLOOR] = 0.0
    return np.clip(d, 0.0, 2.0)


def _np_threshold_labels(d, r):
    n = d.shape[0]
    adj = csr_matrix(d <= r)
    _, raw = connected_components(adj, directed=False)
    # Relabel so clusters are numbered by their smallest member.
    labels = np.empty(n, dtype=np.int64)
    mapping = {}
    for i in range(n):
        labels[i] = mapping.setdefault(raw[i], len(mapping))
    return labels


def _np_max_within(d, labels):
    same = labels[:, None] == labels[None, :]
    return float(np.max(np.where(same, d, 0.0))) if d.size else 0.0


def _np_max_edge_within(d, labels, r):
    same = (labels[:, None] == labels[None, :]) & (d <= r)
    np.fill_diagonal(same, False)
    return float(np.max(np.where(same, d, -1.0))) if d.size else -1.0


def _np_pair_deltas(values, n):
    rows = []
    masks = np.arange(1 << n, dtype=np.int64)
    for i in range(n):
        for j in range(i + 1, n):
            bi, bj = 1 << i, 1 << j
            s = masks[(masks & (bi | bj)) == 0]
            rows.append(np.abs(values[s | bi] - values[s | bj]))
    return np.concatenate(rows) if rows else np.empty(0)


def _np_subset_sums(weights):
    n = weights.shape[0]
    out = np.zeros(1 << n, dtype=np.float64)
    for i in range(n):
        out[1 << i : 1 << (i + 1)] = out[: 1 << i] + weights[i]
    return out


numpy_impl = SimpleNamespace(
    shapley_from_table=_np_shapley_from_table,
    cosine_distances=_np_cosine_distances,
    threshold_labels=_np_threshold_labels,
    max_within=_np_max_within,
    max_edge_within=_np_max_edge_within,
    pair_deltas=_np_pair_deltas,
    subset_sums=_np_subset_sums,
)


# --- numba ---------------------------------------------------------------

if HAVE_NUMBA:
    njit = numba.njit(cache=False, nogil=True)

    @njit
    def _nb_shapley_from_table(values, n):
        w = np.empty(n, dtype=np.float64)
        c = 1.0
        for s in range(n):
            w[s] = 1.0 / (n * c)
            c = c * (n - 1 - s) / (s + 1)
        phi = np.zeros(n, dtype=np.float64)
        size = 1 << n
        for mask in range(size):
            pc = 0
            m = mask
            while m:
                m &= m - 1
                pc += 1
            if pc == n:
                continue
            base = values[mask]
            for i in range(n):
                bit = 1 << i
                if mask & bit == 0:
                    phi[i] += w[pc] * (values[mask | bit] - base)
        return phi

    @njit
    def _nb_cosine_distances(x):
        n, dim = x.shape
        norms = np.empty(n)
        for i in range(n):
            acc = 0.0
            for k in range(dim):
                acc += x[i, k] * x[i, k]
            norms[i] = np.sqrt(acc)
        d = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                acc = 0.0
                for k in range(dim):
                    acc += x[i, k] * x[j, k]
                v = 1.0 - acc / (norms[i] * norms[j])
                if v < ROUNDING_FLOOR:
                    v = 0.0
                elif v > 2.0:
                    v = 2.0
                d[i, j] = v
                d[j, i] = v
        return d

    @njit
    def _find(parent, i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    @njit
    def _nb_threshold_labels(d, r):
        n = d.shape[0]
        parent = np.arange(n)
        for i in range(n):
            for j in range(i + 1, n):
                if d[i, j] <= r:
                    a = _find(parent, i)
                    b = _find(parent, j)
                    if a != b:
                        # Smaller index becomes the root, keeping roots canonical.
                        if a < b:
                            parent[b] = a
                        else:
                            parent[a] = b
        labels = np.empty(n, dtype=np.int64)
        root_label = np.full(n, -1, dtype=np.int64)
        nxt = 0
        for i in range(n):
            root = _find(parent, i)
            if root_label[root] < 0:
                root_label[root] = nxt
                nxt += 1
            labels[i] = root_label[root]
        return labels

    @njit
    def _nb_max_within(d, labels):
        n = d.shape[0]
        worst = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                if labels[i] == labels[j] and d[i, j] > worst:
                    worst = d[i, j]
        return worst

    @njit
    def _nb_max_edge_within(d, labels, r):
        n = d.shape[0]
        worst = -1.0
        for i in range(n):
            for j in range(i + 1, n):
                if labels[i] == labels[j] and d[i, j] <= r and d[i, j] > worst:
                    worst = d[i, j]
        return worst

    @njit
    def _nb_pair_deltas(values, n):
        per_pair = 1 << (n - 2) if n >= 2 else 0
        out = np.empty(per_pair * (n * (n - 1) // 2))
        pos = 0
        size = 1 << n
        for i in range(n):
            for j in range(i + 1, n):
                bi = 1 << i
                bj = 1 << j
                for s in range(size):
                    if s & (bi | bj) == 0:
                        out[pos] = abs(values[s | bi] - values[s | bj])
                        pos += 1
        return out

    @njit
    def _nb_subset_sums(weights):
        # Highest member added last, so sums accumulate in ascending index order.
        n = weights.shape[0]
        out = np.zeros(1 << n)
        for i in range(n):
            top = 1 << i
            for m in range(top):
                out[top + m] = out[m] + weights[i]
        return out

    numba_impl = SimpleNamespace(
        shapley_from_table=_nb_shapley_from_table,
        cosine_distances=_nb_cosine_distances,
        threshold_labels=_nb_threshold_labels,
        max_within=_nb_max_within,
        max_edge_within=_nb_max_edge_within,
        pair_deltas=_nb_pair_deltas,
        subset_sums=_nb_subset_sums,
    )
else:  # pragma: no cover
    numba_impl = None

active = numba_impl if USE_NUMBA else numpy_impl
BACKEND = "numba" if USE_NUMBA else "numpy"


def shapley_from_table(values: np.ndarray, n: int) -> np.ndarray:
    return active.shapley_from_table(np.ascontiguousarray(values, dtype=np.float64), int(n))


def cosine_distances(x: np.ndarray) -> np.ndarray:
    return active.cosine_distances(np.ascontiguousarray(x, dtype=np.float64))


def threshold_labels(d: np.ndarray, r: float) -> np.ndarray:
    return active.threshold_labels(np.ascontiguousarray(d, dtype=np.float64), float(r))


def max_within(d: np.ndarray, labels: np.ndarray) -> float:
    return float(active.max_within(np.ascontiguousarray(d, dtype=np.float64), np.asarray(labels, dtype=np.int64)))


def max_edge_within(d: np.ndarray, labels: np.ndarray, r: float) -> float:
    return float(
        active.max_edge_within(np.ascontiguousarray(d, dtype=np.float64), np.asarray(labels, dtype=np.int64), float(r))
    )


def pair_deltas(values: np.ndarray, n: int) -> np.ndarray:
    return active.pair_deltas(np.ascontiguousarray(values, dtype=np.float64), int(n))


def subset_sums(weights: np.ndarray) -> np.ndarray:
    return active.subset_sums(np.ascontiguousarray(weights, dtype=np.float64))
