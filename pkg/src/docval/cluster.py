"""Cosine distances and clustering with a certified intra-cluster diameter."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .core import ClusterAssignment, DistanceMatrix, EmbeddingVector
from .errors import DimensionMismatch, IterationLimitExceeded, SchemaError, ValidationError, ZeroNorm
from .valuefn import as_matrix, as_vector


@dataclass(frozen=True)
class ClusteringConfig:
    epsilon: float
    min_pts: int = 1
    alpha: float = 0.95
    max_iterations: int = 200

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")
        if not 0 < self.alpha < 1:
            raise ValidationError("alpha must lie in (0, 1)")
        if self.min_pts < 1 or self.max_iterations < 1:
            raise ValidationError("min_pts and max_iterations must be >= 1")


def cosine_similarity(a, b) -> float:
    a, b = as_vector(a), as_vector(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"dimensions differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroNorm("cosine similarity is undefined for zero vectors")
    return float(np.dot(a, b) / (na * nb))


def cosine_distance(a: EmbeddingVector | np.ndarray, b: EmbeddingVector | np.ndarray) -> float:
    """1 - cos(a, b); spans [0, 2] for arbitrary real vectors."""
    return min(2.0, max(0.0, 1.0 - cosine_similarity(a, b)))


def distance_matrix(embeddings) -> DistanceMatrix:
    x = as_matrix(embeddings)
    if x.shape[0] == 0:
        raise ValidationError("need at least one embedding")
    if np.any(np.linalg.norm(x, axis=1) == 0):
        raise ZeroNorm("cosine distance is undefined for zero vectors")
    return DistanceMatrix(_kernels.cosine_distances(x))


def _entries(matrix) -> np.ndarray:
    return matrix.entries if isinstance(matrix, DistanceMatrix) else np.asarray(matrix, dtype=np.float64)


def _clusters_from_labels(labels: np.ndarray) -> tuple[tuple[int, ...], ...]:
    groups: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(i)
    return tuple(tuple(g) for g in groups.values())


def adaptive_dbscan(matrix, config: ClusteringConfig | float) -> ClusterAssignment:
    """Density clustering (MinPts = 1) whose radius shrinks until every cluster's
    diameter is at most epsilon.

    With MinPts = 1 every point is a core point, so each pass is the connected
    components of the graph with edges d <= r. The radius is multiplied by
    alpha after every failed pass. Shrinks that cannot drop an edge leave the
    graph unchanged, so they are applied without re-running the pass; the
    returned radius and shrink count are those of the plain loop.
    ``max_iterations`` bounds the number of clustering passes.
    """
    if not isinstance(config, ClusteringConfig):
        config = ClusteringConfig(float(config))
    if config.min_pts != 1:
        raise ValidationError("the diameter-certified clustering requires min_pts = 1")
    d = _entries(matrix)
    eps, alpha = config.epsilon, config.alpha
    r = eps
    shrinks = 0
    for _ in range(config.max_iterations):
        labels = _kernels.threshold_labels(d, r)
        if _kernels.max_within(d, labels) <= eps:
            return ClusterAssignment(eps, _clusters_from_labels(labels), r, shrinks)
        # Largest edge still in use; the graph only changes once r drops below it.
        top = _kernels.max_edge_within(d, labels, r)
        r *= alpha
        shrinks += 1
        while r >= top:
            r *= alpha
            shrinks += 1
    raise IterationLimitExceeded(f"no certified clustering after {config.max_iterations} passes")


def standard_dbscan(matrix, r: float, min_pts: int = 1) -> ClusterAssignment:
    """Plain DBSCAN on a precomputed distance matrix; no diameter certificate.

    Noise points (possible only for min_pts > 1) are returned as singletons so
    the result is still a partition. Border points join the cluster of their
    lowest-index core neighbour.
    """
    if not r > 0:
        raise ValidationError("radius must be positive")
    d = _entries(matrix)
    n = d.shape[0]
    within = d <= r
    core = within.sum(axis=1) >= min_pts
    core_d = np.where(core[:, None] & core[None, :], d, np.inf)
    labels = _kernels.threshold_labels(core_d, r)
    out = np.full(n, -1, dtype=np.int64)
    out[core] = labels[core]
    nxt = int(out.max()) + 1 if core.any() else 0
    for i in range(n):
        if core[i]:
            continue
        neighbours = np.flatnonzero(within[i] & core)
        if neighbours.size:
            out[i] = out[neighbours[0]]
        else:
            out[i] = nxt
            nxt += 1
    # Renumber by smallest member for a canonical order.
    order: dict[int, int] = {}
    for i in range(n):
        order.setdefault(int(out[i]), len(order))
    canon = np.array([order[int(x)] for x in out], dtype=np.int64)
    return ClusterAssignment(r, _clusters_from_labels(canon), r, 0, certified=False)


def singleton_assignment(n: int) -> ClusterAssignment:
    return ClusterAssignment(0.0, tuple((i,) for i in range(n)), 0.0)


def min_positive_distance(matrix) -> float:
    d = _entries(matrix)
    off = d[~np.eye(d.shape[0], dtype=bool)]
    off = off[off > 0]
    return float(off.min()) if off.size else float("inf")


def save_clusters(assignment: ClusterAssignment, path) -> None:
    payload = {
        "epsilon": assignment.epsilon,
        "achieved_radius": assignment.achieved_radius,
        "iterations": assignment.iterations,
        "certified": assignment.certified,
        "clusters": [list(c) for c in assignment.clusters],
    }
    text = json.dumps(payload, indent=1) + "\n"
    if path == "-":
        print(text, end="")
    else:
        Path(path).write_text(text, encoding="utf-8")


def load_clusters(path) -> ClusterAssignment:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return ClusterAssignment(
            float(raw["epsilon"]),
            tuple(tuple(c) for c in raw["clusters"]),
            float(raw["achieved_radius"]),
            int(raw.get("iterations", 0)),
            bool(raw.get("certified", True)),
        )
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise SchemaError(f"cannot load clusters from {path}: {exc}") from exc
