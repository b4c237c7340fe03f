"""Cluster Shapley: Shapley values over clusters of similar documents.

Documents are partitioned into clusters of bounded embedding diameter; each
cluster plays as a single meta-document in a game whose value for a set of
clusters is the base value of the union of their members. Cluster values
(exact or approximated) are split equally among members.
"""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Callable

import numpy as np

from .approx import KernelShapConfig, McConfig, TmcConfig, kernel_shap, monte_carlo, truncated_monte_carlo
from .core import Attribution, ClusterAssignment
from .errors import GameTooLarge, InfeasibleTarget, ValidationError
from .exact import DEFAULT_MAX_PLAYERS, shapley_from_table


class ClusterGame:
    """The game whose players are the clusters of ``assignment``.

    Evaluations go through the base game, so caching and unique-subset
    accounting are in terms of base-level coalitions.
    """

    def __init__(self, base, assignment: ClusterAssignment):
        assignment.check_partition(base.n)
        self.base = base
        self.assignment = assignment
        self._union = [sum(1 << i for i in c) for c in assignment.clusters]

    @property
    def m(self) -> int:
        return len(self._union)

    n = m

    @property
    def members(self) -> tuple[str, ...]:
        return tuple(f"G{k}" for k in range(self.m))

    @property
    def full_mask(self) -> int:
        return (1 << self.m) - 1

    v_max = property(lambda self: self.base.v_max)
    v_empty = property(lambda self: self.base.v_empty)
    unique_subsets = property(lambda self: self.base.unique_subsets)

    def base_mask(self, cluster_mask: int) -> int:
        out = 0
        k = 0
        while cluster_mask:
            if cluster_mask & 1:
                out |= self._union[k]
            cluster_mask >>= 1
            k += 1
        return out

    def groups(self, cluster_mask: int) -> tuple[tuple[int, ...], ...]:
        return tuple(c for k, c in enumerate(self.assignment.clusters) if cluster_mask >> k & 1)

    def evaluate(self, cluster_mask: int) -> float:
        if cluster_mask < 0 or cluster_mask >> self.m:
            raise ValidationError(f"cluster mask {cluster_mask:#b} references clusters >= {self.m}")
        if cluster_mask == 0:
            return self.base.v_empty
        return self.base.evaluate(self.base_mask(cluster_mask), self.groups(cluster_mask))

    def evaluate_many(self, masks, concurrency: int = 1) -> np.ndarray:
        masks = list(masks)
        if concurrency <= 1:
            return np.array([self.evaluate(m) for m in masks], dtype=np.float64)
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            return np.fromiter(pool.map(self.evaluate, masks), dtype=np.float64, count=len(masks))

    def value_table(self, concurrency: int = 1) -> np.ndarray:
        table = np.empty(1 << self.m)
        table[0] = self.base.v_empty
        table[1:] = self.evaluate_many(range(1, 1 << self.m), concurrency)
        return table


def meta_value(cg: ClusterGame, cluster_subset: int) -> float:
    return cg.evaluate(int(cluster_subset))


def redistribute(base, assignment: ClusterAssignment, cluster_values) -> np.ndarray:
    """Equal split of each cluster's value among its members."""
    phi = np.empty(base.n)
    for value, members in zip(cluster_values, assignment.clusters):
        phi[list(members)] = value / len(members)
    return phi


def _params(assignment: ClusterAssignment) -> dict:
    return {
        "epsilon": assignment.epsilon,
        "m": assignment.m,
        "achieved_radius": assignment.achieved_radius,
        "certified": assignment.certified,
    }


def cluster_shapley(game, assignment: ClusterAssignment, max_clusters: int = DEFAULT_MAX_PLAYERS, concurrency: int = 1) -> Attribution:
    """Exact Shapley over clusters, then an equal split within each cluster."""
    cg = ClusterGame(game, assignment)
    if cg.m > max_clusters:
        raise GameTooLarge(f"{cg.m} clusters exceed the exact cluster-level cap of {max_clusters}")
    cluster_phi = shapley_from_table(cg.value_table(concurrency), cg.m)
    phi = redistribute(game, assignment, cluster_phi)
    return Attribution.from_array(game, "cluster", phi, game.unique_subsets, **_params(assignment))


_APPROXIMATORS: dict[str, tuple[type, Callable]] = {
    "mc": (McConfig, monte_carlo),
    "tmc": (TmcConfig, truncated_monte_carlo),
    "kernelshap": (KernelShapConfig, kernel_shap),
}


def cluster_shapley_approx(game, assignment: ClusterAssignment, approximator: str = "mc", config=None, **kw) -> Attribution:
    """Cluster Shapley with a sampling approximator at the cluster level."""
    try:
        cfg_type, run = _APPROXIMATORS[approximator]
    except KeyError:
        raise ValidationError(f"unknown cluster-level approximator {approximator!r}") from None
    cfg = config or cfg_type(**kw)
    cg = ClusterGame(game, assignment)
    if approximator == "kernelshap" and cfg.samples < cg.m:
        cfg = replace(cfg, samples=cg.m)
    inner = run(cg, cfg)
    phi = redistribute(game, assignment, inner.array())
    params = {**_params(assignment), "approximator": approximator, **inner.params}
    return Attribution.from_array(game, "cluster_mc", phi, game.unique_subsets, **params)


# --- error bounds ---------------------------------------------------------


def theorem1_bound(lipschitz: float, epsilon: float) -> float:
    """Per-document error bound L * epsilon of exact Cluster Shapley."""
    if lipschitz < 0 or epsilon < 0:
        raise ValidationError("L and epsilon must be nonnegative")
    return lipschitz * epsilon


def theorem2_bound(lipschitz: float, epsilon: float, eps_a: float, cluster_size: int) -> float:
    """Per-document bound L * epsilon + eps_A / |G_k| with an approximate cluster level."""
    if cluster_size < 1:
        raise ValidationError("cluster_size must be >= 1")
    if eps_a < 0:
        raise ValidationError("eps_A must be nonnegative")
    return theorem1_bound(lipschitz, epsilon) + eps_a / cluster_size


def mc_cluster_error(v_max: float, eta: float, permutations: int) -> float:
    """Hoeffding half-width for an N-permutation mean with range v_max, at confidence 1 - eta."""
    if not 0 < eta < 1 or permutations < 1:
        raise ValidationError("need 0 < eta < 1 and permutations >= 1")
    return v_max * math.sqrt(math.log(2 / eta) / (2 * permutations))


def corollary2_sample_size(v_max: float, eta: float, cluster_size: int, eps_total: float, lipschitz: float, epsilon: float) -> int:
    """Permutations N that keep each document's error under eps_total with probability 1 - eta."""
    if not 0 < eta < 1:
        raise ValidationError("eta must lie in (0, 1)")
    if cluster_size < 1:
        raise ValidationError("cluster_size must be >= 1")
    slack = eps_total - lipschitz * epsilon
    if slack <= 0:
        raise InfeasibleTarget(f"eps_total={eps_total} does not exceed the clustering error L*eps={lipschitz * epsilon}")
    n = v_max**2 * math.log(2 / eta) / (2 * cluster_size**2 * slack**2)
    # Guard against float noise pushing an integral bound up by one.
    return max(1, math.ceil(n - 1e-9))
