"""Error metrics, the accuracy/cost frontier runner, the Lipschitz scanner and
the two-stage variance decomposition."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from . import _kernels
from .approx import KernelShapConfig, McConfig, TmcConfig, kernel_shap, monte_carlo, truncated_monte_carlo
from .baselines import equal_attribution, relevance_weighted
from .cluster import ClusteringConfig, adaptive_dbscan, distance_matrix
from .core import Attribution, DistanceMatrix, Query, ValuationGame
from .cshap import cluster_shapley, cluster_shapley_approx
from .errors import (
    DimensionMismatch,
    IncompleteTable,
    InsufficientReplicates,
    MemberMismatch,
    MissingTableEntry,
    TruthUnavailable,
    ValidationError,
)
from .exact import exact_shapley
from .valuefn import CoverageSource, EvaluationRecord, random_unit_vectors

MAPE_CONSTANT = 0.1
DETERMINISTIC = frozenset({"exact", "cluster", "equal", "relevance"})
Z95 = 1.959963984540054


def error_metrics(estimate: Attribution, truth: Attribution, mape_constant: float = MAPE_CONSTANT) -> tuple[float, float, float]:
    """(mae, mse, mape%) of ``estimate`` against ``truth``; mape divides by |truth| + constant."""
    if set(estimate.values) != set(truth.values):
        raise MemberMismatch("estimate and truth cover different members")
    members = truth.members
    est = estimate.array(members)
    ref = truth.array(members)
    gap = np.abs(est - ref)
    return float(gap.mean()), float((gap**2).mean()), float(100.0 * np.mean(gap / (np.abs(ref) + mape_constant)))


# --- running a method by name ---------------------------------------------


def run_method(game, method: str, params: Mapping[str, Any], seed: int = 0, concurrency: int = 1) -> Attribution:
    """Dispatch to one attribution method with frontier-style parameters."""
    p = dict(params)
    if method == "exact":
        return exact_shapley(game, concurrency=concurrency)
    if method == "equal":
        return equal_attribution(game)
    if method == "relevance":
        return relevance_weighted(game, shift=bool(p.get("shift", False)))
    if method == "mc":
        return monte_carlo(game, McConfig(int(p.get("permutations", 100)), seed, concurrency=concurrency))
    if method == "tmc":
        cfg = TmcConfig(
            int(p.get("permutations", 100)), seed, concurrency=concurrency, tolerance=float(p.get("tolerance", 0.5))
        )
        return truncated_monte_carlo(game, cfg)
    if method == "kernelshap":
        cfg = KernelShapConfig(
            int(p.get("samples", 100)),
            seed,
            ridge_lambda=float(p.get("ridge_lambda", 1e-6)),
            include_all_pairs_first=bool(p.get("include_all_pairs_first", True)),
            concurrency=concurrency,
        )
        return kernel_shap(game, cfg)
    if method in ("cluster", "cluster_mc"):
        if game.embeddings is None:
            raise DimensionMismatch("cluster methods need member embeddings")
        assignment = adaptive_dbscan(
            distance_matrix(game.embeddings),
            ClusteringConfig(float(p["epsilon"]), alpha=float(p.get("alpha", 0.95))),
        )
        if method == "cluster":
            return cluster_shapley(game, assignment, concurrency=concurrency)
        approximator = p.get("approximator", "mc")
        if approximator == "kernelshap":
            cfg = KernelShapConfig(int(p.get("samples", 100)), seed, concurrency=concurrency)
        elif approximator == "tmc":
            cfg = TmcConfig(int(p.get("permutations", 100)), seed, concurrency=concurrency, tolerance=float(p.get("tolerance", 0.5)))
        else:
            cfg = McConfig(int(p.get("permutations", 100)), seed, concurrency=concurrency)
        return cluster_shapley_approx(game, assignment, approximator, cfg)
    raise ValidationError(f"unknown method {method!r}")


def epsilon_grid(start: float = 0.01, stop: float = 1.00, step: float = 0.025) -> list[float]:
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + k * step, 10) for k in range(count)]


TMC_TOLERANCES = (0.1, 0.25, 0.5, 1.0, 2.0, 3.0)


def tmc_tolerance_grid(permutations: int, tolerances=TMC_TOLERANCES) -> list[dict]:
    """TMC settings for tuning the tolerance at a fixed permutation count."""
    return [{"permutations": permutations, "tolerance": t} for t in tolerances]


def default_grid() -> dict[str, list[dict]]:
    return {
        "exact": [{}],
        "cluster": [{"epsilon": e} for e in epsilon_grid()],
        "mc": [{"permutations": k} for k in (1, 2, 3, 4, 5, 6, 8, 10, 15, 20, 30, 50)],
        "tmc": [{"permutations": k, "tolerance": 0.5} for k in (1, 2, 3, 4, 5, 6, 8, 10, 15, 20, 30, 50)],
        "kernelshap": [{"samples": s} for s in (8, 12, 16, 20, 24, 32, 40, 48, 64, 96, 128, 192, 254)],
        "equal": [{}],
        "relevance": [{}],
    }


# --- frontier -------------------------------------------------------------


@dataclass
class FrontierPoint:
    method: str
    param: dict
    unique_subsets: float
    mae: float
    mse: float
    mape: float
    replication_ci: tuple[float, float] | None = None
    # Per replication: (mean unique subsets, mean mae) across games.
    replicates: list[tuple[float, float]] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if min(self.mae, self.mse, self.mape) < 0:
            raise ValidationError("error metrics must be nonnegative")


def game_seed(seed: int, replication: int, game_index: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(replication, game_index)).generate_state(1)[0])


def truth_for(game, truth_method: str) -> Attribution:
    if truth_method == "exact":
        return exact_shapley(game.fresh())
    if truth_method in ("file", "synthetic", "true_values"):
        if game.true_values is None:
            raise TruthUnavailable(f"game for query {game.query.id!r} carries no true values")
        return Attribution.from_array(game, "exact", game.true_values, 0)
    raise TruthUnavailable(f"unknown truth source {truth_method!r}")


def _param_key(param: Mapping) -> tuple:
    return tuple(sorted((k, str(v) if isinstance(v, str) else float(v)) for k, v in param.items()))


def frontier(
    games: Sequence,
    methods: Mapping[str, Sequence[Mapping]],
    truth_method: str = "exact",
    replications: int = 10,
    seed: int = 0,
    concurrency: int = 1,
) -> list[FrontierPoint]:
    """Mean cost and error of every (method, param) across ``games``.

    Every run starts from ``game.fresh()``, so all methods see the same
    seeded scores and each run's unique-subset count is its own. Stochastic
    methods are replicated with seeds derived from (seed, replication, game).
    """
    if replications < 1:
        raise ValidationError("replications must be >= 1")
    if not games:
        raise ValidationError("no games given")
    truths = [truth_for(g, truth_method) for g in games]

    def one(job):
        method, param, r, g = job
        att = run_method(games[g].fresh(), method, param, game_seed(seed, r, g))
        return att.unique_subsets, error_metrics(att, truths[g])

    points = []
    for method in sorted(methods):
        for param in sorted(methods[method], key=_param_key):
            reps = 1 if method in DETERMINISTIC else replications
            jobs = [(method, param, r, g) for r in range(reps) for g in range(len(games))]
            if concurrency > 1:
                with ThreadPoolExecutor(max_workers=concurrency) as pool:
                    results = list(pool.map(one, jobs))
            else:
                results = [one(j) for j in jobs]
            arr = np.array([[c, *e] for c, e in results], dtype=np.float64).reshape(reps, len(games), 4)
            per_rep = arr.mean(axis=1)
            mean = per_rep.mean(axis=0)
            if reps > 1:
                half = Z95 * per_rep[:, 1].std(ddof=1) / math.sqrt(reps)
            else:
                half = 0.0
            points.append(
                FrontierPoint(
                    method,
                    dict(param),
                    float(mean[0]),
                    float(mean[1]),
                    float(mean[2]),
                    float(mean[3]),
                    (float(mean[1] - half), float(mean[1] + half)),
                    [(float(c), float(m)) for c, m in per_rep[:, :2]],
                )
            )
    return points


def best_under_budget(points: Sequence[FrontierPoint], method: str, budget: float, replication: int | None = None) -> float | None:
    """Lowest MAE of ``method`` among points costing at most ``budget`` unique subsets.

    With ``replication`` set, cost and MAE are read from that replication only
    (deterministic methods have a single replication that stands for all).
    """
    best = None
    for p in points:
        if p.method != method:
            continue
        if replication is None:
            cost, mae = p.unique_subsets, p.mae
        else:
            cost, mae = p.replicates[min(replication, len(p.replicates) - 1)]
        if cost <= budget and (best is None or mae < best):
            best = mae
    return best


# --- synthetic games with planted near-duplicate clusters -----------------


def planted_cluster_game(
    n: int = 8,
    seed: int = 0,
    *,
    topics: int | None = None,
    dim: int = 32,
    spread: float = 0.08,
    sigma: float = 0.05,
    total: float = 10.0,
    query_id: str | None = None,
) -> ValuationGame:
    """Topic-coverage game whose members come in near-duplicate groups.

    Each topic has a random unit centroid; its members are small perturbations
    of it, so same-topic members are close in cosine distance and behave as
    substitutes. A member's coverage strength decays with its distance from
    the centroid. Topic weights sum to ``total``.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    k = int(topics if topics is not None else rng.integers(2, max(3, n // 2 + 1)))
    k = max(1, min(k, n))
    centroids = random_unit_vectors(k, dim, rng)
    # Every topic gets at least one member; the rest are spread at random.
    assign = np.concatenate([np.arange(k), rng.integers(0, k, size=n - k)])
    rng.shuffle(assign)
    x = centroids[assign] + spread * rng.standard_normal((n, dim)) / math.sqrt(dim)
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    base = rng.uniform(0.5, 0.9, size=k)
    dist = 1.0 - np.einsum("ij,ij->i", x, centroids[assign])
    strength = np.clip(base[assign] * (1.0 - dist), 0.0, 1.0)
    topic_weights = total * rng.dirichlet(np.full(k, 2.0))
    q = topic_weights @ centroids
    source = CoverageSource(assign, strength, topic_weights, sigma, seed=int(rng.integers(2**63)))
    query = Query(query_id or f"planted-{seed}", "", 1.0)
    return ValuationGame(query, [f"d{i}" for i in range(n)], source, total, embeddings=x, query_embedding=q)


# --- Lipschitz scan -------------------------------------------------------


@dataclass
class LipschitzScan:
    points: np.ndarray  # shape (N, 2): distance, contribution gap
    fitted_L: float
    quantile: float = 0.95
    distance_cap: float = 0.4
    total_points: int = 0


def fit_lipschitz(d: np.ndarray, delta: np.ndarray, quantile: float = 0.95, distance_cap: float = 0.4) -> float:
    """Smallest L with at least ``quantile`` of the points (d <= cap) obeying delta <= L * d."""
    keep = d <= distance_cap
    d, delta = d[keep], delta[keep]
    if d.size == 0:
        return float("nan")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(d > 0, delta / np.where(d > 0, d, 1.0), np.where(delta > 0, np.inf, 0.0))
    ratio.sort()
    rank = max(1, math.ceil(quantile * ratio.size - 1e-9))
    return float(ratio[rank - 1])


def lipschitz_scan(
    game,
    matrix: DistanceMatrix | np.ndarray | None = None,
    quantile: float = 0.95,
    distance_cap: float = 0.4,
    sample: int | None = None,
    seed: int = 0,
) -> LipschitzScan:
    """Pairs every member pair's embedding distance with the gap between their
    marginal contributions to each coalition that excludes both.

    The fit uses all points; ``sample`` only thins the returned points.
    """
    if not 0 < quantile <= 1:
        raise ValidationError("quantile must lie in (0, 1]")
    if matrix is None:
        if game.embeddings is None:
            raise DimensionMismatch("need a distance matrix or member embeddings")
        matrix = distance_matrix(game.embeddings)
    d = matrix.entries if isinstance(matrix, DistanceMatrix) else np.asarray(matrix, dtype=np.float64)
    n = game.n
    if d.shape != (n, n):
        raise DimensionMismatch("distance matrix does not match the game")
    try:
        table = game.value_table()
    except MissingTableEntry as exc:
        raise IncompleteTable(f"lipschitz scan needs every coalition score: {exc}") from exc
    deltas = _kernels.pair_deltas(table, n)
    per_pair = 1 << (n - 2) if n >= 2 else 0
    iu = np.triu_indices(n, 1)
    dist = np.repeat(d[iu], per_pair)
    fitted = fit_lipschitz(dist, deltas, quantile, distance_cap)
    pts = np.column_stack([dist, deltas])
    if sample is not None and sample < len(pts):
        idx = np.sort(np.random.default_rng(seed).choice(len(pts), size=sample, replace=False))
        pts = pts[idx]
    return LipschitzScan(pts, fitted, quantile, distance_cap, total_points=len(dist))


# --- variance decomposition ----------------------------------------------


def _as_blocks(records) -> list[np.ndarray]:
    blocks = []
    for rec in records:
        if isinstance(rec, EvaluationRecord):
            raise ValidationError("group EvaluationRecords by coalition: one list per subset")
        if len(rec) and isinstance(rec[0], EvaluationRecord):
            rec = [r.replicate_scores for r in rec]
        block = np.asarray(rec, dtype=np.float64)
        if block.ndim != 2:
            raise ValidationError("each subset needs a summaries x evaluations array")
        if block.shape[0] < 2 or block.shape[1] < 2:
            raise InsufficientReplicates("need at least 2 summaries and 2 evaluations per subset")
        blocks.append(block)
    if not blocks:
        raise InsufficientReplicates("no subsets given")
    return blocks


def variance_decomposition(records, corrected: bool = True) -> tuple[float, float, float]:
    """(total, summarization, evaluation) variance averaged over subsets.

    ``records`` holds one block per subset: rows are summaries, columns are
    repeated evaluations of that summary (arrays or lists of EvaluationRecord).
    Evaluation variance is the mean within-summary variance. With
    ``corrected`` the spread of summary means has its evaluation-noise share
    (eval_var / E) removed, so both parts and their sum are unbiased for the
    two noise stages and for the variance of a single score. With
    ``corrected=False`` the plain population (ddof=0) moments are returned
    and total equals the pooled variance of all scores exactly.
    """
    blocks = _as_blocks(records)
    out = np.zeros(3)
    for b in blocks:
        s, e = b.shape
        if corrected:
            ev = b.var(axis=1, ddof=1).mean()
            sv = b.mean(axis=1).var(ddof=1) - ev / e
            tv = sv + ev
        else:
            ev = b.var(axis=1).mean()
            sv = b.mean(axis=1).var()
            tv = b.var()
        out += (tv, sv, ev)
    out /= len(blocks)
    return float(out[0]), float(out[1]), float(out[2])

