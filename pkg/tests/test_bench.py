import numpy as np
import pytest
from conftest import triangular_embeddings
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import spearmanr

from docval.bench import (
    best_under_budget,
    default_grid,
    epsilon_grid,
    error_metrics,
    fit_lipschitz,
    frontier,
    lipschitz_scan,
    planted_cluster_game,
    run_method,
    tmc_tolerance_grid,
    truth_for,
    variance_decomposition,
)
from docval.cluster import distance_matrix
from docval.core import Attribution
from docval.errors import IncompleteTable, InsufficientReplicates, MemberMismatch, TruthUnavailable, ValidationError
from docval.valuefn import EvaluationRecord, function_game, synth_game, table_game


def att(*values):
    return Attribution("exact", {f"d{i}": float(v) for i, v in enumerate(values)}, 0)


def test_error_metric_examples():
    assert error_metrics(att(1, 2), att(1, 2)) == (0.0, 0.0, 0.0)
    assert error_metrics(att(0.05), att(0.0))[2] == pytest.approx(50.0)
    mae, mse, mape = error_metrics(att(1.2, 0.8), att(1, 1))
    assert mae == pytest.approx(0.2) and mse == pytest.approx(0.04) and mape == pytest.approx(100 * 0.2 / 1.1)
    with pytest.raises(MemberMismatch):
        error_metrics(att(1), att(1, 2))


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8), st.integers(0, 1000))
def test_mae_and_mse_are_symmetric_but_mape_is_not(values, seed):
    other = np.random.default_rng(seed).uniform(-5, 5, len(values))
    a, b = att(*values), att(*other)
    ab, ba = error_metrics(a, b), error_metrics(b, a)
    assert ab[0] == pytest.approx(ba[0]) and ab[1] == pytest.approx(ba[1])
    assert ab[1] >= ab[0] ** 2 - 1e-12


def test_mape_asymmetry_example():
    assert error_metrics(att(1.0), att(0.0))[2] != error_metrics(att(0.0), att(1.0))[2]


def test_epsilon_grid_and_default_grid():
    grid = epsilon_grid()
    assert grid[0] == 0.01 and grid[-1] == pytest.approx(0.985) and len(grid) == 40
    assert set(default_grid()) == {"exact", "cluster", "mc", "tmc", "kernelshap", "equal", "relevance"}


def small_games(count=4, n=5, sigma=0.05):
    games = []
    for s in range(count):
        rng = np.random.default_rng(s)
        games.append(synth_game(rng.uniform(0.05, 1, (n, 6)), rng.uniform(0.05, 1, 6), noise_sigma=sigma, seed=s)[0])
    return games


def test_frontier_singleton_limit_and_exact_row():
    games = small_games()
    points = frontier(games, {"exact": [{}], "cluster": [{"epsilon": 1e-9}], "mc": [{"permutations": 3}]}, replications=3)
    by = {p.method: p for p in points}
    for m in ("exact", "cluster"):
        assert by[m].unique_subsets == 31 and by[m].mae == 0 and by[m].mse == 0
        assert by[m].replication_ci == (0.0, 0.0) and len(by[m].replicates) == 1
    assert len(by["mc"].replicates) == 3 and by["mc"].replication_ci[0] <= by["mc"].mae <= by["mc"].replication_ci[1]
    assert [p.method for p in points] == ["cluster", "exact", "mc"]


def test_frontier_epsilon_sweep_trades_cost_for_error():
    games = small_games(6, n=7)
    points = frontier(games, {"cluster": [{"epsilon": e} for e in epsilon_grid()]}, replications=1)
    eps = [p.param["epsilon"] for p in points]
    cost = [p.unique_subsets for p in points]
    assert eps == sorted(eps)
    assert cost[0] == 127 and cost[-1] == 1
    # a trend, not strict monotonicity: ties and small blips are allowed
    assert spearmanr(eps, cost).statistic < -0.85


def test_frontier_is_independent_of_concurrency():
    games = small_games(3)
    grid = {"mc": [{"permutations": 2}], "kernelshap": [{"samples": 12}], "tmc": [{"permutations": 4}]}
    a = frontier(games, grid, replications=4, seed=9)
    b = frontier(games, grid, replications=4, seed=9, concurrency=8)
    assert a == b


def test_best_under_budget():
    games = small_games(2)
    points = frontier(games, {"mc": [{"permutations": k} for k in (1, 2, 8)], "equal": [{}]}, replications=2)
    assert best_under_budget(points, "mc", 0) is None
    cheap = best_under_budget(points, "mc", 1e9)
    assert cheap == min(p.mae for p in points if p.method == "mc")
    assert best_under_budget(points, "equal", 1, replication=1) == points[0].mae


def test_truth_sources():
    game = small_games(1, sigma=0)[0]
    np.testing.assert_allclose(truth_for(game, "true_values").array(), truth_for(game, "exact").array(), atol=1e-12)
    with pytest.raises(TruthUnavailable):
        truth_for(function_game(lambda m: 0.0, 2), "file")
    with pytest.raises(TruthUnavailable):
        truth_for(game, "oracle")
    with pytest.raises(ValidationError):
        run_method(game, "bogus", {})


def test_planted_games_are_reproducible_and_clustered():
    a, b = planted_cluster_game(8, seed=3), planted_cluster_game(8, seed=3)
    assert np.array_equal(a.embeddings, b.embeddings) and a.evaluate(77) == b.evaluate(77)
    assert a.evaluate(a.full_mask) <= 10.0 + 1.0
    d = distance_matrix(a.embeddings).entries
    assert np.min(d[np.triu_indices(8, 1)]) < 0.1


# --- Lipschitz -----------------------------------------------------------------


@pytest.mark.parametrize("slope", [0.5, 2.5, 7.0])
def test_lipschitz_recovers_construction_slope(slope, rng):
    pos = rng.uniform(0, 0.35, 9)
    pos[0] = 0.0  # anchor
    x = triangular_embeddings(pos)
    anchor_dist = distance_matrix(x).entries[0, 1:]
    weights = slope * (1 - anchor_dist)
    game = function_game(lambda m: float(sum(weights[i] for i in range(8) if m >> i & 1)), 8, embeddings=x[1:])
    scan = lipschitz_scan(game)
    assert scan.total_points == 28 * 64 and scan.points.shape == (1792, 2)
    assert scan.fitted_L == pytest.approx(slope, rel=0.05)
    np.testing.assert_allclose(scan.points[:, 1], slope * scan.points[:, 0], atol=1e-9)


def test_lipschitz_identical_members():
    x = np.tile([[0.6, 0.8]], (4, 1))
    game = function_game(lambda m: float(bin(m).count("1") > 0), 4, embeddings=x)
    scan = lipschitz_scan(game)
    assert np.all(scan.points == 0) and scan.fitted_L == 0


def test_lipschitz_sampling_and_errors():
    x = np.random.default_rng(0).standard_normal((6, 3))
    game = function_game(lambda m: float(m % 7), 6, embeddings=x)
    scan = lipschitz_scan(game, sample=50, seed=1)
    assert scan.points.shape == (50, 2) and scan.total_points == 15 * 16
    assert scan.fitted_L == lipschitz_scan(game.fresh()).fitted_L
    with pytest.raises(IncompleteTable):
        lipschitz_scan(table_game({"0": 1, "1": 2}), np.zeros((2, 2)))
    with pytest.raises(ValidationError):
        lipschitz_scan(game, quantile=0)


def test_fit_lipschitz_quantile_rule():
    d = np.array([0.1, 0.1, 0.1, 0.1, 0.5])
    delta = np.array([0.1, 0.2, 0.3, 1.0, 50.0])
    assert fit_lipschitz(d, delta, quantile=0.75) == pytest.approx(3.0)
    assert fit_lipschitz(d, delta, quantile=1.0) == pytest.approx(10.0)
    assert fit_lipschitz(np.array([0.0]), np.array([1.0]), 1.0) == np.inf
    assert np.isnan(fit_lipschitz(np.array([0.9]), np.array([1.0])))


# --- variance decomposition --------------------------------------------------------


def test_deterministic_backend_has_no_variance():
    blocks = [np.full((3, 4), v) for v in (1.0, 5.0)]
    assert variance_decomposition(blocks) == (0.0, 0.0, 0.0)
    records = [[EvaluationRecord("0", (7.0, 7.0)), EvaluationRecord("0", (7.0, 7.0))]]
    assert variance_decomposition(records) == (0.0, 0.0, 0.0)


def test_two_stage_components_recovered():
    rng = np.random.default_rng(11)
    sum_sd, eval_sd = 0.8, 0.5
    blocks = []
    for _ in range(1000):
        mean = rng.uniform(2, 8)
        summaries = mean + sum_sd * rng.standard_normal(4)
        blocks.append(summaries[:, None] + eval_sd * rng.standard_normal((4, 4)))
    total, sv, ev = variance_decomposition(blocks)
    assert sv == pytest.approx(sum_sd**2, rel=0.15) and ev == pytest.approx(eval_sd**2, rel=0.15)
    assert total == pytest.approx(sv + ev)
    raw_total, raw_sv, raw_ev = variance_decomposition(blocks, corrected=False)
    assert raw_total == pytest.approx(raw_sv + raw_ev)


def test_variance_needs_replicates():
    with pytest.raises(InsufficientReplicates):
        variance_decomposition([np.zeros((1, 4))])
    with pytest.raises(InsufficientReplicates):
        variance_decomposition([])


def test_tmc_tolerance_grid():
    grid = tmc_tolerance_grid(10)
    assert [g["tolerance"] for g in grid] == [0.1, 0.25, 0.5, 1.0, 2.0, 3.0]
    points = frontier(small_games(2), {"tmc": grid}, replications=2)
    costs = [p.unique_subsets for p in sorted(points, key=lambda p: p.param["tolerance"])]
    assert costs == sorted(costs, reverse=True)
