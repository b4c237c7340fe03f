"""One test per acceptance criterion; each records a PASS/FAIL line shown in the terminal summary."""

import json
import math
import time

import httpx
import numpy as np
from conftest import majority_table, permutation_shapley, random_table, record_criterion, triangular_embeddings
from test_remote import FakeLLM

from docval.approx import KernelShapConfig, McConfig, TmcConfig, kernel_shap, monte_carlo, truncated_monte_carlo
from docval.baselines import equal_attribution, relevance_weighted
from docval.bench import best_under_budget, epsilon_grid, frontier, lipschitz_scan, planted_cluster_game, variance_decomposition
from docval.cli import run
from docval.cluster import adaptive_dbscan, distance_matrix, standard_dbscan
from docval.core import Attribution, DistanceMatrix, EmbeddingVector, write_embeddings
from docval.cshap import cluster_shapley, cluster_shapley_approx, corollary2_sample_size
from docval.exact import exact_shapley
from docval.revenue import combined_payout, expected_value
from docval.valuefn import function_game, random_unit_vectors, synth_game


def table_game(table, n):
    return function_game(lambda m: float(table[m]), n, v_max=float(np.max(np.abs(table))) + 1.0)


def swap_bits(mask, i, j):
    bi, bj = mask >> i & 1, mask >> j & 1
    if bi != bj:
        mask ^= (1 << i) | (1 << j)
    return mask


def test_criterion_01_axioms():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = {"efficiency": 0.0, "symmetry": 0.0, "null": 0.0, "linearity": 0.0}
    for _ in range(200):
        n = int(rng.integers(2, 9))
        table = random_table(n, rng)
        i, j = (int(k) for k in rng.choice(n, size=2, replace=False))
        # symmetric pair: v(S) depends on S only up to swapping i and j
        sym = np.array([max(table[m], table[swap_bits(m, i, j)]) for m in range(1 << n)])
        phi = exact_shapley(table_game(sym, n)).array()
        worst["efficiency"] = max(worst["efficiency"], abs(phi.sum() - sym[-1]))
        worst["symmetry"] = max(worst["symmetry"], abs(phi[i] - phi[j]))
        # inert player k: v(S + k) == v(S)
        k = int(rng.integers(n))
        inert = np.array([table[m & ~(1 << k)] for m in range(1 << n)])
        worst["null"] = max(worst["null"], abs(exact_shapley(table_game(inert, n)).array()[k]))
        other = random_table(n, rng)
        lhs = exact_shapley(table_game(table + other, n)).array()
        rhs = exact_shapley(table_game(table, n)).array() + exact_shapley(table_game(other, n)).array()
        worst["linearity"] = max(worst["linearity"], float(np.max(np.abs(lhs - rhs))))
    elapsed = time.perf_counter() - start
    ok = worst["efficiency"] <= 1e-6 and max(worst["symmetry"], worst["null"], worst["linearity"]) <= 1e-9 and elapsed < 10
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f", {elapsed:.1f}s"
    record_criterion(1, "axioms on 200 random games", ok, detail)


def test_criterion_02_oracle_equivalence():
    rng = np.random.default_rng(202)
    start = time.perf_counter()
    worst = 0.0
    games = 0
    for n in range(1, 8):
        tables = [random_table(n, rng) for _ in range(12)]
        tables += [majority_table(n, q) for q in range(1, n + 1)]
        for table in tables:
            phi = exact_shapley(table_game(table, n)).array()
            worst = max(worst, float(np.max(np.abs(phi - permutation_shapley(table, n)))))
            games += 1
    elapsed = time.perf_counter() - start
    record_criterion(2, "subset form equals permutation form", worst <= 1e-9 and elapsed < 30,
                     f"max deviation {worst:.1e} over {games} games, {elapsed:.1f}s")


def test_criterion_03_singleton_limit():
    rng = np.random.default_rng(303)
    mismatches = 0
    for trial in range(100):
        n = int(rng.integers(1, 9))
        table = random_table(n, rng)
        x = rng.standard_normal((n, 5))
        d = distance_matrix(x).entries
        gap = np.min(d[np.triu_indices(n, 1)]) if n > 1 else 1.0
        assignment = adaptive_dbscan(d, gap / 2)
        game = table_game(table, n)
        c = cluster_shapley(game, assignment)
        e = exact_shapley(table_game(table, n))
        if c.values != e.values or c.unique_subsets != e.unique_subsets:
            mismatches += 1
    record_criterion(3, "singleton clusters reproduce exact bit-for-bit", mismatches == 0, f"{mismatches} of 100 games differ")


def test_criterion_04_diameter_bound():
    rng = np.random.default_rng(404)
    bound_hits = cost_hits = 0
    worst_ratio = 0.0
    for trial in range(200):
        n = int(rng.integers(2, 9))
        pos = rng.uniform(0, 1, n)
        slope = float(rng.uniform(0.5, 5))
        weights = slope * pos
        x = triangular_embeddings(pos)
        game = function_game(lambda m, w=weights: float(sum(w[i] for i in range(n) if m >> i & 1)), n, v_max=100)
        eps = float(rng.uniform(0.01, 0.6))
        assignment = adaptive_dbscan(distance_matrix(x), eps)
        att = cluster_shapley(game, assignment)
        err = float(np.max(np.abs(att.array() - weights)))
        bound_hits += err <= slope * eps + 1e-9
        cost_hits += att.unique_subsets == 2**assignment.m - 1
        worst_ratio = max(worst_ratio, err / (slope * eps))
    record_criterion(4, "error within L*eps and cost 2^m - 1", bound_hits == 200 and cost_hits == 200,
                     f"bound {bound_hits}/200, cost {cost_hits}/200, worst err/(L*eps) {worst_ratio:.3f}")


def test_criterion_05_sample_size_coverage():
    eta, slack = 0.1, 1.0
    covered = 0
    sizes = []
    for trial in range(500):
        game = planted_cluster_game(8, seed=5000 + trial, sigma=0.0)
        eps = 0.1
        d = distance_matrix(game.embeddings)
        assignment = adaptive_dbscan(d, eps)
        scan = lipschitz_scan(game.fresh(), d, quantile=1.0, distance_cap=eps)
        lip = 0.0 if math.isnan(scan.fitted_L) else scan.fitted_L
        eps_total = lip * eps + slack
        smallest = min(len(c) for c in assignment.clusters)
        n_perm = corollary2_sample_size(10.0, eta, smallest, eps_total, lip, eps)
        sizes.append(n_perm)
        truth = exact_shapley(game.fresh()).array()
        est = cluster_shapley_approx(game.fresh(), assignment, "mc", McConfig(n_perm, seed=trial)).array()
        covered += bool(np.max(np.abs(est - truth)) <= eps_total)
    frac = covered / 500
    record_criterion(5, "sampled cluster values meet eps_total", frac >= 0.9,
                     f"{frac:.3f} of 500 trials covered (N from {min(sizes)} to {max(sizes)})")


def test_criterion_06_additive_exactness():
    rng = np.random.default_rng(606)
    worst = {"exact": 0.0, "mc": 0.0, "kernelshap": 0.0, "relevance": 0.0, "equal_spread": 0.0}
    for trial in range(100):
        n = int(rng.integers(2, 11))
        x = np.abs(random_unit_vectors(n, 8, rng))
        q = np.abs(random_unit_vectors(1, 8, rng)[0])
        game, truth_map = synth_game(x, q)
        truth = np.array(list(truth_map.values()))

        def gap(att):
            return float(np.max(np.abs(att.array() - truth)))

        worst["exact"] = max(worst["exact"], gap(exact_shapley(game.fresh())))
        for perms in (1, 3, 17):
            worst["mc"] = max(worst["mc"], gap(monte_carlo(game.fresh(), McConfig(perms, seed=trial))))
        for samples in (n, n + 1, 2 * n, 5 * n):
            worst["kernelshap"] = max(worst["kernelshap"], gap(kernel_shap(game.fresh(), KernelShapConfig(samples, seed=trial))))
        worst["relevance"] = max(worst["relevance"], gap(relevance_weighted(game.fresh())))
        equal = equal_attribution(game.fresh()).array()
        mae = float(np.mean(np.abs(equal - truth)))
        spread = float(np.mean(np.abs(truth - truth.mean())))
        worst["equal_spread"] = max(worst["equal_spread"], abs(mae - spread))
    ok = max(worst["exact"], worst["mc"], worst["kernelshap"], worst["relevance"]) <= 1e-6 and worst["equal_spread"] <= 1e-9
    record_criterion(6, "additive games recovered exactly", ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


def test_criterion_07_frontier_ordering():
    start = time.perf_counter()
    games = [planted_cluster_game(8, seed=1000 + s, sigma=0.05) for s in range(48)]
    counts = (1, 2, 3, 4, 5, 6, 8, 10, 15, 20, 30, 50)
    grid = {
        "cluster": [{"epsilon": e} for e in epsilon_grid()],
        "mc": [{"permutations": k} for k in counts],
        "tmc": [{"permutations": k, "tolerance": 0.5} for k in counts],
        "kernelshap": [{"samples": s} for s in (8, 10, 12, 16, 20, 24, 32, 40, 48, 64)],
    }
    points = frontier(games, grid, replications=10, seed=7, concurrency=8)
    budget = 40
    wins = 0
    summary = []
    for r in range(10):
        cluster = best_under_budget(points, "cluster", budget, replication=r)
        rivals = {m: best_under_budget(points, m, budget, replication=r) for m in ("mc", "tmc", "kernelshap")}
        if cluster is not None and all(v is None or cluster < v for v in rivals.values()):
            wins += 1
        summary.append((cluster, rivals))
    elapsed = time.perf_counter() - start
    c0, r0 = summary[0]
    detail = f"{wins}/10 sweeps won; sweep 0: cluster {c0:.4f}, " + ", ".join(f"{m} {v:.4f}" for m, v in r0.items())
    record_criterion(7, "cluster beats samplers at <= 40 subsets", wins >= 9 and elapsed < 600, detail + f", {elapsed:.0f}s")


def test_criterion_08_dbscan_certificate():
    rng = np.random.default_rng(808)
    violations = 0
    for _ in range(1000):
        n = int(rng.integers(1, 17))
        x = rng.standard_normal((n, int(rng.integers(2, 8))))
        d = distance_matrix(x).entries
        eps = float(rng.uniform(0.01, 1.5))
        a = adaptive_dbscan(d, eps)
        a.check_partition(n)
        for c in a.clusters:
            if len(c) > 1 and d[np.ix_(c, c)].max() > eps:
                violations += 1
    chain = DistanceMatrix(np.array([[0, 0.04, 0.09], [0.04, 0, 0.04], [0.09, 0.04, 0]]))
    standard = standard_dbscan(chain, 0.05)
    adaptive = adaptive_dbscan(chain, 0.05)
    standard_breaks = any(chain.entries[np.ix_(c, c)].max() > 0.05 for c in standard.clusters)
    adaptive_holds = all(chain.entries[np.ix_(c, c)].max() <= 0.05 for c in adaptive.clusters)
    ok = violations == 0 and standard_breaks and adaptive_holds
    record_criterion(8, "adaptive DBSCAN diameter certificate", ok,
                     f"{violations} violations in 1000 sets; chain: standard {standard.clusters}, adaptive {adaptive.clusters}")


def test_criterion_09_kernel_shap_full_enumeration():
    rng = np.random.default_rng(909)
    worst = 0.0
    for n in range(1, 7):
        for _ in range(30):
            table = random_table(n, rng)
            ks = kernel_shap(table_game(table, n), KernelShapConfig(samples=2**n)).array()
            worst = max(worst, float(np.max(np.abs(ks - exact_shapley(table_game(table, n)).array()))))
    record_criterion(9, "full-enumeration regression equals exact", worst <= 1e-5, f"max deviation {worst:.1e}")


def test_criterion_10_tmc_consistency():
    identical = subset_ok = cost_ok = 0
    for trial in range(100):
        game, _ = synth_game(*(lambda r: (random_unit_vectors(8, 8, r), random_unit_vectors(1, 8, r)[0]))(np.random.default_rng(trial)),
                             noise_sigma=0.3, seed=trial)
        table = game.value_table()

        def recorded():
            seen = set()

            def fn(m):
                seen.add(m)
                return float(table[m])

            return function_game(fn, 8, v_max=10.0), seen

        g_mc, seen_mc = recorded()
        g_t0, _ = recorded()
        g_t5, seen_t5 = recorded()
        mc = monte_carlo(g_mc, McConfig(25, seed=trial))
        t0 = truncated_monte_carlo(g_t0, TmcConfig(25, seed=trial, tolerance=0.0))
        t5 = truncated_monte_carlo(g_t5, TmcConfig(25, seed=trial, tolerance=0.5))
        identical += mc.values == t0.values and mc.unique_subsets == t0.unique_subsets
        subset_ok += seen_t5 <= seen_mc
        cost_ok += t5.unique_subsets <= mc.unique_subsets
    ok = identical == subset_ok == cost_ok == 100
    record_criterion(10, "TMC tolerance 0 equals MC; truncation never adds cost", ok,
                     f"bit-identical {identical}/100, subset-of-MC {subset_ok}/100, cost <= MC {cost_ok}/100")


def test_criterion_11_variance_decomposition():
    sum_sd, eval_sd = 0.9, 0.6
    rng = np.random.default_rng(np.random.SeedSequence(1111))
    blocks, single = [], []
    for subset in range(1000):
        mean = rng.uniform(1, 9)
        summaries = mean + sum_sd * rng.standard_normal(5)
        scores = summaries[:, None] + eval_sd * rng.standard_normal((5, 4))
        blocks.append(scores)
        single.append(np.var(scores[:, 0], ddof=1))
    total, sv, ev = variance_decomposition(blocks)
    one_score_var = float(np.mean(single))
    rel = {"summarization": abs(sv / sum_sd**2 - 1), "evaluation": abs(ev / eval_sd**2 - 1),
           "total": abs(total / (sum_sd**2 + eval_sd**2) - 1)}
    ok = max(rel.values()) <= 0.15 and abs(total - (sv + ev)) <= 1e-12 and abs(total / one_score_var - 1) <= 0.1
    detail = ", ".join(f"{k} off by {v:.1%}" for k, v in rel.items()) + f"; single-score variance {one_score_var:.3f} vs total {total:.3f}"
    record_criterion(11, "two-stage variance components recovered", ok, detail)


def test_criterion_12_budget_balance():
    rng = np.random.default_rng(1212)
    worst = 0.0
    zero_ok = True
    for trial in range(1000):
        beta = 0.0 if trial % 10 == 0 else float(rng.uniform())
        R = float(rng.uniform(0, 500))
        docs = [f"d{i}" for i in range(int(rng.integers(1, 15)))]
        per_query = []
        for q in range(int(rng.integers(1, 6))):
            chosen = rng.choice(docs, size=int(rng.integers(1, len(docs) + 1)), replace=False)
            values = {d: float(rng.uniform(-1, 5)) for d in chosen}
            if sum(values.values()) <= 0:
                values[chosen[0]] += 1 - sum(values.values())
            per_query.append((f"q{q}", Attribution("exact", values, 0), float(rng.uniform(0, 40))))
        expected = expected_value([(a, float(rng.uniform(0.1, 1))) for _, a, _ in per_query])
        if sum(expected.values()) <= 0:
            R = 0.0
        report = combined_payout(expected, R, per_query, beta)
        target = beta * (R + sum(r for *_, r in per_query))
        worst = max(worst, abs(report.total() - target))
        if beta == 0:
            zero_ok &= all(p == 0 for p in report.payouts.values())
    record_criterion(12, "payouts balance the revenue pool", worst <= 1e-6 and zero_ok,
                     f"max imbalance {worst:.1e}, beta=0 all zero: {zero_ok}")


def test_criterion_13_cli_determinism(tmp_path, capsys, monkeypatch):
    real = httpx.Client

    def client(*args, **kwargs):
        kwargs["transport"] = httpx.MockTransport(FakeLLM())
        return real(*args, **kwargs)

    monkeypatch.setattr(httpx, "Client", client)
    x = np.random.default_rng(13).standard_normal((6, 5))
    write_embeddings(tmp_path / "emb.jsonl", [EmbeddingVector(f"d{i}", tuple(v)) for i, v in enumerate(x)])
    (tmp_path / "q.json").write_text(json.dumps(list(x[0] + 0.1)))
    (tmp_path / "docs.jsonl").write_text("".join(
        json.dumps({"id": f"d{i}", "title": "", "body": ("battery " if i % 2 else "screen ") + "words " * 10}) + "\n" for i in range(6)))
    games = tmp_path / "games"
    games.mkdir()
    for s in range(3):
        run(["synth", "--planted", "--n", "5", "--sigma", "0.05", "--seed", str(s), "--out", str(games / f"g{s}.json")])
    (tmp_path / "grid.json").write_text(json.dumps({"mc": [{"permutations": 3}], "tmc": [{"permutations": 3}],
                                                     "kernelshap": [{"samples": 10}], "cluster": [{"epsilon": 0.2}]}))
    (tmp_path / "rq.csv").write_text("query_id,revenue\nsynth-5,10\n")
    run(["value", "--synth", "n=4,seed=5", "--method", "exact", "--out", str(tmp_path / "att.csv")])
    commands = {
        "value-mc": ["value", "--synth", "n=7,sigma=0.2", "--method", "mc", "--permutations", "9"],
        "value-tmc": ["value", "--synth", "n=7,sigma=0.2", "--method", "tmc", "--permutations", "9"],
        "value-kernelshap": ["value", "--synth", "n=7,sigma=0.2", "--method", "kernelshap", "--samples", "30"],
        "value-cluster-mc": ["value", "--synth", "n=7,sigma=0.2,planted=1", "--method", "cluster-mc", "--epsilon", "0.3"],
        "value-exact": ["value", "--synth", "n=7,sigma=0.2", "--method", "exact"],
        "synth": ["synth", "--n", "6", "--sigma", "0.1", "--materialize"],
        "synth-planted": ["synth", "--planted", "--n", "6", "--sigma", "0.1"],
        "cluster": ["cluster", "--embeddings", str(tmp_path / "emb.jsonl"), "--epsilon", "0.8"],
        "retrieve": ["retrieve", "--query-embedding", str(tmp_path / "q.json"), "--embeddings", str(tmp_path / "emb.jsonl")],
        "frontier": ["frontier", "--games", str(games), "--grid", str(tmp_path / "grid.json"), "--replications", "3"],
        "lipschitz": ["lipschitz", "--game", str(games / "g0.json"), "--sample", "20"],
        "revenue": ["revenue", "--attributions", str(tmp_path / "att.csv"), "--per-query", str(tmp_path / "rq.csv"), "--subscription", "5"],
        "llm-game": ["llm-game", "--query", "battery", "--docs", str(tmp_path / "docs.jsonl"), "--endpoint", "http://fake/v1",
                     "--model", "m", "--k", "4", "--embeddings", str(tmp_path / "emb.jsonl"), "--query-embedding", str(tmp_path / "q.json")],
    }
    differing = []
    for name, argv in commands.items():
        outputs = set()
        for run_no, conc in enumerate((1, 1, 8, 8)):
            out = tmp_path / f"{name}-{run_no}.out"
            code = run([*argv, "--seed", "42", "--concurrency", str(conc), "--out", str(out)])
            assert code == 0, (name, capsys.readouterr().err)
            outputs.add(out.read_bytes())
        if len(outputs) != 1:
            differing.append(name)
    capsys.readouterr()
    record_criterion(13, "CLI output byte-identical across runs and concurrency", not differing,
                     f"{len(commands) - len(differing)}/{len(commands)} commands identical" + (f"; differ: {differing}" if differing else ""))
