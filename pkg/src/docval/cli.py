"""Command-line interface: ``docval <subcommand> ...``.

Settings resolve as command-line flag, then config file (a TOML file whose
top-level keys apply to every subcommand and whose ``[subcommand]`` tables
override them), then built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import bench, cshap
from .cluster import ClusteringConfig, adaptive_dbscan, distance_matrix, save_clusters, standard_dbscan
from .core import Query, ValuationGame, load_documents, load_embeddings
from .errors import DocvalError, SchemaError, ValidationError
from .io import (
    open_output,
    path_stem,
    read_attribution,
    read_query_revenue,
    write_attribution,
    write_frontier,
    write_ranking,
    write_scatter,
)
from .retrieval import min_word_filter, ranked
from .revenue import combined_payout, expected_value, subscription_payout, write_payouts
from .valuefn import TableSource, load_table_game, random_unit_vectors, save_game, synth_game

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("docval")

DEFAULTS: dict[str, Any] = {
    "k": 8,
    "replicates": 4,
    "temperature": 0.1,
    "tolerance": 0.5,
    "alpha": 0.95,
    "min_pts": 1,
    "v_max": 10.0,
    "mape_constant": 0.1,
    "permutations": 100,
    "samples": 100,
    "sigma": 0.0,
    "dim": 16,
    "n": 8,
    "min_words": 10,
    "replications": 10,
    "quantile": 0.95,
    "cap": 0.4,
    "beta": 1.0,
    "subscription": 0.0,
    "max_iterations": 200,
    "approximator": "mc",
    "truth": "exact",
    "mode": "combined",
    "eta": 0.1,
    "max_retries": 3,
}

METHOD_NAMES = ("exact", "cluster", "cluster-mc", "mc", "tmc", "kernelshap", "equal", "relevance")


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


class Settings:
    """Flag > config file > default lookup for one subcommand."""

    def __init__(self, args: argparse.Namespace, config: dict):
        self.args = args
        self.config = config

    def get(self, name: str, default: Any = None) -> Any:
        value = getattr(self.args, name, None)
        if value is not None:
            return value
        if name in self.config:
            return self.config[name]
        return DEFAULTS.get(name, default)

    def require(self, name: str) -> Any:
        value = self.get(name)
        if value is None:
            raise UsageError(f"--{name.replace('_', '-')} is required")
        return value


def load_config(path: str | None, command: str) -> dict:
    if path is None:
        return {}
    try:
        raw = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise SchemaError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    merged = {k.replace("-", "_"): v for k, v in raw.items() if not isinstance(v, dict)}
    section = raw.get(command, {})
    if isinstance(section, dict):
        merged.update({k.replace("-", "_"): v for k, v in section.items()})
    return merged


# --- shared helpers -------------------------------------------------------


def parse_spec(spec: str) -> dict[str, str]:
    """``"n=4,sigma=0"`` -> {"n": "4", "sigma": "0"}."""
    out = {}
    for part in filter(None, (p.strip() for p in spec.split(","))):
        key, sep, value = part.partition("=")
        if not sep:
            raise UsageError(f"bad spec entry {part!r}; expected key=value")
        out[key.strip()] = value.strip()
    return out


def synth_from_spec(spec: dict, seed: int) -> ValuationGame:
    """Random-unit-vector synthetic game: additive by default, planted clusters with ``planted=1``."""
    known = {"n", "sigma", "seed", "dim", "planted", "topics"}
    unknown = set(spec) - known
    if unknown:
        raise UsageError(f"unknown synth keys {sorted(unknown)}; allowed {sorted(known)}")
    try:
        n = int(spec.get("n", DEFAULTS["n"]))
        sigma = float(spec.get("sigma", DEFAULTS["sigma"]))
        seed = int(spec.get("seed", seed))
        dim = int(spec.get("dim", DEFAULTS["dim"]))
        planted = spec.get("planted", "0") not in ("0", "false", "")
        topics = int(spec["topics"]) if "topics" in spec else None
    except ValueError as exc:
        raise UsageError(f"bad synth spec: {exc}") from exc
    if planted:
        return bench.planted_cluster_game(n, seed, topics=topics, dim=dim, sigma=sigma)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    x = random_unit_vectors(n, dim, rng)
    q = random_unit_vectors(1, dim, rng)[0]
    game, _ = synth_game(x, q, sigma, seed, query=Query(f"synth-{seed}", "", 1.0))
    return game


def read_vector(value: str) -> np.ndarray:
    """A JSON list given inline, or a file holding a list or an object with ``values``/``embedding``."""
    path = Path(value)
    try:
        text = path.read_text(encoding="utf-8") if path.exists() else value
        raw = json.loads(text)
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read a vector from {value!r}: {exc}") from exc
    if isinstance(raw, dict):
        raw = raw.get("values", raw.get("embedding"))
    try:
        vec = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{value!r} is not a numeric vector") from exc
    if vec.ndim != 1 or vec.size == 0:
        raise SchemaError(f"{value!r} is not a numeric vector")
    return vec


def embeddings_for(members: Sequence[str], path: str) -> np.ndarray:
    by_id = {e.doc_id: e.values for e in load_embeddings(path)}
    missing = [m for m in members if m not in by_id]
    if missing:
        raise SchemaError(f"{path}: no embeddings for {missing}")
    return np.array([by_id[m] for m in members], dtype=np.float64)


def load_game(s: Settings) -> ValuationGame:
    if s.args.game and s.args.synth:
        raise UsageError("give --game or --synth, not both")
    if s.args.game:
        game = load_table_game(s.args.game)
    elif s.args.synth is not None:
        game = synth_from_spec(parse_spec(s.args.synth), s.get("seed", 0))
    else:
        raise UsageError("one of --game or --synth is required")
    if getattr(s.args, "embeddings", None):
        game.embeddings = embeddings_for(game.members, s.args.embeddings)
    return game


def client_for(s: Settings, endpoint: str | None, model: str | None):
    from .remote import ChatClient, RemotePipelineConfig

    config = RemotePipelineConfig(
        endpoint_url=endpoint or "",
        model_name=model or "",
        temperature=float(s.get("temperature")),
        replicates=int(s.get("replicates")),
        max_retries=int(s.get("max_retries")),
        max_in_flight=max(1, int(s.get("concurrency"))),
        embeddings_url=s.get("embeddings_url"),
        embedding_model=s.get("embedding_model"),
    )
    return ChatClient(config)


# --- subcommands ----------------------------------------------------------


def cmd_value(s: Settings) -> int:
    game = load_game(s)
    method = s.args.method.replace("-", "_")
    seed = int(s.get("seed", 0))
    params: dict[str, Any] = {}
    if method in ("mc", "tmc", "cluster_mc"):
        params["permutations"] = int(s.get("permutations"))
    if method in ("tmc",) or (method == "cluster_mc" and s.get("approximator") == "tmc"):
        params["tolerance"] = float(s.get("tolerance"))
    if method == "kernelshap" or (method == "cluster_mc" and s.get("approximator") == "kernelshap"):
        params["samples"] = int(s.get("samples"))
    if method in ("cluster", "cluster_mc"):
        params["epsilon"] = float(s.require("epsilon"))
        params["alpha"] = float(s.get("alpha"))
    if method == "cluster_mc":
        params["approximator"] = s.get("approximator")
    if method == "relevance":
        params["shift"] = bool(s.args.shift)
    att = bench.run_method(game, method, params, seed, int(s.get("concurrency")))
    att.params["query_id"] = game.query.id
    write_attribution(att, s.get("out"))
    return 0


def cmd_cluster(s: Settings) -> int:
    embs = load_embeddings(s.require("embeddings"))
    matrix = distance_matrix(embs)
    eps = float(s.require("epsilon"))
    if s.args.standard:
        assignment = standard_dbscan(matrix, eps, int(s.get("min_pts")))
    else:
        cfg = ClusteringConfig(eps, 1, float(s.get("alpha")), int(s.get("max_iterations")))
        assignment = adaptive_dbscan(matrix, cfg)
    save_clusters(assignment, s.get("out"))
    return 0


def cmd_retrieve(s: Settings) -> int:
    corpus = load_embeddings(s.require("embeddings"))
    if s.args.query_embedding and s.args.query_text:
        raise UsageError("give --query-embedding or --query-text, not both")
    if s.args.query_embedding:
        q = read_vector(s.args.query_embedding)
    elif s.args.query_text:
        client = client_for(s, s.get("endpoint"), s.get("model"))
        try:
            q = np.asarray(client.embed([s.args.query_text])[0])
        finally:
            client.close()
    else:
        raise UsageError("one of --query-embedding or --query-text is required")
    if s.get("docs"):
        keep = {d.id for d in min_word_filter(load_documents(s.args.docs), int(s.get("min_words")))}
        corpus = [e for e in corpus if e.doc_id in keep]
    k = int(s.get("k"))
    if k < 1:
        raise UsageError("--k must be >= 1")
    pairs = ranked(q, corpus)
    floor = s.get("min_similarity")
    if floor is not None:
        pairs = [p for p in pairs if p[1] >= float(floor)]
    write_ranking(pairs[:k], s.get("out"))
    return 0


def cmd_synth(s: Settings) -> int:
    seed = int(s.get("seed", 0))
    sigma = float(s.get("sigma"))
    if s.args.planted:
        if s.args.embeddings:
            raise UsageError("--planted generates its own embeddings")
        game = bench.planted_cluster_game(int(s.get("n")), seed, dim=int(s.get("dim")), sigma=sigma)
        save_game(game, s.require("out"), materialize=True)
        return 0
    if s.args.embeddings:
        embs = load_embeddings(s.args.embeddings)
        x = np.array([e.values for e in embs])
        members = [e.doc_id for e in embs]
        if s.args.query_embedding:
            q = read_vector(s.args.query_embedding)
        else:
            q = random_unit_vectors(1, x.shape[1], np.random.default_rng(np.random.SeedSequence(seed)))[0]
        game, _ = synth_game(x, q, sigma, seed, members=members, query=Query(f"synth-{seed}", "", 1.0))
    else:
        game = synth_from_spec({"n": str(s.get("n")), "sigma": str(sigma), "dim": str(s.get("dim"))}, seed)
    save_game(game, s.require("out"), materialize=bool(s.args.materialize))
    return 0


def cmd_llm_game(s: Settings) -> int:
    from .remote import RemoteSource

    docs = min_word_filter(load_documents(s.require("docs")), int(s.get("min_words")))
    if not docs:
        raise ValidationError("no documents left after the word-count filter")
    query = Query(s.get("query_id") or "q", s.require("query"), 1.0)
    client = client_for(s, s.require("endpoint"), s.require("model"))
    try:
        by_id = {d.id: d for d in docs}
        if s.get("embeddings"):
            corpus = [e for e in load_embeddings(s.args.embeddings) if e.doc_id in by_id]
            if s.get("query_embedding"):
                q = read_vector(s.args.query_embedding)
            else:
                q = np.asarray(client.embed([query.text])[0])
            chosen = [doc_id for doc_id, _ in ranked(q, corpus)[: int(s.get("k"))]]
            vectors = {e.doc_id: e.values for e in corpus}
            x = np.array([vectors[d] for d in chosen])
        else:
            # No embeddings: keep the file order.
            chosen = [d.id for d in docs[: int(s.get("k"))]]
            q, x = None, None
        picked = [by_id[d] for d in chosen]
        source = RemoteSource(client, query, picked)
        game = ValuationGame(query, chosen, source, float(s.get("v_max")), embeddings=x, query_embedding=q)
        table = game.value_table(int(s.get("concurrency")))
    finally:
        client.close()
    frozen = ValuationGame(
        query,
        chosen,
        TableSource({m: float(table[m]) for m in range(1, len(table))}),
        game.v_max,
        embeddings=x,
        query_embedding=q,
    )
    save_game(frozen, s.require("out"), materialize=False)
    return 0


def cmd_frontier(s: Settings) -> int:
    folder = Path(s.require("games"))
    paths = sorted(folder.glob("*.json")) if folder.is_dir() else []
    if not paths:
        raise SchemaError(f"no game files (*.json) in {folder}")
    games = [load_table_game(p, require_complete=s.get("truth") == "exact") for p in paths]
    grid_arg = s.get("grid")
    if grid_arg in (None, "default"):
        grid = bench.default_grid()
    else:
        try:
            grid = json.loads(Path(grid_arg).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise SchemaError(f"cannot read grid {grid_arg}: {exc}") from exc
        if not isinstance(grid, dict) or not all(isinstance(v, list) for v in grid.values()):
            raise SchemaError(f"{grid_arg}: grid must map method names to lists of parameter objects")
        grid = {k.replace("-", "_"): v for k, v in grid.items()}
    points = bench.frontier(
        games,
        grid,
        truth_method=s.get("truth"),
        replications=int(s.get("replications")),
        seed=int(s.get("seed", 0)),
        concurrency=int(s.get("concurrency")),
    )
    write_frontier(points, s.get("out"))
    return 0


def cmd_revenue(s: Settings) -> int:
    paths = s.require("attributions")
    atts = [read_attribution(p) for p in paths]
    qids = [str(a.params.get("query_id", path_stem(p))) for a, p in zip(atts, paths)]
    weights = s.get("weights")
    if weights is not None and len(weights) != len(atts):
        raise UsageError("--weights needs one value per attribution file")
    beta = float(s.get("beta"))
    R = float(s.get("subscription"))
    mode = s.get("mode")
    sub_weights = weights if weights is not None else [1.0] * len(atts)
    expected = expected_value(list(zip(atts, sub_weights)))
    if mode == "subscription":
        report = subscription_payout(expected, R, beta)
    else:
        if not s.get("per_query"):
            raise UsageError(f"--per-query is required in {mode} mode")
        revenue = read_query_revenue(s.args.per_query)
        missing = [q for q in qids if q not in revenue]
        if missing:
            raise SchemaError(f"{s.args.per_query}: no revenue for queries {missing}")
        per_query = [(q, a, revenue[q]) for q, a in zip(qids, atts)]
        report = combined_payout(expected, R if mode == "combined" else 0.0, per_query, beta, weights)
        report.mode = mode
    if report.negative:
        log.warning("negative payouts for %s", ", ".join(report.negative))
    write_payouts(report, s.get("out"))
    return 0


def cmd_lipschitz(s: Settings) -> int:
    game = load_table_game(s.require("game"), require_complete=True)
    if s.get("embeddings"):
        game.embeddings = embeddings_for(game.members, s.args.embeddings)
    if game.embeddings is None:
        raise UsageError("the game has no embeddings; pass --embeddings")
    scan = bench.lipschitz_scan(
        game,
        distance_matrix(game.embeddings),
        float(s.get("quantile")),
        float(s.get("cap")),
        s.get("sample"),
        int(s.get("seed", 0)),
    )
    out = s.get("out")
    write_scatter(scan.points, out)
    report = sys.stderr if out == "-" else sys.stdout
    print(f"fitted_L={scan.fitted_L!r} points={scan.total_points} quantile={scan.quantile} cap={scan.distance_cap}", file=report)
    return 0


def cmd_bound(s: Settings) -> int:
    lines = []
    L = s.get("lipschitz")
    eps = s.get("epsilon")
    v_max = float(s.get("v_max"))
    eta = float(s.get("eta"))
    size = int(s.get("cluster_size") or 1)
    eps_a = s.get("eps_a")
    if eps_a is None and s.get("permutations_n") is not None:
        eps_a = cshap.mc_cluster_error(v_max, eta, int(s.args.permutations_n))
        lines.append(f"eps_A={eps_a!r}")
    if L is not None and eps is not None:
        lines.append(f"theorem1={cshap.theorem1_bound(float(L), float(eps))!r}")
        if eps_a is not None:
            lines.append(f"theorem2={cshap.theorem2_bound(float(L), float(eps), float(eps_a), size)!r}")
        if s.get("eps_total") is not None:
            n = cshap.corollary2_sample_size(v_max, eta, size, float(s.args.eps_total), float(L), float(eps))
            lines.append(f"corollary2_N={n}")
    if not lines:
        raise UsageError("give --lipschitz and --epsilon (plus --eps-a/--permutations or --eps-total)")
    with open_output(s.get("out") or "-") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


# --- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int)
    common.add_argument("--concurrency", type=int)
    common.add_argument("--config", help="TOML settings file")
    common.add_argument("--out", help="output path, '-' for stdout")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="docval", description="Shapley-value attribution for document sets.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("value", parents=[common], help="attribute a game's value to its members")
    p.add_argument("--game")
    p.add_argument("--synth", help="synthetic game spec, e.g. n=4,sigma=0")
    p.add_argument("--embeddings", help="member embeddings (jsonl) for cluster/relevance methods")
    p.add_argument("--method", choices=METHOD_NAMES, required=True)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--permutations", type=int)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--samples", type=int)
    p.add_argument("--approximator", choices=("mc", "tmc", "kernelshap"))
    p.add_argument("--shift", action="store_true", help="relevance: shift similarities to be nonnegative")
    p.set_defaults(func=cmd_value, out_default="-")

    p = sub.add_parser("cluster", parents=[common], help="cluster embeddings with a diameter certificate")
    p.add_argument("--embeddings")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--min-pts", type=int)
    p.add_argument("--standard", action="store_true", help="plain DBSCAN with radius epsilon, no certificate")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("retrieve", parents=[common], help="top-k documents by cosine similarity")
    p.add_argument("--query-embedding")
    p.add_argument("--query-text")
    p.add_argument("--embeddings")
    p.add_argument("--docs", help="documents (jsonl) for the word-count filter")
    p.add_argument("--k", type=int)
    p.add_argument("--min-words", type=int)
    p.add_argument("--min-similarity", type=float)
    p.add_argument("--endpoint")
    p.add_argument("--embeddings-url")
    p.add_argument("--model")
    p.add_argument("--embedding-model")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic game file")
    p.add_argument("--embeddings")
    p.add_argument("--query-embedding")
    p.add_argument("--n", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--planted", action="store_true", help="topic-coverage game with near-duplicate clusters")
    p.add_argument("--materialize", action="store_true", help="store the full score table")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("llm-game", parents=[common], help="score every coalition with a chat-completion backend")
    p.add_argument("--query")
    p.add_argument("--query-id")
    p.add_argument("--docs")
    p.add_argument("--embeddings")
    p.add_argument("--query-embedding")
    p.add_argument("--endpoint")
    p.add_argument("--embeddings-url")
    p.add_argument("--model")
    p.add_argument("--embedding-model")
    p.add_argument("--k", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--min-words", type=int)
    p.add_argument("--max-retries", type=int)
    p.add_argument("--v-max", type=float)
    p.set_defaults(func=cmd_llm_game)

    p = sub.add_parser("frontier", parents=[common], help="accuracy/cost frontier over a folder of games")
    p.add_argument("--games")
    p.add_argument("--grid", help="grid JSON file or 'default'")
    p.add_argument("--replications", type=int)
    p.add_argument("--truth", choices=("exact", "file"))
    p.set_defaults(func=cmd_frontier, out_default="-")

    p = sub.add_parser("revenue", parents=[common], help="turn attributions into payouts")
    p.add_argument("--attributions", nargs="+")
    p.add_argument("--weights", nargs="+", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--subscription", type=float)
    p.add_argument("--per-query", help="rq.csv with query_id,revenue")
    p.add_argument("--mode", choices=("subscription", "query", "combined"))
    p.set_defaults(func=cmd_revenue, out_default="-")

    p = sub.add_parser("lipschitz", parents=[common], help="marginal-gap vs distance scatter and fitted L")
    p.add_argument("--game")
    p.add_argument("--embeddings")
    p.add_argument("--quantile", type=float)
    p.add_argument("--cap", type=float)
    p.add_argument("--sample", type=int)
    p.set_defaults(func=cmd_lipschitz, out_default="-")

    p = sub.add_parser("bound", parents=[common], help="error-bound and sample-size calculators")
    p.add_argument("--lipschitz", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--eps-a", type=float)
    p.add_argument("--permutations", dest="permutations_n", type=int)
    p.add_argument("--cluster-size", type=int)
    p.add_argument("--eps-total", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--v-max", type=float)
    p.set_defaults(func=cmd_bound, out_default="-")
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        config = load_config(args.config, args.command)
        if args.out is None and "out" not in config:
            args.out = getattr(args, "out_default", None)
        if args.concurrency is not None and args.concurrency < 1:
            raise UsageError("--concurrency must be >= 1")
        config.setdefault("concurrency", 4)
        return args.func(Settings(args, config))
    except DocvalError as exc:
        print(f"docval: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"docval: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
