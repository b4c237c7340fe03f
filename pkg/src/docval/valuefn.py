"""Value-function backends and game files.

Three numeric backends live here (additive synthetic, topic-coverage
synthetic, score-table replay); the chat-completion pipeline is in
:mod:`docval.remote`. Caching and unique-subset accounting are handled by
:class:`~docval.core.ValuationGame`, so backends are plain functions of a
coalition mask.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import _kernels
from .core import (
    EmbeddingVector,
    Query,
    ValuationGame,
    coalition_key,
    indices_of,
    parse_coalition_key,
)
from .errors import (
    AllZeroSimilarity,
    DimensionMismatch,
    IncompleteTable,
    MissingTableEntry,
    SchemaError,
    ValidationError,
    ZeroNorm,
)

SYNTH_TOTAL = 10.0


@dataclass(frozen=True)
class EvaluationRecord:
    coalition_key: str
    replicate_scores: tuple[float, ...]

    @property
    def mean_score(self) -> float:
        return float(np.mean(self.replicate_scores))


def coalition_noise(seed: int, mask: int) -> float:
    """Standard normal draw that depends only on (seed, mask).

    Philox is counter based: the coalition mask selects a disjoint block of
    the keyed stream, so draws do not depend on evaluation order.
    """
    bitgen = np.random.Philox(key=int(seed) & (2**64 - 1), counter=[0, mask & (2**64 - 1), 0, 0])
    return float(np.random.Generator(bitgen).standard_normal())


def as_matrix(embeddings) -> np.ndarray:
    if len(embeddings) and isinstance(embeddings[0], EmbeddingVector):
        dims = {e.dim for e in embeddings}
        if len(dims) != 1:
            raise DimensionMismatch(f"embeddings have mixed dimensions {sorted(dims)}")
        return np.array([e.values for e in embeddings], dtype=np.float64)
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatch("embeddings must form a 2-D array")
    return x


def as_vector(embedding) -> np.ndarray:
    if isinstance(embedding, EmbeddingVector):
        return embedding.array()
    return np.asarray(embedding, dtype=np.float64)


def cosine_similarities(x: np.ndarray, q: np.ndarray) -> np.ndarray:
    if x.shape[1] != q.shape[0]:
        raise DimensionMismatch(f"embedding dim {x.shape[1]} != query dim {q.shape[0]}")
    xn = np.linalg.norm(x, axis=1)
    qn = np.linalg.norm(q)
    if qn == 0 or np.any(xn == 0):
        raise ZeroNorm("cosine similarity is undefined for zero vectors")
    return (x @ q) / (xn * qn)


class AdditiveSource:
    """v(S) = sum of per-member weights over S, plus N(0, sigma) per coalition."""

    def __init__(self, weights: Sequence[float], sigma: float = 0.0, seed: int = 0):
        if sigma < 0:
            raise ValidationError("noise sigma must be nonnegative")
        self.weights = np.asarray(weights, dtype=np.float64)
        self.sigma = float(sigma)
        self.seed = int(seed)

    def mean(self, mask: int) -> float:
        return float(sum(self.weights[i] for i in indices_of(mask)))

    def score(self, mask, groups=None):
        value = self.mean(mask)
        if self.sigma > 0:
            value += self.sigma * coalition_noise(self.seed, mask)
        return value

    def table(self) -> np.ndarray:
        """All 2**n scores at once (noise included)."""
        n = len(self.weights)
        out = _kernels.subset_sums(self.weights)
        if self.sigma > 0:
            out[1:] += self.sigma * np.array([coalition_noise(self.seed, m) for m in range(1, 1 << n)])
        return out


class CoverageSource:
    """Topic-coverage game: near-duplicate documents are substitutes.

    Member i covers topic ``topics[i]`` with probability-like strength
    ``strength[i]``; a topic of weight a contributes a * (1 - prod(1 - strength))
    over the coalition's members on that topic. Values are nonnegative and the
    game is monotone, so marginal contributions lie in [0, sum(topic_weights)].
    """

    def __init__(self, topics, strength, topic_weights, sigma: float = 0.0, seed: int = 0):
        self.topics = np.asarray(topics, dtype=np.int64)
        self.strength = np.asarray(strength, dtype=np.float64)
        self.topic_weights = np.asarray(topic_weights, dtype=np.float64)
        if self.topics.shape != self.strength.shape:
            raise DimensionMismatch("topics and strength must align")
        if np.any((self.strength < 0) | (self.strength > 1)):
            raise ValidationError("strengths must lie in [0, 1]")
        if sigma < 0:
            raise ValidationError("noise sigma must be nonnegative")
        self.sigma = float(sigma)
        self.seed = int(seed)

    def mean(self, mask: int) -> float:
        miss = np.ones(len(self.topic_weights))
        for i in indices_of(mask):
            miss[self.topics[i]] *= 1.0 - self.strength[i]
        return float(np.dot(self.topic_weights, 1.0 - miss))

    def score(self, mask, groups=None):
        value = self.mean(mask)
        if self.sigma > 0:
            value += self.sigma * coalition_noise(self.seed, mask)
        return value


class TableSource:
    """Replays stored scores keyed by coalition mask."""

    def __init__(self, scores: Mapping[int, float]):
        self.scores = {int(k): float(v) for k, v in scores.items()}

    def score(self, mask, groups=None):
        try:
            return self.scores[mask]
        except KeyError:
            raise MissingTableEntry(f"no score stored for coalition {coalition_key(mask)!r}") from None

    def is_complete(self, n: int) -> bool:
        return all(m in self.scores for m in range(1, 1 << n))


def synth_game(
    embeddings,
    query_embedding,
    noise_sigma: float = 0.0,
    seed: int = 0,
    *,
    query: Query | None = None,
    members: Sequence[str] | None = None,
    v_max: float = SYNTH_TOTAL,
) -> tuple[ValuationGame, dict[str, float]]:
    """Additive game whose ground-truth Shapley values track query similarity.

    True values are cosine similarities to the query, shifted up by the most
    negative similarity (if any) and scaled to sum to 10.
    """
    if isinstance(query_embedding, EmbeddingVector) and members is None and embeddings:
        if isinstance(embeddings[0], EmbeddingVector):
            members = [e.doc_id for e in embeddings]
    x = as_matrix(embeddings)
    if x.shape[0] == 0:
        raise ValidationError("need at least one embedding")
    q = as_vector(query_embedding)
    sims = cosine_similarities(x, q)
    shifted = sims - min(0.0, float(sims.min()))
    total = float(shifted.sum())
    if total <= 0:
        raise AllZeroSimilarity("similarities give no mass to normalize")
    truth = SYNTH_TOTAL * shifted / total
    if members is None:
        members = [f"d{i}" for i in range(x.shape[0])]
    if query is None:
        query = Query("synthetic", "", 1.0)
    source = AdditiveSource(truth, noise_sigma, seed)
    game = ValuationGame(
        query, members, source, v_max=v_max, embeddings=x, query_embedding=q, true_values=truth
    )
    return game, dict(zip(game.members, map(float, truth)))


def random_unit_vectors(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    x = rng.standard_normal((n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# --- game.json ------------------------------------------------------------


def game_to_dict(game: ValuationGame, materialize: bool = True) -> dict[str, Any]:
    out: dict[str, Any] = {
        "query_id": game.query.id,
        "query_text": game.query.text,
        "members": list(game.members),
        "v_max": game.v_max,
        "v_empty": game.v_empty,
    }
    src = game.value_source
    if materialize:
        if isinstance(src, AdditiveSource):
            table = src.table()
        else:
            table = game.fresh().value_table()
        out["scores"] = {coalition_key(m): float(table[m]) for m in range(1, 1 << game.n)}
    elif isinstance(src, AdditiveSource):
        out["synthetic"] = {"weights": src.weights.tolist(), "sigma": src.sigma, "seed": src.seed}
    elif isinstance(src, TableSource):
        out["scores"] = {coalition_key(m): v for m, v in sorted(src.scores.items())}
    else:
        raise SchemaError(f"cannot serialize a {type(src).__name__} game without materializing it")
    if game.embeddings is not None:
        out["embeddings"] = game.embeddings.tolist()
    if game.query_embedding is not None:
        out["query_embedding"] = game.query_embedding.tolist()
    if game.true_values is not None:
        out["true_values"] = game.true_values.tolist()
    return out


def save_game(game: ValuationGame, path: str | Path, materialize: bool = True) -> None:
    text = json.dumps(game_to_dict(game, materialize), indent=1)
    Path(path).write_text(text + "\n", encoding="utf-8")


def game_from_dict(raw: Mapping[str, Any], origin: str = "<game>") -> ValuationGame:
    if not isinstance(raw, Mapping):
        raise SchemaError(f"{origin}: expected a JSON object")
    try:
        members = [str(m) for m in raw["members"]]
        query = Query(str(raw.get("query_id", "q")), str(raw.get("query_text", "")), 1.0)
        v_max = float(raw.get("v_max", 10.0))
        v_empty = float(raw.get("v_empty", 0.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{origin}: bad game header ({exc})") from exc
    n = len(members)
    if "scores" in raw:
        scores = raw["scores"]
        if not isinstance(scores, Mapping):
            raise SchemaError(f"{origin}: 'scores' must be an object")
        table = {}
        for key, value in scores.items():
            mask = parse_coalition_key(str(key), n)
            if mask == 0:
                v_empty = float(value)
                continue
            try:
                table[mask] = float(value)
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"{origin}: score for {key!r} is not a number") from exc
        source: Any = TableSource(table)
    elif "synthetic" in raw:
        syn = raw["synthetic"]
        try:
            source = AdditiveSource(syn["weights"], float(syn.get("sigma", 0.0)), int(syn.get("seed", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"{origin}: bad synthetic block ({exc})") from exc
        if len(source.weights) != n:
            raise SchemaError(f"{origin}: synthetic weights do not match members")
    else:
        raise SchemaError(f"{origin}: game needs 'scores' or 'synthetic'")
    extra = {}
    for name in ("embeddings", "query_embedding", "true_values"):
        if raw.get(name) is not None:
            extra[name] = np.asarray(raw[name], dtype=np.float64)
    try:
        return ValuationGame(query, members, source, v_max, v_empty, **extra)
    except (ValidationError, ValueError) as exc:
        raise SchemaError(f"{origin}: {exc}") from exc


def load_table_game(path: str | Path, require_complete: bool = False) -> ValuationGame:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc.msg})") from exc
    game = game_from_dict(raw, str(path))
    if require_complete and isinstance(game.value_source, TableSource):
        if not game.value_source.is_complete(game.n):
            raise IncompleteTable(f"{path}: score table lacks some of the {2**game.n - 1} coalitions")
    return game


def table_game(scores: Mapping[str, float], members: Sequence[str] | None = None, v_max: float = 10.0, **extra):
    """Build a table-backed game from string keys like ``{"0": 4, "0,1": 8}``."""
    masks = {parse_coalition_key(k): float(v) for k, v in scores.items()}
    if members is None:
        top = max((m.bit_length() for m in masks), default=0)
        members = [f"d{i}" for i in range(top)]
    v_empty = masks.pop(0, 0.0)
    return ValuationGame(Query("table", "", 1.0), members, TableSource(masks), v_max, v_empty, **extra)


def function_game(fn, n: int, v_max: float = 10.0, v_empty: float = 0.0, **extra) -> ValuationGame:
    """Game over members d0..d{n-1} backed by ``fn(mask) -> float``."""

    class _FnSource:
        def score(self, mask, groups=None):
            return fn(mask)

    return ValuationGame(Query("fn", "", 1.0), [f"d{i}" for i in range(n)], _FnSource(), v_max, v_empty, **extra)
