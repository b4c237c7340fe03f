"""Domain types shared across the package and construction of valuation games."""

from __future__ import annotations

import json
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Protocol, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateMember,
    EmptyMembers,
    IndexOutOfRange,
    NotAPartition,
    SchemaError,
    TooManyMembers,
    ValidationError,
    ZeroNorm,
)

MAX_MEMBERS = 64

METHODS = ("exact", "cluster", "cluster_mc", "mc", "tmc", "kernelshap", "equal", "relevance")
# Methods whose output is efficient by construction.
EFFICIENT_METHODS = frozenset({"exact", "cluster", "equal", "relevance"})


@dataclass(frozen=True)
class Document:
    id: str
    title: str
    body: str

    def __post_init__(self):
        if not self.id:
            raise ValidationError("document id must be nonempty")
        if not self.body.strip():
            raise ValidationError(f"document {self.id!r} has an empty body")

    @property
    def text(self) -> str:
        return f"{self.title}\n{self.body}" if self.title else self.body


@dataclass(frozen=True)
class EmbeddingVector:
    doc_id: str
    values: tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(x) for x in self.values)
        object.__setattr__(self, "values", values)
        if not values:
            raise ValidationError(f"embedding {self.doc_id!r} is empty")
        if not np.all(np.isfinite(values)):
            raise ValidationError(f"embedding {self.doc_id!r} has non-finite entries")
        if not np.any(values):
            raise ZeroNorm(f"embedding {self.doc_id!r} has zero norm")

    @property
    def dim(self) -> int:
        return len(self.values)

    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    weight: float | None = None
    embedding: EmbeddingVector | None = None

    def __post_init__(self):
        if self.weight is not None and not 0.0 <= self.weight <= 1.0:
            raise ValidationError(f"query {self.id!r} weight must lie in [0, 1]")


# --- coalitions -----------------------------------------------------------


@dataclass(frozen=True)
class Coalition:
    """A subset of a game's members stored as a bit mask (bit i = member i)."""

    mask: int
    n: int

    def __post_init__(self):
        if not 0 <= self.n <= MAX_MEMBERS:
            raise TooManyMembers(f"coalitions support at most {MAX_MEMBERS} members")
        if self.mask < 0 or self.mask >> self.n:
            raise IndexOutOfRange(f"mask {self.mask:#b} has bits at or above n={self.n}")

    @classmethod
    def from_indices(cls, indices: Iterable[int], n: int) -> Coalition:
        return cls(from_indices(indices, n), n)

    def __contains__(self, i: int) -> bool:
        return contains(self.mask, i, self.n)

    def __len__(self) -> int:
        return cardinality(self.mask)

    def insert(self, i: int) -> Coalition:
        return Coalition(insert(self.mask, i, self.n), self.n)

    def indices(self) -> tuple[int, ...]:
        return indices_of(self.mask)

    @property
    def key(self) -> str:
        return coalition_key(self.mask)


def _check_index(i: int, n: int) -> None:
    if not 0 <= i < n:
        raise IndexOutOfRange(f"index {i} out of range for n={n}")


def from_indices(indices: Iterable[int], n: int) -> int:
    if n > MAX_MEMBERS:
        raise TooManyMembers(f"coalitions support at most {MAX_MEMBERS} members")
    mask = 0
    for i in indices:
        _check_index(i, n)
        mask |= 1 << i
    return mask


def contains(mask: int, i: int, n: int) -> bool:
    _check_index(i, n)
    return bool(mask >> i & 1)


def insert(mask: int, i: int, n: int) -> int:
    _check_index(i, n)
    return mask | (1 << i)


def cardinality(mask: int) -> int:
    return mask.bit_count()


def indices_of(mask: int) -> tuple[int, ...]:
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return tuple(out)


def enumerate_all(n: int) -> Iterator[int]:
    """All 2**n masks in ascending order, empty set first."""
    if n > MAX_MEMBERS:
        raise TooManyMembers(f"coalitions support at most {MAX_MEMBERS} members")
    return iter(range(1 << n))


def coalition_key(mask: int) -> str:
    """Canonical key: comma-joined ascending member indices ("" for the empty set)."""
    return ",".join(str(i) for i in indices_of(mask))


def parse_coalition_key(key: str, n: int | None = None) -> int:
    key = key.strip()
    if not key:
        return 0
    try:
        idx = [int(tok) for tok in key.split(",")]
    except ValueError as exc:
        raise SchemaError(f"bad coalition key {key!r}") from exc
    if any(i < 0 for i in idx) or len(set(idx)) != len(idx):
        raise SchemaError(f"bad coalition key {key!r}")
    if idx != sorted(idx):
        raise SchemaError(f"coalition key {key!r} is not in ascending order")
    if n is not None and idx[-1] >= n:
        raise SchemaError(f"coalition key {key!r} references a member >= {n}")
    return from_indices(idx, MAX_MEMBERS)


# --- games ----------------------------------------------------------------


class ValueSource(Protocol):
    """Backend computing the (uncached) value of a nonempty coalition.

    ``groups`` is set when the coalition is a union of clusters; remote
    backends use it to build meta-documents, numeric backends ignore it.
    """

    def score(self, mask: int, groups: tuple[tuple[int, ...], ...] | None = None) -> float: ...


class ValuationGame:
    """A query, its retrieved members, and a memoizing handle on the value function.

    Identity fields are read-only. The only mutable state is the evaluation
    cache, which is what unique-subset accounting counts.
    """

    def __init__(
        self,
        query: Query,
        members: Sequence[str],
        value_source: ValueSource,
        v_max: float = 10.0,
        v_empty: float = 0.0,
        *,
        embeddings: np.ndarray | None = None,
        query_embedding: np.ndarray | None = None,
        true_values: np.ndarray | None = None,
    ):
        members = tuple(members)
        if not members:
            raise EmptyMembers("a game needs at least one member")
        if len(members) > MAX_MEMBERS:
            raise TooManyMembers(f"{len(members)} members exceeds the cap of {MAX_MEMBERS}")
        if len(set(members)) != len(members):
            dupes = sorted({m for m in members if members.count(m) > 1})
            raise DuplicateMember(f"duplicate members: {dupes}")
        if not v_max > v_empty:
            raise ValidationError("v_max must exceed v_empty")
        if embeddings is not None:
            embeddings = np.asarray(embeddings, dtype=np.float64)
            if embeddings.ndim != 2 or embeddings.shape[0] != len(members):
                raise DimensionMismatch("need one embedding row per member")
        if query_embedding is not None:
            query_embedding = np.asarray(query_embedding, dtype=np.float64)
            if embeddings is not None and query_embedding.shape != embeddings.shape[1:]:
                raise DimensionMismatch("query embedding dimension differs from members")
        if true_values is not None:
            true_values = np.asarray(true_values, dtype=np.float64)
            if true_values.shape != (len(members),):
                raise DimensionMismatch("need one true value per member")

        self._query = query
        self._members = members
        self._source = value_source
        self._v_max = float(v_max)
        self._v_empty = float(v_empty)
        self.embeddings = embeddings
        self.query_embedding = query_embedding
        self.true_values = true_values
        self._lock = threading.Lock()
        self._cache: dict[int, Future] = {}
        self._done = 0

    query = property(lambda self: self._query)
    members = property(lambda self: self._members)
    value_source = property(lambda self: self._source)
    v_max = property(lambda self: self._v_max)
    v_empty = property(lambda self: self._v_empty)

    @property
    def n(self) -> int:
        return len(self._members)

    @property
    def full_mask(self) -> int:
        return (1 << self.n) - 1

    @property
    def unique_subsets(self) -> int:
        """Distinct nonempty coalitions sent to the backend so far."""
        return self._done

    def __repr__(self):
        return f"ValuationGame(query={self._query.id!r}, n={self.n}, unique_subsets={self._done})"

    def fresh(self) -> ValuationGame:
        """Same game with an empty cache (seeded backends replay identical scores)."""
        return ValuationGame(
            self._query,
            self._members,
            self._source,
            self._v_max,
            self._v_empty,
            embeddings=self.embeddings,
            query_embedding=self.query_embedding,
            true_values=self.true_values,
        )

    def _mask(self, coalition: int | Coalition) -> int:
        if isinstance(coalition, Coalition):
            if coalition.n != self.n:
                raise IndexOutOfRange("coalition belongs to a game of different size")
            return coalition.mask
        mask = int(coalition)
        if mask < 0 or mask >> self.n:
            raise IndexOutOfRange(f"mask {mask:#b} has bits at or above n={self.n}")
        return mask

    def evaluate(self, coalition: int | Coalition, groups=None) -> float:
        mask = self._mask(coalition)
        if mask == 0:
            return self._v_empty
        with self._lock:
            fut = self._cache.get(mask)
            owner = fut is None
            if owner:
                fut = Future()
                self._cache[mask] = fut
        if owner:
            try:
                value = float(self._source.score(mask, groups))
            except BaseException as exc:
                with self._lock:
                    del self._cache[mask]
                fut.set_exception(exc)
                raise
            with self._lock:
                self._done += 1
            fut.set_result(value)
        return fut.result()

    def evaluate_many(self, masks: Iterable[int], concurrency: int = 1) -> np.ndarray:
        masks = list(masks)
        if concurrency <= 1 or len(masks) < 2:
            return np.array([self.evaluate(m) for m in masks], dtype=np.float64)
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            return np.fromiter(pool.map(self.evaluate, masks), dtype=np.float64, count=len(masks))

    def value_table(self, concurrency: int = 1) -> np.ndarray:
        """Values of all 2**n coalitions indexed by mask (entry 0 is v_empty)."""
        table = np.empty(1 << self.n, dtype=np.float64)
        table[0] = self._v_empty
        table[1:] = self.evaluate_many(range(1, 1 << self.n), concurrency)
        return table

    def is_cached(self, mask: int) -> bool:
        with self._lock:
            fut = self._cache.get(mask)
        return fut is not None and fut.done() and fut.exception() is None


def make_game(
    query: Query,
    members: Sequence[str],
    value_source: ValueSource,
    v_max: float = 10.0,
    v_empty: float = 0.0,
    **extra: Any,
) -> ValuationGame:
    return ValuationGame(query, members, value_source, v_max, v_empty, **extra)


# --- results --------------------------------------------------------------


@dataclass
class Attribution:
    method: str
    values: dict[str, float]
    unique_subsets: int
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}")
        if self.unique_subsets < 0:
            raise ValidationError("unique_subsets must be nonnegative")

    @classmethod
    def from_array(cls, game, method: str, phi: Sequence[float], unique_subsets: int, **params) -> Attribution:
        phi = np.asarray(phi, dtype=np.float64)
        if phi.shape != (game.n,):
            raise DimensionMismatch("one value per member required")
        values = {m: float(x) for m, x in zip(game.members, phi)}
        return cls(method, values, unique_subsets, params)

    @property
    def members(self) -> tuple[str, ...]:
        return tuple(self.values)

    def array(self, members: Sequence[str] | None = None) -> np.ndarray:
        if members is None:
            return np.fromiter(self.values.values(), dtype=np.float64, count=len(self.values))
        return np.array([self.values[m] for m in members], dtype=np.float64)

    def total(self) -> float:
        return float(sum(self.values.values()))


@dataclass(frozen=True)
class DistanceMatrix:
    entries: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.entries, dtype=np.float64)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise DimensionMismatch("distance matrix must be square")
        d.setflags(write=False)
        object.__setattr__(self, "entries", d)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def __getitem__(self, ij):
        return self.entries[ij]


@dataclass(frozen=True)
class ClusterAssignment:
    epsilon: float
    clusters: tuple[tuple[int, ...], ...]
    achieved_radius: float
    iterations: int = 0
    certified: bool = True

    def __post_init__(self):
        clusters = tuple(tuple(int(i) for i in c) for c in self.clusters)
        object.__setattr__(self, "clusters", clusters)
        if any(len(c) == 0 for c in clusters):
            raise NotAPartition("empty cluster")

    @property
    def m(self) -> int:
        return len(self.clusters)

    @property
    def n(self) -> int:
        return sum(len(c) for c in self.clusters)

    def check_partition(self, n: int) -> None:
        seen = sorted(i for c in self.clusters for i in c)
        if seen != list(range(n)):
            raise NotAPartition(f"clusters do not partition {{0..{n - 1}}}")

    def labels(self) -> np.ndarray:
        out = np.empty(self.n, dtype=np.int64)
        for k, c in enumerate(self.clusters):
            out[list(c)] = k
        return out

    def max_diameter(self, matrix: DistanceMatrix | np.ndarray) -> float:
        d = matrix.entries if isinstance(matrix, DistanceMatrix) else np.asarray(matrix)
        worst = 0.0
        for c in self.clusters:
            if len(c) > 1:
                idx = np.asarray(c)
                worst = max(worst, float(d[np.ix_(idx, idx)].max()))
        return worst


# --- corpus files ---------------------------------------------------------


def _read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise SchemaError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc}") from exc
    return rows


def load_documents(path: str | Path) -> list[Document]:
    docs, seen = [], set()
    for row in _read_jsonl(path):
        try:
            doc = Document(str(row["id"]), str(row.get("title", "")), str(row["body"]))
        except KeyError as exc:
            raise SchemaError(f"{path}: document missing field {exc}") from exc
        except ValidationError as exc:
            raise SchemaError(f"{path}: {exc}") from exc
        if doc.id in seen:
            raise SchemaError(f"{path}: duplicate document id {doc.id!r}")
        seen.add(doc.id)
        docs.append(doc)
    return docs


def load_embeddings(path: str | Path) -> list[EmbeddingVector]:
    out, seen, dim = [], set(), None
    for row in _read_jsonl(path):
        try:
            emb = EmbeddingVector(str(row["id"]), row["values"])
        except KeyError as exc:
            raise SchemaError(f"{path}: embedding missing field {exc}") from exc
        except (ValidationError, TypeError) as exc:
            raise SchemaError(f"{path}: {exc}") from exc
        if emb.doc_id in seen:
            raise SchemaError(f"{path}: duplicate embedding id {emb.doc_id!r}")
        if dim is not None and emb.dim != dim:
            raise SchemaError(f"{path}: embedding {emb.doc_id!r} has dim {emb.dim}, expected {dim}")
        dim = emb.dim
        seen.add(emb.doc_id)
        out.append(emb)
    return out


def write_embeddings(path: str | Path, embeddings: Iterable[EmbeddingVector]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in embeddings:
            fh.write(json.dumps({"id": e.doc_id, "values": list(e.values)}) + "\n")


def load_queries(path: str | Path) -> list[Query]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read {path}: {exc}") from exc
    if not isinstance(raw, list) or not raw:
        raise SchemaError(f"{path}: expected a nonempty JSON array of queries")
    try:
        queries = [Query(str(q["id"]), str(q["text"]), q.get("weight")) for q in raw]
    except (KeyError, TypeError, ValidationError) as exc:
        raise SchemaError(f"{path}: bad query entry ({exc})") from exc
    if len({q.id for q in queries}) != len(queries):
        raise SchemaError(f"{path}: duplicate query ids")
    if any(q.weight is not None for q in queries):
        if any(q.weight is None for q in queries):
            raise SchemaError(f"{path}: either every query has a weight or none does")
        if abs(sum(q.weight for q in queries) - 1.0) > 1e-9:
            raise SchemaError(f"{path}: query weights must sum to 1")
    else:
        w = 1.0 / len(queries)
        queries = [Query(q.id, q.text, w) for q in queries]
    return queries
