"""Top-k retrieval by cosine similarity, plus the short-review filter."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import Document, EmbeddingVector
from .errors import DimensionMismatch, EmptyCorpus, ValidationError
from .valuefn import as_vector, cosine_similarities

DEFAULT_K = 8
DEFAULT_MIN_WORDS = 10


def ranked(query_embedding, corpus: Sequence[EmbeddingVector]) -> list[tuple[str, float]]:
    if not corpus:
        raise EmptyCorpus("no embeddings to rank")
    dims = {e.dim for e in corpus}
    if len(dims) != 1:
        raise DimensionMismatch(f"corpus embeddings have mixed dimensions {sorted(dims)}")
    q = as_vector(query_embedding)
    x = np.array([e.values for e in corpus])
    sims = cosine_similarities(x, q)
    pairs = [(e.doc_id, float(s)) for e, s in zip(corpus, sims)]
    pairs.sort(key=lambda p: (-p[1], p[0]))
    return pairs


def top_k(query_embedding, corpus: Sequence[EmbeddingVector], k: int = DEFAULT_K, min_similarity: float | None = None) -> list[str]:
    """Ids of the k most similar documents, ties broken by ascending id."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    pairs = ranked(query_embedding, corpus)
    if min_similarity is not None:
        pairs = [p for p in pairs if p[1] >= min_similarity]
    return [doc_id for doc_id, _ in pairs[:k]]


def word_count(doc: Document) -> int:
    return len(f"{doc.title} {doc.body}".split())


def min_word_filter(docs: Sequence[Document], min_words: int = DEFAULT_MIN_WORDS) -> list[Document]:
    if min_words < 0:
        raise ValidationError("min_words must be >= 0")
    return [d for d in docs if word_count(d) >= min_words]
