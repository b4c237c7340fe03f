"""Single-evaluation attribution rules used as fairness baselines."""

from __future__ import annotations

import numpy as np

from .core import Attribution
from .errors import DimensionMismatch, ZeroWeightSum
from .valuefn import as_matrix, as_vector, cosine_similarities


def equal_attribution(game) -> Attribution:
    full = game.evaluate(game.full_mask)
    phi = np.full(game.n, full / game.n)
    return Attribution.from_array(game, "equal", phi, game.unique_subsets)


def relevance_weighted(game, query_embedding=None, member_embeddings=None, shift: bool = False) -> Attribution:
    """Split v(full) in proportion to each member's cosine similarity to the query.

    Similarities are used as-is, so a negative similarity yields a negative
    share; ``shift=True`` subtracts the most negative similarity first.
    """
    q = game.query_embedding if query_embedding is None else as_vector(query_embedding)
    x = game.embeddings if member_embeddings is None else as_matrix(member_embeddings)
    if q is None or x is None:
        raise DimensionMismatch("relevance weighting needs query and member embeddings")
    if x.shape[0] != game.n:
        raise DimensionMismatch("need one embedding per member")
    sims = cosine_similarities(x, q)
    if shift:
        sims = sims - min(0.0, float(sims.min()))
    total = sims.sum()
    if total == 0:
        raise ZeroWeightSum("similarities sum to zero")
    full = game.evaluate(game.full_mask)
    phi = full * sims / total
    return Attribution.from_array(game, "relevance", phi, game.unique_subsets, shift=shift)
