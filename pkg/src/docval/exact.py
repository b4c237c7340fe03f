"""Exact Shapley values by full subset enumeration."""

from __future__ import annotations

import numpy as np

from . import _kernels
from .core import Attribution
from .errors import GameTooLarge

DEFAULT_MAX_PLAYERS = 20


def shapley_from_table(values: np.ndarray, n: int) -> np.ndarray:
    """Shapley values from a table of all 2**n coalition values indexed by mask.

    phi_i = sum over S not containing i of [v(S+i) - v(S)] / (n * C(n-1, |S|)).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (1 << n,):
        raise ValueError(f"expected {1 << n} coalition values, got {values.shape}")
    return _kernels.shapley_from_table(values, n)


def exact_shapley(game, max_players: int = DEFAULT_MAX_PLAYERS, concurrency: int = 1) -> Attribution:
    if game.n > max_players:
        raise GameTooLarge(
            f"exact Shapley on {game.n} members needs {2**game.n - 1} evaluations; cap is n={max_players}"
        )
    table = game.value_table(concurrency)
    phi = shapley_from_table(table, game.n)
    return Attribution.from_array(game, "exact", phi, game.unique_subsets)
