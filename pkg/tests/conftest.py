import itertools
import math
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from docval.valuefn import function_game

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def permutation_shapley(values, n):
    """Brute-force Shapley over all n! orderings; independent of the subset formula."""
    phi = [0.0] * n
    count = 0
    for perm in itertools.permutations(range(n)):
        mask = 0
        for i in perm:
            phi[i] += values[mask | (1 << i)] - values[mask]
            mask |= 1 << i
        count += 1
    return np.array(phi) / count


def random_table(n, rng, low=0.0, high=10.0):
    t = rng.uniform(low, high, size=1 << n)
    t[0] = 0.0
    return t


def game_from_table(table, n, **extra):
    return function_game(lambda m: float(table[m]), n, v_max=max(10.0, float(np.max(table)) + 1), **extra)


def majority_table(n, quota):
    return np.array([1.0 if bin(m).count("1") >= quota else 0.0 for m in range(1 << n)])


def triangular_embeddings(positions):
    """Unit vectors whose pairwise cosine distance equals |p_i - p_j| exactly.

    The Gram matrix 1 - |p_i - p_j| is positive semidefinite for positions in
    [0, 1] (the triangular kernel), so it factors into real vectors.
    """
    p = np.asarray(positions, dtype=np.float64)
    gram = 1.0 - np.abs(p[:, None] - p[None, :])
    w, v = np.linalg.eigh(gram)
    w = np.clip(w, 0.0, None)
    x = v * np.sqrt(w)
    return x / np.linalg.norm(x, axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def comb_weight(n, s):
    return 1.0 / (n * math.comb(n - 1, s))


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number, title, ok, detail):
    line = f"acceptance {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
