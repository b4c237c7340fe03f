"""Sampling approximations of Shapley values.

All three estimators work on anything game-shaped (``n``, ``evaluate``,
``evaluate_many``, ``unique_subsets``, ``members``, ``v_max``, ``v_empty``),
so they run unchanged on a document-level game or a cluster-level game.
Randomness is drawn from per-permutation child seeds, so results do not
depend on scheduling when ``concurrency`` > 1.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import Attribution
from .errors import GameTooLarge, SingularSystem, ValidationError

MAX_EXHAUSTIVE_PLAYERS = 8


@dataclass(frozen=True)
class McConfig:
    permutations: int = 100
    seed: int = 0
    exhaustive: bool = False
    concurrency: int = 1

    def __post_init__(self):
        if self.permutations < 1:
            raise ValidationError("permutations must be >= 1")


@dataclass(frozen=True)
class TmcConfig(McConfig):
    tolerance: float = 0.5
    v_max: float | None = None

    def __post_init__(self):
        super().__post_init__()
        if self.tolerance < 0:
            raise ValidationError("tolerance must be >= 0")


@dataclass(frozen=True)
class KernelShapConfig:
    samples: int = 100
    seed: int = 0
    ridge_lambda: float = 1e-6
    include_all_pairs_first: bool = True
    l1_alpha: float | None = None
    concurrency: int = 1

    def __post_init__(self):
        if self.samples < 1 or self.ridge_lambda < 0:
            raise ValidationError("samples must be >= 1 and ridge_lambda >= 0")


def permutation_rng(seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))


def _permutations(n: int, cfg: McConfig) -> list[np.ndarray]:
    if cfg.exhaustive:
        if n > MAX_EXHAUSTIVE_PLAYERS:
            raise GameTooLarge(f"exhaustive enumeration of {n}! permutations is disabled above n={MAX_EXHAUSTIVE_PLAYERS}")
        return [np.array(p) for p in itertools.permutations(range(n))]
    return [permutation_rng(cfg.seed, k).permutation(n) for k in range(cfg.permutations)]


def _walk(game, perm: np.ndarray, v_max: float, tolerance: float) -> np.ndarray:
    marg = np.zeros(game.n)
    mask = 0
    prev = game.v_empty
    for i in perm:
        if tolerance > 0 and v_max - prev < tolerance:
            break  # remaining members keep a zero marginal
        mask |= 1 << int(i)
        value = game.evaluate(mask)
        marg[i] = value - prev
        prev = value
    return marg


def _permutation_estimate(game, cfg: McConfig, tolerance: float, v_max: float) -> np.ndarray:
    perms = _permutations(game.n, cfg)
    if cfg.concurrency > 1 and len(perms) > 1:
        with ThreadPoolExecutor(max_workers=cfg.concurrency) as pool:
            rows = list(pool.map(lambda p: _walk(game, p, v_max, tolerance), perms))
    else:
        rows = [_walk(game, p, v_max, tolerance) for p in perms]
    return np.sum(np.vstack(rows), axis=0) / len(perms)


def monte_carlo(game, cfg: McConfig | None = None, **kw) -> Attribution:
    """Average marginal contribution over sampled permutations."""
    cfg = cfg or McConfig(**kw)
    phi = _permutation_estimate(game, cfg, 0.0, game.v_max)
    n_perm = math.factorial(game.n) if cfg.exhaustive else cfg.permutations
    return Attribution.from_array(
        game, "mc", phi, game.unique_subsets, permutations=n_perm, seed=cfg.seed, exhaustive=cfg.exhaustive
    )


def truncated_monte_carlo(game, cfg: TmcConfig | None = None, **kw) -> Attribution:
    """Permutation sampling that stops a permutation once v_max - v(prefix) < tolerance.

    A tolerance of 0 disables truncation, so the output matches monte_carlo
    with the same seed exactly, even when noisy scores exceed v_max.
    """
    cfg = cfg or TmcConfig(**kw)
    v_max = game.v_max if cfg.v_max is None else cfg.v_max
    phi = _permutation_estimate(game, cfg, cfg.tolerance, v_max)
    n_perm = math.factorial(game.n) if cfg.exhaustive else cfg.permutations
    return Attribution.from_array(
        game, "tmc", phi, game.unique_subsets, permutations=n_perm, seed=cfg.seed, tolerance=cfg.tolerance, v_max=v_max
    )


# --- Kernel SHAP ----------------------------------------------------------


def kernel_weight(n: int, s: int) -> float:
    """Shapley kernel weight of one coalition of size s (0 < s < n)."""
    return (n - 1) / (math.comb(n, s) * s * (n - s))


def _size_masks(n: int, s: int) -> list[int]:
    return [sum(1 << i for i in c) for c in itertools.combinations(range(n), s)]


def kernel_samples(n: int, cfg: KernelShapConfig) -> tuple[list[int], np.ndarray]:
    """Coalitions (as masks) and regression weights for Kernel SHAP.

    If the budget covers every interior coalition they are all used with their
    exact kernel weights. Otherwise the smallest and largest sizes may be
    enumerated first with their exact weights: sizes 1 and n-1 when the budget
    allows 2n rows, else size 1 alone (n rows already identify every member
    once efficiency is imposed). The rest of the budget is drawn with
    replacement: a size with probability proportional to its total kernel
    mass, then a uniform coalition of that size. Each draw carries an equal
    share of the remaining mass.
    """
    interior = (1 << n) - 2
    if cfg.samples >= interior:
        masks = list(range(1, (1 << n) - 1))
        w = np.array([kernel_weight(n, m.bit_count()) for m in masks])
        return masks, w
    sizes = list(range(1, n))
    mass = {s: (n - 1) / (s * (n - s)) for s in sizes}
    masks: list[int] = []
    weights: list[float] = []
    budget = cfg.samples
    if cfg.include_all_pairs_first and n > 2 and budget >= n:
        first = sorted({1, n - 1}) if budget >= 2 * n else [1]
        for s in first:
            for m in _size_masks(n, s):
                masks.append(m)
                weights.append(kernel_weight(n, s))
            sizes.remove(s)
            budget -= n
    if budget and sizes:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
        p = np.array([mass[s] for s in sizes])
        remaining_mass = p.sum()
        draws = rng.choice(len(sizes), size=budget, p=p / remaining_mass)
        share = remaining_mass / budget
        for d in draws:
            s = sizes[d]
            members = rng.choice(n, size=s, replace=False)
            masks.append(int(sum(1 << int(i) for i in members)))
            weights.append(share)
    return masks, np.asarray(weights)


def solve_constrained_wls(z: np.ndarray, y: np.ndarray, w: np.ndarray, total: float, ridge: float, l1_alpha=None, refine: int = 2):
    """Weighted least squares for y ~ z @ phi subject to sum(phi) == total.

    The constraint is substituted out by expressing the last coefficient as
    total minus the others. Weights are rescaled to mean 1 before the ridge
    term is added so that ``ridge`` has a size-independent meaning. The ridge
    only conditions the solve: ``refine`` rounds of iterated Tikhonov
    correction remove its bias on identified directions, while directions the
    samples do not identify stay at zero.
    """
    n = z.shape[1]
    if n == 1:
        return np.array([total])
    w = w * (len(w) / w.sum())
    x = z[:, :-1] - z[:, -1:]
    t = y - z[:, -1] * total
    if l1_alpha is not None:
        from sklearn.linear_model import Lasso

        model = Lasso(alpha=l1_alpha, fit_intercept=False, max_iter=100_000)
        model.fit(x, t, sample_weight=w)
        beta = model.coef_
    else:
        xtw = x.T * w
        a = xtw @ x
        b = xtw @ t
        if ridge == 0 and np.linalg.matrix_rank(a) < n - 1:
            raise SingularSystem("sampled coalitions do not identify every member; raise samples or ridge")
        reg = a + ridge * np.eye(n - 1)
        try:
            beta = np.linalg.solve(reg, b)
            if ridge > 0:
                for _ in range(refine):
                    beta = beta + np.linalg.solve(reg, b - a @ beta)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(str(exc)) from exc
    return np.append(beta, total - beta.sum())


def kernel_shap(game, cfg: KernelShapConfig | None = None, **kw) -> Attribution:
    """Shapley-kernel weighted regression of coalition values on membership."""
    cfg = cfg or KernelShapConfig(**kw)
    n = game.n
    if cfg.samples < n:
        raise ValidationError(f"kernel SHAP needs samples >= n ({n})")
    full = game.evaluate(game.full_mask)
    total = full - game.v_empty
    if n == 1:
        phi = np.array([total])
    else:
        masks, w = kernel_samples(n, cfg)
        y = game.evaluate_many(masks, cfg.concurrency) - game.v_empty
        bits = np.array(masks, dtype=np.int64)
        z = ((bits[:, None] >> np.arange(n)) & 1).astype(np.float64)
        phi = solve_constrained_wls(z, y, w, total, cfg.ridge_lambda, cfg.l1_alpha)
    params = dict(samples=cfg.samples, seed=cfg.seed, ridge_lambda=cfg.ridge_lambda)
    if cfg.l1_alpha is not None:
        params["l1_alpha"] = cfg.l1_alpha
    return Attribution.from_array(game, "kernelshap", phi, game.unique_subsets, **params)
