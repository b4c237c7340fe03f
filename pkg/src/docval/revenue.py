"""Turning per-query attributions into payouts."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import Attribution
from .errors import EmptyInput, EmptySampler, NonpositiveTotalValue, ValidationError
from .io import open_output


@dataclass
class RevenueReport:
    mode: str
    beta: float
    subscription_R: float
    per_query_revenue: dict[str, float]
    payouts: dict[str, float]
    negative: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValidationError("beta must lie in [0, 1]")
        self.negative = sorted(d for d, p in self.payouts.items() if p < 0)

    def total(self) -> float:
        return float(sum(self.payouts.values()))


def _check_beta(beta: float) -> None:
    if not 0.0 <= beta <= 1.0:
        raise ValidationError("beta must lie in [0, 1]")


def expected_value(per_query: Sequence[tuple[Attribution, float]]) -> dict[str, float]:
    """Probability-weighted mean of phi across queries; absent documents count as 0.

    Weights are normalized to sum to one.
    """
    if not per_query:
        raise EmptyInput("no attributions given")
    weights = np.array([w for _, w in per_query], dtype=np.float64)
    if np.any(weights < 0) or weights.sum() <= 0:
        raise ValidationError("query weights must be nonnegative with a positive sum")
    weights = weights / weights.sum()
    out: dict[str, float] = {}
    for (attr, _), w in zip(per_query, weights):
        for doc, phi in attr.values.items():
            out[doc] = out.get(doc, 0.0) + w * phi
    return out


def _proportional(values: Mapping[str, float], pool: float) -> dict[str, float]:
    total = sum(values.values())
    if total <= 0:
        raise NonpositiveTotalValue(f"attributions sum to {total}; cannot split proportionally")
    return {doc: pool * v / total for doc, v in values.items()}


def subscription_payout(expected: Mapping[str, float], R: float, beta: float) -> RevenueReport:
    _check_beta(beta)
    if R < 0:
        raise ValidationError("subscription revenue must be nonnegative")
    payouts = _proportional(expected, beta * R)
    return RevenueReport("subscription", beta, R, {}, payouts)


def query_payout(attribution: Attribution, r_q: float, beta: float) -> dict[str, float]:
    _check_beta(beta)
    if r_q < 0:
        raise ValidationError("query revenue must be nonnegative")
    return _proportional(attribution.values, beta * r_q)


def combined_payout(
    expected: Mapping[str, float] | None,
    R: float,
    per_query: Sequence[tuple[str, Attribution, float]],
    beta: float,
    weights: Sequence[float] | None = None,
) -> RevenueReport:
    """Subscription share plus weighted per-query shares.

    ``per_query`` holds (query_id, attribution, r_q). Each query's payout is
    multiplied by its weight (default 1, i.e. every listed query was served
    once); with probability weights the second term is the expectation over
    the query distribution. The pool is beta * (R + sum(weight_q * r_q)).
    """
    _check_beta(beta)
    if weights is None:
        weights = [1.0] * len(per_query)
    if len(weights) != len(per_query):
        raise ValidationError("one weight per query required")
    payouts: dict[str, float] = {}
    if R > 0:
        if expected is None:
            raise EmptyInput("subscription revenue needs expected values")
        for doc, p in subscription_payout(expected, R, beta).payouts.items():
            payouts[doc] = payouts.get(doc, 0.0) + p
    elif expected:
        for doc in expected:
            payouts.setdefault(doc, 0.0)
    revenue = {}
    for (qid, attr, r_q), w in zip(per_query, weights):
        revenue[qid] = r_q
        if r_q == 0 or w == 0:
            continue
        for doc, p in query_payout(attr, r_q, beta).items():
            payouts[doc] = payouts.get(doc, 0.0) + w * p
    return RevenueReport("combined", beta, R, revenue, payouts)


def sampled_expectation(
    query_sampler: Sequence[tuple[Attribution, float]] | Callable[[np.random.Generator], Attribution],
    k: int,
    seed: int = 0,
) -> dict[str, float]:
    """Monte Carlo estimate of expected_value from k queries drawn i.i.d.

    ``query_sampler`` is either a list of (attribution, weight) pairs, sampled
    in proportion to weight, or a callable drawing one attribution from a
    generator.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    rng = np.random.default_rng(seed)
    if callable(query_sampler):
        draws = [query_sampler(rng) for _ in range(k)]
    else:
        if not query_sampler:
            raise EmptySampler("sampler has no queries")
        w = np.array([wt for _, wt in query_sampler], dtype=np.float64)
        if np.any(w < 0) or w.sum() <= 0:
            raise ValidationError("sampler weights must be nonnegative with a positive sum")
        idx = rng.choice(len(query_sampler), size=k, p=w / w.sum())
        draws = [query_sampler[i][0] for i in idx]
    out: dict[str, float] = {}
    for attr in draws:
        for doc, phi in attr.values.items():
            out[doc] = out.get(doc, 0.0) + phi
    return {doc: v / k for doc, v in out.items()}


def write_payouts(report: RevenueReport, path) -> None:
    with open_output(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["doc_id", "payout", "mode", "beta"])
        for doc in sorted(report.payouts):
            w.writerow([doc, repr(float(report.payouts[doc])), report.mode, repr(float(report.beta))])


def read_payouts(path) -> dict[str, float]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["doc_id"]: float(row["payout"]) for row in csv.DictReader(fh)}
