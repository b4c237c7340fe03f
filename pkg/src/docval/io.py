"""CSV readers and writers for attributions, frontiers and Lipschitz scatters.

Floats are written with ``repr`` so a write/read round trip is lossless and
repeated runs produce byte-identical files. A path of ``-`` means stdout.
"""

from __future__ import annotations

import contextlib
import csv
import json
import sys
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import Attribution
from .errors import SchemaError

ATTRIBUTION_FIELDS = ["doc_id", "phi", "method", "unique_subsets", "params"]
FRONTIER_FIELDS = ["method", "param_json", "unique_subsets", "mae", "mse", "mape", "ci_low", "ci_high"]
SCATTER_FIELDS = ["d", "delta"]
RANKING_FIELDS = ["rank", "doc_id", "similarity"]


@contextlib.contextmanager
def open_output(path):
    if str(path) == "-":
        yield sys.stdout
    else:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            yield fh


def _rows(path, fields: Sequence[str]) -> list[dict]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or any(f not in reader.fieldnames for f in fields):
                raise SchemaError(f"{path}: expected columns {fields}, got {reader.fieldnames}")
            return list(reader)
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc}") from exc


def _params_json(params: dict) -> str:
    return json.dumps(params, sort_keys=True, separators=(",", ":"))


def write_attribution(att: Attribution, path) -> None:
    with open_output(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ATTRIBUTION_FIELDS)
        params = _params_json(att.params)
        for doc, phi in att.values.items():
            w.writerow([doc, repr(float(phi)), att.method, att.unique_subsets, params])


def read_attribution(path) -> Attribution:
    rows = _rows(path, ATTRIBUTION_FIELDS)
    if not rows:
        raise SchemaError(f"{path}: no attribution rows")
    try:
        values = {r["doc_id"]: float(r["phi"]) for r in rows}
        first = rows[0]
        params = json.loads(first["params"]) if first["params"] else {}
        return Attribution(first["method"], values, int(first["unique_subsets"]), params)
    except (ValueError, TypeError) as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def write_frontier(points, path) -> None:
    with open_output(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FRONTIER_FIELDS)
        for p in points:
            lo, hi = p.replication_ci if p.replication_ci is not None else ("", "")
            w.writerow(
                [p.method, _params_json(p.param), repr(p.unique_subsets), repr(p.mae), repr(p.mse), repr(p.mape),
                 repr(lo) if lo != "" else "", repr(hi) if hi != "" else ""]
            )


def read_frontier(path) -> list[dict]:
    out = []
    for r in _rows(path, FRONTIER_FIELDS):
        try:
            out.append(
                {
                    "method": r["method"],
                    "param": json.loads(r["param_json"]),
                    **{k: float(r[k]) for k in ("unique_subsets", "mae", "mse", "mape")},
                    "ci": (float(r["ci_low"]), float(r["ci_high"])) if r["ci_low"] else None,
                }
            )
        except (ValueError, TypeError) as exc:
            raise SchemaError(f"{path}: {exc}") from exc
    return out


def write_scatter(points: np.ndarray, path) -> None:
    with open_output(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCATTER_FIELDS)
        for d, delta in points:
            w.writerow([repr(float(d)), repr(float(delta))])


def read_scatter(path) -> np.ndarray:
    rows = _rows(path, SCATTER_FIELDS)
    try:
        return np.array([[float(r["d"]), float(r["delta"])] for r in rows], dtype=np.float64).reshape(-1, 2)
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def write_ranking(ranking: Iterable[tuple[str, float]], path) -> None:
    with open_output(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RANKING_FIELDS)
        for k, (doc, sim) in enumerate(ranking, 1):
            w.writerow([k, doc, repr(float(sim))])


def read_ranking(path) -> list[str]:
    rows = _rows(path, RANKING_FIELDS)
    return [r["doc_id"] for r in sorted(rows, key=lambda r: int(r["rank"]))]


def read_query_revenue(path) -> dict[str, float]:
    try:
        return {r["query_id"]: float(r["revenue"]) for r in _rows(path, ["query_id", "revenue"])}
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def write_query_revenue(revenue: dict[str, float], path) -> None:
    with open_output(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query_id", "revenue"])
        for q, r in revenue.items():
            w.writerow([q, repr(float(r))])


def path_stem(path) -> str:
    return Path(path).stem
