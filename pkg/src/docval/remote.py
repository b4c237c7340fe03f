"""Chat-completion backed summarize-then-score value function.

One request summarizes the coalition's documents; ``replicates`` independent
requests score the summary and the mean is the coalition value. The wire
format is the common chat-completions shape (``model``, ``messages``,
``temperature`` in; ``choices[0].message.content`` out), so any compatible
endpoint works.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

import httpx

from .core import Document, Query, coalition_key, indices_of
from .errors import BackendUnavailable, MalformedResponse, ScoreParseError, ValidationError
from .valuefn import EvaluationRecord

log = logging.getLogger(__name__)

_IRRELEVANT_ONLY = re.compile(r"^\s*(?:\[\d+\]\s*is not related to the query\.\s*)+$")
_FENCE = re.compile(r"^\s*```(?:json)?\s*(.*?)\s*```\s*$", re.DOTALL)


def load_prompt(name: str) -> str:
    return resources.files("docval.prompts").joinpath(f"{name}.txt").read_text(encoding="utf-8")


@dataclass(frozen=True)
class RemotePipelineConfig:
    endpoint_url: str
    model_name: str
    temperature: float = 0.1
    replicates: int = 4
    api_key_env: str = "DOCVAL_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    backoff: float = 0.5
    max_in_flight: int = 4
    embeddings_url: str | None = None
    embedding_model: str | None = None
    shortcut_irrelevant: bool = True

    def __post_init__(self):
        if self.replicates < 1:
            raise ValidationError("replicates must be >= 1")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValidationError("temperature must lie in [0, 2]")
        if self.max_retries < 0 or self.max_in_flight < 1:
            raise ValidationError("max_retries must be >= 0 and max_in_flight >= 1")


def _loads(content: str):
    m = _FENCE.match(content)
    if m:
        content = m.group(1)
    return json.loads(content)


class ChatClient:
    def __init__(self, config: RemotePipelineConfig, transport: httpx.BaseTransport | None = None, sleep=time.sleep):
        self.config = config
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._http = httpx.Client(timeout=config.timeout, headers=headers, transport=transport)
        self._slots = threading.BoundedSemaphore(config.max_in_flight)
        self._sleep = sleep
        self.requests = 0

    def close(self):
        self._http.close()

    def _post(self, url: str, body: dict) -> dict:
        attempts = self.config.max_retries + 1
        last = None
        for attempt in range(attempts):
            if attempt:
                self._sleep(self.config.backoff * 2 ** (attempt - 1))
            with self._slots:
                self.requests += 1
                try:
                    resp = self._http.post(url, json=body)
                except httpx.HTTPError as exc:
                    last = f"{type(exc).__name__}: {exc}"
                    log.warning("request to %s failed (%s), attempt %d/%d", url, last, attempt + 1, attempts)
                    continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                log.warning("request to %s returned %s, attempt %d/%d", url, last, attempt + 1, attempts)
                continue
            if resp.status_code >= 400:
                raise BackendUnavailable(f"{url} rejected the request: HTTP {resp.status_code}")
            try:
                return resp.json()
            except ValueError as exc:
                raise MalformedResponse(f"{url} returned non-JSON body") from exc
        raise BackendUnavailable(f"{url} unavailable after {attempts} attempts ({last})")

    def chat(self, system: str, user: str) -> str:
        body = {
            "model": self.config.model_name,
            "temperature": self.config.temperature,
            "messages": [{"role": "system", "content": system}, {"role": "user", "content": user}],
        }
        data = self._post(self.config.endpoint_url, body)
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse("chat response lacks choices[0].message.content") from exc

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        if not self.config.embeddings_url:
            raise ValidationError("no embeddings endpoint configured")
        body = {"model": self.config.embedding_model or self.config.model_name, "input": list(texts)}
        data = self._post(self.config.embeddings_url, body)
        try:
            rows = sorted(data["data"], key=lambda r: r.get("index", 0))
            return [list(map(float, r["embedding"])) for r in rows]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponse("embedding response lacks data[*].embedding") from exc


def format_comments(texts: Sequence[str]) -> str:
    return "\n\n".join(f"[{k}] {t}" for k, t in enumerate(texts))


def summarize(client: ChatClient, query: Query, texts: Sequence[str]) -> tuple[str, str]:
    """Returns (key, summary) for the numbered comments in ``texts``."""
    if not texts:
        raise ValidationError("nothing to summarize")
    system = load_prompt("summarize").replace("{original_query}", query.text)
    content = client.chat(system, f"Comments:\n{format_comments(texts)}")
    try:
        obj = _loads(content)
        return str(obj["key"]), str(obj["summary"])
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedResponse("summary response needs JSON fields 'key' and 'summary'") from exc


def is_irrelevance_only(summary: str) -> bool:
    return bool(_IRRELEVANT_ONLY.match(summary))


def parse_score(raw, v_max: float = 10.0) -> float:
    if isinstance(raw, bool):
        raise ScoreParseError(f"score {raw!r} is not numeric")
    if isinstance(raw, str):
        try:
            raw = int(raw.strip())
        except ValueError:
            raise ScoreParseError(f"score {raw!r} is not an integer") from None
    if not isinstance(raw, (int, float)) or raw != int(raw):
        raise ScoreParseError(f"score {raw!r} is not an integer")
    if not 0 <= raw <= v_max:
        raise ScoreParseError(f"score {raw!r} outside [0, {v_max:g}]")
    return float(raw)


def score_once(client: ChatClient, query: Query, key: str, summary: str) -> float:
    system = load_prompt("evaluate").replace("{original_query}", query.text)
    user = json.dumps([{"key": key, "summary": summary}], ensure_ascii=False)
    content = client.chat(system, user)
    try:
        obj = _loads(content)
    except ValueError as exc:
        raise ScoreParseError("evaluation response is not JSON") from exc
    if isinstance(obj, dict):
        lists = [v for v in obj.values() if isinstance(v, list)]
        obj = lists[0] if lists else [obj]
    if not isinstance(obj, list) or not obj:
        raise ScoreParseError("evaluation response needs a nonempty array")
    entry = next((e for e in obj if isinstance(e, dict) and str(e.get("key")) == key), obj[0])
    if not isinstance(entry, dict) or "score" not in entry:
        raise ScoreParseError("evaluation entry lacks 'score'")
    return parse_score(entry["score"])


def remote_score(client: ChatClient, query: Query, summary: str, replicates: int, key: str = "0") -> EvaluationRecord:
    if replicates < 1:
        raise ValidationError("replicates must be >= 1")
    if client.config.shortcut_irrelevant and is_irrelevance_only(summary):
        return EvaluationRecord(key, (1.0,) * replicates)
    return EvaluationRecord(key, tuple(score_once(client, query, key, summary) for _ in range(replicates)))


def remote_summarize(client: ChatClient, query: Query, docs: Sequence[Document]) -> str:
    return summarize(client, query, [d.text for d in docs])[1]


class RemoteSource:
    """Value source that runs the summarize-and-score pipeline per coalition."""

    def __init__(self, client: ChatClient, query: Query, docs: Sequence[Document]):
        self.client = client
        self.query = query
        self.docs = list(docs)
        self.records: dict[str, EvaluationRecord] = {}
        self._lock = threading.Lock()

    def texts(self, mask: int, groups=None) -> list[str]:
        if groups:
            # One meta-document per cluster, members in index order.
            return ["\n".join(self.docs[i].text for i in g) for g in groups]
        return [self.docs[i].text for i in indices_of(mask)]

    def score(self, mask, groups=None):
        key, summary = summarize(self.client, self.query, self.texts(mask, groups))
        record = remote_score(self.client, self.query, summary, self.client.config.replicates, coalition_key(mask))
        with self._lock:
            self.records[record.coalition_key] = record
        return record.mean_score
