"""Candidate selectors: given evaluated history and a pool, pick one code.

All rankers share the call signature ``ranker.rank(history, candidates, rng)``
and always return a member of ``candidates``.
"""

from __future__ import annotations

import hashlib
import logging
import os
import string
from dataclasses import dataclass
from typing import Any, Mapping, Protocol, Sequence
from urllib.parse import urlparse

import httpx
import numpy as np

from .evaluators import Evaluator
from .space import ArchRecord, NCode
from .trajectory import HistoryEntry, format_prompt

logger = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "LM_SEARCHER_API_KEY"
_STRIP = string.punctuation + "\"'`“”‘’«»"
_TIE_RTOL = 1e-9


class RankerConfigError(ValueError):
    """Ranker misconfiguration detected before any request is sent."""


@dataclass(frozen=True)
class RankDecision:
    chosen: NCode
    ranking: tuple[NCode, ...] | None = None
    fallback_used: bool = False
    raw_reply: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "chosen": str(self.chosen),
            "ranking": [str(c) for c in self.ranking] if self.ranking is not None else None,
            "fallback_used": self.fallback_used,
            "raw_reply": self.raw_reply,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RankDecision":
        def code(text):
            return NCode(tuple(int(c) for c in text))

        ranking = data.get("ranking")
        return cls(
            code(data["chosen"]),
            tuple(code(t) for t in ranking) if ranking is not None else None,
            bool(data.get("fallback_used", False)),
            data.get("raw_reply"),
        )


class Ranker(Protocol):
    name: str

    def rank(self, history: Sequence[ArchRecord], candidates: Sequence[NCode],
             rng: np.random.Generator) -> RankDecision: ...


def _require_candidates(candidates: Sequence[NCode]) -> None:
    if not candidates:
        raise ValueError("candidate list is empty")


def rank_random(history: Sequence[ArchRecord], candidates: Sequence[NCode],
                rng: np.random.Generator) -> RankDecision:
    _require_candidates(candidates)
    return RankDecision(candidates[int(rng.integers(len(candidates)))])


def rank_oracle(history: Sequence[ArchRecord], candidates: Sequence[NCode],
                evaluator: Evaluator) -> RankDecision:
    """Perfect ranker for tests: reads true values without counting evaluations."""
    _require_candidates(candidates)
    ranking = tuple(sorted(candidates, key=lambda c: (-evaluator.score(c), str(c))))
    return RankDecision(ranking[0], ranking)


def knn_predictions(history: Sequence[ArchRecord], candidates: Sequence[NCode],
                    k: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """Mean canonical performance of each candidate's ``k`` Hamming-nearest history codes.

    Every history code at the k-th smallest distance is included. Returns
    ``(predictions, mean neighbour distance)``.
    """
    if not history:
        raise ValueError("k-NN prediction needs at least one history record")
    if k < 1:
        raise ValueError("k must be >= 1")
    hist = np.array([r.ncode.digits for r in history])
    perf = np.array([r.performance for r in history])
    cand = np.array([c.digits for c in candidates])
    dist = (cand[:, None, :] != hist[None, :, :]).sum(axis=2)
    kth = np.sort(dist, axis=1)[:, min(k, len(history)) - 1]
    mask = dist <= kth[:, None]
    counts = mask.sum(axis=1)
    preds = (mask * perf).sum(axis=1) / counts
    mean_dist = (mask * dist).sum(axis=1) / counts
    return preds, mean_dist


def rank_knn_surrogate(history: Sequence[ArchRecord], candidates: Sequence[NCode],
                       k: int = 5) -> RankDecision:
    """Pick the best k-NN prediction; closer neighbourhoods, then smaller code, break ties."""
    _require_candidates(candidates)
    preds, mean_dist = knn_predictions(history, candidates, k)
    best = preds.max()
    tol = _TIE_RTOL * max(1.0, abs(best))
    # near-equal predictions count as ties so a constant shift of history cannot reorder them
    tied = preds >= best - tol

    def key(i: int):
        if tied[i]:
            return (0, 0.0, mean_dist[i], str(candidates[i]))
        return (1, -preds[i], mean_dist[i], str(candidates[i]))

    order = sorted(range(len(candidates)), key=key)
    ranking = tuple(candidates[i] for i in order)
    return RankDecision(ranking[0], ranking)


@dataclass(frozen=True)
class LlmEndpointConfig:
    base_url: str
    model_name: str
    temperature: float = 0.0
    max_retries: int = 3
    timeout: float = 60.0
    api_key_env: str = DEFAULT_API_KEY_ENV
    performance_decimals: int = 2

    def __post_init__(self):
        if self.temperature < 0:
            raise RankerConfigError("temperature must be >= 0")
        if self.max_retries < 0:
            raise RankerConfigError("max_retries must be >= 0")
        if not self.timeout > 0:
            raise RankerConfigError("timeout must be > 0")

    def validate(self) -> str:
        """Check URL and credentials; returns the API key."""
        parsed = urlparse(self.base_url)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise RankerConfigError(f"malformed base_url {self.base_url!r}")
        key = os.environ.get(self.api_key_env, "").strip()
        if not key:
            raise RankerConfigError(f"environment variable {self.api_key_env} is not set")
        return key


def parse_reply(reply: str, candidates: Sequence[NCode]) -> NCode | None:
    """First whitespace-delimited token that names a candidate, punctuation stripped."""
    by_text = {str(c): c for c in candidates}
    for token in reply.split():
        hit = by_text.get(token.strip(_STRIP))
        if hit is not None:
            return hit
    return None


def chat_completion(client: httpx.Client, cfg: LlmEndpointConfig, api_key: str, prompt: str) -> str:
    response = client.post(
        cfg.base_url.rstrip("/") + "/chat/completions",
        json={
            "model": cfg.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.temperature,
        },
        headers={"Authorization": f"Bearer {api_key}"},
        timeout=cfg.timeout,
    )
    response.raise_for_status()
    return response.json()["choices"][0]["message"]["content"] or ""


def _prompt_history(history: Sequence[ArchRecord]) -> list[HistoryEntry]:
    entries = [HistoryEntry.from_record(r) for r in history]
    entries.sort(key=lambda e: (-e.performance, e.code))
    return entries


def rank_llm(history: Sequence[ArchRecord], candidates: Sequence[NCode], cfg: LlmEndpointConfig,
             rng: np.random.Generator, client: httpx.Client | None = None,
             cache: dict[str, str] | None = None) -> RankDecision:
    """Ask a chat-completion endpoint for the best candidate.

    Transport errors and replies naming no candidate are retried up to
    ``cfg.max_retries`` times, after which a uniform random candidate is
    returned with ``fallback_used=True``.
    """
    api_key = cfg.validate()
    _require_candidates(candidates)
    prompt = format_prompt(_prompt_history(history), [str(c) for c in candidates],
                           cfg.performance_decimals)
    cache_key = hashlib.sha256(prompt.encode()).hexdigest()
    if cache is not None and cache_key in cache:
        chosen = parse_reply(cache[cache_key], candidates)
        if chosen is not None:
            return RankDecision(chosen, raw_reply=cache[cache_key])

    own_client = client is None
    client = client or httpx.Client()
    reply = None
    try:
        for attempt in range(cfg.max_retries + 1):
            try:
                reply = chat_completion(client, cfg, api_key, prompt)
            except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError) as exc:
                logger.warning("chat completion attempt %d failed: %s", attempt + 1, exc)
                continue
            chosen = parse_reply(reply, candidates)
            if chosen is not None:
                if cache is not None:
                    cache[cache_key] = reply
                return RankDecision(chosen, raw_reply=reply)
            logger.warning("attempt %d: reply names no candidate: %.80r", attempt + 1, reply)
    finally:
        if own_client:
            client.close()
    fallback = candidates[int(rng.integers(len(candidates)))]
    return RankDecision(fallback, fallback_used=True, raw_reply=reply)


class RandomRanker:
    name = "random"

    def rank(self, history, candidates, rng):
        return rank_random(history, candidates, rng)


class OracleRanker:
    name = "oracle"

    def __init__(self, evaluator: Evaluator):
        self.evaluator = evaluator

    def rank(self, history, candidates, rng):
        return rank_oracle(history, candidates, self.evaluator)


class KnnRanker:
    """k-NN surrogate; with no history it falls back to a random pick."""

    name = "knn"

    def __init__(self, k: int = 5):
        self.k = k

    def rank(self, history, candidates, rng):
        if not history:
            decision = rank_random(history, candidates, rng)
            return RankDecision(decision.chosen, fallback_used=True)
        return rank_knn_surrogate(history, candidates, self.k)


class LlmRanker:
    name = "llm"

    def __init__(self, cfg: LlmEndpointConfig, use_cache: bool = True):
        cfg.validate()
        self.cfg = cfg
        self.cache: dict[str, str] | None = {} if use_cache else None
        self._client = httpx.Client()

    def rank(self, history, candidates, rng):
        return rank_llm(history, candidates, self.cfg, rng, self._client, self.cache)

    def close(self) -> None:
        self._client.close()


def ranker_from_dict(data: Mapping[str, Any], evaluator: Evaluator | None = None):
    kind = data.get("kind")
    if kind == "random":
        return RandomRanker()
    if kind == "oracle":
        if evaluator is None:
            raise RankerConfigError("oracle ranker needs the evaluator")
        return OracleRanker(evaluator)
    if kind == "knn":
        return KnnRanker(int(data.get("k", 5)))
    if kind == "llm":
        fields = {k: v for k, v in data.items() if k != "kind"}
        if "base_url" not in fields or "model_name" not in fields:
            raise RankerConfigError("llm ranker needs base_url and model_name")
        return LlmRanker(LlmEndpointConfig(**fields))
    raise RankerConfigError(f"ranker kind must be random, oracle, knn or llm, got {kind!r}")
