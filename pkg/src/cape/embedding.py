"""Text embeddings for translating free-form steps to admissible actions.

Two providers share one interface: an offline character-trigram hasher
(deterministic, used by tests and scripted runs) and a remote HTTP provider
speaking ``POST /embeddings {"input": [...]}``.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import httpx
import numpy as np

OFFLINE_DIM = 256
_FNV_OFFSET = 0x811C9DC5
_FNV_PRIME = 0x01000193


class EmbeddingInputError(ValueError):
    pass


class UndefinedSimilarityError(ValueError):
    pass


class EmbeddingTransportError(RuntimeError):
    """Remote embedding call failed after all retries."""

    def __init__(self, message: str, *, attempts: int, status: int | None = None, retryable: bool = True):
        super().__init__(message)
        self.attempts = attempts
        self.status = status
        self.retryable = retryable


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    values: np.ndarray
    norm: float

    @classmethod
    def of(cls, values: Sequence[float] | np.ndarray) -> "EmbeddingVector":
        arr = np.asarray(values, dtype=np.float64)
        arr.setflags(write=False)
        return cls(arr, float(np.linalg.norm(arr)))

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])

    def __neg__(self) -> "EmbeddingVector":
        return EmbeddingVector.of(-self.values)


def fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & 0xFFFFFFFF
    return h


def trigrams(text: str) -> list[str]:
    norm = " " + " ".join(text.lower().split()) + " "
    return [norm[i : i + 3] for i in range(len(norm) - 2)]


def cosine(u: EmbeddingVector, v: EmbeddingVector) -> float:
    if u.dimension != v.dimension:
        raise EmbeddingInputError(f"dimension mismatch: {u.dimension} vs {v.dimension}")
    if u.norm == 0.0 or v.norm == 0.0:
        raise UndefinedSimilarityError("cosine similarity undefined for a zero vector")
    c = float(np.dot(u.values, v.values) / (u.norm * v.norm))
    return min(1.0, max(-1.0, c))


class EmbeddingProvider:
    """Base provider: subclasses implement ``_embed_many``; caching lives here."""

    name = "base"
    dimension = 0

    def __init__(self, cache: bool = True):
        self.cache_enabled = cache
        self._cache: dict[str, EmbeddingVector] = {}
        self._lock = threading.Lock()

    def _embed_many(self, texts: list[str]) -> list[EmbeddingVector]:
        raise NotImplementedError

    def embed(self, text: str) -> EmbeddingVector:
        return self.embed_batch([text])[0]

    def embed_batch(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        for t in texts:
            if not isinstance(t, str) or not t.strip():
                raise EmbeddingInputError("cannot embed empty text")
        if not self.cache_enabled:
            return self._embed_many(list(texts))
        with self._lock:
            missing = list(dict.fromkeys(t for t in texts if t not in self._cache))
        if missing:
            fresh = self._embed_many(missing)
            with self._lock:
                for t, v in zip(missing, fresh):
                    self._cache.setdefault(t, v)
        with self._lock:
            return [self._cache[t] for t in texts]

    def matrix(self, texts: Sequence[str]) -> np.ndarray:
        """Rows are unit-normalised embeddings of ``texts``."""
        vecs = self.embed_batch(texts)
        m = np.vstack([v.values for v in vecs])
        norms = np.array([v.norm for v in vecs])
        if np.any(norms == 0.0):
            raise UndefinedSimilarityError("zero-norm embedding in batch")
        return m / norms[:, None]


class TrigramEmbedder(EmbeddingProvider):
    """Hash lowercase character trigrams into ``dimension`` buckets (FNV-1a)."""

    name = "offline-trigram"

    def __init__(self, dimension: int = OFFLINE_DIM, cache: bool = True):
        super().__init__(cache=cache)
        self.dimension = dimension

    def _vector(self, text: str) -> EmbeddingVector:
        counts = np.zeros(self.dimension, dtype=np.float64)
        for tri in trigrams(text):
            counts[fnv1a(tri.encode("utf-8")) % self.dimension] += 1.0
        return EmbeddingVector.of(counts / np.linalg.norm(counts))

    def _embed_many(self, texts: list[str]) -> list[EmbeddingVector]:
        return [self._vector(t) for t in texts]


class RemoteEmbedder(EmbeddingProvider):
    """Embeddings from an HTTP endpoint; retries transport errors and 5xx/429."""

    name = "remote"

    def __init__(
        self,
        url: str | None = None,
        api_key: str | None = None,
        model: str | None = None,
        *,
        client: httpx.Client | None = None,
        max_retries: int = 3,
        backoff: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
        cache: bool = True,
    ):
        super().__init__(cache=cache)
        self.url = url or os.environ.get("CAPE_EMBED_URL")
        if not self.url:
            raise EmbeddingInputError("no embedding endpoint configured (set CAPE_EMBED_URL)")
        self.api_key = api_key if api_key is not None else os.environ.get("CAPE_API_KEY")
        self.model = model
        self.client = client or httpx.Client(timeout=60.0)
        self.max_retries = max_retries
        self.backoff = backoff
        self._sleep = sleep

    def _endpoint(self) -> str:
        base = self.url.rstrip("/")
        return base if base.endswith("/embeddings") else base + "/embeddings"

    def _embed_many(self, texts: list[str]) -> list[EmbeddingVector]:
        payload: dict = {"input": texts}
        if self.model:
            payload["model"] = self.model
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        status = None
        for attempt in range(self.max_retries + 1):
            delay = self.backoff * 2**attempt
            try:
                resp = self.client.post(self._endpoint(), json=payload, headers=headers)
            except httpx.TransportError as exc:
                err: str = str(exc)
                status = None
            else:
                status = resp.status_code
                if status == 200:
                    data = sorted(resp.json()["data"], key=lambda d: d.get("index", 0))
                    vecs = [EmbeddingVector.of(d["embedding"]) for d in data]
                    if len(vecs) != len(texts):
                        raise EmbeddingTransportError(
                            "embedding count mismatch", attempts=attempt + 1, status=status, retryable=False
                        )
                    return vecs
                if status != 429 and status < 500:
                    raise EmbeddingTransportError(
                        f"HTTP {status}: {resp.text[:200]}", attempts=attempt + 1, status=status, retryable=False
                    )
                err = f"HTTP {status}"
                retry_after = resp.headers.get("retry-after")
                if retry_after:
                    try:
                        delay = float(retry_after)
                    except ValueError:
                        pass
            if attempt < self.max_retries:
                self._sleep(delay)
        raise EmbeddingTransportError(
            f"embedding request failed: {err}", attempts=self.max_retries + 1, status=status
        )


def rank_by_similarity(
    query: str, candidates: Sequence[str], top_k: int, embedder: EmbeddingProvider
) -> list[tuple[str, float]]:
    """Candidates by descending cosine similarity to ``query``; ties lexicographic."""
    if not candidates:
        raise EmbeddingInputError("no candidates to rank")
    if top_k < 1:
        raise EmbeddingInputError("top_k must be positive")
    q = embedder.embed(query)
    vecs = embedder.embed_batch(list(candidates))
    scored = [(c, cosine(q, v)) for c, v in zip(candidates, vecs)]
    scored.sort(key=lambda cs: (-cs[1], cs[0]))
    return scored[:top_k]
