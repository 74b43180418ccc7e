"""Text preprocessing and fixed-width embedding providers.

Reviews are reduced to a single token stream (periods removed, sentences
combined, punctuation stripped, lowercased, stopwords and keyword-stem
tokens dropped) and embedded by a pluggable provider. The built-in
provider hashes unigrams and bigrams into a signed fixed-width vector;
an HTTP client can stand in for an external embedding service.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from . import keywords as kw
from .corpus import Corpus
from .errors import ContractError, MisuseAuditError, TransportError, ValidationError

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def bundled_stopwords() -> frozenset[str]:
    text = resources.files("misuseaudit.data").joinpath("stopwords.txt").read_text("utf-8")
    return frozenset(
        line.strip() for line in text.splitlines()
        if line.strip() and not line.startswith("#")
    )


@dataclass(frozen=True)
class PreprocessConfig:
    """Knobs for the token stream fed to embedding providers.

    Keyword stripping uses the same substring-stem rule as corpus
    filtering, so keyword tokens can never leak into the features.
    """

    stopwords: frozenset[str] = field(default_factory=bundled_stopwords)
    strip_keywords: kw.KeywordSet = field(default_factory=kw.seed_keywords)
    lowercase: bool = True  # always true; kept explicit for the fingerprint

    def fingerprint(self) -> str:
        payload = json.dumps({
            "stopwords": sorted(self.stopwords),
            "strip_keywords": sorted(self.strip_keywords.terms),
            "lowercase": self.lowercase,
        }, sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def preprocess(title: str, body: str, config: PreprocessConfig | None = None) -> list[str]:
    """Turn a review into one token stream.

    Title comes first, periods are removed so sentences merge, remaining
    punctuation splits tokens, and stopword and keyword-stem tokens are
    dropped. Idempotent on its own output.
    """
    config = config or PreprocessConfig()
    text = f"{title} {body}" if title else body
    text = text.replace(".", " ").lower()
    tokens = _TOKEN_RE.findall(text)
    return [
        tok for tok in tokens
        if tok not in config.stopwords
        and not kw.token_has_keyword(tok, config.strip_keywords)
    ]


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    provider_id: str

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def __len__(self) -> int:
        return len(self.values)


class EmbeddingProvider(Protocol):
    provider_id: str
    dimension: int

    def embed_many(self, token_lists: Sequence[Sequence[str]]) -> np.ndarray: ...


class HashingEmbedder:
    """Signed feature hashing of unigrams and bigrams, L2-normalized.

    Deterministic across processes (BLAKE2 digests, no interpreter hash
    salt) and dependency-free, preserving the pipeline's shape where a
    pretrained sentence encoder is not available. Pure, so safe for
    concurrent batch calls.
    """

    def __init__(self, dimension: int = 512, use_bigrams: bool = True):
        if dimension < 1:
            raise ValidationError("embedding dimension must be positive")
        self.dimension = dimension
        self.use_bigrams = use_bigrams
        ngram_tag = "12" if use_bigrams else "1"
        self.provider_id = f"hash{dimension}n{ngram_tag}-v1"
        self.calls = 0  # embed_many invocations, for cache accounting

    @staticmethod
    def _features(tokens: Sequence[str], use_bigrams: bool) -> Iterable[str]:
        yield from tokens
        if use_bigrams:
            for left, right in zip(tokens, tokens[1:]):
                yield f"{left} {right}"

    def embed_tokens(self, tokens: Sequence[str]) -> EmbeddingVector:
        return EmbeddingVector(self.embed_many([tokens])[0], self.provider_id)

    def embed_many(self, token_lists: Sequence[Sequence[str]]) -> np.ndarray:
        self.calls += 1
        out = np.zeros((len(token_lists), self.dimension), dtype=np.float64)
        for row, tokens in enumerate(token_lists):
            vec = out[row]
            for feature in self._features(tokens, self.use_bigrams):
                digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest()
                value = int.from_bytes(digest, "big")
                sign = 1.0 if value & 1 else -1.0
                vec[(value >> 1) % self.dimension] += sign
            norm = np.linalg.norm(vec)
            if norm > 0.0:
                vec /= norm
        return out


class ExternalEmbeddingClient:
    """HTTP provider client: POST {"texts": [...]} -> {"vectors": [[...]]}.

    Tokens are joined with spaces on the wire. Transport failures retry
    with backoff before raising TransportError; a response vector of the
    wrong width is a provider-contract error.
    """

    def __init__(self, endpoint: str, dimension: int,
                 provider_id: str | None = None,
                 api_key_env: str | None = None,
                 timeout: float = 30.0, retries: int = 3,
                 backoff: float = 0.5):
        self.endpoint = endpoint
        self.dimension = dimension
        self.provider_id = provider_id or f"external-{dimension}"
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.calls = 0

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env)
            if not key:
                raise ValidationError(f"api key env var {self.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def embed_tokens(self, tokens: Sequence[str]) -> EmbeddingVector:
        return EmbeddingVector(self.embed_many([tokens])[0], self.provider_id)

    def embed_many(self, token_lists: Sequence[Sequence[str]]) -> np.ndarray:
        import requests

        self.calls += 1
        payload = {"texts": [" ".join(tokens) for tokens in token_lists]}
        last_error: Exception | None = None
        for attempt in range(self.retries):
            try:
                response = requests.post(self.endpoint, json=payload,
                                         headers=self._headers(), timeout=self.timeout)
                response.raise_for_status()
                vectors = response.json()["vectors"]
                break
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_error = exc
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff * (2 ** attempt))
            except (requests.HTTPError, KeyError, ValueError) as exc:
                raise TransportError(f"embedding service error: {exc}") from exc
        else:
            raise TransportError(
                f"embedding service unreachable after {self.retries} attempts: {last_error}"
            )

        matrix = np.asarray(vectors, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape != (len(token_lists), self.dimension):
            raise ContractError(
                f"provider returned shape {matrix.shape}, expected "
                f"({len(token_lists)}, {self.dimension})"
            )
        if not np.isfinite(matrix).all():
            raise ContractError("provider returned non-finite values")
        return matrix


class EmbeddingCache:
    """Persistent JSONL cache keyed by (provider_id, review_id, config hash).

    Reads are lock-free over the in-memory map; writes append under a
    lock so concurrent readers never see torn lines.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[tuple[str, str, str], np.ndarray] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with self.path.open(encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if not line:
                        continue
                    row = json.loads(line)
                    key = (row["provider_id"], row["review_id"], row["config_hash"])
                    self._entries[key] = np.asarray(row["vector"], dtype=np.float64)

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: tuple[str, str, str]) -> np.ndarray | None:
        return self._entries.get(key)

    def put(self, key: tuple[str, str, str], vector: np.ndarray) -> None:
        with self._lock:
            self._entries[key] = vector
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as handle:
                    handle.write(json.dumps({
                        "provider_id": key[0],
                        "review_id": key[1],
                        "config_hash": key[2],
                        "vector": [float(v) for v in vector],
                    }) + "\n")


class EmbedBatchError(MisuseAuditError):
    """Provider failure partway through a batch, with progress attached."""

    def __init__(self, message: str, completed_ids: list[str], failed_chunk: list[str]):
        super().__init__(message)
        self.completed_ids = completed_ids
        self.failed_chunk = failed_chunk


def embed_batch(
    review_ids: Sequence[str],
    corpus: Corpus,
    config: PreprocessConfig,
    provider: EmbeddingProvider,
    cache: EmbeddingCache | None = None,
    chunk_size: int = 64,
) -> np.ndarray:
    """Embed reviews in input order, serving repeats from the cache.

    Cache hits cost zero provider calls. On a provider failure the error
    carries the ids already embedded (whose vectors are in the cache) and
    the chunk that failed.
    """
    missing = [rid for rid in review_ids if rid not in corpus.reviews]
    if missing:
        raise ValidationError("unknown review ids: " + ", ".join(missing))
    if chunk_size < 1:
        raise ValidationError("chunk_size must be positive")

    config_hash = config.fingerprint()
    vectors: dict[str, np.ndarray] = {}
    to_embed: list[str] = []
    for rid in dict.fromkeys(review_ids):
        cached = cache.get((provider.provider_id, rid, config_hash)) if cache else None
        if cached is not None:
            vectors[rid] = cached
        else:
            to_embed.append(rid)

    completed: list[str] = []
    for start in range(0, len(to_embed), chunk_size):
        chunk = to_embed[start:start + chunk_size]
        token_lists = [
            preprocess(corpus.reviews[rid].title, corpus.reviews[rid].body, config)
            for rid in chunk
        ]
        try:
            matrix = provider.embed_many(token_lists)
        except MisuseAuditError as exc:
            raise EmbedBatchError(
                f"provider failed on chunk starting at {start}: {exc}",
                completed_ids=completed, failed_chunk=chunk,
            ) from exc
        for rid, vector in zip(chunk, matrix):
            vectors[rid] = vector
            if cache is not None:
                cache.put((provider.provider_id, rid, config_hash), vector)
            completed.append(rid)

    return np.array([vectors[rid] for rid in review_ids], dtype=np.float64)


def embed_texts(texts: Sequence[str], config: PreprocessConfig,
                provider: EmbeddingProvider) -> np.ndarray:
    """Embed free-standing texts (e.g. a training CSV) without a cache."""
    token_lists = [preprocess("", text, config) for text in texts]
    return np.asarray(provider.embed_many(token_lists), dtype=np.float64)
