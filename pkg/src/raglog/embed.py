"""Text-to-vector embedding behind one interface with two implementations.

The hashing embedder is a deterministic, offline stand-in for a remote
embedding service: character 3-grams of the canonicalized text are hashed
into a fixed-dimension signed-count vector which is then L2-normalized. With
unit vectors, inner product equals cosine, so retrieval scores are
scale-stable regardless of message length.

Hash contract (fixed so vectors are reproducible across processes and
platforms): FNV-1a 64-bit over the UTF-8 bytes of each 3-character window of
the canonicalized text (lowercased, whitespace runs collapsed to one space,
outer whitespace stripped). A window with hash ``h`` adds +1 at index
``h mod dim`` when bit 63 of ``h`` is 0, else -1.
"""
from __future__ import annotations

import concurrent.futures
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .remote import (
    PostFn,
    RemoteError,
    SleepFn,
    api_base,
    api_key,
    auth_headers,
    post_with_retries,
)

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

_WS_RE = re.compile(r"\s+")


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit hash of a byte string."""
    h = FNV64_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV64_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class EmbedderDescriptor:
    """Identity of an embedding space.

    Two vectors are comparable by inner product only if their descriptors
    match; stores record the descriptor and reject mismatched queries.
    """

    name: str
    dim: int
    normalized: bool


class Embedder(ABC):
    """Common interface for all embedding backends."""

    descriptor: EmbedderDescriptor

    @property
    def dim(self) -> int:
        return self.descriptor.dim

    @abstractmethod
    def embed_text(self, text: str) -> np.ndarray:
        """Embed one text into a float32 vector of the descriptor dimension."""

    def embed_batch(self, texts: list[str], max_in_flight: int = 1) -> list[np.ndarray]:
        """Embed many texts; output order always matches input order."""
        if max_in_flight < 1:
            raise ValueError(f"max_in_flight must be >= 1, got {max_in_flight}")
        return [self.embed_text(t) for t in texts]


def _canonicalize(text: str) -> str:
    return _WS_RE.sub(" ", text.lower()).strip()


class HashingEmbedder(Embedder):
    """Deterministic char-3-gram feature-hashing embedder (see module docstring).

    Empty or whitespace-only text maps to the all-zero vector, the unique
    representation of empty input.
    """

    def __init__(self, dim: int = 256):
        if dim < 16 or dim & (dim - 1) != 0:
            raise ValueError(f"dim must be a power of two >= 16, got {dim}")
        self.descriptor = EmbedderDescriptor(name=f"hashing-3gram-{dim}", dim=dim, normalized=True)

    def embed_text(self, text: str) -> np.ndarray:
        dim = self.descriptor.dim
        canon = _canonicalize(text)
        if len(canon) < 3:
            return np.zeros(dim, dtype=np.float32)
        data = canon.encode("utf-8")
        if len(data) == len(canon):
            counts = self._accumulate_ascii(data, dim)
        else:
            counts = self._accumulate_chars(canon, dim)
        norm = np.sqrt(np.sum(counts * counts))
        if norm > 0.0:
            counts = counts / norm
        return counts.astype(np.float32)

    @staticmethod
    def _accumulate_ascii(data: bytes, dim: int) -> np.ndarray:
        # Vectorized FNV-1a over all 3-byte windows; identical to the
        # per-character path because 3 ASCII chars encode to 3 bytes.
        a = np.frombuffer(data, dtype=np.uint8).astype(np.uint64)
        prime = np.uint64(FNV64_PRIME)
        with np.errstate(over="ignore"):
            h = (np.uint64(FNV64_OFFSET) ^ a[:-2]) * prime
            h = (h ^ a[1:-1]) * prime
            h = (h ^ a[2:]) * prime
        idx = (h & np.uint64(dim - 1)).astype(np.int64)
        sign = np.where((h >> np.uint64(63)) == np.uint64(0), 1.0, -1.0)
        return np.bincount(idx, weights=sign, minlength=dim)

    @staticmethod
    def _accumulate_chars(canon: str, dim: int) -> np.ndarray:
        counts = np.zeros(dim, dtype=np.float64)
        for i in range(len(canon) - 2):
            h = fnv1a64(canon[i : i + 3].encode("utf-8"))
            counts[h & (dim - 1)] += 1.0 if (h >> 63) == 0 else -1.0
        return counts


class RemoteEmbedder(Embedder):
    """Client for an HTTP embedding service using the common embeddings wire shape.

    POST ``{model, input: [texts]}`` to ``<base>/embeddings``; the response is
    ``{data: [{index, embedding}]}``. Transient failures are retried with
    exponential backoff; the credential is read from the environment and never
    logged.
    """

    def __init__(
        self,
        model: str,
        dim: int,
        *,
        base_url: str | None = None,
        key: str | None = None,
        normalized: bool = False,
        max_attempts: int = 5,
        post: PostFn | None = None,
        sleep: SleepFn | None = None,
    ):
        self.model = model
        self.descriptor = EmbedderDescriptor(name=f"remote-{model}", dim=dim, normalized=normalized)
        self._base = api_base(base_url)
        self._key = api_key(key)
        self._max_attempts = max_attempts
        self._post = post
        self._sleep = sleep

    def embed_text(self, text: str) -> np.ndarray:
        return self._embed_chunk([text])[0]

    def embed_batch(self, texts: list[str], max_in_flight: int = 1) -> list[np.ndarray]:
        # One request per text so retry accounting is per item; concurrency is
        # bounded and results are re-ordered by input index.
        if max_in_flight < 1:
            raise ValueError(f"max_in_flight must be >= 1, got {max_in_flight}")
        if not texts:
            return []
        if max_in_flight == 1:
            return [self._embed_chunk([t])[0] for t in texts]
        out: list[np.ndarray | None] = [None] * len(texts)
        first_failure: tuple[int, Exception] | None = None
        with concurrent.futures.ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            futures = {pool.submit(self._embed_chunk, [t]): i for i, t in enumerate(texts)}
            for fut in concurrent.futures.as_completed(futures):
                i = futures[fut]
                try:
                    out[i] = fut.result()[0]
                except RemoteError as exc:
                    if first_failure is None or i < first_failure[0]:
                        first_failure = (i, exc)
        if first_failure is not None:
            i, exc = first_failure
            raise RemoteError(f"embedding failed for input {i}: {exc}") from exc
        return out  # type: ignore[return-value]

    def _embed_chunk(self, texts: list[str]) -> list[np.ndarray]:
        payload = {"model": self.model, "input": texts}
        body = post_with_retries(
            f"{self._base}/embeddings",
            payload,
            auth_headers(self._key),
            max_attempts=self._max_attempts,
            post=self._post,
            sleep=self._sleep,
        )
        try:
            data = sorted(body["data"], key=lambda item: item["index"])
            vectors = [np.asarray(item["embedding"], dtype=np.float32) for item in data]
        except (KeyError, TypeError) as exc:
            raise RemoteError(f"malformed embedding response: {exc}") from exc
        if len(vectors) != len(texts):
            raise RemoteError(f"expected {len(texts)} embeddings, got {len(vectors)}")
        for v in vectors:
            if v.shape != (self.descriptor.dim,):
                raise RemoteError(
                    f"embedding dimension {v.shape} does not match descriptor dim {self.descriptor.dim}"
                )
            if not np.all(np.isfinite(v)):
                raise RemoteError("embedding contains non-finite values")
        return vectors
