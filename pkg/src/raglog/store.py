"""Normal-only vector store: insertion, exact inner-product retrieval, persistence.

Retrieval is an exact full scan, never an approximate index: reference sets
top out around 50,000 entries, where a scan is milliseconds, and exactness
keeps every downstream result deterministic.

Score contract: the inner product is accumulated in IEEE-754 binary64 over
the float32 components in ascending index order, one addend at a time. That
fixed order makes scores bit-reproducible across runs and checkable against
an independently written scan.

On-disk format (single binary file):
  8-byte magic "RAGLOGVS"
  4-byte LE header length, then that many bytes of UTF-8 JSON header
  per record: id (8-byte LE unsigned), text (4-byte LE length + UTF-8),
              vector (dim x 4-byte LE IEEE-754 binary32)
  4-byte LE CRC32 of all preceding bytes
"""
from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .embed import EmbedderDescriptor

MAGIC = b"RAGLOGVS"
STORE_FORMAT_VERSION = 1


class StoreError(Exception):
    """Base class for vector-store failures."""


class DimMismatchError(StoreError):
    """Vector dimension does not match the store header."""


class DuplicateIdError(StoreError):
    """Record id already present in the store."""


class EmptyStoreError(StoreError):
    """Top-k retrieval from a store with no records."""


class VersionMismatchError(StoreError):
    """Store file written with an unsupported format version."""


class CorruptStoreError(StoreError):
    """Store file is truncated or fails its checksum."""


class DescriptorMismatchError(StoreError):
    """Query embedder does not match the embedder the store was built with."""


@dataclass(frozen=True)
class VectorRecord:
    id: int
    vector: np.ndarray
    text: str


@dataclass(frozen=True)
class RetrievalHit:
    record_id: int
    score: float
    text: str


@njit(cache=True)
def _scan_scores(matrix, query):  # pragma: no cover - exercised via retrieval tests
    n, d = matrix.shape
    out = np.empty(n, dtype=np.float64)
    for r in range(n):
        acc = 0.0
        for i in range(d):
            acc += np.float64(matrix[r, i]) * np.float64(query[i])
        out[r] = acc
    return out


class VectorStore:
    """Vector database of normal log entries with exact inner-product retrieval.

    Build phase is single-writer; once built, the store is read-only and safe
    to share across threads.
    """

    def __init__(
        self,
        dim: int,
        *,
        normalized: bool = True,
        embedder_name: str = "",
        extras: dict | None = None,
    ):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = dim
        self.normalized = normalized
        self.embedder_name = embedder_name
        self.extras = dict(extras or {})
        self._ids: list[int] = []
        self._texts: list[str] = []
        self._vectors: list[np.ndarray] = []
        self._id_set: set[int] = set()
        self._matrix: np.ndarray | None = None
        self._ids_arr: np.ndarray | None = None

    @property
    def count(self) -> int:
        return len(self._ids)

    def __len__(self) -> int:
        return self.count

    def insert(self, record: VectorRecord) -> None:
        vec = np.asarray(record.vector, dtype=np.float32)
        if vec.shape != (self.dim,):
            raise DimMismatchError(f"record dim {vec.shape} does not match store dim {self.dim}")
        if not (0 <= record.id < 1 << 64):
            raise ValueError(f"record id must fit in 64 unsigned bits, got {record.id}")
        if record.id in self._id_set:
            raise DuplicateIdError(f"record id {record.id} already present")
        self._ids.append(record.id)
        self._texts.append(record.text)
        self._vectors.append(vec)
        self._id_set.add(record.id)
        self._matrix = None
        self._ids_arr = None

    def records(self) -> list[VectorRecord]:
        return [VectorRecord(i, v, t) for i, v, t in zip(self._ids, self._vectors, self._texts)]

    def check_compatible(self, descriptor: EmbedderDescriptor) -> None:
        if descriptor.dim != self.dim or (self.embedder_name and descriptor.name != self.embedder_name):
            raise DescriptorMismatchError(
                f"embedder {descriptor.name!r} (dim {descriptor.dim}) does not match "
                f"store embedder {self.embedder_name!r} (dim {self.dim})"
            )

    def _score_all(self, query: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        q = np.asarray(query, dtype=np.float32)
        if q.shape != (self.dim,):
            raise DimMismatchError(f"query dim {q.shape} does not match store dim {self.dim}")
        if self._matrix is None:
            self._matrix = (
                np.vstack(self._vectors)
                if self._vectors
                else np.empty((0, self.dim), dtype=np.float32)
            )
            self._ids_arr = np.asarray(self._ids, dtype=np.uint64)
        if self.count == 0:
            return np.empty(0, dtype=np.float64), self._ids_arr
        return _scan_scores(self._matrix, q), self._ids_arr

    def _sorted_hits(self, scores: np.ndarray, ids: np.ndarray, keep: np.ndarray) -> list[RetrievalHit]:
        # Non-increasing score, ties broken by ascending record id.
        kept_scores = scores[keep]
        kept_ids = ids[keep]
        order = np.lexsort((kept_ids, -kept_scores))
        positions = np.flatnonzero(keep)[order]
        return [
            RetrievalHit(record_id=int(ids[p]), score=float(scores[p]), text=self._texts[p])
            for p in positions
        ]

    def retrieve_top_k(self, query: np.ndarray, k: int) -> list[RetrievalHit]:
        """The min(k, count) records with the largest inner product against the query."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        scores, ids = self._score_all(query)
        if self.count == 0:
            raise EmptyStoreError("cannot retrieve from an empty store")
        hits = self._sorted_hits(scores, ids, np.ones(self.count, dtype=bool))
        return hits[: min(k, self.count)]

    def retrieve_threshold(self, query: np.ndarray, min_score: float) -> list[RetrievalHit]:
        """All records with score >= min_score; may be empty."""
        scores, ids = self._score_all(query)
        if self.count == 0:
            return []
        return self._sorted_hits(scores, ids, scores >= min_score)

    def header(self) -> dict:
        h = {
            "version": STORE_FORMAT_VERSION,
            "dim": self.dim,
            "normalized": self.normalized,
            "embedder": self.embedder_name,
            "count": self.count,
        }
        h.update(self.extras)
        return h

    def save(self, path: str | Path) -> None:
        buf = io.BytesIO()
        buf.write(MAGIC)
        header = json.dumps(self.header(), sort_keys=True).encode("utf-8")
        buf.write(struct.pack("<I", len(header)))
        buf.write(header)
        for rec_id, text, vec in zip(self._ids, self._texts, self._vectors):
            buf.write(struct.pack("<Q", rec_id))
            encoded = text.encode("utf-8")
            buf.write(struct.pack("<I", len(encoded)))
            buf.write(encoded)
            buf.write(vec.astype("<f4", copy=False).tobytes())
        payload = buf.getvalue()
        crc = zlib.crc32(payload) & 0xFFFFFFFF
        with open(path, "wb") as fh:
            fh.write(payload)
            fh.write(struct.pack("<I", crc))

    @classmethod
    def load(cls, path: str | Path) -> "VectorStore":
        data = Path(path).read_bytes()
        if len(data) < len(MAGIC) + 4 + 4:
            raise CorruptStoreError("file too short to be a vector store")
        if data[: len(MAGIC)] != MAGIC:
            raise CorruptStoreError("bad magic: not a vector store file")
        payload, crc_bytes = data[:-4], data[-4:]
        pos = len(MAGIC)
        (header_len,) = struct.unpack_from("<I", payload, pos)
        pos += 4
        if pos + header_len > len(payload):
            raise CorruptStoreError("truncated header")
        try:
            header = json.loads(payload[pos : pos + header_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CorruptStoreError(f"unreadable header: {exc}") from exc
        pos += header_len
        version = header.get("version")
        if version != STORE_FORMAT_VERSION:
            raise VersionMismatchError(f"unsupported store version {version!r}")
        dim = int(header["dim"])
        core_keys = {"version", "dim", "normalized", "embedder", "count"}
        store = cls(
            dim,
            normalized=bool(header.get("normalized", True)),
            embedder_name=header.get("embedder", ""),
            extras={k: v for k, v in header.items() if k not in core_keys},
        )
        vec_bytes = dim * 4
        for _ in range(int(header["count"])):
            if pos + 12 > len(payload):
                raise CorruptStoreError("truncated record header")
            (rec_id,) = struct.unpack_from("<Q", payload, pos)
            pos += 8
            (text_len,) = struct.unpack_from("<I", payload, pos)
            pos += 4
            if pos + text_len + vec_bytes > len(payload):
                raise CorruptStoreError("truncated record body")
            try:
                text = payload[pos : pos + text_len].decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CorruptStoreError(f"undecodable record text: {exc}") from exc
            pos += text_len
            vec = np.frombuffer(payload[pos : pos + vec_bytes], dtype="<f4").copy()
            pos += vec_bytes
            store.insert(VectorRecord(id=rec_id, vector=vec, text=text))
        if pos != len(payload):
            raise CorruptStoreError(f"{len(payload) - pos} unexpected trailing bytes")
        (expected_crc,) = struct.unpack("<I", crc_bytes)
        if zlib.crc32(payload) & 0xFFFFFFFF != expected_crc:
            raise CorruptStoreError("checksum failure")
        return store

    def export_jsonl(self, path: str | Path) -> None:
        """Human-inspectable JSON-Lines dump: one {id, text, vector} per line."""
        with open(path, "w", encoding="utf-8") as fh:
            for rec_id, text, vec in zip(self._ids, self._texts, self._vectors):
                obj = {"id": rec_id, "text": text, "vector": [float(x) for x in vec]}
                fh.write(json.dumps(obj, sort_keys=True) + "\n")
