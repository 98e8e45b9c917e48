"""Embedding providers, deterministic offline stub embedder, and an exact flat cosine index."""
from __future__ import annotations

import os
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np
import requests


class EmbeddingError(ValueError):
    """Bad embedding input or provider output (zero vector, dim mismatch)."""


class ProviderError(RuntimeError):
    """Embedding provider failed after retries."""


DEFAULT_STUB_DIM = 256

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

_MAGIC = b"TCMRAGVIDX\x00\x00"  # 12 bytes; 4-byte version follows
_VERSION = 1


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def token_bucket(token: str, dim: int) -> int:
    return fnv1a64(token.encode("utf-8")) % dim


@dataclass(frozen=True)
class EmbeddingVector:
    dim: int
    values: np.ndarray  # unit L2 norm


def _normalize(values: np.ndarray) -> EmbeddingVector:
    values = np.asarray(values, dtype=np.float64)
    norm = float(np.linalg.norm(values))
    if norm == 0.0 or not np.isfinite(norm):
        raise EmbeddingError("zero or non-finite vector")
    return EmbeddingVector(dim=values.shape[0], values=values / norm)


def stub_embed(tokens: set[str], dim: int = DEFAULT_STUB_DIM) -> EmbeddingVector:
    """Bag-of-hashed-tokens embedding: FNV-1a bucket counts, L2-normalized."""
    if dim < 8:
        raise EmbeddingError(f"dim must be >= 8, got {dim}")
    if not tokens:
        raise EmbeddingError("empty token set")
    values = np.zeros(dim, dtype=np.float64)
    for tok in tokens:
        values[token_bucket(tok, dim)] += 1.0
    return _normalize(values)


class EmbedProvider(Protocol):
    def embed_raw(self, text: str) -> list[float]: ...


@dataclass
class StubEmbedProvider:
    """Offline provider: tokenize then hash-bucket. Deterministic, network-free."""
    tokenize: Callable[[str], set[str]]
    dim: int = DEFAULT_STUB_DIM

    def embed_raw(self, text: str) -> list[float]:
        return list(stub_embed(self.tokenize(text), self.dim).values)


@dataclass
class HttpEmbedProvider:
    url: str
    model: str
    api_key_env: str = "EMBED_API_KEY"
    timeout: float = 30.0
    retries: int = 3
    sleep: Callable[[float], None] = time.sleep

    def embed_raw(self, text: str) -> list[float]:
        headers = {"Authorization": f"Bearer {os.environ.get(self.api_key_env, '')}"}
        body = {"model": self.model, "input": [text]}
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = requests.post(self.url, json=body, headers=headers, timeout=self.timeout)
                if 400 <= resp.status_code < 500:
                    raise ProviderError(f"embedding provider rejected request: {resp.status_code}")
                resp.raise_for_status()
                return resp.json()["data"][0]["embedding"]
            except ProviderError:
                raise
            except Exception as exc:  # transport / 5xx / malformed body
                last = exc
                if attempt < self.retries:
                    self.sleep(float(2 ** attempt))
        raise ProviderError(f"embedding provider failed after {self.retries} retries") from last


def embed(text: str, provider: EmbedProvider) -> EmbeddingVector:
    """Provider's vector, L2-normalized locally. Zero vectors are a provider fault."""
    if not text:
        raise EmbeddingError("empty text")
    raw = provider.embed_raw(text)
    try:
        return _normalize(np.asarray(raw, dtype=np.float64))
    except EmbeddingError as exc:
        raise EmbeddingError(f"provider returned an unusable vector: {exc}") from exc


class VectorIndex:
    """Exact flat index over unit vectors; cosine equals dot product."""

    def __init__(self) -> None:
        self.ids: list[str] = []
        self.dim: int | None = None
        self._rows: list[np.ndarray] = []
        self._by_id: dict[str, int] = {}
        self._matrix: np.ndarray | None = None
        self.search_count = 0

    def __len__(self) -> int:
        return len(self.ids)

    def add(self, chunk_id: str, vec: EmbeddingVector) -> None:
        if chunk_id in self._by_id:
            raise EmbeddingError(f"duplicate chunk_id {chunk_id!r}")
        if self.dim is None:
            self.dim = vec.dim
        elif vec.dim != self.dim:
            raise EmbeddingError(f"dim mismatch: index {self.dim}, vector {vec.dim}")
        self._by_id[chunk_id] = len(self.ids)
        self.ids.append(chunk_id)
        self._rows.append(vec.values)
        self._matrix = None

    def vector(self, chunk_id: str) -> EmbeddingVector:
        row = self._rows[self._by_id[chunk_id]]
        return EmbeddingVector(dim=row.shape[0], values=row)

    def score(self, chunk_id: str, query: EmbeddingVector) -> float:
        return float(self._rows[self._by_id[chunk_id]] @ query.values)

    def search(self, query: EmbeddingVector, n: int) -> list[tuple[str, float]]:
        if n < 1:
            raise EmbeddingError(f"n must be >= 1, got {n}")
        self.search_count += 1
        if not self.ids:
            return []
        if query.dim != self.dim:
            raise EmbeddingError(f"dim mismatch: index {self.dim}, query {query.dim}")
        if self._matrix is None:
            self._matrix = np.vstack(self._rows)
        scores = self._matrix @ query.values
        ranked = sorted(zip(self.ids, scores), key=lambda x: (-x[1], x[0]))
        return [(cid, float(s)) for cid, s in ranked[:n]]

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", _VERSION))
            fh.write(struct.pack("<II", self.dim or 0, len(self.ids)))
            for cid, row in zip(self.ids, self._rows):
                raw = cid.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
                fh.write(struct.pack(f"<{row.shape[0]}d", *row))

    @classmethod
    def load(cls, path: str | Path) -> "VectorIndex":
        index = cls()
        with open(path, "rb") as fh:
            if fh.read(12) != _MAGIC:
                raise EmbeddingError(f"{path}: not a vector index file")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != _VERSION:
                raise EmbeddingError(f"{path}: unsupported version {version}")
            dim, count = struct.unpack("<II", fh.read(8))
            for _ in range(count):
                (id_len,) = struct.unpack("<I", fh.read(4))
                cid = fh.read(id_len).decode("utf-8")
                row = np.array(struct.unpack(f"<{dim}d", fh.read(8 * dim)), dtype=np.float64)
                index.add(cid, EmbeddingVector(dim=dim, values=row))
        return index
