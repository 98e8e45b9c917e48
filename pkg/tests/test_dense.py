from __future__ import annotations

import hashlib
import math
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

import tcmrag.dense as dense
from tcmrag.dense import (DEFAULT_STUB_DIM, EmbeddingError, EmbeddingVector, HttpEmbedProvider,
                          ProviderError, StubEmbedProvider, VectorIndex, embed, fnv1a64,
                          stub_embed, token_bucket)

# ---------------------------------------------------------------------------
# FNV-1a hash (published reference values)
# ---------------------------------------------------------------------------

def test_fnv1a64_reference_values():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def test_fnv1a64_oracle():
    """Independent re-computation, byte by byte."""
    def slow(data: bytes) -> int:
        h = 0xCBF29CE484222325
        for b in data:
            h ^= b
            h = (h * 0x100000001B3) % (2 ** 64)
        return h

    for text in ["中医", "胃脘胀痛", "w000042", "", "a b c"]:
        assert fnv1a64(text.encode("utf-8")) == slow(text.encode("utf-8"))


def test_token_bucket_range_and_determinism():
    for tok in ["中医", "abc", "脉弦"]:
        b = token_bucket(tok, 256)
        assert 0 <= b < 256
        assert b == token_bucket(tok, 256)
        assert b == fnv1a64(tok.encode("utf-8")) % 256


# ---------------------------------------------------------------------------
# Stub embeddings
# ---------------------------------------------------------------------------

def distinct_bucket_tokens(count: int, dim: int) -> list[str]:
    tokens: list[str] = []
    seen: set[int] = set()
    i = 0
    while len(tokens) < count:
        tok = f"t{i}"
        b = token_bucket(tok, dim)
        if b not in seen:
            seen.add(b)
            tokens.append(tok)
        i += 1
    return tokens


def test_stub_embed_single_token_is_one_hot():
    vec = stub_embed({"中医"}, 256)
    assert vec.dim == 256
    bucket = token_bucket("中医", 256)
    assert vec.values[bucket] == pytest.approx(1.0)
    assert float(np.linalg.norm(vec.values)) == pytest.approx(1.0)
    assert np.count_nonzero(vec.values) == 1


def test_stub_embed_cosine_half_overlap():
    a, b, c = distinct_bucket_tokens(3, 256)
    va = stub_embed({a, b}, 256)
    vb = stub_embed({a, c}, 256)
    assert float(va.values @ vb.values) == pytest.approx(0.5)
    assert float(va.values @ va.values) == pytest.approx(1.0)


def test_stub_embed_disjoint_tokens_orthogonal():
    a, b, c, d = distinct_bucket_tokens(4, 256)
    va = stub_embed({a, b}, 256)
    vb = stub_embed({c, d}, 256)
    assert float(va.values @ vb.values) == pytest.approx(0.0)


def test_stub_embed_bucket_collision_accumulates():
    # find two tokens sharing a bucket at dim 8
    tok_by_bucket: dict[int, str] = {}
    pair = None
    i = 0
    while pair is None:
        tok = f"c{i}"
        b = token_bucket(tok, 8)
        if b in tok_by_bucket:
            pair = (tok_by_bucket[b], tok)
        else:
            tok_by_bucket[b] = tok
        i += 1
    vec = stub_embed(set(pair), 8)
    assert np.count_nonzero(vec.values) == 1
    assert float(np.max(vec.values)) == pytest.approx(1.0)


def test_stub_embed_rejects_bad_input():
    with pytest.raises(EmbeddingError):
        stub_embed(set(), 256)
    with pytest.raises(EmbeddingError):
        stub_embed({"a"}, 4)


@given(st.sets(st.text(alphabet="abc中医汤", min_size=1, max_size=4), min_size=1, max_size=12))
def test_stub_embed_unit_norm_and_deterministic(tokens):
    v1 = stub_embed(tokens)
    v2 = stub_embed(tokens)
    assert v1.dim == DEFAULT_STUB_DIM
    assert float(np.linalg.norm(v1.values)) == pytest.approx(1.0)
    assert np.array_equal(v1.values, v2.values)


def test_stub_provider_and_embed_roundtrip():
    provider = StubEmbedProvider(tokenize=lambda text: set(text.split()), dim=64)
    vec = embed("a b", provider)
    assert np.allclose(vec.values, stub_embed({"a", "b"}, 64).values)


def test_embed_rejects_empty_text_and_zero_vectors():
    provider = StubEmbedProvider(tokenize=lambda text: {text}, dim=64)
    with pytest.raises(EmbeddingError):
        embed("", provider)

    class ZeroProvider:
        def embed_raw(self, text):
            return [0.0] * 16

    with pytest.raises(EmbeddingError, match="unusable"):
        embed("x", ZeroProvider())


def test_embed_normalizes_provider_output():
    class Raw:
        def embed_raw(self, text):
            return [3.0, 4.0]

    vec = embed("x", Raw())
    assert vec.values == pytest.approx([0.6, 0.8])


# ---------------------------------------------------------------------------
# HTTP provider retry policy
# ---------------------------------------------------------------------------

class FakeResponse:
    def __init__(self, status_code, payload=None):
        self.status_code = status_code
        self._payload = payload

    def raise_for_status(self):
        if self.status_code >= 400:
            raise RuntimeError(f"http {self.status_code}")

    def json(self):
        return self._payload


def test_http_embed_retries_then_succeeds(monkeypatch):
    calls = []
    responses = [FakeResponse(500), FakeResponse(503),
                 FakeResponse(200, {"data": [{"embedding": [1.0, 0.0]}]})]

    def post(*args, **kwargs):
        calls.append(kwargs)
        return responses[len(calls) - 1]

    monkeypatch.setattr(dense.requests, "post", post)
    slept = []
    provider = HttpEmbedProvider(url="http://x", model="m", sleep=slept.append)
    assert provider.embed_raw("hi") == [1.0, 0.0]
    assert len(calls) == 3
    assert slept == [1.0, 2.0]


def test_http_embed_client_error_no_retry(monkeypatch):
    calls = []

    def post(*args, **kwargs):
        calls.append(1)
        return FakeResponse(401)

    monkeypatch.setattr(dense.requests, "post", post)
    slept = []
    provider = HttpEmbedProvider(url="http://x", model="m", sleep=slept.append)
    with pytest.raises(ProviderError):
        provider.embed_raw("hi")
    assert len(calls) == 1
    assert slept == []


def test_http_embed_exhausts_retries(monkeypatch):
    calls = []

    def post(*args, **kwargs):
        calls.append(1)
        raise ConnectionError("down")

    monkeypatch.setattr(dense.requests, "post", post)
    slept = []
    provider = HttpEmbedProvider(url="http://x", model="m", sleep=slept.append)
    with pytest.raises(ProviderError, match="after 3 retries"):
        provider.embed_raw("hi")
    assert len(calls) == 4
    assert slept == [1.0, 2.0, 4.0]


# ---------------------------------------------------------------------------
# Vector index
# ---------------------------------------------------------------------------

def unit(values) -> EmbeddingVector:
    arr = np.asarray(values, dtype=np.float64)
    return EmbeddingVector(dim=arr.shape[0], values=arr / np.linalg.norm(arr))


def test_index_search_ranks_by_cosine():
    index = VectorIndex()
    index.add("a", unit([1.0, 0.0]))
    index.add("b", unit([1.0, 1.0]))
    index.add("c", unit([0.0, 1.0]))
    got = index.search(unit([1.0, 0.0]), 3)
    assert [cid for cid, _ in got] == ["a", "b", "c"]
    assert got[0][1] == pytest.approx(1.0)
    assert got[1][1] == pytest.approx(1.0 / math.sqrt(2))
    assert got[2][1] == pytest.approx(0.0)


def test_index_tie_breaks_by_chunk_id():
    index = VectorIndex()
    index.add("z", unit([1.0, 0.0]))
    index.add("a", unit([1.0, 0.0]))
    index.add("m", unit([1.0, 0.0]))
    got = index.search(unit([1.0, 0.0]), 3)
    assert [cid for cid, _ in got] == ["a", "m", "z"]


def test_index_errors_and_empty_search():
    index = VectorIndex()
    assert index.search(unit([1.0]), 5) == []
    index.add("a", unit([1.0, 0.0]))
    with pytest.raises(EmbeddingError, match="duplicate"):
        index.add("a", unit([0.0, 1.0]))
    with pytest.raises(EmbeddingError, match="dim mismatch"):
        index.add("b", unit([1.0, 0.0, 0.0]))
    with pytest.raises(EmbeddingError, match="dim mismatch"):
        index.search(unit([1.0, 0.0, 0.0]), 1)
    with pytest.raises(EmbeddingError):
        index.search(unit([1.0, 0.0]), 0)


def test_index_search_count_tracks_queries():
    index = VectorIndex()
    index.add("a", unit([1.0, 0.0]))
    assert index.search_count == 0
    index.search(unit([1.0, 0.0]), 1)
    index.search(unit([0.0, 1.0]), 1)
    assert index.search_count == 2


def test_index_matches_brute_force_oracle():
    rng = random.Random(3)
    index = VectorIndex()
    rows: dict[str, list[float]] = {}
    for i in range(40):
        raw = [rng.gauss(0, 1) for _ in range(16)]
        cid = f"c{i:02d}#0"
        vec = unit(raw)
        index.add(cid, vec)
        rows[cid] = list(vec.values)
    for trial in range(10):
        q = unit([rng.gauss(0, 1) for _ in range(16)])
        expected = sorted(
            ((cid, sum(a * b for a, b in zip(row, q.values))) for cid, row in rows.items()),
            key=lambda x: (-x[1], x[0]))[:5]
        got = index.search(q, 5)
        assert [cid for cid, _ in got] == [cid for cid, _ in expected]
        for (_, s1), (_, s2) in zip(got, expected):
            assert s1 == pytest.approx(s2)


def test_index_score_and_vector_accessors():
    index = VectorIndex()
    index.add("a", unit([1.0, 1.0]))
    assert index.score("a", unit([1.0, 0.0])) == pytest.approx(1.0 / math.sqrt(2))
    assert index.vector("a").dim == 2


def test_index_persistence_roundtrip(tmp_path):
    index = VectorIndex()
    rng = random.Random(5)
    for i in range(7):
        index.add(f"案例{i}#0", unit([rng.gauss(0, 1) for _ in range(12)]))
    path = tmp_path / "vectors.bin"
    index.save(path)
    loaded = VectorIndex.load(path)
    assert loaded.ids == index.ids
    assert loaded.dim == index.dim
    for cid in index.ids:
        assert np.array_equal(loaded.vector(cid).values, index.vector(cid).values)
    path2 = tmp_path / "again.bin"
    loaded.save(path2)
    assert hashlib.sha256(path.read_bytes()).hexdigest() == \
        hashlib.sha256(path2.read_bytes()).hexdigest()


def test_index_load_rejects_foreign_file(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"not an index at all")
    with pytest.raises(EmbeddingError, match="not a vector index"):
        VectorIndex.load(path)
