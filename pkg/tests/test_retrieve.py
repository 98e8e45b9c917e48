from __future__ import annotations

import pytest

from tcmrag.corpus import ClinicalCase
from tcmrag.dense import StubEmbedProvider, VectorIndex, embed, token_bucket
from tcmrag.retrieve import (DENSE_ONLY, HYBRID, MODES, SPARSE_ONLY, RerankProviderError,
                             RetrievalCandidate, RetrievalConfig, RetrievalError, RetrieverDeps,
                             first_stage, fusion_score, parent_case_id, rerank,
                             select_demonstration, two_stage_retrieve)
from tcmrag.sparse import KeywordIndex

DIM = 256


def distinct_bucket_tokens(count: int) -> list[str]:
    tokens: list[str] = []
    seen: set[int] = set()
    i = 0
    while len(tokens) < count:
        tok = f"t{i}"
        b = token_bucket(tok, DIM)
        if b not in seen:
            seen.add(b)
            tokens.append(tok)
        i += 1
    return tokens


A, B, C, D, E = distinct_bucket_tokens(5)


def make_deps(rerank_provider=None) -> RetrieverDeps:
    tokenize = lambda text: set(text.split())
    embedder = StubEmbedProvider(tokenize=tokenize, dim=DIM)
    texts = {
        "c1#0": f"{A} {B}",
        "c2#0": f"{A} {C}",
        "c3#0": f"{D} {E}",
    }
    dense_index = VectorIndex()
    kw_index = KeywordIndex()
    for cid, text in texts.items():
        dense_index.add(cid, embed(text, embedder))
        kw_index.add(cid, tokenize(text))
    return RetrieverDeps(tokenize=tokenize, embedder=embedder, dense_index=dense_index,
                         kw_index=kw_index, chunk_texts=texts,
                         rerank_provider=rerank_provider)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def test_config_validation():
    assert RetrievalConfig().mode == HYBRID
    with pytest.raises(RetrievalError, match="unknown mode"):
        RetrievalConfig(mode="cosine")
    with pytest.raises(RetrievalError, match="alpha"):
        RetrievalConfig(alpha=1.5)
    with pytest.raises(RetrievalError, match="pool"):
        RetrievalConfig(n_dense=2, n_sparse=2, top_k=5)
    assert SPARSE_ONLY in MODES and DENSE_ONLY in MODES


# ---------------------------------------------------------------------------
# First stage pooling
# ---------------------------------------------------------------------------

def test_first_stage_hybrid_pools_and_fills_both_scores():
    deps = make_deps()
    pool = first_stage(f"{A} {B}", deps, RetrievalConfig())
    assert [c.chunk_id for c in pool] == ["c1#0", "c2#0", "c3#0"]
    by_id = {c.chunk_id: c for c in pool}
    assert by_id["c1#0"].dense_score == pytest.approx(1.0)
    assert by_id["c1#0"].sparse_score == pytest.approx(1.0)
    assert by_id["c2#0"].dense_score == pytest.approx(0.5)
    assert by_id["c2#0"].sparse_score == pytest.approx(1 / 3)
    assert by_id["c3#0"].dense_score == pytest.approx(0.0)
    assert by_id["c3#0"].sparse_score == pytest.approx(0.0)
    # c3 shares no token, so only the dense list can have contributed it
    assert by_id["c3#0"].from_dense and not by_id["c3#0"].from_sparse
    assert by_id["c1#0"].from_dense and by_id["c1#0"].from_sparse


def test_first_stage_dense_only_skips_keyword_search():
    deps = make_deps()
    pool = first_stage(f"{A} {B}", deps, RetrievalConfig(mode=DENSE_ONLY))
    assert deps.kw_index.search_count == 0
    assert all(c.from_dense and not c.from_sparse for c in pool)
    # sparse scores are still filled in for downstream fusion
    assert {c.chunk_id: c.sparse_score for c in pool}["c1#0"] == pytest.approx(1.0)


def test_first_stage_sparse_only_skips_vector_search():
    deps = make_deps()
    pool = first_stage(f"{A} {B}", deps, RetrievalConfig(mode=SPARSE_ONLY))
    assert deps.dense_index.search_count == 0
    assert [c.chunk_id for c in pool] == ["c1#0", "c2#0"]  # c3 has no shared token
    assert all(c.from_sparse and not c.from_dense for c in pool)


def test_first_stage_respects_pool_sizes():
    deps = make_deps()
    pool = first_stage(f"{A} {B}", deps, RetrievalConfig(n_dense=1, n_sparse=1, top_k=1))
    assert [c.chunk_id for c in pool] == ["c1#0"]


# ---------------------------------------------------------------------------
# Fusion and rerank
# ---------------------------------------------------------------------------

def test_fusion_score_arithmetic():
    cand = RetrievalCandidate(chunk_id="x", dense_score=0.9, sparse_score=0.1)
    assert fusion_score(cand, 0.5) == pytest.approx(0.5)
    assert fusion_score(cand, 1.0) == pytest.approx(0.9)
    assert fusion_score(cand, 0.0) == pytest.approx(0.1)
    other = RetrievalCandidate(chunk_id="y", dense_score=0.2, sparse_score=1.0)
    # at alpha 0.5 the sparse-strong candidate wins: 0.6 > 0.5
    assert fusion_score(other, 0.5) == pytest.approx(0.6)
    # at alpha 0.9 the dense-strong one wins: 0.82 > 0.28
    assert fusion_score(cand, 0.9) == pytest.approx(0.82)
    assert fusion_score(other, 0.9) == pytest.approx(0.28)


def test_rerank_fusion_fallback_ordering():
    deps = make_deps()
    cands = [
        RetrievalCandidate(chunk_id="a", dense_score=0.9, sparse_score=0.1),
        RetrievalCandidate(chunk_id="b", dense_score=0.2, sparse_score=1.0),
    ]
    ranked, warnings = rerank("q", cands, deps, RetrievalConfig(alpha=0.5))
    assert warnings == []
    assert [c.chunk_id for c in ranked] == ["b", "a"]
    assert ranked[0].rerank_score == pytest.approx(0.6)
    ranked, _ = rerank("q", cands, deps, RetrievalConfig(alpha=0.9))
    assert [c.chunk_id for c in ranked] == ["a", "b"]


def test_rerank_alpha_extremes_degenerate_to_single_mode():
    deps = make_deps()
    pool = first_stage(f"{A} {C}", deps, RetrievalConfig())
    dense_order = [c.chunk_id for c in
                   sorted(pool, key=lambda c: (-c.dense_score, c.chunk_id))]
    sparse_order = [c.chunk_id for c in
                    sorted(pool, key=lambda c: (-c.sparse_score, c.chunk_id))]
    ranked, _ = rerank("q", pool, deps, RetrievalConfig(alpha=1.0))
    assert [c.chunk_id for c in ranked] == dense_order
    ranked, _ = rerank("q", pool, deps, RetrievalConfig(alpha=0.0))
    assert [c.chunk_id for c in ranked] == sparse_order


def test_rerank_tie_breaks_by_chunk_id():
    deps = make_deps()
    cands = [
        RetrievalCandidate(chunk_id="z", dense_score=0.5, sparse_score=0.5),
        RetrievalCandidate(chunk_id="a", dense_score=0.5, sparse_score=0.5),
    ]
    ranked, _ = rerank("q", cands, deps, RetrievalConfig())
    assert [c.chunk_id for c in ranked] == ["a", "z"]


def test_rerank_does_not_mutate_input():
    deps = make_deps()
    cands = [RetrievalCandidate(chunk_id="a", dense_score=0.9, sparse_score=0.1)]
    rerank("q", cands, deps, RetrievalConfig())
    assert cands[0].rerank_score == 0.0


def test_rerank_empty_pool_is_an_error():
    deps = make_deps()
    with pytest.raises(RetrievalError):
        rerank("q", [], deps, RetrievalConfig())


class FixedRerank:
    def __init__(self, scores):
        self.scores = scores
        self.calls = []

    def rerank(self, query, documents):
        self.calls.append((query, list(documents)))
        return self.scores[:len(documents)]


class BrokenRerank:
    def rerank(self, query, documents):
        raise RerankProviderError("provider offline")


def test_rerank_provider_scores_win():
    provider = FixedRerank([0.1, 0.9, 0.5])
    deps = make_deps(rerank_provider=provider)
    pool = first_stage(f"{A} {B}", deps, RetrievalConfig())
    ranked, warnings = rerank(f"{A} {B}", pool, deps, RetrievalConfig())
    assert warnings == []
    # provider scores are positional: pool order is c1, c2, c3
    assert [c.chunk_id for c in ranked] == ["c2#0", "c3#0", "c1#0"]
    assert [c.rerank_score for c in ranked] == [0.9, 0.5, 0.1]
    assert provider.calls[0][1] == [deps.chunk_texts[c.chunk_id] for c in pool]


def test_rerank_provider_failure_degrades_with_warning():
    deps = make_deps(rerank_provider=BrokenRerank())
    pool = first_stage(f"{A} {B}", deps, RetrievalConfig())
    ranked, warnings = rerank(f"{A} {B}", pool, deps, RetrievalConfig(alpha=0.5))
    assert len(warnings) == 1
    assert "fusion fallback" in warnings[0]
    assert ranked[0].rerank_score == pytest.approx(fusion_score(ranked[0], 0.5))


# ---------------------------------------------------------------------------
# Two-stage pipeline and demonstration pick
# ---------------------------------------------------------------------------

def test_two_stage_truncates_to_top_k():
    deps = make_deps()
    result = two_stage_retrieve(f"{A} {B}", deps, RetrievalConfig(top_k=2))
    assert [c.chunk_id for c in result.candidates] == ["c1#0", "c2#0"]
    assert result.warnings == []


def test_two_stage_empty_pool():
    deps = make_deps()
    result = two_stage_retrieve(f"{E}", deps, RetrievalConfig(mode=SPARSE_ONLY, top_k=1))
    assert [c.chunk_id for c in result.candidates] == ["c3#0"]
    result = two_stage_retrieve("unknowntoken", deps,
                                RetrievalConfig(mode=SPARSE_ONLY, top_k=1))
    assert result.candidates == []


def test_parent_case_id():
    assert parent_case_id("c1#0") == "c1"
    assert parent_case_id("c1#12") == "c1"
    assert parent_case_id("a#b#2") == "a#b"
    assert parent_case_id("noseparator") == "noseparator"


def make_case(case_id: str) -> ClinicalCase:
    return ClinicalCase(case_id=case_id, patient_background="", clinical_info="x",
                        pathogenesis="y", syndromes=["z"])


def test_select_demonstration_returns_parent_case():
    deps = make_deps()
    corpus = {cid: make_case(cid) for cid in ["c1", "c2", "c3"]}
    case = select_demonstration(f"{A} {B}", deps, RetrievalConfig(), corpus)
    assert case is not None and case.case_id == "c1"


def test_select_demonstration_none_when_nothing_retrieved():
    deps = make_deps()
    corpus = {cid: make_case(cid) for cid in ["c1", "c2", "c3"]}
    case = select_demonstration("unknowntoken", deps,
                                RetrievalConfig(mode=SPARSE_ONLY), corpus)
    assert case is None
