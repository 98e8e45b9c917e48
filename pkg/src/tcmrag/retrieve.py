"""Two-stage hybrid retrieval: pooled dense+sparse candidates, rerank, demonstration pick."""
from __future__ import annotations

import os
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol

import requests

from .corpus import ClinicalCase
from .dense import EmbedProvider, VectorIndex, embed
from .sparse import KeywordIndex, iou_score

DENSE_ONLY = "dense_only"
SPARSE_ONLY = "sparse_only"
HYBRID = "hybrid"
MODES = (DENSE_ONLY, SPARSE_ONLY, HYBRID)


class RetrievalError(ValueError):
    pass


class RerankProviderError(RuntimeError):
    pass


@dataclass(frozen=True)
class RetrievalConfig:
    n_dense: int = 50
    n_sparse: int = 50
    top_k: int = 3
    alpha: float = 0.5  # fusion weight on the dense score
    mode: str = HYBRID

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise RetrievalError(f"unknown mode {self.mode!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise RetrievalError(f"alpha must be in [0,1], got {self.alpha}")
        if self.top_k > self.n_dense + self.n_sparse:
            raise RetrievalError("top_k exceeds the first-stage pool bound")


@dataclass
class RetrievalCandidate:
    chunk_id: str
    dense_score: float
    sparse_score: float
    rerank_score: float = 0.0
    from_dense: bool = False
    from_sparse: bool = False


@dataclass
class RetrieverDeps:
    tokenize: Callable[[str], set[str]]
    embedder: EmbedProvider
    dense_index: VectorIndex
    kw_index: KeywordIndex
    chunk_texts: dict[str, str]
    rerank_provider: "RerankProvider | None" = None


@dataclass
class RetrievalResult:
    candidates: list[RetrievalCandidate]
    warnings: list[str] = field(default_factory=list)


class RerankProvider(Protocol):
    def rerank(self, query: str, documents: list[str]) -> list[float]: ...


@dataclass
class HttpRerankProvider:
    url: str
    model: str
    api_key_env: str = "RERANK_API_KEY"
    timeout: float = 30.0
    sleep: Callable[[float], None] = time.sleep

    def rerank(self, query: str, documents: list[str]) -> list[float]:
        headers = {"Authorization": f"Bearer {os.environ.get(self.api_key_env, '')}"}
        body = {"model": self.model, "query": query, "documents": documents}
        try:
            resp = requests.post(self.url, json=body, headers=headers, timeout=self.timeout)
            resp.raise_for_status()
            results = resp.json()["results"]
        except Exception as exc:
            raise RerankProviderError(f"rerank provider failed: {exc}") from exc
        scores = [0.0] * len(documents)
        for entry in results:
            scores[entry["index"]] = float(entry["relevance_score"])
        return scores


def first_stage(query_text: str, deps: RetrieverDeps,
                cfg: RetrievalConfig) -> list[RetrievalCandidate]:
    """Pool dense and sparse top lists (per mode); fill both scores for every candidate."""
    query_tokens = deps.tokenize(query_text)
    query_vec = embed(query_text, deps.embedder)

    dense_ids: list[str] = []
    sparse_ids: list[str] = []
    if cfg.mode in (DENSE_ONLY, HYBRID) and len(deps.dense_index):
        dense_ids = [cid for cid, _ in deps.dense_index.search(query_vec, cfg.n_dense)]
    if cfg.mode in (SPARSE_ONLY, HYBRID) and len(deps.kw_index):
        sparse_ids = [cid for cid, _ in deps.kw_index.search(query_tokens, cfg.n_sparse)]

    pool: dict[str, RetrievalCandidate] = {}
    for cid in dense_ids:
        pool[cid] = RetrievalCandidate(chunk_id=cid, dense_score=0.0, sparse_score=0.0,
                                       from_dense=True)
    for cid in sparse_ids:
        if cid in pool:
            pool[cid].from_sparse = True
        else:
            pool[cid] = RetrievalCandidate(chunk_id=cid, dense_score=0.0, sparse_score=0.0,
                                           from_sparse=True)
    for cid, cand in pool.items():
        cand.dense_score = deps.dense_index.score(cid, query_vec)
        cand.sparse_score = iou_score(query_tokens, deps.kw_index.tokens(cid))
    return [pool[cid] for cid in sorted(pool)]


def fusion_score(cand: RetrievalCandidate, alpha: float) -> float:
    return alpha * cand.dense_score + (1.0 - alpha) * cand.sparse_score


def rerank(query_text: str, candidates: list[RetrievalCandidate], deps: RetrieverDeps,
           cfg: RetrievalConfig) -> tuple[list[RetrievalCandidate], list[str]]:
    """Provider-scored rerank when configured; linear dense/sparse fusion otherwise.

    A provider failure degrades to fusion scoring and is reported in the warnings,
    never swallowed.
    """
    if not candidates:
        raise RetrievalError("rerank requires a non-empty candidate list")
    warnings: list[str] = []
    scored = [replace(c) for c in candidates]
    provider_scores: list[float] | None = None
    if deps.rerank_provider is not None:
        docs = [deps.chunk_texts[c.chunk_id] for c in scored]
        try:
            provider_scores = deps.rerank_provider.rerank(query_text, docs)
        except RerankProviderError as exc:
            warnings.append(f"rerank provider failed, using fusion fallback: {exc}")
    if provider_scores is not None:
        for cand, s in zip(scored, provider_scores):
            cand.rerank_score = s
    else:
        for cand in scored:
            cand.rerank_score = fusion_score(cand, cfg.alpha)
    scored.sort(key=lambda c: (-c.rerank_score, c.chunk_id))
    return scored, warnings


def two_stage_retrieve(query_text: str, deps: RetrieverDeps,
                       cfg: RetrievalConfig) -> RetrievalResult:
    pool = first_stage(query_text, deps, cfg)
    if not pool:
        return RetrievalResult(candidates=[])
    ranked, warnings = rerank(query_text, pool, deps, cfg)
    return RetrievalResult(candidates=ranked[:cfg.top_k], warnings=warnings)


def parent_case_id(chunk_id: str) -> str:
    return chunk_id.rsplit("#", 1)[0]


def select_demonstration(query_text: str, deps: RetrieverDeps, cfg: RetrievalConfig,
                         corpus: dict[str, ClinicalCase]) -> ClinicalCase | None:
    """The parent case of the top reranked chunk; None when nothing was retrieved."""
    result = two_stage_retrieve(query_text, deps, cfg)
    if not result.candidates:
        return None
    return corpus[parent_case_id(result.candidates[0].chunk_id)]
