"""Wiring helpers: corpus -> chunks -> dense/sparse indexes -> retriever deps."""
from __future__ import annotations

from typing import Callable

from .corpus import (Chunk, ClinicalCase, OVERLAP_WINDOW, TOKEN_CHUNK, case_document,
                     chunk_by_tokens, chunk_overlap)
from .dense import EmbedProvider, VectorIndex, embed
from .retrieve import RetrieverDeps
from .segment import HmmModel, Lexicon, cut, token_set
from .sparse import KeywordIndex

STRATEGIES = (OVERLAP_WINDOW, TOKEN_CHUNK)


def make_tokenizer(lex: Lexicon, hmm: HmmModel | None = None) -> Callable[[str], set[str]]:
    def tokenize(text: str) -> set[str]:
        return token_set(cut(text, lex, hmm))
    return tokenize


def chunk_corpus(cases: list[ClinicalCase], strategy: str, lex: Lexicon,
                 hmm: HmmModel | None = None, *,
                 window: int = 512, overlap: int = 128,
                 max_tokens: int = 256, overlap_tokens: int = 32) -> list[Chunk]:
    chunks: list[Chunk] = []
    for case in cases:
        doc = case_document(case)
        if strategy == OVERLAP_WINDOW:
            chunks.extend(chunk_overlap(doc, window, overlap, case_id=case.case_id))
        elif strategy == TOKEN_CHUNK:
            tokens = cut(doc, lex, hmm).tokens
            chunks.extend(chunk_by_tokens(doc, tokens, max_tokens, overlap_tokens,
                                          case_id=case.case_id))
        else:
            raise ValueError(f"unknown chunking strategy {strategy!r}")
    return chunks


def build_indexes(chunks: list[Chunk], tokenize: Callable[[str], set[str]],
                  embedder: EmbedProvider) -> tuple[VectorIndex, KeywordIndex]:
    dense_index = VectorIndex()
    kw_index = KeywordIndex()
    for chunk in chunks:
        dense_index.add(chunk.chunk_id, embed(chunk.text, embedder))
        kw_index.add(chunk.chunk_id, tokenize(chunk.text))
    return dense_index, kw_index


def build_retriever(cases: list[ClinicalCase], strategy: str, lex: Lexicon,
                    embedder: EmbedProvider, hmm: HmmModel | None = None,
                    **chunk_kwargs) -> RetrieverDeps:
    tokenize = make_tokenizer(lex, hmm)
    chunks = chunk_corpus(cases, strategy, lex, hmm, **chunk_kwargs)
    dense_index, kw_index = build_indexes(chunks, tokenize, embedder)
    return RetrieverDeps(
        tokenize=tokenize,
        embedder=embedder,
        dense_index=dense_index,
        kw_index=kw_index,
        chunk_texts={c.chunk_id: c.text for c in chunks},
    )
