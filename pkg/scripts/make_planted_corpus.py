#!/usr/bin/env python3
"""Regenerate the 200-chunk planted retrieval corpus and its 100 probe queries.

Construction guarantees, verified by assertions before writing:
  - 50 rare-keyword queries: the query's single keyword occurs in exactly one
    (planted) chunk, so sparse retrieval must recall it.
  - 50 bucket-overlap queries: the planted chunk shares >= 60% of the query's
    hashed embedding buckets; every other chunk shares < 20%.
  - All chunk tokens map to globally distinct FNV buckets at the fixture dim,
    so bucket overlap equals token overlap exactly.

Deterministic: rerunning produces byte-identical output.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from tcmrag.dense import token_bucket  # noqa: E402

OUT = ROOT / "data" / "planted" / "planted_corpus.json"

DIM = 4096
N_SPARSE = 50
N_DENSE = 50
N_DECOYS = 100
SPARSE_DOC_TOKENS = 7   # 1 rare keyword + 6 filler
DENSE_QUERY_TOKENS = 10
DENSE_SHARED = 8        # planted chunk holds 8 of the 10 query tokens (80% >= 60%)
DENSE_EXTRA = 4         # plus 4 tokens of its own
DECOY_TOKENS = 8


def unique_bucket_tokens(count: int) -> list[str]:
    """Deterministic token stream filtered to globally unique FNV buckets."""
    tokens: list[str] = []
    used: set[int] = set()
    i = 0
    while len(tokens) < count:
        tok = f"w{i:06d}"
        i += 1
        bucket = token_bucket(tok, DIM)
        if bucket in used:
            continue
        used.add(bucket)
        tokens.append(tok)
    return tokens


def main() -> None:
    need = (N_SPARSE * SPARSE_DOC_TOKENS
            + N_DENSE * (DENSE_QUERY_TOKENS + DENSE_EXTRA)
            + N_DECOYS * DECOY_TOKENS)
    pool = unique_bucket_tokens(need)
    cursor = 0

    def take(n: int) -> list[str]:
        nonlocal cursor
        out = pool[cursor:cursor + n]
        cursor += n
        return out

    chunks: list[dict] = []
    queries: list[dict] = []

    for i in range(N_SPARSE):
        tokens = take(SPARSE_DOC_TOKENS)
        rare = tokens[0]
        cid = f"ps{i:03d}#0"
        chunks.append({"chunk_id": cid, "text": " ".join(tokens)})
        queries.append({"query_id": f"qs{i:03d}", "text": rare,
                        "target": cid, "kind": "sparse"})

    for i in range(N_DENSE):
        query_tokens = take(DENSE_QUERY_TOKENS)
        doc_tokens = query_tokens[:DENSE_SHARED] + take(DENSE_EXTRA)
        cid = f"pd{i:03d}#0"
        chunks.append({"chunk_id": cid, "text": " ".join(doc_tokens)})
        queries.append({"query_id": f"qd{i:03d}", "text": " ".join(query_tokens),
                        "target": cid, "kind": "dense"})

    for i in range(N_DECOYS):
        chunks.append({"chunk_id": f"dx{i:03d}#0", "text": " ".join(take(DECOY_TOKENS))})

    assert cursor == need
    assert len(chunks) == N_SPARSE + N_DENSE + N_DECOYS == 200

    # verify the construction guarantees
    token_sets = {c["chunk_id"]: set(c["text"].split()) for c in chunks}
    for q in queries:
        q_tokens = set(q["text"].split())
        q_buckets = {token_bucket(t, DIM) for t in q_tokens}
        for cid, d_tokens in token_sets.items():
            d_buckets = {token_bucket(t, DIM) for t in d_tokens}
            overlap = len(q_buckets & d_buckets) / len(q_buckets)
            if cid == q["target"]:
                if q["kind"] == "dense":
                    assert overlap >= 0.6, (q["query_id"], cid, overlap)
                else:
                    assert q_tokens <= d_tokens
            else:
                assert overlap < 0.2, (q["query_id"], cid, overlap)
        if q["kind"] == "sparse":
            holders = [cid for cid, toks in token_sets.items() if q_tokens & toks]
            assert holders == [q["target"]]

    doc = {"dim": DIM, "chunks": chunks, "queries": queries}
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    print(f"wrote {len(chunks)} chunks, {len(queries)} queries -> {OUT}")


if __name__ == "__main__":
    main()
