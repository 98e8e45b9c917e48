from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from tcmrag.sparse import KeywordIndex, KeywordIndexError, iou_score

# ---------------------------------------------------------------------------
# IoU scoring
# ---------------------------------------------------------------------------

def test_iou_hand_computed_values():
    assert iou_score({"a", "b"}, {"a", "b"}) == pytest.approx(1.0)
    assert iou_score({"a", "b"}, {"b", "c"}) == pytest.approx(1 / 3)
    assert iou_score({"a"}, {"b"}) == 0.0
    assert iou_score(set(), {"a"}) == 0.0
    assert iou_score(set(), set()) == 0.0
    assert iou_score({"a", "b", "c"}, {"a"}) == pytest.approx(1 / 3)


token_sets = st.sets(st.sampled_from("abcdefgh"), max_size=8)


@given(token_sets, token_sets)
def test_iou_symmetric_and_bounded(q, d):
    s = iou_score(q, d)
    assert 0.0 <= s <= 1.0
    assert s == iou_score(d, q)
    if q and q == d:
        assert s == 1.0
    if not (q & d):
        assert s == 0.0


@given(token_sets, token_sets)
def test_iou_counting_oracle(q, d):
    inter = sum(1 for t in q if t in d)
    union = len(set(list(q) + list(d)))
    expected = inter / union if union else 0.0
    assert iou_score(q, d) == pytest.approx(expected)


# ---------------------------------------------------------------------------
# Keyword index
# ---------------------------------------------------------------------------

def small_index() -> KeywordIndex:
    index = KeywordIndex()
    index.add("c1#0", {"胃脘", "胀痛", "嗳气"})
    index.add("c2#0", {"头晕", "目眩", "胀痛"})
    index.add("c3#0", {"咳嗽", "咽痒"})
    return index


def test_search_candidates_via_postings_union():
    index = small_index()
    got = index.search({"胀痛", "头晕"}, 10)
    # c3 shares no token and must not appear at all
    assert [cid for cid, _ in got] == ["c2#0", "c1#0"]
    assert got[0][1] == pytest.approx(2 / 3)
    assert got[1][1] == pytest.approx(1 / 4)


def test_search_no_overlap_returns_empty():
    index = small_index()
    assert index.search({"发热"}, 5) == []


def test_search_tie_breaks_by_chunk_id():
    index = KeywordIndex()
    index.add("b", {"x", "y"})
    index.add("a", {"x", "z"})
    got = index.search({"x"}, 5)
    assert [cid for cid, _ in got] == ["a", "b"]
    assert got[0][1] == got[1][1] == pytest.approx(0.5)


def test_search_truncates_to_n():
    index = small_index()
    assert len(index.search({"胀痛"}, 1)) == 1


def test_add_duplicate_and_bad_n():
    index = small_index()
    with pytest.raises(KeywordIndexError, match="duplicate"):
        index.add("c1#0", {"x"})
    with pytest.raises(KeywordIndexError):
        index.search({"x"}, 0)


def test_search_count_tracks_queries():
    index = small_index()
    index.search({"胀痛"}, 1)
    index.search({"咳嗽"}, 1)
    assert index.search_count == 2


def test_postings_sorted():
    index = KeywordIndex()
    for cid in ["z#0", "a#0", "m#0"]:
        index.add(cid, {"shared"})
    assert index.postings["shared"] == ["a#0", "m#0", "z#0"]


def test_search_matches_exhaustive_oracle():
    index = small_index()
    query = {"胀痛", "咽痒", "不存在"}
    expected = sorted(
        ((cid, iou_score(query, toks)) for cid, toks in index.doc_tokens.items()
         if query & toks),
        key=lambda x: (-x[1], x[0]))
    assert index.search(query, 10) == [(cid, pytest.approx(s)) for cid, s in expected]


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def test_save_load_roundtrip(tmp_path):
    index = small_index()
    path = tmp_path / "keywords.tsv"
    index.save(path)
    loaded = KeywordIndex.load(path)
    assert loaded.doc_tokens == index.doc_tokens
    assert loaded.postings == index.postings
    path2 = tmp_path / "again.tsv"
    loaded.save(path2)
    assert path.read_bytes() == path2.read_bytes()


def test_save_format_is_sorted_tsv(tmp_path):
    index = KeywordIndex()
    index.add("b#0", {"y", "x"})
    index.add("a#0", {"z"})
    path = tmp_path / "kw.tsv"
    index.save(path)
    assert path.read_text(encoding="utf-8") == "a#0\tz\nb#0\tx y\n"


def test_load_rejects_malformed_line(tmp_path):
    path = tmp_path / "kw.tsv"
    path.write_text("a#0\tx\nno-tab-here\n", encoding="utf-8")
    with pytest.raises(KeywordIndexError, match=":2"):
        KeywordIndex.load(path)
