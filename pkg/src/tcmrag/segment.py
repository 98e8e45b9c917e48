"""Dictionary-based Chinese word segmentation with an HMM fallback for OOV runs."""
from __future__ import annotations

import json
import math
import unicodedata
from dataclasses import dataclass
from pathlib import Path


class LexiconError(ValueError):
    """Malformed lexicon file."""


class HmmModelError(ValueError):
    """Malformed HMM model file or illegal transition structure."""


STATES = "BMES"
# Allowed predecessors of each state under BMES word tagging.
_PREV = {"B": "ES", "M": "BM", "E": "BM", "S": "ES"}
_START_STATES = "BS"
_FINAL_STATES = "ES"

DEFAULT_UNSEEN_EMIT_LOGP = -16.0


@dataclass
class Lexicon:
    entries: dict[str, int]   # word -> frequency; prefixes of real words present with 0
    total: int
    log_total: float


@dataclass
class HmmModel:
    start_logp: dict[str, float]
    trans_logp: dict[str, dict[str, float]]
    emit_logp: dict[str, dict[str, float]]
    unseen_emit_logp: float = DEFAULT_UNSEEN_EMIT_LOGP


@dataclass
class SegmentationResult:
    tokens: list[tuple[str, tuple[int, int]]]


def build_lexicon(pairs) -> Lexicon:
    """Build a lexicon from (word, freq) pairs, inserting missing prefixes with freq 0."""
    entries: dict[str, int] = {}
    total = 0
    for word, freq in pairs:
        if not word:
            raise LexiconError("empty word")
        if freq < 1:
            raise LexiconError(f"word {word!r}: frequency must be >= 1, got {freq}")
        total += freq - max(entries.get(word, 0), 0)
        entries[word] = freq
    for word in list(entries):
        for i in range(1, len(word)):
            entries.setdefault(word[:i], 0)
    if total <= 0:
        raise LexiconError("lexicon has no positive-frequency words")
    return Lexicon(entries=entries, total=total, log_total=math.log(total))


def load_lexicon(path: str | Path) -> Lexicon:
    """Load `<word> <frequency>` lines; `#` comments and blank lines ignored."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.rsplit(" ", 1)
            if len(parts) != 2 or not parts[0]:
                raise LexiconError(f"{path}:{lineno}: expected '<word> <frequency>'")
            word, freq_s = parts
            try:
                freq = int(freq_s)
            except ValueError:
                raise LexiconError(f"{path}:{lineno}: non-integer frequency {freq_s!r}") from None
            if freq < 1:
                raise LexiconError(f"{path}:{lineno}: frequency must be >= 1, got {freq}")
            pairs.append((word, freq))
    try:
        return build_lexicon(pairs)
    except LexiconError as exc:
        raise LexiconError(f"{path}: {exc}") from exc


def load_hmm(path: str | Path) -> HmmModel:
    """Load BMES start/transition/emission log-probabilities from a JSON model file."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    for key in ("start", "trans", "emit", "unseen"):
        if key not in raw:
            raise HmmModelError(f"{path}: missing key {key!r}")
    start = {s: float(p) for s, p in raw["start"].items()}
    trans = {s: {t: float(p) for t, p in row.items()} for s, row in raw["trans"].items()}
    emit = {s: {c: float(p) for c, p in row.items()} for s, row in raw["emit"].items()}
    for s in start:
        if s not in _START_STATES:
            raise HmmModelError(f"{path}: start probability for disallowed state {s!r}")
    for s, row in trans.items():
        for t in row:
            if s not in _PREV.get(t, ""):
                raise HmmModelError(f"{path}: disallowed transition {s}->{t}")
    return HmmModel(start_logp=start, trans_logp=trans, emit_logp=emit,
                    unseen_emit_logp=float(raw["unseen"]))


def build_dag(sentence: str, lex: Lexicon) -> dict[int, list[int]]:
    """For each start index, the end indexes of all dictionary words (plus a self-edge)."""
    n = len(sentence)
    dag: dict[int, list[int]] = {}
    for i in range(n):
        ends: list[int] = []
        j = i
        while j < n:
            freq = lex.entries.get(sentence[i:j + 1])
            if freq is None:
                break
            if freq > 0:
                ends.append(j)
            j += 1
        if not ends or ends[0] != i:
            ends.insert(0, i)
        dag[i] = ends
    return dag


def _word_logp(word: str, lex: Lexicon) -> float:
    freq = lex.entries.get(word, 0)
    if freq > 0:
        return math.log(freq) - lex.log_total
    return -lex.log_total  # unknown single char: log(1/total)


def max_prob_route(sentence: str, dag: dict[int, list[int]], lex: Lexicon) -> dict[int, int]:
    """Right-to-left DP over the DAG; exact ties go to the longer word."""
    n = len(sentence)
    score = [0.0] * (n + 1)
    route: dict[int, int] = {}
    for i in range(n - 1, -1, -1):
        best_s = -math.inf
        best_j = i
        for j in dag[i]:  # ascending, so >= prefers the larger j on exact ties
            s = _word_logp(sentence[i:j + 1], lex) + score[j + 1]
            if s >= best_s:
                best_s = s
                best_j = j
        score[i] = best_s
        route[i] = best_j
    return route


def viterbi(fragment: str, model: HmmModel) -> list[tuple[str, tuple[int, int]]]:
    """Max-likelihood BMES decode; ties prefer the state earlier in B<M<E<S."""
    if not fragment:
        return []
    neg_inf = -math.inf

    def emit(state: str, ch: str) -> float:
        return model.emit_logp.get(state, {}).get(ch, model.unseen_emit_logp)

    v = [{s: model.start_logp.get(s, neg_inf) + emit(s, fragment[0]) for s in STATES}]
    back: list[dict[str, str]] = [{}]
    for t in range(1, len(fragment)):
        row: dict[str, float] = {}
        ptr: dict[str, str] = {}
        for s in STATES:
            best_p = neg_inf
            best_prev = ""
            for p in STATES:  # fixed order; strict > keeps the earliest state on ties
                if p not in _PREV[s]:
                    continue
                cand = v[t - 1][p] + model.trans_logp.get(p, {}).get(s, neg_inf)
                if cand > best_p:
                    best_p = cand
                    best_prev = p
            row[s] = best_p + emit(s, fragment[t])
            ptr[s] = best_prev
        v.append(row)
        back.append(ptr)

    last = len(fragment) - 1
    final = max(_FINAL_STATES, key=lambda s: (v[last][s], -STATES.index(s)))
    path = [final]
    for t in range(last, 0, -1):
        path.append(back[t][path[-1]])
    path.reverse()

    tokens: list[tuple[str, tuple[int, int]]] = []
    start = 0
    for t, state in enumerate(path):
        if state in "ES":
            tokens.append((fragment[start:t + 1], (start, t + 1)))
            start = t + 1
    if start < len(fragment):  # degenerate path ending in B/M cannot happen, but stay lossless
        tokens.append((fragment[start:], (start, len(fragment))))
    return tokens


def _is_cjk(ch: str) -> bool:
    return "一" <= ch <= "鿿" or "㐀" <= ch <= "䶿"


def _cut_cjk(block: str, base: int, lex: Lexicon,
             hmm: HmmModel | None) -> list[tuple[str, tuple[int, int]]]:
    dag = build_dag(block, lex)
    route = max_prob_route(block, dag, lex)
    words: list[tuple[int, int]] = []
    i = 0
    while i < len(block):
        j = route[i]
        words.append((i, j + 1))
        i = j + 1

    tokens: list[tuple[str, tuple[int, int]]] = []
    pending: list[tuple[int, int]] = []  # run of unknown single chars for HMM re-decode

    def flush() -> None:
        if not pending:
            return
        s, e = pending[0][0], pending[-1][1]
        if hmm is not None:
            for text, (ts, te) in viterbi(block[s:e], hmm):
                tokens.append((text, (base + s + ts, base + s + te)))
        else:
            for ps, pe in pending:
                tokens.append((block[ps:pe], (base + ps, base + pe)))
        pending.clear()

    for s, e in words:
        if e - s == 1 and lex.entries.get(block[s:e], 0) == 0:
            pending.append((s, e))
        else:
            flush()
            tokens.append((block[s:e], (base + s, base + e)))
    flush()
    return tokens


def _cut_plain(block: str, base: int) -> list[tuple[str, tuple[int, int]]]:
    """Non-CJK text: ASCII alphanumeric runs are atomic; everything else is per-char."""
    tokens: list[tuple[str, tuple[int, int]]] = []
    i = 0
    while i < len(block):
        ch = block[i]
        if ch.isascii() and ch.isalnum():
            j = i
            while j < len(block) and block[j].isascii() and block[j].isalnum():
                j += 1
            tokens.append((block[i:j], (base + i, base + j)))
            i = j
        else:
            tokens.append((ch, (base + i, base + i + 1)))
            i += 1
    return tokens


def cut(sentence: str, lex: Lexicon, hmm: HmmModel | None = None) -> SegmentationResult:
    """Segment a sentence: dictionary DP over CJK runs, HMM over unknown runs."""
    tokens: list[tuple[str, tuple[int, int]]] = []
    i = 0
    n = len(sentence)
    while i < n:
        j = i
        cjk = _is_cjk(sentence[i])
        while j < n and _is_cjk(sentence[j]) == cjk:
            j += 1
        block = sentence[i:j]
        if cjk:
            tokens.extend(_cut_cjk(block, i, lex, hmm))
        else:
            tokens.extend(_cut_plain(block, i))
        i = j
    return SegmentationResult(tokens=tokens)


def _is_ignorable(token: str) -> bool:
    return all(ch.isspace() or unicodedata.category(ch)[0] in "PS" for ch in token)


def token_set(result: SegmentationResult) -> set[str]:
    """Distinct token texts, dropping pure punctuation/whitespace tokens."""
    return {text for text, _ in result.tokens if not _is_ignorable(text)}
