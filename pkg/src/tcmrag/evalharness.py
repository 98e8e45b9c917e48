"""Benchmark loading, ablation runs over retrieval modes, scoring, and comparison reports."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import ClinicalCase, render_demonstration
from .llm import ChatProvider, FnChatProvider, GenerationParams, Metrics, generate_answer
from .prompt import (Answer, AnswerParseError, AnswerSchemaError, PromptBundle, TemplateSet,
                     build_prompt, parse_answer, serialize_answer)
from .retrieve import (DENSE_ONLY, HYBRID, RetrievalConfig, RetrieverDeps, parent_case_id,
                       select_demonstration, two_stage_retrieve)

MODE_NONE = "none"
MODE_NAIVE_RAG = "naive_rag"
MODE_HYBRID_JIEBA = "hybrid_jieba"
RUN_MODES = (MODE_NONE, MODE_NAIVE_RAG, MODE_HYBRID_JIEBA)

# Retrieval modes backing each RAG ablation row.
_STAGE1_MODE = {MODE_NAIVE_RAG: DENSE_ONLY, MODE_HYBRID_JIEBA: HYBRID}

METRIC_NOTE = "artifact metric: 100 x mean of (Jaccard(pathogenesis)/2 + Jaccard(syndromes)/2)"


class TaskError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass
class TaskItem:
    item_id: str
    case_text: str
    pathogenesis_options: list[str]
    syndrome_options: list[str]
    gold_pathogenesis: list[str]
    gold_syndromes: list[str]


@dataclass(frozen=True)
class RunConfig:
    retrieval_mode: str = MODE_NONE
    cot: bool = False
    provider_name: str = "mock"
    retrieval: RetrievalConfig = RetrievalConfig()

    def __post_init__(self) -> None:
        if self.retrieval_mode not in RUN_MODES:
            raise ConfigurationError(f"unknown retrieval_mode {self.retrieval_mode!r}")

    @property
    def label(self) -> str:
        suffix = "+CoT" if self.cot else ""
        return f"{self.retrieval_mode}{suffix}"

    @property
    def variant(self) -> str:
        if self.retrieval_mode == MODE_NONE:
            return "cot" if self.cot else "base"
        return "rag_cot" if self.cot else "rag"


@dataclass
class EvalDeps:
    templates: TemplateSet
    chat: ChatProvider
    corpus: dict[str, ClinicalCase]
    retrievers: dict[str, RetrieverDeps] = field(default_factory=dict)
    params: GenerationParams = GenerationParams()
    budget: int = 6000


@dataclass
class ItemResult:
    item_id: str
    score: float
    parsed: bool
    answer_json: str
    warnings: list[str] = field(default_factory=list)


@dataclass
class ScoreReport:
    label: str
    aggregate: float
    items: list[ItemResult]
    parse_failures: int
    provider_fallbacks: int
    warning_count: int
    config: dict

    def to_json(self) -> str:
        doc = {
            "label": self.label,
            "metric": METRIC_NOTE,
            "aggregate": self.aggregate,
            "parse_failures": self.parse_failures,
            "provider_fallbacks": self.provider_fallbacks,
            "warning_count": self.warning_count,
            "config": self.config,
            "items": [
                {"item_id": r.item_id, "score": r.score, "parsed": r.parsed,
                 "answer": r.answer_json, "warnings": r.warnings}
                for r in self.items
            ],
        }
        return json.dumps(doc, ensure_ascii=False, sort_keys=True, indent=2) + "\n"


def load_tasks(path: str | Path) -> list[TaskItem]:
    items: list[TaskItem] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TaskError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            item = TaskItem(
                item_id=rec["item_id"],
                case_text=rec["case_text"],
                pathogenesis_options=rec["pathogenesis_options"],
                syndrome_options=rec["syndrome_options"],
                gold_pathogenesis=rec["gold_pathogenesis"],
                gold_syndromes=rec["gold_syndromes"],
            )
            _validate_item(item)
            if item.item_id in seen:
                raise TaskError(f"{path}:{lineno}: duplicate item_id {item.item_id!r}")
            seen.add(item.item_id)
            items.append(item)
    return items


def _validate_item(item: TaskItem) -> None:
    for name, options in (("pathogenesis_options", item.pathogenesis_options),
                          ("syndrome_options", item.syndrome_options)):
        if len(options) < 2:
            raise TaskError(f"item {item.item_id!r}: {name} needs >= 2 options")
        if len(set(options)) != len(options):
            raise TaskError(f"item {item.item_id!r}: duplicate strings in {name}")
    for name, gold, options in (
            ("gold_pathogenesis", item.gold_pathogenesis, item.pathogenesis_options),
            ("gold_syndromes", item.gold_syndromes, item.syndrome_options)):
        if not gold:
            raise TaskError(f"item {item.item_id!r}: empty {name}")
        bad = [g for g in gold if g not in options]
        if bad:
            raise TaskError(f"item {item.item_id!r}: {name} values {bad} not among options")


def _jaccard(a: set[str], b: set[str]) -> float:
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def score_item(pred: Answer, item: TaskItem) -> float:
    """Mean of the two label-set Jaccards; empty-vs-empty counts as 0."""
    return 0.5 * _jaccard(set(pred.pathogenesis), set(item.gold_pathogenesis)) \
        + 0.5 * _jaccard(set(pred.syndromes), set(item.gold_syndromes))


def run_eval(items: list[TaskItem], config: RunConfig, deps: EvalDeps) -> ScoreReport:
    """Retrieve (per mode), prompt, generate, parse, and score every item."""
    if config.retrieval_mode != MODE_NONE and config.retrieval_mode not in deps.retrievers:
        raise ConfigurationError(
            f"retrieval_mode {config.retrieval_mode!r} requested but no index is loaded")

    results: list[ItemResult] = []
    parse_failures = 0
    fallbacks = 0
    warning_count = 0
    metrics = Metrics()
    for item in sorted(items, key=lambda it: it.item_id):
        warnings: list[str] = []
        blocks: list[tuple[str, str]] = []
        demo_text: str | None = None
        if config.retrieval_mode != MODE_NONE:
            rdeps = deps.retrievers[config.retrieval_mode]
            rcfg = RetrievalConfig(
                n_dense=config.retrieval.n_dense, n_sparse=config.retrieval.n_sparse,
                top_k=config.retrieval.top_k, alpha=config.retrieval.alpha,
                mode=_STAGE1_MODE[config.retrieval_mode])
            retrieved = two_stage_retrieve(item.case_text, rdeps, rcfg)
            if retrieved.warnings:
                fallbacks += 1
                warnings.extend(retrieved.warnings)
            blocks = [(c.chunk_id, rdeps.chunk_texts[c.chunk_id])
                      for c in retrieved.candidates]
            if retrieved.candidates:
                top_case = deps.corpus.get(parent_case_id(retrieved.candidates[0].chunk_id))
                if top_case is not None:
                    demo_text = render_demonstration(top_case)

        bundle = build_prompt(item, config.variant, deps.templates,
                              context_blocks=blocks, demonstration=demo_text,
                              budget=deps.budget)
        raw = generate_answer(deps.chat, bundle, item, deps.params, metrics)
        try:
            answer, parse_warnings = parse_answer(raw, item)
            warnings.extend(parse_warnings)
            score = score_item(answer, item)
            answer_json = serialize_answer(answer)
            parsed = True
        except (AnswerParseError, AnswerSchemaError) as exc:
            parse_failures += 1
            warnings.append(f"unparseable answer: {exc}")
            score = 0.0
            answer_json = ""
            parsed = False
        warning_count += len(warnings)
        results.append(ItemResult(item_id=item.item_id, score=score, parsed=parsed,
                                  answer_json=answer_json, warnings=warnings))

    aggregate = 100.0 * (sum(r.score for r in results) / len(results)) if results else 0.0
    return ScoreReport(
        label=config.label,
        aggregate=aggregate,
        items=results,
        parse_failures=parse_failures,
        provider_fallbacks=fallbacks,
        warning_count=warning_count + len(metrics.warnings),
        config={"retrieval_mode": config.retrieval_mode, "cot": config.cot,
                "provider": config.provider_name,
                "top_k": config.retrieval.top_k, "alpha": config.retrieval.alpha},
    )


def compare_runs(reports: list[ScoreReport]) -> tuple[str, list[dict]]:
    """Rows sorted by aggregate descending with deltas against the leader."""
    if len(reports) < 2:
        raise ConfigurationError("comparison needs at least 2 reports")
    id_sets = [tuple(sorted(r.item_id for r in rep.items)) for rep in reports]
    if len(set(id_sets)) != 1:
        raise ConfigurationError("reports cover different item sets")
    ordered = sorted(reports, key=lambda r: (-r.aggregate, r.label))
    rows = [{"label": r.label, "aggregate": round(r.aggregate, 4),
             "delta": round(r.aggregate - ordered[0].aggregate, 4)} for r in ordered]
    width = max(len(r["label"]) for r in rows)
    lines = [f"{'Method'.ljust(width)}  {'Score':>8}  {'Delta':>8}",
             "-" * (width + 20)]
    for row in rows:
        lines.append(f"{row['label'].ljust(width)}  {row['aggregate']:>8.2f}  "
                     f"{row['delta']:>+8.2f}")
    lines.append(f"({METRIC_NOTE})")
    return "\n".join(lines) + "\n", rows


# --- Offline mock chat providers for ablation tests -------------------------

def _gold_json(item: TaskItem) -> str:
    return json.dumps({
        "clinical_features": ["依据病案提取的特征"],
        "pathogenesis": item.gold_pathogenesis,
        "syndromes": item.gold_syndromes,
        "reasoning": "按步骤推理得出。",
    }, ensure_ascii=False)


_EMPTY_ANSWER = json.dumps({"clinical_features": [], "pathogenesis": [],
                            "syndromes": [], "reasoning": "无法判断。"}, ensure_ascii=False)


def _find_item(items: list[TaskItem], user_text: str) -> TaskItem | None:
    for item in items:
        if item.case_text in user_text:
            return item
    return None


def echo_gold_provider(items: list[TaskItem]) -> FnChatProvider:
    """Answers every item with its gold labels (perfect oracle)."""

    def fn(messages):
        user_text = messages[-1][1]
        item = _find_item(items, user_text)
        return _gold_json(item) if item is not None else _EMPTY_ANSWER

    return FnChatProvider(fn=fn)


def empty_answer_provider() -> FnChatProvider:
    """Answers every item with empty label lists (null predictor)."""
    return FnChatProvider(fn=lambda messages: _EMPTY_ANSWER)


def retrieval_sensitive_provider(items: list[TaskItem],
                                 gold_case_ids: dict[str, str]) -> FnChatProvider:
    """Answers gold iff a chunk of the item's gold case appears in the prompt context.

    Context blocks carry their chunk ids in the `[CONTEXT n | <chunk_id>]` headers,
    so presence is decided from the parent case of any cited chunk.
    """
    import re as _re
    header = _re.compile(r"\[CONTEXT \d+ \| ([^\]]+)\]")

    def fn(messages):
        user_text = messages[-1][1]
        item = _find_item(items, user_text)
        if item is None:
            return _EMPTY_ANSWER
        gold_case = gold_case_ids[item.item_id]
        cited = {parent_case_id(cid) for cid in header.findall(user_text)}
        return _gold_json(item) if gold_case in cited else _EMPTY_ANSWER

    return FnChatProvider(fn=fn)
