"""Command-line entry point: ingest, index, query, and eval subcommands."""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import corpus as corpus_mod
from . import evalharness as ev
from .corpus import (OVERLAP_WINDOW, TOKEN_CHUNK, ClinicalCase, dump_chunks, load_chunks,
                     load_corpus, normalize_text, save_corpus)
from .dense import HttpEmbedProvider, StubEmbedProvider, VectorIndex
from .engine import build_indexes, chunk_corpus, make_tokenizer
from .llm import CannedChatProvider, ChatProviderError, CleaningError, GenerationParams, \
    HttpChatProvider, extract_fields, split_cases
from .prompt import TemplateSet, parse_answer, serialize_answer
from .retrieve import (HttpRerankProvider, MODES, RetrievalConfig, RetrieverDeps,
                       two_stage_retrieve)
from .segment import load_hmm, load_lexicon
from .sparse import KeywordIndex

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2

META_FILE = "meta.json"
VECTORS_FILE = "vectors.bin"
KEYWORDS_FILE = "keywords.tsv"
CHUNKS_FILE = "chunks.jsonl"
LOCK_FILE = ".lock"


class CliConfigError(ValueError):
    pass


@dataclass
class AppConfig:
    corpus: str = ""
    lexicon: str = ""
    hmm: str = ""
    templates: str = ""
    out_dir: str = "out"
    window: int = 512
    overlap: int = 128
    max_tokens: int = 256
    overlap_tokens: int = 32
    stub_dim: int = 256
    n_dense: int = 50
    n_sparse: int = 50
    top_k: int = 3
    alpha: float = 0.5
    budget: int = 6000
    embed_url: str = ""
    embed_model: str = ""
    rerank_url: str = ""
    rerank_model: str = ""
    chat_url: str = ""
    chat_model: str = ""

    @classmethod
    def load(cls, path: str | Path) -> "AppConfig":
        cfg = cls()
        int_keys = {"window", "overlap", "max_tokens", "overlap_tokens", "stub_dim",
                    "n_dense", "n_sparse", "top_k", "budget"}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise CliConfigError(f"{path}:{lineno}: expected 'key = value'")
                key, _, value = line.partition("=")
                key, value = key.strip(), value.strip()
                if not hasattr(cfg, key):
                    raise CliConfigError(f"{path}:{lineno}: unknown config key {key!r}")
                try:
                    if key in int_keys:
                        setattr(cfg, key, int(value))
                    elif key == "alpha":
                        cfg.alpha = float(value)
                    else:
                        setattr(cfg, key, value)
                except ValueError as exc:
                    raise CliConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
        return cfg


def _acquire_lock(out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / LOCK_FILE
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise CliConfigError(
            f"output directory {out_dir} is locked by another command ({lock})") from None
    os.close(fd)
    return lock


def _embedder(cfg: AppConfig, stub: bool, tokenize, dim: int | None = None):
    if stub:
        return StubEmbedProvider(tokenize=tokenize, dim=dim or cfg.stub_dim)
    if not cfg.embed_url:
        raise CliConfigError("no embed_url configured and --stub not given")
    return HttpEmbedProvider(url=cfg.embed_url, model=cfg.embed_model)


def _chat_provider(cfg: AppConfig, args, items=None):
    kind = getattr(args, "chat", "http")
    if kind == "canned":
        if not getattr(args, "canned", None):
            raise CliConfigError("--chat canned requires --canned <file>")
        return CannedChatProvider.from_file(args.canned)
    if kind == "echo_gold":
        return ev.echo_gold_provider(items or [])
    if kind == "empty":
        return ev.empty_answer_provider()
    if kind == "retrieval_sensitive":
        items = items or []
        return ev.retrieval_sensitive_provider(items, {it.item_id: it.item_id for it in items})
    if not cfg.chat_url:
        raise CliConfigError("no chat_url configured; pass --chat canned/echo_gold/empty")
    return HttpChatProvider(url=cfg.chat_url, model=cfg.chat_model)


def cmd_ingest(cfg: AppConfig, args) -> int:
    raw_dir = Path(args.raw_dir)
    files = sorted(raw_dir.glob("*.txt"))
    if not files:
        raise CliConfigError(f"no .txt files in {raw_dir}")
    cases: list[ClinicalCase] = []
    failures: list[str] = []
    provider = _chat_provider(cfg, args) if args.clean else None
    for path in files:
        try:
            text = normalize_text(path.read_text(encoding="utf-8"))
        except OSError as exc:
            print(f"ingest: cannot read {path}: {exc}", file=sys.stderr)
            failures.append(str(path))
            continue
        if not text:
            failures.append(str(path))
            print(f"ingest: {path} is empty after normalization", file=sys.stderr)
            continue
        if provider is None:
            cases.append(ClinicalCase(
                case_id=path.stem, patient_background="", clinical_info=text,
                pathogenesis="", syndromes=[], source=str(path), raw_text=text))
            continue
        try:
            pieces = split_cases(provider, text)
            for i, piece in enumerate(pieces):
                case = extract_fields(provider, piece)
                case.case_id = f"{path.stem}-{i}"
                case.source = str(path)
                cases.append(case)
        except (CleaningError, ChatProviderError) as exc:
            failures.append(str(path))
            print(f"ingest: cleaning failed for {path}: {exc}", file=sys.stderr)
    save_corpus(cases, args.out_corpus)
    print(f"ingest: wrote {len(cases)} cases to {args.out_corpus}; "
          f"{len(failures)} guard/IO failures")
    if failures:
        for name in failures:
            print(f"ingest: failed: {name}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_index(cfg: AppConfig, args) -> int:
    cases = load_corpus(args.corpus or cfg.corpus)
    lex = load_lexicon(cfg.lexicon)
    hmm = load_hmm(cfg.hmm) if cfg.hmm else None
    tokenize = make_tokenizer(lex, hmm)
    out_dir = Path(args.out)
    lock = _acquire_lock(out_dir)
    written: list[Path] = []
    try:
        chunks = chunk_corpus(cases, args.strategy, lex, hmm,
                              window=cfg.window, overlap=cfg.overlap,
                              max_tokens=cfg.max_tokens, overlap_tokens=cfg.overlap_tokens)
        embedder = _embedder(cfg, args.stub, tokenize)
        dense_index, kw_index = build_indexes(chunks, tokenize, embedder)

        vec_path = out_dir / VECTORS_FILE
        kw_path = out_dir / KEYWORDS_FILE
        chunks_path = out_dir / CHUNKS_FILE
        meta_path = out_dir / META_FILE
        for path, write in ((vec_path, lambda: dense_index.save(vec_path)),
                            (kw_path, lambda: kw_index.save(kw_path)),
                            (chunks_path, lambda: dump_chunks(chunks, chunks_path))):
            written.append(path)
            write()
        written.append(meta_path)
        meta = {"strategy": args.strategy, "dim": dense_index.dim, "count": len(chunks),
                "stub": bool(args.stub)}
        meta_path.write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
        print(f"index: {len(cases)} cases -> {len(chunks)} chunks "
              f"(strategy={args.strategy}, dim={dense_index.dim}) in {out_dir}")
        return EXIT_OK
    except Exception:
        for path in written:  # never leave a half-written index behind
            path.unlink(missing_ok=True)
        raise
    finally:
        lock.unlink(missing_ok=True)


def _load_index_dir(index_dir: Path) -> tuple[dict, VectorIndex, KeywordIndex, dict[str, str]]:
    meta_path = index_dir / META_FILE
    if not meta_path.exists():
        raise CliConfigError(f"no index at {index_dir} (missing {META_FILE})")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    dense_index = VectorIndex.load(index_dir / VECTORS_FILE)
    kw_index = KeywordIndex.load(index_dir / KEYWORDS_FILE)
    chunk_texts = {c.chunk_id: c.text for c in load_chunks(index_dir / CHUNKS_FILE)}
    return meta, dense_index, kw_index, chunk_texts


def _retriever_from_dir(cfg: AppConfig, index_dir: Path, stub: bool,
                        with_rerank_provider: bool = False) -> tuple[dict, RetrieverDeps]:
    meta, dense_index, kw_index, chunk_texts = _load_index_dir(index_dir)
    lex = load_lexicon(cfg.lexicon)
    hmm = load_hmm(cfg.hmm) if cfg.hmm else None
    tokenize = make_tokenizer(lex, hmm)
    embedder = _embedder(cfg, stub or meta.get("stub", False), tokenize, dim=meta.get("dim"))
    rerank_provider = None
    if with_rerank_provider and cfg.rerank_url:
        rerank_provider = HttpRerankProvider(url=cfg.rerank_url, model=cfg.rerank_model)
    deps = RetrieverDeps(tokenize=tokenize, embedder=embedder, dense_index=dense_index,
                         kw_index=kw_index, chunk_texts=chunk_texts,
                         rerank_provider=rerank_provider)
    return meta, deps


def cmd_query(cfg: AppConfig, args) -> int:
    meta, deps = _retriever_from_dir(cfg, Path(args.index), args.stub,
                                     with_rerank_provider=not args.stub)
    if args.expect_strategy and args.expect_strategy != meta["strategy"]:
        raise CliConfigError(
            f"index was built with strategy {meta['strategy']!r} but the query "
            f"expects {args.expect_strategy!r}")
    rcfg = RetrievalConfig(n_dense=cfg.n_dense, n_sparse=cfg.n_sparse,
                           top_k=args.k, alpha=cfg.alpha, mode=args.mode)
    result = two_stage_retrieve(args.question, deps, rcfg)
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    for rank, cand in enumerate(result.candidates, 1):
        print(f"{rank}\t{cand.chunk_id}\trerank={cand.rerank_score:.6f}"
              f"\tdense={cand.dense_score:.6f}\tsparse={cand.sparse_score:.6f}")
    if not result.candidates:
        print("(no results)")

    if args.answer:
        if not cfg.templates:
            raise CliConfigError("--answer requires a templates directory in the config")
        templates = TemplateSet.load(cfg.templates)
        from .llm import generate_answer
        from .prompt import build_prompt

        @dataclass
        class _AdhocItem:
            case_text: str
            pathogenesis_options: list[str]
            syndrome_options: list[str]

        item = _AdhocItem(case_text=args.question,
                          pathogenesis_options=args.pathogenesis_option or ["未知病机"],
                          syndrome_options=args.syndrome_option or ["未知证型"])
        blocks = [(c.chunk_id, deps.chunk_texts[c.chunk_id]) for c in result.candidates]
        bundle = build_prompt(item, "rag_cot" if blocks else "cot", templates,
                              context_blocks=blocks, budget=cfg.budget)
        provider = _chat_provider(cfg, args)
        raw = generate_answer(provider, bundle, item)
        answer, warnings = parse_answer(raw, item)
        for warning in warnings:
            print(f"warning: {warning}", file=sys.stderr)
        print(serialize_answer(answer))
    return EXIT_OK


def cmd_eval(cfg: AppConfig, args) -> int:
    items = ev.load_tasks(args.tasks)
    modes = args.mode or [ev.MODE_NONE]
    templates = TemplateSet.load(cfg.templates)
    cases = load_corpus(cfg.corpus)
    corpus_map = {c.case_id: c for c in cases}

    retrievers: dict[str, RetrieverDeps] = {}
    index_dirs = {ev.MODE_NAIVE_RAG: args.index_naive, ev.MODE_HYBRID_JIEBA: args.index_hybrid}
    for mode in modes:
        if mode == ev.MODE_NONE:
            continue
        index_dir = index_dirs.get(mode)
        if not index_dir or not (Path(index_dir) / META_FILE).exists():
            raise CliConfigError(f"mode {mode!r} requested but its index directory is "
                                 f"missing (got {index_dir!r})")
        _, deps = _retriever_from_dir(cfg, Path(index_dir), args.stub)
        retrievers[mode] = deps

    chat = _chat_provider(cfg, args, items=items)
    eval_deps = ev.EvalDeps(templates=templates, chat=chat, corpus=corpus_map,
                            retrievers=retrievers, params=GenerationParams(),
                            budget=cfg.budget)
    rcfg = RetrievalConfig(n_dense=cfg.n_dense, n_sparse=cfg.n_sparse,
                           top_k=cfg.top_k, alpha=cfg.alpha)

    out_dir = Path(args.out or cfg.out_dir)
    lock = _acquire_lock(out_dir)
    try:
        reports = []
        for mode in modes:
            run_cfg = ev.RunConfig(retrieval_mode=mode, cot=args.cot,
                                   provider_name=args.chat, retrieval=rcfg)
            report = ev.run_eval(items, run_cfg, eval_deps)
            reports.append(report)
            path = out_dir / f"report_{report.label}.json"
            path.write_text(report.to_json(), encoding="utf-8")
            print(f"eval: {report.label}: aggregate={report.aggregate:.2f} "
                  f"parse_failures={report.parse_failures} -> {path}")
        if len(reports) >= 2:
            table, rows = ev.compare_runs(reports)
            (out_dir / "comparison.txt").write_text(table, encoding="utf-8")
            (out_dir / "comparison.json").write_text(
                json.dumps(rows, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
                encoding="utf-8")
            print(table, end="")
        return EXIT_OK
    finally:
        lock.unlink(missing_ok=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tcmrag",
                                     description="TCM case retrieval and diagnosis pipeline")
    parser.add_argument("--config", default=None, help="path to a key = value config file")
    parser.add_argument("--stub", action="store_true",
                        help="use offline deterministic providers (no network)")
    parser.add_argument("--verbose", action="store_true", help="verbose diagnostics")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="normalize (and optionally LLM-clean) raw text files")
    p.add_argument("raw_dir", help="directory of UTF-8 .txt files")
    p.add_argument("out_corpus", help="corpus file to write")
    p.add_argument("--clean", action="store_true", help="run the LLM cleaning pipeline")
    p.add_argument("--no-clean", dest="clean", action="store_false",
                   help="one case per file, normalize only (default)")
    p.add_argument("--chat", default="http", choices=["http", "canned"],
                   help="chat provider for --clean")
    p.add_argument("--canned", default=None, help="canned response file for --chat canned")
    p.set_defaults(clean=False, func=cmd_ingest)

    p = sub.add_parser("index", help="chunk, segment, embed, and persist both indexes")
    p.add_argument("--corpus", default=None, help="corpus file (default: config corpus)")
    p.add_argument("--strategy", required=True, choices=[OVERLAP_WINDOW, TOKEN_CHUNK])
    p.add_argument("--out", required=True, help="index output directory")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("query", help="one-shot retrieval with optional answer generation")
    p.add_argument("question")
    p.add_argument("--index", required=True, help="index directory from 'index'")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--mode", default="hybrid", choices=list(MODES))
    p.add_argument("--expect-strategy", default=None, choices=[OVERLAP_WINDOW, TOKEN_CHUNK],
                   help="fail if the index was built with a different chunking strategy")
    p.add_argument("--answer", action="store_true", help="also generate a JSON answer")
    p.add_argument("--chat", default="http", choices=["http", "canned"])
    p.add_argument("--canned", default=None)
    p.add_argument("--pathogenesis-option", action="append", default=None)
    p.add_argument("--syndrome-option", action="append", default=None)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="run ablation evaluations and emit reports")
    p.add_argument("--tasks", required=True, help="task file (one JSON item per line)")
    p.add_argument("--mode", action="append", choices=list(ev.RUN_MODES),
                   help="repeatable; defaults to 'none'")
    p.add_argument("--cot", action="store_true", help="use chain-of-thought variants")
    p.add_argument("--chat", default="http",
                   choices=["http", "canned", "echo_gold", "empty", "retrieval_sensitive"])
    p.add_argument("--canned", default=None)
    p.add_argument("--index-naive", default=None, help="index dir for naive_rag")
    p.add_argument("--index-hybrid", default=None, help="index dir for hybrid_jieba")
    p.add_argument("--out", default=None, help="report output directory")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = AppConfig.load(args.config) if args.config else AppConfig()
        return args.func(cfg, args)
    except (CliConfigError, ev.ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        if getattr(args, "verbose", False):
            raise
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
