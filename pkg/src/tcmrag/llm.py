"""Chat-completion providers, retry/repair policy, and LLM-backed corpus cleaning."""
from __future__ import annotations

import hashlib
import json
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import requests

from .corpus import ClinicalCase
from .prompt import AnswerParseError, AnswerSchemaError, OptionItem, PromptBundle, parse_answer

Message = tuple[str, str]  # (role, content)

MAX_TRANSPORT_RETRIES = 3
_BACKOFF_SECONDS = (1.0, 2.0, 4.0)


class ChatProviderError(RuntimeError):
    """Provider failed permanently (auth/config error or retries exhausted)."""


class TransientChatError(RuntimeError):
    """Retryable transport/server failure."""


class CleaningError(ValueError):
    """LLM cleaning output failed validation (format or coverage guard)."""


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.0
    max_tokens: int = 1024
    stop: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass
class Metrics:
    requests: int = 0
    retries: int = 0
    warnings: list[str] = field(default_factory=list)


class ChatProvider(Protocol):
    def send(self, messages: list[Message], params: GenerationParams) -> tuple[str, str]:
        """Returns (text, finish_reason)."""


def canonical_messages(messages: list[Message]) -> str:
    return json.dumps([{"role": r, "content": c} for r, c in messages],
                      ensure_ascii=False, sort_keys=True)


def messages_digest(messages: list[Message]) -> str:
    return hashlib.sha256(canonical_messages(messages).encode("utf-8")).hexdigest()


@dataclass
class CannedChatProvider:
    """Offline mock: SHA-256 of the serialized messages keys a canned response."""
    responses: dict[str, str]

    @classmethod
    def from_file(cls, path: str | Path) -> "CannedChatProvider":
        with open(path, encoding="utf-8") as fh:
            return cls(responses=json.load(fh))

    def send(self, messages: list[Message], params: GenerationParams) -> tuple[str, str]:
        key = messages_digest(messages)
        if key not in self.responses:
            raise ChatProviderError(f"no canned response for digest {key}")
        return self.responses[key], "stop"


@dataclass
class FnChatProvider:
    """Mock backed by a pure function of the messages; for tests and offline runs."""
    fn: Callable[[list[Message]], str]

    def send(self, messages: list[Message], params: GenerationParams) -> tuple[str, str]:
        return self.fn(messages), "stop"


@dataclass
class HttpChatProvider:
    url: str
    model: str
    api_key_env: str = "CHAT_API_KEY"
    timeout: float = 60.0
    parallelism: int = 1

    def send(self, messages: list[Message], params: GenerationParams) -> tuple[str, str]:
        headers = {"Authorization": f"Bearer {os.environ.get(self.api_key_env, '')}"}
        body = {
            "model": self.model,
            "messages": [{"role": r, "content": c} for r, c in messages],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        try:
            resp = requests.post(self.url, json=body, headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransientChatError(f"transport failure: {exc}") from exc
        if 400 <= resp.status_code < 500:
            raise ChatProviderError(f"chat provider rejected request: HTTP {resp.status_code}")
        if resp.status_code >= 500:
            raise TransientChatError(f"server failure: HTTP {resp.status_code}")
        try:
            choice = resp.json()["choices"][0]
            return choice["message"]["content"], choice.get("finish_reason", "stop")
        except (KeyError, IndexError, ValueError) as exc:
            raise TransientChatError(f"malformed response body: {exc}") from exc


def complete(provider: ChatProvider, messages: list[Message],
             params: GenerationParams = GenerationParams(),
             metrics: Metrics | None = None,
             sleep: Callable[[float], None] = time.sleep) -> str:
    """One completion with up to 3 retries (1s/2s/4s) on transient failures.

    Auth/config (4xx) errors never retry. A truncated finish reason becomes a
    warning on the metrics, never a silent cut.
    """
    if not messages:
        raise ValueError("messages must be non-empty")
    if messages[0][0] not in ("system", "user"):
        raise ValueError("first message role must be system or user")
    metrics = metrics if metrics is not None else Metrics()
    last: Exception | None = None
    for attempt in range(MAX_TRANSPORT_RETRIES + 1):
        metrics.requests += 1
        try:
            text, finish_reason = provider.send(messages, params)
        except TransientChatError as exc:
            last = exc
            if attempt < MAX_TRANSPORT_RETRIES:
                metrics.retries += 1
                sleep(_BACKOFF_SECONDS[attempt])
                continue
            raise ChatProviderError(
                f"provider failed after {MAX_TRANSPORT_RETRIES} retries") from exc
        if finish_reason not in ("stop", ""):
            metrics.warnings.append(f"completion flagged finish_reason={finish_reason!r}")
        return text
    raise ChatProviderError("provider failed") from last  # unreachable


_SPLIT_SYSTEM = (
    "你是中医医案整理助手。用户给出的是多则医案连写的原始文本。"
    "请将其拆分为独立医案，逐字保留原文内容，不要改写、补充或删减。"
)
_SPLIT_FORMAT = "只输出一个 JSON 数组，每个元素是一则完整医案的原文字符串。"

_EXTRACT_SYSTEM = (
    "你是中医医案结构化助手。请从给定医案原文中抽取字段，过滤无关符号，"
    "不要虚构内容。"
)
_EXTRACT_FORMAT = (
    '只输出一个 JSON 对象，键为 "patient_background", "clinical_info", '
    '"pathogenesis", "syndromes", "doctor_notes"；其中 syndromes 是字符串数组，'
    "缺失的字段用空值。"
)

COVERAGE_THRESHOLD = 0.8


def _first_json_array(raw: str) -> list:
    decoder = json.JSONDecoder()
    for match in re.finditer(r"\[", raw):
        try:
            obj, _ = decoder.raw_decode(raw, match.start())
        except json.JSONDecodeError:
            continue
        if isinstance(obj, list):
            return obj
    raise CleaningError("no JSON array found in cleaning output")


def _strip_ws(text: str) -> str:
    return "".join(text.split())


def split_cases(provider: ChatProvider, blob: str,
                params: GenerationParams = GenerationParams(),
                metrics: Metrics | None = None,
                sleep: Callable[[float], None] = time.sleep) -> list[str]:
    """Split a concatenated multi-case blob into individual case texts.

    The provider must return a JSON array; one repair retry re-states the format.
    A coverage guard rejects outputs that rewrite rather than split: the returned
    pieces must cover >= 80% of the blob's non-whitespace characters.
    """
    if not blob:
        raise ValueError("blob must be non-empty")
    messages: list[Message] = [("system", _SPLIT_SYSTEM),
                               ("user", blob + "\n\n" + _SPLIT_FORMAT)]
    raw = complete(provider, messages, params, metrics, sleep)
    try:
        items = _first_json_array(raw)
    except CleaningError:
        messages = messages + [("assistant", raw), ("user", _SPLIT_FORMAT)]
        raw = complete(provider, messages, params, metrics, sleep)
        items = _first_json_array(raw)
    if not items or any(not isinstance(x, str) or not x.strip() for x in items):
        raise CleaningError("cleaning output must be a non-empty array of non-empty strings")

    blob_stripped = _strip_ws(blob)
    covered = sum(len(_strip_ws(x)) for x in items if _strip_ws(x) in blob_stripped)
    if blob_stripped and covered / len(blob_stripped) < COVERAGE_THRESHOLD:
        raise CleaningError(
            f"coverage guard: split output covers {covered}/{len(blob_stripped)} "
            f"non-whitespace chars (< {COVERAGE_THRESHOLD:.0%}); refusing rewritten text")
    return [x.strip() for x in items]


def _first_json_object(raw: str) -> dict:
    decoder = json.JSONDecoder()
    for match in re.finditer(r"\{", raw):
        try:
            obj, _ = decoder.raw_decode(raw, match.start())
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    raise CleaningError("no JSON object found in cleaning output")


def extract_fields(provider: ChatProvider, raw_case: str,
                   params: GenerationParams = GenerationParams(),
                   metrics: Metrics | None = None,
                   sleep: Callable[[float], None] = time.sleep) -> ClinicalCase:
    """Extract structured case fields from one raw case text (case_id left empty)."""
    if not raw_case:
        raise ValueError("raw_case must be non-empty")
    messages: list[Message] = [("system", _EXTRACT_SYSTEM),
                               ("user", raw_case + "\n\n" + _EXTRACT_FORMAT)]
    raw = complete(provider, messages, params, metrics, sleep)
    try:
        obj = _first_json_object(raw)
    except CleaningError:
        messages = messages + [("assistant", raw), ("user", _EXTRACT_FORMAT)]
        raw = complete(provider, messages, params, metrics, sleep)
        obj = _first_json_object(raw)

    def text_field(key: str) -> str:
        value = obj.get(key) or ""
        if not isinstance(value, str):
            raise CleaningError(f"field {key!r} must be a string")
        return value.strip()

    clinical_info = text_field("clinical_info")
    if not clinical_info:
        raise CleaningError("extracted case has empty clinical_info")
    syndromes = obj.get("syndromes") or []
    if not isinstance(syndromes, list) or any(not isinstance(s, str) for s in syndromes):
        raise CleaningError("field 'syndromes' must be an array of strings")
    return ClinicalCase(
        case_id="",
        patient_background=text_field("patient_background"),
        clinical_info=clinical_info,
        pathogenesis=text_field("pathogenesis"),
        syndromes=[s for s in (x.strip() for x in syndromes) if s],
        doctor_notes=text_field("doctor_notes"),
        raw_text=raw_case,
    )


def generate_answer(provider: ChatProvider, bundle: PromptBundle, item: OptionItem,
                    params: GenerationParams = GenerationParams(),
                    metrics: Metrics | None = None,
                    sleep: Callable[[float], None] = time.sleep) -> str:
    """One completion; if the answer fails to parse, exactly one repair retry with the
    parse error appended. The second raw text is returned regardless."""
    messages: list[Message] = [("system", bundle.system_text), ("user", bundle.user_text)]
    raw = complete(provider, messages, params, metrics, sleep)
    try:
        parse_answer(raw, item)
        return raw
    except (AnswerParseError, AnswerSchemaError) as exc:
        repair = (f"上一次输出无法解析（{exc}）。请严格按要求重新输出 JSON 对象，"
                  f"键为 clinical_features, pathogenesis, syndromes, reasoning。")
        messages = messages + [("assistant", raw), ("user", repair)]
        return complete(provider, messages, params, metrics, sleep)
