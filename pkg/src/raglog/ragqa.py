"""The generative half of the pipeline: prompt rendering, completion backends,
and strict normal/abnormal verdict parsing.

Classification is zero-shot on anomalies: the prompt shows only retrieved
normal exemplars plus the queried entry, and the backend must answer with one
word. Ambiguous answers are errors, never coin flips, because silently
picking a class would corrupt evaluation counts.
"""
from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .embed import Embedder
from .remote import (
    PostFn,
    RemoteError,
    SleepFn,
    api_base,
    api_key,
    auth_headers,
    post_with_retries,
)
from .store import RetrievalHit, VectorStore

EXAMPLES_PLACEHOLDER = "{{EXAMPLES}}"
QUERY_PLACEHOLDER = "{{QUERY}}"

DEFAULT_TEMPLATE_BODY = (
    "You are a log analysis assistant. Below are examples of NORMAL log entries "
    "from this system:\n"
    "{{EXAMPLES}}\n"
    "Question: Is the following log entry normal or abnormal? "
    "Answer with exactly one word: normal or abnormal.\n"
    "Log entry: {{QUERY}}\n"
    "Answer:"
)

DEFAULT_TOP_K = 5
DEFAULT_MOCK_THRESHOLD = 0.8
DEFAULT_TEMPERATURE = 0.1

_TOKEN_RE = re.compile(r"[^\W\d_]+", re.UNICODE)


class InvalidTemplateError(ValueError):
    """Template is missing a placeholder or repeats one."""


class VerdictParseError(ValueError):
    """Backend response does not resolve to exactly one verdict."""

    def __init__(self, message: str, raw_response: str):
        super().__init__(message)
        self.raw_response = raw_response


class NoVerdictError(VerdictParseError):
    """Neither 'normal' nor 'abnormal' appears as a token."""


class AmbiguousVerdictError(VerdictParseError):
    """Both 'normal' and 'abnormal' appear as tokens."""


class ClassificationError(RuntimeError):
    """classify_entry failed; the trace preserves the raw response."""

    def __init__(self, message: str, trace: "Trace"):
        super().__init__(message)
        self.trace = trace


class VerdictLabel(Enum):
    NORMAL = "normal"
    ABNORMAL = "abnormal"


@dataclass(frozen=True)
class Verdict:
    value: VerdictLabel
    raw_response: str


@dataclass(frozen=True)
class PromptTemplate:
    """Prompt body containing {{EXAMPLES}} and {{QUERY}} exactly once each."""

    body: str

    def __post_init__(self):
        if not self.body:
            raise InvalidTemplateError("template body is empty")
        for placeholder in (EXAMPLES_PLACEHOLDER, QUERY_PLACEHOLDER):
            n = self.body.count(placeholder)
            if n != 1:
                raise InvalidTemplateError(f"template must contain {placeholder} exactly once, found {n}")

    @classmethod
    def default(cls) -> "PromptTemplate":
        return cls(DEFAULT_TEMPLATE_BODY)

    @classmethod
    def from_file(cls, path: str | Path) -> "PromptTemplate":
        return cls(Path(path).read_text(encoding="utf-8"))


@dataclass
class RagContext:
    """Retrieved normal exemplars plus the queried entry text."""

    hits: list[RetrievalHit]
    query_text: str

    @property
    def empty(self) -> bool:
        return not self.hits

    @property
    def top_score(self) -> float:
        return self.hits[0].score if self.hits else float("-inf")


def render_prompt(template: PromptTemplate, context: RagContext) -> str:
    """Substitute the retrieved examples and the query into the template.

    Each hit text becomes one "- "-prefixed line, in hit order. Substituted
    content is never rescanned, so placeholder-looking text inside a log
    message stays verbatim.
    """
    examples = "\n".join(f"- {hit.text}" for hit in context.hits)
    spots = sorted(
        (
            (template.body.index(EXAMPLES_PLACEHOLDER), EXAMPLES_PLACEHOLDER, examples),
            (template.body.index(QUERY_PLACEHOLDER), QUERY_PLACEHOLDER, context.query_text),
        )
    )
    pieces = []
    prev = 0
    for pos, placeholder, value in spots:
        pieces.append(template.body[prev:pos])
        pieces.append(value)
        prev = pos + len(placeholder)
    pieces.append(template.body[prev:])
    return "".join(pieces)


def parse_verdict(response: str) -> Verdict:
    """Map a backend response to a strict verdict by whole-token matching.

    The response is lowercased and split into maximal alphabetic runs; only
    an exact token "normal" or "abnormal" counts, so the substring "normal"
    inside "abnormal" never misleads. Both present raises
    AmbiguousVerdictError; neither raises NoVerdictError.
    """
    tokens = set(_TOKEN_RE.findall(response.lower()))
    has_normal = "normal" in tokens
    has_abnormal = "abnormal" in tokens
    if has_normal and has_abnormal:
        raise AmbiguousVerdictError("response contains both 'normal' and 'abnormal'", response)
    if has_abnormal:
        return Verdict(VerdictLabel.ABNORMAL, response)
    if has_normal:
        return Verdict(VerdictLabel.NORMAL, response)
    raise NoVerdictError("response contains neither 'normal' nor 'abnormal'", response)


class CompletionBackend:
    """Interface for the language-model stage: prompt in, raw text out."""

    name = "backend"

    def complete(self, prompt: str, top_score: float) -> str:
        raise NotImplementedError


class MockBackend(CompletionBackend):
    """Offline stand-in: answers from the best retrieval score alone.

    Returns "normal" iff the top score reaches the threshold. An empty
    retrieval context arrives as top_score = -inf and is judged abnormal.
    This is plumbing for offline runs and tests, not a model of LLM behavior.
    """

    name = "mock"

    def __init__(self, threshold: float = DEFAULT_MOCK_THRESHOLD):
        self.threshold = threshold

    def complete(self, prompt: str, top_score: float) -> str:
        return "normal" if top_score >= self.threshold else "abnormal"


class RemoteBackend(CompletionBackend):
    """Chat-completions client: POST {model, temperature, messages} and return the text.

    Transient failures retry with exponential backoff. The credential comes
    from the environment and is never logged.
    """

    name = "remote"

    def __init__(
        self,
        model: str,
        *,
        temperature: float = DEFAULT_TEMPERATURE,
        max_attempts: int = 5,
        base_url: str | None = None,
        key: str | None = None,
        post: PostFn | None = None,
        sleep: SleepFn | None = None,
    ):
        if not 0.0 <= temperature <= 2.0:
            raise ValueError(f"temperature must be in [0, 2], got {temperature}")
        self.model = model
        self.temperature = temperature
        self._max_attempts = max_attempts
        self._base = api_base(base_url)
        self._key = api_key(key)
        self._post = post
        self._sleep = sleep

    def complete(self, prompt: str, top_score: float) -> str:
        payload = {
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": prompt}],
        }
        body = post_with_retries(
            f"{self._base}/chat/completions",
            payload,
            auth_headers(self._key),
            max_attempts=self._max_attempts,
            post=self._post,
            sleep=self._sleep,
        )
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise RemoteError(f"malformed completion response: {exc}") from exc


@dataclass
class Trace:
    """Record of one classification: retrieval, prompt, response, outcome.

    ``elapsed_ms`` stays in memory only; serialized traces omit it so that
    artifact files are byte-identical across reruns.
    """

    query_text: str
    hit_ids: list[int] = field(default_factory=list)
    hit_scores: list[float] = field(default_factory=list)
    hit_texts: list[str] = field(default_factory=list)
    prompt: str = ""
    raw_response: str = ""
    verdict: str | None = None
    error: str | None = None
    empty_context: bool = False
    elapsed_ms: float = 0.0

    def to_dict(self) -> dict:
        return {
            "query_text": self.query_text,
            "hit_ids": self.hit_ids,
            "hit_scores": self.hit_scores,
            "hit_texts": self.hit_texts,
            "prompt": self.prompt,
            "raw_response": self.raw_response,
            "verdict": self.verdict,
            "error": self.error,
            "empty_context": self.empty_context,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def classify_entry(
    store: VectorStore,
    embedder: Embedder,
    backend: CompletionBackend,
    template: PromptTemplate,
    query_text: str,
    top_k: int = DEFAULT_TOP_K,
) -> tuple[Verdict, Trace]:
    """Full single-entry pipeline: embed, retrieve, prompt, complete, parse.

    Raises ClassificationError (trace attached, raw response preserved) when
    the backend answer cannot be parsed into a verdict.
    """
    store.check_compatible(embedder.descriptor)
    start = time.perf_counter()
    query_vec = embedder.embed_text(query_text)
    hits = store.retrieve_top_k(query_vec, top_k)
    context = RagContext(hits=hits, query_text=query_text)
    prompt = render_prompt(template, context)
    trace = Trace(
        query_text=query_text,
        hit_ids=[h.record_id for h in hits],
        hit_scores=[h.score for h in hits],
        hit_texts=[h.text for h in hits],
        prompt=prompt,
        empty_context=context.empty,
    )
    response = backend.complete(prompt, context.top_score)
    trace.raw_response = response
    try:
        verdict = parse_verdict(response)
    except VerdictParseError as exc:
        trace.error = type(exc).__name__
        trace.elapsed_ms = (time.perf_counter() - start) * 1000.0
        raise ClassificationError(str(exc), trace) from exc
    trace.verdict = verdict.value.value
    trace.elapsed_ms = (time.perf_counter() - start) * 1000.0
    return verdict, trace
