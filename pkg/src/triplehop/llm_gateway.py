"""Single choke point for all LLM interactions.

Everything that talks to a language model goes through LLMGateway: prompt
templating, the remote chat-completion client, a deterministic scripted
backend for offline tests, response parsing, and per-call token accounting.
No other module constructs LLM requests.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Protocol

import requests

TEMPLATE_NAMES = (
    "triple_extraction",
    "reader",
    "reader_with_memory",
    "reasoner",
    "rewriter",
    "qa_with_passages",
    "qa_no_passages",
)

_PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


class PromptError(ValueError):
    """Unknown template or unbound placeholder at render time."""


class GatewayError(RuntimeError):
    """Base class for completion failures."""


class FixtureMissError(GatewayError):
    """The scripted backend has no fixture for a (kind, key) pair."""


class CompletionError(GatewayError):
    """The remote backend failed after exhausting retries."""


@dataclass(frozen=True)
class ProximalTriple:
    """A (subject, predicate, object) fact produced by an LLM read."""

    subject: str
    predicate: str
    object: str


@dataclass(frozen=True)
class ReasonOutcome:
    """Termination check result: the answer when answerable, else the reason."""

    answerable: bool
    payload: str


# ---------------------------------------------------------------------------
# Templates
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    if name not in TEMPLATE_NAMES:
        raise PromptError(f"unknown template: {name!r}")
    return (
        resources.files(__package__).joinpath(f"prompts/{name}.txt").read_text("utf-8")
    )


def template_placeholders(name: str) -> frozenset[str]:
    return frozenset(_PLACEHOLDER_RE.findall(load_template(name)))


def render_prompt(template_name: str, variables: Mapping[str, str]) -> str:
    """Substitute named placeholders; no other transformation is applied."""
    text = load_template(template_name)
    referenced = template_placeholders(template_name)
    missing = referenced - set(variables)
    if missing:
        raise PromptError(
            f"unbound placeholders for {template_name!r}: {sorted(missing)}"
        )

    def substitute(match: re.Match) -> str:
        return str(variables[match.group(1)])

    return _PLACEHOLDER_RE.sub(substitute, text)


def serialize_facts(triples: Iterable[ProximalTriple]) -> str:
    """Facts-format serialization: ("s", "p", "o"), ("s", "p", "o"), ..."""
    return ", ".join(
        f'("{t.subject}", "{t.predicate}", "{t.object}")' for t in triples
    )


def format_qa_docs(passages: Iterable[tuple[str, str]]) -> str:
    """Per-passage blocks for the QA prompt, from (title, text) pairs."""
    return "\n\n".join(f"Wikipedia Title: {title}\n{text}" for title, text in passages)


# ---------------------------------------------------------------------------
# Response parsing
# ---------------------------------------------------------------------------

_GROUP_RE = re.compile(r"\(([^()]*)\)")
_QUOTED_TRIPLE_RE = re.compile(
    r'\s*"([^"]*)"\s*,\s*"([^"]*)"\s*,\s*"([^"]*)"\s*$'
)
_ANSWERABLE_RE = re.compile(
    r"^[ \t]*answerable\s*:\s*(yes|no)\b", re.IGNORECASE | re.MULTILINE
)
_NEXT_QUESTION_RE = re.compile(r"next question\s*:\s*(.*)", re.IGNORECASE)


def parse_facts(raw: str) -> list[ProximalTriple]:
    """Extract all well-formed ("a", "b", "c") groups, dropping malformed ones."""
    out = []
    for group in _GROUP_RE.finditer(raw):
        match = _QUOTED_TRIPLE_RE.match(group.group(1))
        if not match:
            continue
        subject, predicate, obj = (part.strip() for part in match.groups())
        if subject and predicate and obj:
            out.append(ProximalTriple(subject, predicate, obj))
    return out


def parse_reason(raw: str) -> ReasonOutcome:
    """Read an "Answerable: Yes/No" reply; anything malformed means not answerable."""
    match = _ANSWERABLE_RE.search(raw)
    if not match:
        return ReasonOutcome(False, raw.strip() or raw)
    answerable = match.group(1).lower() == "yes"
    marker = "answer:" if answerable else "why:"
    lowered = raw.lower()
    pos = lowered.find(marker, match.end())
    if pos < 0:
        return ReasonOutcome(False, raw.strip() or raw)
    payload = raw[pos + len(marker):].strip()
    if not payload:
        return ReasonOutcome(False, raw.strip() or raw)
    return ReasonOutcome(answerable, payload)


def parse_next_question(raw: str) -> str:
    """Rewriter output: the "Next Question:" line, or the whole reply trimmed."""
    match = _NEXT_QUESTION_RE.search(raw)
    return (match.group(1) if match else raw).strip()


def parse_extraction(raw: str) -> list[tuple[str, str, str]]:
    """Triple-extraction output: strict JSON when possible, facts regex otherwise."""
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError:
        obj = None
    if isinstance(obj, dict) and isinstance(obj.get("triples"), list):
        triples = []
        for item in obj["triples"]:
            if (
                isinstance(item, (list, tuple))
                and len(item) == 3
                and all(isinstance(part, str) for part in item)
            ):
                subject, predicate, target = (part.strip() for part in item)
                if subject and predicate and target:
                    triples.append((subject, predicate, target))
        return triples
    return [(t.subject, t.predicate, t.object) for t in parse_facts(raw)]


# ---------------------------------------------------------------------------
# Token accounting
# ---------------------------------------------------------------------------

def whitespace_tokens(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class TokenRecord:
    kind: str
    input_tokens: int
    output_tokens: int
    iteration: int


class TokenLedger:
    """Append-only, thread-safe record of every completion call."""

    def __init__(self):
        self._records: list[TokenRecord] = []
        self._lock = threading.Lock()

    def add(self, kind: str, input_tokens: int, output_tokens: int, iteration: int):
        if input_tokens < 0 or output_tokens < 0:
            raise ValueError("token counts must be non-negative")
        with self._lock:
            self._records.append(
                TokenRecord(kind, input_tokens, output_tokens, iteration)
            )

    @property
    def records(self) -> tuple[TokenRecord, ...]:
        with self._lock:
            return tuple(self._records)

    def total_input(self) -> int:
        return sum(r.input_tokens for r in self.records)

    def total_output(self) -> int:
        return sum(r.output_tokens for r in self.records)

    def by_iteration(self) -> dict[int, tuple[int, int]]:
        totals: dict[int, tuple[int, int]] = {}
        for r in self.records:
            tin, tout = totals.get(r.iteration, (0, 0))
            totals[r.iteration] = (tin + r.input_tokens, tout + r.output_tokens)
        return totals

    def to_dict(self) -> dict:
        return {
            "records": [
                {
                    "kind": r.kind,
                    "input_tokens": r.input_tokens,
                    "output_tokens": r.output_tokens,
                    "iteration": r.iteration,
                }
                for r in self.records
            ],
            "total_input": self.total_input(),
            "total_output": self.total_output(),
        }


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompletionRequest:
    kind: str
    key: str
    prompt: str
    variables: Mapping[str, str]
    temperature: float = 0.0
    max_output_tokens: int = 1024


@dataclass(frozen=True)
class CompletionResult:
    text: str
    input_tokens: int
    output_tokens: int


class ChatBackend(Protocol):
    def complete(self, request: CompletionRequest) -> CompletionResult: ...


def canonical_key(variables: Mapping[str, str]) -> str:
    """SHA-256 of the canonical JSON form of a variable map."""
    canon = json.dumps(
        {k: str(v) for k, v in variables.items()},
        sort_keys=True,
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


class ScriptedBackend:
    """Deterministic offline backend: fixtures keyed by (kind, variable-map hash)."""

    def __init__(self, fixtures: Mapping[tuple[str, str], str] | None = None):
        self._fixtures: dict[tuple[str, str], str] = dict(fixtures or {})

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "ScriptedBackend":
        backend = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                backend.register_key(obj["kind"], obj["key"], obj["response"])
        return backend

    def save_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for (kind, key), response in sorted(self._fixtures.items()):
                fh.write(
                    json.dumps({"kind": kind, "key": key, "response": response}) + "\n"
                )

    def register(self, kind: str, variables: Mapping[str, str], response: str) -> None:
        self.register_key(kind, canonical_key(variables), response)

    def register_key(self, kind: str, key: str, response: str) -> None:
        self._fixtures[(kind, key)] = response

    def complete(self, request: CompletionRequest) -> CompletionResult:
        response = self._fixtures.get((request.kind, request.key))
        if response is None:
            raise FixtureMissError(
                f"no fixture for kind={request.kind!r} key={request.key}"
            )
        return CompletionResult(
            response, whitespace_tokens(request.prompt), whitespace_tokens(response)
        )


class HttpChatBackend:
    """Chat-completion JSON-over-HTTP client with bounded retries.

    Sends {"model", "messages", "temperature", "max_tokens"} and reads the
    assistant text plus token usage from the response; usage falls back to
    whitespace counts when the server omits it.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        *,
        api_key: str | None = None,
        max_retries: int = 3,
        backoff_base: float = 1.0,
        timeout: float = 60.0,
        in_flight_limit: int = 4,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.max_retries = max(1, max_retries)
        self.backoff_base = backoff_base
        self.timeout = timeout
        self._slots = threading.Semaphore(max(1, in_flight_limit))

    def complete(self, request: CompletionRequest) -> CompletionResult:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                with self._slots:
                    response = requests.post(
                        self.endpoint, json=payload, headers=headers,
                        timeout=self.timeout,
                    )
                response.raise_for_status()
                data = response.json()
                text = data["choices"][0]["message"]["content"]
                usage = data.get("usage") or {}
                return CompletionResult(
                    text,
                    int(usage.get("prompt_tokens", whitespace_tokens(request.prompt))),
                    int(usage.get("completion_tokens", whitespace_tokens(text))),
                )
            except (requests.RequestException, KeyError, ValueError, TypeError) as e:
                last_error = e
                if attempt < self.max_retries - 1:
                    time.sleep(self.backoff_base * (2 ** attempt))
        raise CompletionError(
            f"chat completion failed after {self.max_retries} attempts: {last_error}"
        )


# ---------------------------------------------------------------------------
# Gateway
# ---------------------------------------------------------------------------

class LLMGateway:
    """Renders prompts, invokes the backend, and accounts for every call."""

    def __init__(
        self,
        backend: ChatBackend,
        *,
        temperature: float = 0.0,
        max_output_tokens: int = 1024,
    ):
        self.backend = backend
        self.temperature = temperature
        self.max_output_tokens = max_output_tokens
        self.ledger = TokenLedger()
        self._iteration = 0

    def set_iteration(self, iteration: int) -> None:
        """Tag subsequent calls with an agent iteration (0 = outside the loop)."""
        self._iteration = iteration

    def render(self, template_name: str, variables: Mapping[str, str]) -> str:
        return render_prompt(template_name, variables)

    def complete(
        self,
        template_name: str,
        variables: Mapping[str, str],
        *,
        temperature: float | None = None,
        max_output_tokens: int | None = None,
    ) -> str:
        prompt = render_prompt(template_name, variables)
        request = CompletionRequest(
            kind=template_name,
            key=canonical_key(variables),
            prompt=prompt,
            variables=dict(variables),
            temperature=self.temperature if temperature is None else temperature,
            max_output_tokens=(
                self.max_output_tokens if max_output_tokens is None
                else max_output_tokens
            ),
        )
        result = self.backend.complete(request)
        self.ledger.add(
            template_name, result.input_tokens, result.output_tokens, self._iteration
        )
        return result.text
