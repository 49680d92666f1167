"""Uniform chat-completion access over remote backends and scripted mocks.

Remote backends speak the OpenAI-compatible JSON shape (POST of
model/messages/temperature/max_tokens, reply read from
choices[0].message.content). Transient failures (429, 5xx, timeouts) are
retried with exponential backoff up to an attempt cap; authentication
failures are not retried. Every attempt is appended to a thread-safe call
log, and the scripted mock makes whole runs bit-reproducible.
"""

from __future__ import annotations

import hashlib
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import requests
import yaml

ROLES = ("system", "user", "assistant")


class GatewayError(Exception):
    """Base class for backend failures."""


class AuthenticationError(GatewayError):
    """Credential rejected; never retried."""


class RetriesExhaustedError(GatewayError):
    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class MalformedResponseError(GatewayError):
    """Response arrived but carried no usable message content."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise GatewayError(f"unknown message role {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.1
    max_tokens: int = 4096

    def __post_init__(self):
        if not self.messages:
            raise GatewayError("messages must be non-empty")
        if self.temperature < 0:
            raise GatewayError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise GatewayError("max_tokens must be positive")
        for message in self.messages:
            if message.role != "system":
                if message.role != "user":
                    raise GatewayError("first non-system message must have role 'user'")
                break

    @property
    def last_content(self) -> str:
        return self.messages[-1].content

    def to_payload(self) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


@dataclass(frozen=True)
class ChatResponse:
    content: str
    finish_reason: str = "stop"
    usage: tuple[int, int] | None = None  # (prompt_tokens, completion_tokens)

    def __post_init__(self):
        if self.finish_reason not in ("stop", "length", "error"):
            raise GatewayError(f"unknown finish_reason {self.finish_reason!r}")
        if self.finish_reason in ("stop", "length") and self.content is None:
            raise GatewayError("content required when finish_reason is stop/length")


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 3
    base_delay: float = 1.0
    factor: float = 2.0
    jitter: float = 0.2  # +-20%


@dataclass(frozen=True)
class CallLogEntry:
    backend: str
    attempt: int
    request_digest: str
    status: str  # "ok" | "http 429" | "timeout" | ...
    reply_digest: str | None = None


class CallLog:
    """Append-only, thread-safe record of every network attempt."""

    def __init__(self):
        self._entries: list[CallLogEntry] = []
        self._lock = threading.Lock()

    def append(self, entry: CallLogEntry) -> None:
        with self._lock:
            self._entries.append(entry)

    def snapshot(self) -> tuple[CallLogEntry, ...]:
        with self._lock:
            return tuple(self._entries)

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


def digest_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _request_digest(req: ChatRequest) -> str:
    return digest_text("\n".join(m.content for m in req.messages))


class HttpBackend:
    """OpenAI-compatible chat-completions client with retry and backoff."""

    def __init__(
        self,
        name: str,
        endpoint: str,
        model: str,
        api_key_env: str | None = None,
        retry: RetryPolicy = RetryPolicy(),
        request_timeout: float = 120.0,
        call_log: CallLog | None = None,
        sleeper=time.sleep,
        rng: random.Random | None = None,
    ):
        self.name = name
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.retry = retry
        self.request_timeout = request_timeout
        self.call_log = call_log if call_log is not None else CallLog()
        self._sleeper = sleeper
        self._rng = rng if rng is not None else random.Random()
        self._session = requests.Session()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            import os

            key = os.environ.get(self.api_key_env)
            if key:
                headers["Authorization"] = f"Bearer {key}"
        return headers

    def _delay(self, attempt: int) -> float:
        base = self.retry.base_delay * (self.retry.factor ** (attempt - 1))
        spread = self.retry.jitter * base
        return max(0.0, base + self._rng.uniform(-spread, spread))

    def complete(self, req: ChatRequest) -> ChatResponse:
        req_digest = _request_digest(req)
        last_failure = "no attempt made"
        for attempt in range(1, self.retry.attempts + 1):
            status = None
            try:
                http = self._session.post(
                    self.endpoint,
                    json=req.to_payload(),
                    headers=self._headers(),
                    timeout=self.request_timeout,
                )
                status = http.status_code
            except requests.RequestException as exc:
                self.call_log.append(
                    CallLogEntry(self.name, attempt, req_digest, f"transport: {type(exc).__name__}")
                )
                last_failure = f"transport error: {exc}"
            else:
                if status in (401, 403):
                    self.call_log.append(CallLogEntry(self.name, attempt, req_digest, f"http {status}"))
                    raise AuthenticationError(f"{self.name}: authentication failed ({status})")
                if status == 429 or status >= 500:
                    self.call_log.append(CallLogEntry(self.name, attempt, req_digest, f"http {status}"))
                    last_failure = f"http {status}"
                elif status >= 400:
                    self.call_log.append(CallLogEntry(self.name, attempt, req_digest, f"http {status}"))
                    raise GatewayError(f"{self.name}: request rejected ({status}): {http.text[:200]}")
                else:
                    response = self._parse(http)
                    self.call_log.append(
                        CallLogEntry(self.name, attempt, req_digest, "ok", digest_text(response.content))
                    )
                    return response
            if attempt < self.retry.attempts:
                self._sleeper(self._delay(attempt))
        raise RetriesExhaustedError(
            f"{self.name}: retries exhausted after {self.retry.attempts} attempts ({last_failure})",
            attempts=self.retry.attempts,
        )

    def _parse(self, http) -> ChatResponse:
        try:
            body = http.json()
            choice = body["choices"][0]
            content = choice["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(f"{self.name}: response missing content: {exc}") from exc
        if content is None:
            raise MalformedResponseError(f"{self.name}: response content is null")
        finish = choice.get("finish_reason") or "stop"
        if finish not in ("stop", "length"):
            finish = "stop"
        usage = None
        if isinstance(body.get("usage"), dict):
            u = body["usage"]
            if "prompt_tokens" in u and "completion_tokens" in u:
                usage = (int(u["prompt_tokens"]), int(u["completion_tokens"]))
        return ChatResponse(content=content, finish_reason=finish, usage=usage)


@dataclass(frozen=True)
class ScenarioRule:
    """One canned reply; unset constraints match anything."""

    reply: str
    role: str | None = None  # backend name
    turn: int | None = None  # 0-based per-backend call index
    contains: str | None = None  # substring of the last message
    digest_prefix: str | None = None  # prefix of the last-message digest
    finish_reason: str = "stop"

    def matches(self, backend_name: str, turn: int, last_content: str) -> bool:
        if self.role is not None and self.role != backend_name:
            return False
        if self.turn is not None and self.turn != turn:
            return False
        if self.contains is not None and self.contains not in last_content:
            return False
        if self.digest_prefix is not None and not digest_text(last_content).startswith(self.digest_prefix):
            return False
        return True


class ScriptedBackend:
    """Deterministic mock resolving replies from scenario rules.

    The first rule matching (backend name, per-backend turn index, last
    message content) wins. With content-keyed rules the mock is safe under
    concurrent use; turn-keyed rules assume a single sequential run.
    """

    def __init__(self, name: str, rules: list[ScenarioRule], call_log: CallLog | None = None):
        self.name = name
        self.rules = list(rules)
        self.call_log = call_log if call_log is not None else CallLog()
        self._turn = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path, name: str) -> ScriptedBackend:
        with open(path, "r", encoding="utf-8") as f:
            doc = yaml.safe_load(f)
        rules = [ScenarioRule(**rule) for rule in doc["rules"]]
        return cls(name=name, rules=rules)

    def complete(self, req: ChatRequest) -> ChatResponse:
        with self._lock:
            turn = self._turn
            self._turn += 1
        last = req.last_content
        for rule in self.rules:
            if rule.matches(self.name, turn, last):
                response = ChatResponse(content=rule.reply, finish_reason=rule.finish_reason)
                self.call_log.append(
                    CallLogEntry(self.name, 1, _request_digest(req), "ok", digest_text(rule.reply))
                )
                return response
        raise GatewayError(
            f"{self.name}: no scenario rule matches turn {turn} "
            f"(digest {digest_text(last)[:8]}...)"
        )


def complete(backend, req: ChatRequest) -> ChatResponse:
    """Dispatch one chat completion through any backend handle."""
    return backend.complete(req)


def backends_from_config(config: dict, base_dir: str | Path = ".",
                         call_log: CallLog | None = None) -> dict:
    """Build named backend handles from a parsed config mapping.

    Each section is either ``kind: http`` (endpoint/model/api_key_env plus
    optional retry fields) or ``kind: mock`` (scenario file path or inline
    rules). Credentials are only ever named by environment variable.
    """
    base_dir = Path(base_dir)
    shared_log = call_log if call_log is not None else CallLog()
    backends = {}
    for name, section in config.items():
        kind = section.get("kind", "http")
        if kind == "http":
            retry = RetryPolicy(
                attempts=int(section.get("attempts", 3)),
                base_delay=float(section.get("base_delay", 1.0)),
                factor=float(section.get("factor", 2.0)),
                jitter=float(section.get("jitter", 0.2)),
            )
            backends[name] = HttpBackend(
                name=name,
                endpoint=section["endpoint"],
                model=section["model"],
                api_key_env=section.get("api_key_env"),
                retry=retry,
                request_timeout=float(section.get("request_timeout", 120.0)),
                call_log=shared_log,
            )
        elif kind == "mock":
            if "scenario" in section:
                scenario_path = base_dir / section["scenario"]
                backend = ScriptedBackend.from_file(scenario_path, name=name)
                backend.call_log = shared_log
            else:
                rules = [ScenarioRule(**rule) for rule in section.get("rules", [])]
                backend = ScriptedBackend(name=name, rules=rules, call_log=shared_log)
            backends[name] = backend
        else:
            raise GatewayError(f"backend {name!r}: unknown kind {kind!r}")
    return backends
