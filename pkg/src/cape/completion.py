"""Planning-LLM backends.

``RemoteCompletionBackend`` talks to a ``POST /completions`` endpoint and
returns per-token log-probabilities. ``ScriptedBackend`` replays canned
responses keyed on the tail of the prompt, for deterministic runs.
"""

from __future__ import annotations

import json
import math
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import httpx

DEFAULT_STOP = ("\nStep", "\n\n")
TAIL_CHARS = 400
SYNTHETIC_TOKEN_LOGPROB = -0.1


class BackendError(RuntimeError):
    """Any failure that should abort the episode."""


class TransportError(BackendError):
    def __init__(self, message: str, *, attempts: int, status: int | None = None, retryable: bool = True):
        super().__init__(message)
        self.attempts = attempts
        self.status = status
        self.retryable = retryable


class UnmatchedPromptError(BackendError):
    pass


class CapabilityError(BackendError):
    pass


@dataclass
class CompletionRequest:
    prompt: str
    max_tokens: int = 32
    temperature: float = 0.5
    presence_penalty: float = 0.5
    n_samples: int = 1
    stop: tuple[str, ...] = DEFAULT_STOP
    want_logprobs: bool = True

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class CompletionSample:
    text: str
    token_logprobs: tuple[float, ...] = ()

    @property
    def empty(self) -> bool:
        return len(self.token_logprobs) == 0

    @property
    def mean_logprob(self) -> float:
        if not self.token_logprobs:
            return 0.0
        return math.fsum(self.token_logprobs) / len(self.token_logprobs)

    @classmethod
    def synthetic(cls, text: str, token_logprobs: Sequence[float] | None = None) -> "CompletionSample":
        if token_logprobs is None:
            token_logprobs = [SYNTHETIC_TOKEN_LOGPROB] * len(text.split())
        lps = tuple(float(x) for x in token_logprobs)
        if any(lp > 0 for lp in lps):
            raise ValueError("token log-probabilities must be <= 0")
        return cls(text, lps)

    def to_dict(self) -> dict[str, Any]:
        return {"text": self.text, "token_logprobs": list(self.token_logprobs)}


class CompletionBackend:
    """Counts one call per ``complete``/``score_continuation`` invocation."""

    def __init__(self) -> None:
        self.completion_calls = 0
        self.scoring_calls = 0
        self._count_lock = threading.Lock()

    def _count(self, attr: str) -> None:
        with self._count_lock:
            setattr(self, attr, getattr(self, attr) + 1)

    def complete(self, request: CompletionRequest) -> list[CompletionSample]:
        if not request.prompt:
            raise ValueError("prompt must be non-empty")
        self._count("completion_calls")
        return self._complete(request)

    def score_continuation(self, prompt: str, continuation: str) -> float:
        if not continuation:
            raise ValueError("continuation must be non-empty")
        self._count("scoring_calls")
        return min(0.0, self._score(prompt, continuation))

    def _complete(self, request: CompletionRequest) -> list[CompletionSample]:
        raise NotImplementedError

    def _score(self, prompt: str, continuation: str) -> float:
        raise CapabilityError(f"{type(self).__name__} cannot score continuations")


# --------------------------------------------------------------------------
# Remote


class RemoteCompletionBackend(CompletionBackend):
    def __init__(
        self,
        url: str | None = None,
        api_key: str | None = None,
        model: str | None = None,
        *,
        client: httpx.Client | None = None,
        max_retries: int = 3,
        backoff: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
    ):
        super().__init__()
        self.url = url or os.environ.get("CAPE_LLM_URL")
        if not self.url:
            raise BackendError("no completion endpoint configured (set CAPE_LLM_URL)")
        self.api_key = api_key if api_key is not None else os.environ.get("CAPE_API_KEY")
        self.model = model
        self.client = client or httpx.Client(timeout=120.0)
        self.max_retries = max_retries
        self.backoff = backoff
        self._sleep = sleep

    def _endpoint(self) -> str:
        base = self.url.rstrip("/")
        return base if base.endswith("/completions") else base + "/completions"

    def payload(self, request: CompletionRequest) -> dict[str, Any]:
        body: dict[str, Any] = {
            "prompt": request.prompt,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "presence_penalty": request.presence_penalty,
            "n": request.n_samples,
            "stop": list(request.stop),
            "logprobs": 1 if request.want_logprobs else None,
        }
        if self.model:
            body["model"] = self.model
        return body

    def _post(self, body: dict[str, Any]) -> dict[str, Any]:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        status = None
        err = ""
        for attempt in range(self.max_retries + 1):
            delay = self.backoff * 2**attempt
            try:
                resp = self.client.post(self._endpoint(), json=body, headers=headers)
            except httpx.TransportError as exc:
                err, status = str(exc), None
            else:
                status = resp.status_code
                if status == 200:
                    return resp.json()
                if status != 429 and status < 500:
                    raise TransportError(
                        f"HTTP {status}: {resp.text[:200]}", attempts=attempt + 1, status=status, retryable=False
                    )
                err = f"HTTP {status}"
                retry_after = resp.headers.get("retry-after")
                if retry_after:
                    try:
                        delay = float(retry_after)
                    except ValueError:
                        pass
            if attempt < self.max_retries:
                self._sleep(delay)
        raise TransportError(f"completion request failed: {err}", attempts=self.max_retries + 1, status=status)

    def _complete(self, request: CompletionRequest) -> list[CompletionSample]:
        data = self._post(self.payload(request))
        out = []
        for choice in data.get("choices", [])[: request.n_samples]:
            lp = (choice.get("logprobs") or {}).get("token_logprobs") or []
            out.append(CompletionSample(choice.get("text", ""), tuple(float(x) for x in lp if x is not None)))
        if not out:
            raise TransportError("response carried no choices", attempts=1, retryable=False)
        return out

    def _score(self, prompt: str, continuation: str) -> float:
        body = {
            "prompt": prompt + continuation,
            "max_tokens": 0,
            "echo": True,
            "logprobs": 0,
            "temperature": 0.0,
        }
        if self.model:
            body["model"] = self.model
        data = self._post(body)
        lp = data["choices"][0].get("logprobs") or {}
        offsets = lp.get("text_offset")
        tokens = lp.get("token_logprobs") or []
        if offsets is None:
            raise CapabilityError("endpoint does not return text offsets for echo scoring")
        picked = [t for off, t in zip(offsets, tokens) if off >= len(prompt) and t is not None]
        if not picked:
            raise CapabilityError("no continuation tokens returned")
        return math.fsum(picked) / len(picked)


# --------------------------------------------------------------------------
# Scripted


def _sample_from(obj: Any) -> CompletionSample:
    if isinstance(obj, CompletionSample):
        return obj
    if isinstance(obj, str):
        return CompletionSample.synthetic(obj)
    return CompletionSample.synthetic(obj.get("text", ""), obj.get("token_logprobs"))


def _response_from(obj: Any) -> list[CompletionSample]:
    if isinstance(obj, (list, tuple)):
        return [_sample_from(o) for o in obj]
    return [_sample_from(obj)]


@dataclass
class ScriptRule:
    """Matches the prompt tail; each hit consumes the next response, the last one repeats."""

    pattern: str
    responses: list[list[CompletionSample]]
    regex: bool = False
    hits: int = 0
    _compiled: re.Pattern[str] | None = field(default=None, repr=False)

    def matches(self, tail: str) -> bool:
        if not self.regex:
            return self.pattern in tail
        if self._compiled is None:
            self._compiled = re.compile(self.pattern, re.DOTALL)
        return self._compiled.search(tail) is not None

    def next_response(self) -> list[CompletionSample]:
        resp = self.responses[min(self.hits, len(self.responses) - 1)]
        self.hits += 1
        return resp


class ScriptedBackend(CompletionBackend):
    """Deterministic test double for the Planning LLM.

    Rules are checked in order against the last ``TAIL_CHARS`` characters of
    the prompt; the first match wins and an unmatched prompt raises.

    Continuation scoring looks in (1) tail-matched score rules, (2) the
    global score table, (3) the completion rule that would answer the prompt
    (its first response text scores its mean log-probability; a blank
    response means the script wants to stop, so it scores ``done``), and
    falls back to ``floor`` (``done_floor`` for the termination skill).
    """

    def __init__(
        self,
        rules: Sequence[ScriptRule] = (),
        scores: Mapping[str, float] | None = None,
        score_rules: Sequence[tuple[str, Mapping[str, float]]] = (),
        floor: float = -5.0,
        done_floor: float | None = None,
        done_skill: str = "done",
    ):
        super().__init__()
        self.rules = list(rules)
        self.scores = dict(scores or {})
        self.score_rules = [(re.compile(p, re.DOTALL), dict(t)) for p, t in score_rules]
        self.floor = floor
        self.done_floor = floor if done_floor is None else done_floor
        self.done_skill = done_skill
        self.call_log: list[CompletionRequest] = []
        self._lock = threading.Lock()

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ScriptedBackend":
        rules = []
        for r in doc.get("rules", []):
            if "responses" in r:
                responses = [_response_from(x) for x in r["responses"]]
            else:
                responses = [_response_from(r["response"])]
            if not responses:
                raise ValueError(f"rule {r.get('match')!r} has no responses")
            rules.append(ScriptRule(r["match"], responses, regex=bool(r.get("regex", False))))
        score_rules = [(sr["match"], sr["scores"]) for sr in doc.get("score_rules", [])]
        return cls(
            rules,
            scores=doc.get("scores"),
            score_rules=score_rules,
            floor=float(doc.get("floor", -5.0)),
            done_floor=doc.get("done_floor"),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def add_rule(self, pattern: str, response: Any, *, regex: bool = False) -> "ScriptedBackend":
        self.rules.append(ScriptRule(pattern, [_response_from(response)], regex=regex))
        return self

    def _match(self, prompt: str) -> ScriptRule | None:
        tail = prompt[-TAIL_CHARS:]
        for rule in self.rules:
            if rule.matches(tail):
                return rule
        return None

    def _complete(self, request: CompletionRequest) -> list[CompletionSample]:
        with self._lock:
            self.call_log.append(request)
            rule = self._match(request.prompt)
            if rule is None:
                raise UnmatchedPromptError(f"no scripted rule matches prompt tail {request.prompt[-80:]!r}")
            resp = rule.next_response()
        return [resp[i % len(resp)] for i in range(request.n_samples)]

    def _score(self, prompt: str, continuation: str) -> float:
        key = " ".join(continuation.split()).lower()
        tail = prompt[-TAIL_CHARS:]
        for pattern, table in self.score_rules:
            if pattern.search(tail) and key in table:
                return float(table[key])
        if key in self.scores:
            return float(self.scores[key])
        with self._lock:
            rule = self._match(prompt)
        if rule is not None:
            head = rule.responses[min(rule.hits, len(rule.responses) - 1)][0]
            text = " ".join(head.text.split()).lower()
            if text == key or (not text and key == self.done_skill):
                return head.mean_logprob
        return self.done_floor if key == self.done_skill else self.floor
