"""LLM endpoint clients: an HTTP chat-completions client with retries, a
deterministic in-process mock, and a content-addressed response cache."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import httpx

from ..exceptions import TransportError, ValidationError
from .prompts import VERIFIER_TEMPLATE

logger = logging.getLogger(__name__)

_RETRY_STATUS = {408, 409, 429, 500, 502, 503, 504}


@dataclass(frozen=True)
class LlmEndpointConfig:
    base_url: str
    model: str
    auth_env: str = "MEGDIFF_LLM_TOKEN"
    timeout: float = 30.0
    max_retries: int = 3
    max_concurrency: int = 4
    temperature: float = 0.0
    max_tokens: int = 512
    backoff_base: float = 0.5

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValidationError("timeout must be positive")
        if self.max_retries < 0:
            raise ValidationError("max_retries must be >= 0")
        if self.max_concurrency < 1:
            raise ValidationError("max_concurrency must be >= 1")

    @classmethod
    def from_dict(cls, d: Mapping) -> "LlmEndpointConfig":
        unknown = sorted(set(d) - set(cls.__dataclass_fields__))
        if unknown:
            raise ValidationError(f"unknown llm config field(s): {unknown}")
        return cls(**d)


class HttpLlmClient:
    """Chat-completions client (``POST {base_url}/chat/completions``).

    Retries transport errors and 408/409/429/5xx responses with exponential
    backoff; after ``max_retries`` retries raises :class:`TransportError`.
    """

    def __init__(self, cfg: LlmEndpointConfig, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.cfg = cfg
        self.model = cfg.model
        self.max_concurrency = cfg.max_concurrency
        self._sleep = sleep
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(cfg.auth_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self._http = httpx.Client(base_url=cfg.base_url.rstrip("/"), timeout=cfg.timeout,
                                  headers=headers, transport=transport)

    def _payload(self, prompt: str) -> dict:
        return {
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
        }

    @staticmethod
    def _extract(body: dict) -> str:
        choice = body["choices"][0]
        if "message" in choice:
            return choice["message"]["content"] or ""
        return choice.get("text", "")

    def complete(self, prompt: str) -> str:
        last = None
        for attempt in range(self.cfg.max_retries + 1):
            try:
                resp = self._http.post("/chat/completions", json=self._payload(prompt))
                if resp.status_code in _RETRY_STATUS:
                    last = f"HTTP {resp.status_code}"
                elif resp.status_code >= 400:
                    raise TransportError(f"endpoint returned HTTP {resp.status_code}: {resp.text[:200]}")
                else:
                    return self._extract(resp.json())
            except httpx.HTTPError as exc:
                last = f"{type(exc).__name__}: {exc}"
            except (KeyError, IndexError, ValueError) as exc:
                raise TransportError(f"malformed endpoint response: {exc}") from exc
            if attempt < self.cfg.max_retries:
                delay = self.cfg.backoff_base * 2**attempt
                logger.warning("LLM call failed (%s); retry %d in %.2fs", last, attempt + 1, delay)
                self._sleep(delay)
        raise TransportError(f"LLM endpoint failed after {self.cfg.max_retries} retries: {last}")

    def close(self):
        self._http.close()


_VERIFIER_PREFIX = VERIFIER_TEMPLATE.split("{hypothesis}")[0]
_VERIFIER_RE = re.compile(r"input: PROPERTY: (?P<h>.*?)\n\nTEXT: (?P<t>.*?)\n\noutput:$", re.S)


class MockLlm:
    """Deterministic stand-in for an endpoint.

    Parameters
    ----------
    proposals : sequence of str or callable
        Proposer replies. A sequence is served in order, cycling; a callable
        receives the prompt.
    rules : mapping or callable
        ``rules[hypothesis](sentence) -> bool``, or ``rules(hypothesis, sentence)``.
        Unknown hypotheses answer "No".

    Every prompt is appended to ``calls`` for inspection.
    """

    def __init__(self, proposals: Sequence[str] | Callable[[str], str] = (),
                 rules: Mapping[str, Callable[[str], bool]] | Callable[[str, str], bool] | None = None,
                 model: str = "mock"):
        self.proposals = proposals
        self.rules = rules or {}
        self.model = model
        self.max_concurrency = 1
        self.calls: list[str] = []
        self.verified: list[tuple[str, str]] = []
        self._n_proposals = 0
        self._lock = threading.Lock()

    def complete(self, prompt: str) -> str:
        with self._lock:
            self.calls.append(prompt)
            if prompt.startswith(_VERIFIER_PREFIX):
                m = _VERIFIER_RE.search(prompt)
                hyp, text = m.group("h"), m.group("t")
                self.verified.append((hyp, text))
                if callable(self.rules):
                    ok = self.rules(hyp, text)
                else:
                    rule = self.rules.get(hyp)
                    ok = bool(rule(text)) if rule else False
                return "Yes" if ok else "No"
            if callable(self.proposals):
                return self.proposals(prompt)
            if not self.proposals:
                return ""
            reply = self.proposals[self._n_proposals % len(self.proposals)]
            self._n_proposals += 1
            return reply


class ResponseCache:
    """Thread-safe verdict cache, optionally persisted as one JSON file per key."""

    def __init__(self, directory=None):
        self.directory = Path(directory) if directory else None
        self._mem: dict[str, str] = {}
        self._lock = threading.Lock()
        if self.directory:
            self.directory.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(model: str, hypothesis: str, sentence: str) -> str:
        blob = json.dumps([model, hypothesis, sentence], ensure_ascii=False)
        return hashlib.sha256(blob.encode()).hexdigest()

    def get(self, key: str) -> str | None:
        with self._lock:
            if key in self._mem:
                return self._mem[key]
        if self.directory:
            path = self.directory / f"{key}.json"
            if path.exists():
                value = json.loads(path.read_text())["response"]
                with self._lock:
                    self._mem[key] = value
                return value
        return None

    def put(self, key: str, response: str):
        with self._lock:
            self._mem[key] = response
        if self.directory:
            path = self.directory / f"{key}.json"
            tmp = path.with_suffix(f".{threading.get_ident()}.tmp")
            tmp.write_text(json.dumps({"response": response}))
            os.replace(tmp, path)

    def __len__(self):
        return len(self._mem)
