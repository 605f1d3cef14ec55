"""Chat-completions policy client.

Serializes the observed state into a prompt, queries an external
endpoint speaking the de-facto chat-completions shape, and parses the
reply into an action. Failures retry with exponential backoff and then
surface as hard errors; nothing ever falls back to a silent local
decision. Every completed call is appended to an audit log.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from dataclasses import dataclass

import requests

from .model import SystemState
from .prompts import STANDARD_STYLE, PromptStyle, serialize_state
from .simulator import ConfigurationError

ENDPOINT_ENV = "MECOFFLOAD_LLM_ENDPOINT"
API_KEY_ENV = "MECOFFLOAD_LLM_API_KEY"

SYSTEM_INSTRUCTION = (
    "You schedule compute tasks in an edge network. Read the system "
    'description and answer with exactly one line: "Execute Locally" or '
    '"Offload to Server <k>".'
)

_DECISION_RE = re.compile(r"(execute\s+locally)|server\s*(\d+)", re.IGNORECASE)


class EndpointError(RuntimeError):
    """Endpoint unreachable or malformed after all retries."""


class DecisionParseError(ValueError):
    """Reply text carried no recognizable decision."""

    def __init__(self, raw_text: str):
        super().__init__(f"no decision found in reply: {raw_text!r}")
        self.raw_text = raw_text


class ActionRangeError(ValueError):
    """Reply named a server outside the current topology."""


def parse_decision(text: str, num_servers: int) -> int:
    """First decision mention wins: 'Execute Locally' -> 0,
    'Server <k>' -> k (must satisfy 1 <= k <= num_servers)."""
    match = _DECISION_RE.search(text or "")
    if match is None:
        raise DecisionParseError(text or "")
    if match.group(1):
        return 0
    k = int(match.group(2))
    if not 1 <= k <= num_servers:
        raise ActionRangeError(f"server {k} outside 1..{num_servers}")
    return k


@dataclass
class EndpointConfig:
    url: str
    api_key: str = ""
    model: str = "default"
    temperature: float = 0.0
    max_retries: int = 3
    timeout_s: float = 30.0
    backoff_s: float = 0.5
    max_in_flight: int = 4
    audit_path: str | None = None

    @classmethod
    def from_env(cls, **overrides) -> "EndpointConfig":
        url = os.environ.get(ENDPOINT_ENV)
        if not url:
            raise ConfigurationError(
                f"remote policy needs the {ENDPOINT_ENV} environment variable"
            )
        return cls(url=url, api_key=os.environ.get(API_KEY_ENV, ""), **overrides)


class RemotePolicy:
    """Decision source backed by a hosted chat model."""

    def __init__(self, config: EndpointConfig, session=None):
        self.config = config
        self.session = session if session is not None else requests.Session()
        self._gate = threading.BoundedSemaphore(config.max_in_flight)
        self._audit_lock = threading.Lock()

    def query(self, state: SystemState, style: PromptStyle = STANDARD_STYLE) -> int:
        """One decision for one state. Raises EndpointError after
        exhausting retries, DecisionParseError / ActionRangeError on bad
        replies; never mutates anything outside its audit log."""
        prompt = serialize_state(state, style)
        payload = {
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": SYSTEM_INSTRUCTION},
                {"role": "user", "content": prompt},
            ],
            "temperature": self.config.temperature,
        }
        reply, latency = self._post_with_retries(payload)
        self._audit(prompt, reply, latency)
        return parse_decision(reply, state.num_servers)

    def policy(self, style: PromptStyle = STANDARD_STYLE):
        return lambda state: self.query(state, style)

    def _post_with_retries(self, payload) -> tuple[str, float]:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        delay = self.config.backoff_s
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt > 0 and delay > 0:
                time.sleep(delay)
                delay *= 2
            with self._gate:
                started = time.monotonic()
                try:
                    response = self.session.post(
                        self.config.url,
                        json=payload,
                        headers=headers,
                        timeout=self.config.timeout_s,
                    )
                    response.raise_for_status()
                    body = response.json()
                    reply = body["choices"][0]["message"]["content"]
                    return str(reply), time.monotonic() - started
                except (requests.RequestException, KeyError, IndexError, TypeError, ValueError) as exc:
                    last_error = exc
        raise EndpointError(
            f"endpoint failed after {self.config.max_retries + 1} attempts: {last_error}"
        ) from last_error

    def _audit(self, prompt: str, reply: str, latency: float) -> None:
        if not self.config.audit_path:
            return
        entry = {"prompt": prompt, "reply": reply, "latency_s": latency, "ts": time.time()}
        with self._audit_lock:
            with open(self.config.audit_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry) + "\n")
