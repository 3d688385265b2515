"""Minimal OpenAI-compatible chat-completion client for bundle annotation.

POSTs to {base_url}/chat/completions with a system instruction plus the
bundle prompt at temperature 0, and reads the first choice's message
content. The API key comes from the environment variable named in the
config. Results are cached by prompt digest so reruns are free.
"""

from __future__ import annotations

import json
import os
import urllib.error
import urllib.request
from dataclasses import dataclass

from .annotate import (
    AnnotationCache,
    AnnotationConfigError,
    AnnotationRecord,
    Prompt,
    ResponseParseError,
    parse_response,
)

SYSTEM_INSTRUCTION = (
    "You classify batches of text items. Reply with exactly one category "
    "name taken verbatim from the list in the user message, and nothing else."
)
REASK_SUFFIX = "\n\nAnswer with exactly one category name."


class TransportError(RuntimeError):
    """The endpoint could not be reached or returned a non-2xx status."""


@dataclass(frozen=True)
class LlmEndpointConfig:
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4o"
    api_key_env_var: str = "OPENAI_API_KEY"
    max_retries: int = 2
    timeout: float = 60.0
    max_chars_per_item: int = 2000
    parallelism: int = 4

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_chars_per_item < 1:
            raise ValueError("max_chars_per_item must be >= 1")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")


def chat_completion(cfg: LlmEndpointConfig, api_key: str, user_content: str) -> str:
    """One POST to the chat-completions endpoint; returns the reply text."""
    body = {
        "model": cfg.model,
        "temperature": 0,
        "messages": [
            {"role": "system", "content": SYSTEM_INSTRUCTION},
            {"role": "user", "content": user_content},
        ],
    }
    req = urllib.request.Request(
        cfg.base_url.rstrip("/") + "/chat/completions",
        method="POST",
        data=json.dumps(body).encode("utf-8"),
        headers={
            "Authorization": f"Bearer {api_key}",
            "Content-Type": "application/json",
        },
    )
    try:
        with urllib.request.urlopen(req, timeout=cfg.timeout) as resp:
            payload = json.loads(resp.read().decode("utf-8"))
    except urllib.error.HTTPError as exc:
        detail = exc.read().decode("utf-8", errors="replace")[:300]
        raise TransportError(f"HTTP {exc.code}: {detail}") from exc
    except (urllib.error.URLError, TimeoutError, json.JSONDecodeError) as exc:
        raise TransportError(str(exc)) from exc
    try:
        return str(payload["choices"][0]["message"]["content"])
    except (KeyError, IndexError, TypeError) as exc:
        raise TransportError(f"malformed completion payload: {payload!r}") from exc


def annotate_llm(
    prompt: Prompt,
    cfg: LlmEndpointConfig,
    cache: AnnotationCache,
    class_names,
) -> AnnotationRecord:
    """Annotate one bundle, consulting the cache before the network.

    Unparseable replies and transport errors are retried up to
    cfg.max_retries times with a re-ask suffix appended to the prompt;
    a record with label None marks final failure.
    """
    if cache is not None:
        hit = cache.get(prompt.sha256)
        if hit is not None:
            return hit
    api_key = os.environ.get(cfg.api_key_env_var, "")
    if not api_key:
        raise AnnotationConfigError(
            f"environment variable {cfg.api_key_env_var} is not set"
        )
    raw = ""
    error = None
    label = None
    attempts = 0
    for attempt in range(cfg.max_retries + 1):
        attempts = attempt + 1
        content = prompt.text if attempt == 0 else prompt.text + REASK_SUFFIX
        try:
            raw = chat_completion(cfg, api_key, content)
        except TransportError as exc:
            error = f"transport: {exc}"
            continue
        try:
            label = parse_response(raw, class_names)
            error = None
            break
        except ResponseParseError as exc:
            error = f"parse: {exc}"
    record = AnnotationRecord(
        bundle_id=prompt.bundle_id,
        prompt_sha256=prompt.sha256,
        raw_response=raw,
        label=label,
        attempts=attempts,
        annotator="llm",
        error=error,
    )
    if cache is not None:
        cache.put(record)
    return record
