"""Optional draft sampler backed by a chat-completion HTTP endpoint.

Request body (POST ``endpoint``)::

    {"model": "...", "temperature": 0.5,
     "messages": [{"role": "system", "content": "<format rules>"},
                  {"role": "user", "content": "<task, strategy hint, prior drafts>"}]}

Expected response::

    {"choices": [{"message": {"content": "step: ...\\nstep: ...\\n#### 13"}}]}

The bearer token, if any, is read from the environment variable named by
``BackendConfig.api_key_env``. Remote models expose no log-probabilities, so a
trainer using this backend skips the policy update phase.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Sequence

from .cod import Draft, DraftFormatError, GenerationMeta, parse_draft, render_draft, validate_draft
from .env import Query
from .policy import StrategyHint

log = logging.getLogger(__name__)

SYSTEM_PROMPT = """\
You solve arithmetic chains by writing a terse draft.
Rules:
- Write one line per reasoning step, each starting with "step: ".
- Each step has at most 5 words. Example: "step: apply add 4 get 7".
- End with one line "#### <answer>" holding only the final integer.
- Write nothing else."""


class BackendUnavailable(RuntimeError):
    pass


class FormatRejected(ValueError):
    def __init__(self, message: str, text: str):
        super().__init__(f"{message}: {text!r}")
        self.text = text


@dataclass(frozen=True)
class BackendConfig:
    endpoint: str
    model: str = "default"
    timeout: float = 30.0
    max_retries: int = 2
    temperature: float | None = None  # overrides the per-draft schedule when set
    max_concurrency: int = 4
    api_key_env: str = "DRAFTRL_API_KEY"

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be at least 1")


_limits: dict[tuple[str, int], threading.BoundedSemaphore] = {}
_limits_lock = threading.Lock()


def _limit(cfg: BackendConfig) -> threading.BoundedSemaphore:
    key = (cfg.endpoint, cfg.max_concurrency)
    with _limits_lock:
        if key not in _limits:
            _limits[key] = threading.BoundedSemaphore(cfg.max_concurrency)
        return _limits[key]


def build_messages(query: Query, history: Sequence[Draft], hint: StrategyHint) -> list[dict]:
    parts = [f"Task: {query.prompt}", f"Strategy: {hint.description}"]
    if history:
        parts.append("Earlier drafts for this task (write a different one):")
        parts += [render_draft(d) for d in history]
    return [{"role": "system", "content": SYSTEM_PROMPT},
            {"role": "user", "content": "\n\n".join(parts)}]


def request_body(cfg: BackendConfig, query: Query, history: Sequence[Draft], hint: StrategyHint,
                 temperature: float) -> dict:
    temp = cfg.temperature if cfg.temperature is not None else temperature
    return {"model": cfg.model, "temperature": temp,
            "messages": build_messages(query, history, hint)}


def _post(cfg: BackendConfig, body: dict) -> str:
    headers = {"Content-Type": "application/json"}
    key = os.environ.get(cfg.api_key_env)
    if key:
        headers["Authorization"] = f"Bearer {key}"
    req = urllib.request.Request(cfg.endpoint, json.dumps(body).encode(), headers, method="POST")
    with _limit(cfg):
        with urllib.request.urlopen(req, timeout=cfg.timeout) as resp:
            payload = json.loads(resp.read().decode("utf-8"))
    try:
        return payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise FormatRejected("response lacks choices[0].message.content",
                             json.dumps(payload)) from None


def llm_generate(cfg: BackendConfig, query: Query, history: Sequence[Draft], hint: StrategyHint,
                 temperature: float, agent_id: int = 0, draft_index: int | None = None,
                 seed: int = 0) -> Draft:
    """One validated draft from the remote model.

    Transport failures and unusable replies share the retry budget; the last
    failure decides which error is raised.
    """
    body = request_body(cfg, query, history, hint, temperature)
    k = len(history) if draft_index is None else draft_index
    last: Exception | None = None
    for attempt in range(cfg.max_retries + 1):
        try:
            text = _post(cfg, body)
        except urllib.error.HTTPError as exc:
            last = BackendUnavailable(f"{cfg.endpoint} returned HTTP {exc.code}")
        except (urllib.error.URLError, TimeoutError, OSError, json.JSONDecodeError) as exc:
            last = BackendUnavailable(f"{cfg.endpoint} unreachable: {exc}")
        except FormatRejected as exc:
            last = exc
        else:
            try:
                d = parse_draft(text)
            except DraftFormatError as exc:
                last = FormatRejected(f"unparseable draft ({type(exc).__name__})", text)
            else:
                rep = validate_draft(d)
                if rep.valid:
                    meta = GenerationMeta(body["temperature"], hint.strategy_id, len(history), seed)
                    return Draft(d.steps, d.answer, agent_id=agent_id, draft_index=k, meta=meta)
                last = FormatRejected(f"draft violates step rules {rep.violations}", text)
        log.info("backend attempt %d failed: %s", attempt + 1, last)
    raise last


def make_sampler(cfg: BackendConfig):
    """Adapter matching the trainer's sampler hook."""

    def sample(agent_id, query, history, hint, temperature, seed, draft_index):
        return llm_generate(cfg, query, history, hint, temperature, agent_id, draft_index, seed)

    return sample
