"""Per-answer-type correctness judgment.

Closed answers (choice letters, integer counts) are verified by exact
extraction rules. Open-ended answers go to an external judge endpoint whose
YES/NO verdicts are cached in an append-only JSONL file, so repeated scoring
is deterministic and replayable offline.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass
from typing import Callable

import httpx

JUDGE_API_KEY_ENV = "JUDGE_API_KEY"


class JudgeUnavailable(Exception):
    """Judge endpoint unreachable or returned a non-success status."""


class JudgeUnparseable(Exception):
    """Judge replied with something that is neither YES nor NO."""


@dataclass(frozen=True)
class AnswerSpec:
    """What a correct answer looks like for one task instance."""

    kind: str  # multi_choice | numerical | open_ended
    choices: tuple[str, ...] | None = None
    gold: str | int = ""

    def __post_init__(self) -> None:
        if self.kind == "multi_choice":
            if self.choices is None or len(self.choices) not in (2, 4):
                raise ValueError("multi_choice requires 2 or 4 choices")
            if not isinstance(self.gold, str) or len(self.gold) != 1:
                raise ValueError(f"multi_choice gold must be a letter, got {self.gold!r}")
            idx = ord(self.gold.upper()) - ord("A")
            if not 0 <= idx < len(self.choices):
                raise ValueError(f"gold letter {self.gold!r} outside choice range")
        elif self.kind == "numerical":
            if not isinstance(self.gold, int) or isinstance(self.gold, bool) or self.gold < 0:
                raise ValueError(f"numerical gold must be a non-negative integer, got {self.gold!r}")
        elif self.kind != "open_ended":
            raise ValueError(f"unknown answer kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "choices": list(self.choices) if self.choices is not None else None,
            "gold": self.gold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnswerSpec":
        choices = d.get("choices")
        return cls(
            kind=d["kind"],
            choices=tuple(choices) if choices is not None else None,
            gold=d["gold"],
        )


_LETTER_RE = re.compile(r"\b([A-Da-d])\b")
_INT_RE = re.compile(r"[-+]?\d+")


def extract_answer(raw: str, spec: AnswerSpec) -> str | int | None:
    """Pull the canonical answer out of an ``<answer>`` block's content.

    Multi-choice: the first standalone choice letter, case-insensitive;
    two distinct letters present means the answer is hedged and extraction
    fails. Numerical: the first integer token. Open-ended: trimmed text.
    """
    if spec.kind == "multi_choice":
        n = len(spec.choices or ())
        letters = [m.group(1).upper() for m in _LETTER_RE.finditer(raw)]
        letters = [c for c in letters if ord(c) - ord("A") < n]
        if not letters or len(set(letters)) > 1:
            return None
        return letters[0]
    if spec.kind == "numerical":
        m = _INT_RE.search(raw)
        return int(m.group(0)) if m else None
    text = raw.strip()
    return text or None


def verify_closed(raw: str, spec: AnswerSpec) -> bool:
    """Exact-match verdict for multi-choice and numerical answers."""
    if spec.kind not in ("multi_choice", "numerical"):
        raise ValueError(f"verify_closed does not handle kind {spec.kind!r}")
    extracted = extract_answer(raw, spec)
    if extracted is None:
        return False
    if spec.kind == "multi_choice":
        return extracted == str(spec.gold).upper()
    return extracted == spec.gold


@dataclass(frozen=True)
class JudgeConfig:
    endpoint: str
    model_name: str = "judge"
    prompt_template_id: str = "same-answer-v1"
    timeout: float = 30.0
    cache_enabled: bool = True
    cache_path: str | None = None

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


# The judge prompt is an engineering stand-in; swap by registering a new
# template id rather than editing in place, so cache keys stay honest.
_TEMPLATES: dict[str, tuple[str, str]] = {
    "same-answer-v1": (
        "You compare a candidate answer with a reference answer to a question. "
        "Reply YES if the candidate conveys the same answer as the reference, otherwise NO. "
        "Reply with exactly one word.",
        "Question: {question}\nReference answer: {gold}\nCandidate answer: {response}\n"
        "Does the candidate give the same answer?",
    )
}


class JsonlCache:
    """Append-only JSONL verdict cache; one record per key, last write wins."""

    def __init__(self, path: str | None):
        self.path = path
        self._mem: dict[str, object] = {}
        self._lock = threading.Lock()
        if path and os.path.exists(path):
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = json.loads(line)
                    self._mem[rec["key"]] = rec["verdict"]

    def get(self, key: str):
        with self._lock:
            return self._mem.get(key)

    def __contains__(self, key: str) -> bool:
        with self._lock:
            return key in self._mem

    def put(self, key: str, verdict) -> None:
        with self._lock:
            self._mem[key] = verdict
            if self.path:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"key": key, "verdict": verdict, "ts": time.time()}) + "\n")


def _parse_verdict(text: str) -> bool:
    first = text.strip().splitlines()[0].strip() if text.strip() else ""
    word = first.strip(" \t.!,:;\"'").lower()
    if word == "yes":
        return True
    if word == "no":
        return False
    raise JudgeUnparseable(f"judge verdict not YES/NO: {first!r}")


class JudgeClient:
    """Chat-completions client for open-ended verification, with caching.

    Concurrent calls with the same key serialize on a per-key lock, so at
    most one network request is made per unique (template, question, gold,
    response) tuple when the cache is enabled.
    """

    def __init__(self, cfg: JudgeConfig, transport: httpx.BaseTransport | None = None):
        self.cfg = cfg
        self._http = httpx.Client(transport=transport, timeout=cfg.timeout)
        self._cache = JsonlCache(cfg.cache_path if cfg.cache_enabled else None)
        self._keylocks: dict[str, threading.Lock] = {}
        self._master = threading.Lock()
        self.network_calls = 0
        self.cache_hits = 0

    def _key(self, question: str, gold: str, response: str) -> str:
        h = hashlib.sha256()
        for part in (self.cfg.prompt_template_id, question, gold, response):
            h.update(part.encode())
            h.update(b"\x1f")
        return h.hexdigest()

    def _request(self, question: str, gold: str, response: str) -> bool:
        system, user_fmt = _TEMPLATES[self.cfg.prompt_template_id]
        body = {
            "model": self.cfg.model_name,
            "messages": [
                {"role": "system", "content": system},
                {
                    "role": "user",
                    "content": user_fmt.format(question=question, gold=gold, response=response),
                },
            ],
            "temperature": 0,
        }
        headers = {}
        token = os.environ.get(JUDGE_API_KEY_ENV)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        try:
            resp = self._http.post(self.cfg.endpoint, json=body, headers=headers)
            resp.raise_for_status()
            payload = resp.json()
            text = payload["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, json.JSONDecodeError) as exc:
            raise JudgeUnavailable(f"judge endpoint failed: {exc}") from exc
        self.network_calls += 1
        return _parse_verdict(text)

    def judge(self, question: str, gold: str, response: str) -> bool:
        if not self.cfg.cache_enabled:
            return self._request(question, gold, response)
        key = self._key(question, gold, response)
        cached = self._cache.get(key)
        if cached is not None:
            self.cache_hits += 1
            return bool(cached)
        with self._master:
            lock = self._keylocks.setdefault(key, threading.Lock())
        with lock:
            cached = self._cache.get(key)
            if cached is not None:
                self.cache_hits += 1
                return bool(cached)
            verdict = self._request(question, gold, response)
            self._cache.put(key, verdict)
            return verdict

    def close(self) -> None:
        self._http.close()


def judge_open_ended(
    question: str,
    gold: str,
    response: str,
    cfg: JudgeConfig,
    transport: httpx.BaseTransport | None = None,
) -> bool:
    """One-shot open-ended verdict; prefer a long-lived JudgeClient in loops."""
    client = JudgeClient(cfg, transport=transport)
    try:
        return client.judge(question, gold, response)
    finally:
        client.close()


# Type alias for anything that can stand in for the judge in scoring code.
JudgeFn = Callable[[str, str, str], bool]
