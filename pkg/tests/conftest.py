from __future__ import annotations

import json

import httpx
import pytest

from zoomrl.verifiers import JudgeClient, JudgeConfig


class CountingJudgeTransport(httpx.MockTransport):
    """Chat-completions stub: YES iff candidate equals the reference text."""

    def __init__(self, fail: bool = False, verdict_text: str | None = None):
        self.calls = 0
        self.fail = fail
        self.verdict_text = verdict_text

        def handler(request: httpx.Request) -> httpx.Response:
            self.calls += 1
            if self.fail:
                return httpx.Response(500, json={"error": "down"})
            body = json.loads(request.content)
            user = body["messages"][-1]["content"]
            gold = user.split("Reference answer: ")[1].split("\n")[0]
            candidate = user.split("Candidate answer: ")[1].split("\n")[0]
            text = self.verdict_text
            if text is None:
                text = "YES" if candidate.strip() == gold.strip() else "NO"
            return httpx.Response(
                200, json={"choices": [{"message": {"content": text}}]}
            )

        super().__init__(handler)


@pytest.fixture
def judge_transport():
    return CountingJudgeTransport()


@pytest.fixture
def echo_judge(judge_transport, tmp_path):
    cfg = JudgeConfig(
        endpoint="http://judge.test/v1/chat/completions",
        cache_path=str(tmp_path / "judge_cache.jsonl"),
    )
    client = JudgeClient(cfg, transport=judge_transport)
    yield client
    client.close()
