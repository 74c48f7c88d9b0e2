"""Synchronous HTTP client for the zoomrl scoring service.

Thread-safe: concurrent calls multiplex over one pooled connection set.
4xx responses raise SchemaError (with the service's field-path details),
5xx and transport failures raise ServiceUnavailable after bounded retries.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import httpx

from .models import Breakdown, GroupScore

AUTH_TOKEN_ENV = "SERVICE_BEARER_TOKEN"


class SchemaError(Exception):
    """The service rejected the request body (4xx)."""

    def __init__(self, message: str, details: list | None = None):
        super().__init__(message)
        self.details = details or []


class ServiceUnavailable(Exception):
    """The service could not be reached or answered 5xx after retries."""


@dataclass(frozen=True)
class ClientConfig:
    base_url: str
    timeout: float = 30.0
    retries: int = 3
    backoff: float = 0.2
    auth_token_env: str = AUTH_TOKEN_ENV

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.retries < 1:
            raise ValueError("retries must be >= 1")


def _as_dict(obj) -> dict:
    if isinstance(obj, dict):
        return obj
    to_dict = getattr(obj, "to_dict", None)
    if callable(to_dict):
        return to_dict()
    raise TypeError(f"expected a wire dict or an object with to_dict(), got {type(obj)!r}")


class Client:
    def __init__(self, cfg: ClientConfig | str, transport: httpx.BaseTransport | None = None):
        if isinstance(cfg, str):
            cfg = ClientConfig(base_url=cfg)
        self.cfg = cfg
        self._http = httpx.Client(
            base_url=cfg.base_url.rstrip("/"), timeout=cfg.timeout, transport=transport
        )

    def _headers(self) -> dict:
        token = os.environ.get(self.cfg.auth_token_env)
        return {"Authorization": f"Bearer {token}"} if token else {}

    def _post(self, path: str, body: dict) -> dict:
        last: Exception | None = None
        for attempt in range(self.cfg.retries):
            try:
                resp = self._http.post(path, json=body, headers=self._headers())
            except httpx.HTTPError as exc:
                last = exc
                if attempt < self.cfg.retries - 1:
                    time.sleep(self.cfg.backoff * (2**attempt))
                continue
            if resp.status_code < 300:
                return resp.json()
            if 400 <= resp.status_code < 500:
                payload = resp.json() if resp.headers.get("content-type", "").startswith("application/json") else {}
                raise SchemaError(
                    payload.get("error", f"HTTP {resp.status_code}"),
                    details=payload.get("details"),
                )
            last = ServiceUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
            if attempt < self.cfg.retries - 1:
                time.sleep(self.cfg.backoff * (2**attempt))
        raise ServiceUnavailable(f"request failed after {self.cfg.retries} attempts: {last}")

    def score(self, trajectory, instance, config: dict | None = None) -> Breakdown:
        body = {"trajectory": _as_dict(trajectory), "instance": _as_dict(instance)}
        if config is not None:
            body["reward_config"] = _as_dict(config)
        return Breakdown.from_wire(self._post("/v1/score", body)["breakdown"])

    def score_group(self, trajectories: Sequence, instance, config: dict | None = None) -> GroupScore:
        body = {
            "trajectories": [_as_dict(t) for t in trajectories],
            "instance": _as_dict(instance),
        }
        if config is not None:
            body["reward_config"] = _as_dict(config)
        payload = self._post("/v1/score_group", body)
        return GroupScore(
            breakdowns=tuple(Breakdown.from_wire(b) for b in payload["breakdowns"]),
            advantages=tuple(payload["advantages"]),
        )

    def reward_fn_adapter(
        self, config: dict | None = None, max_concurrency: int = 8
    ) -> Callable[[Sequence, Sequence], list[float]]:
        """A trainer-side reward function: (trajectories, instances) -> totals.

        Requests are submitted concurrently but results come back in input
        order, value-identical to per-item ``score`` calls. Any failure
        propagates; the adapter never returns a partial batch silently.
        """

        def reward_fn(trajectories: Sequence, instances: Sequence) -> list[float]:
            if len(trajectories) != len(instances):
                raise ValueError("trajectories and instances must have equal length")
            if not trajectories:
                return []
            with ThreadPoolExecutor(max_workers=max_concurrency) as pool:
                breakdowns = list(
                    pool.map(lambda ti: self.score(ti[0], ti[1], config), zip(trajectories, instances))
                )
            return [b.total for b in breakdowns]

        return reward_fn

    def healthy(self) -> bool:
        try:
            return self._http.get("/healthz").status_code == 200
        except httpx.HTTPError:
            return False

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "Client":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
