"""HTTP service exposing scoring, group scoring, and rollout.

All endpoints live under /v1 and always return fully itemized breakdowns so
training pipelines can log component curves. Dependency failures map to
5xx responses; the service never fabricates a score. A static bearer token
can be required by setting the configured auth env var.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field, replace

from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse, StreamingResponse
from pydantic import BaseModel

from .benchgen import load_dataset
from .grpo import GroupTooSmall, group_advantages
from .protocol import Trajectory
from .rewards import RewardConfig, total_reward
from .rollout import (
    PatchStore,
    PolicyEndpoint,
    PolicyUnavailable,
    RolloutConfig,
    HttpPolicy,
    ScriptedPolicy,
    run_group,
    score_group,
)
from .tasks import TaskInstance
from .verifiers import JudgeClient, JudgeConfig, JudgeUnavailable

AUTH_TOKEN_ENV = "SERVICE_BEARER_TOKEN"


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8000
    parallelism: int = 8
    artifact_dir: str = "artifacts"
    reward: RewardConfig = field(default_factory=RewardConfig)
    rollout: RolloutConfig = field(default_factory=RolloutConfig)
    judge: JudgeConfig | None = None
    policy: PolicyEndpoint | None = None
    policy_script: str | None = None
    dataset_path: str | None = None
    auth_token_env: str = AUTH_TOKEN_ENV

    def __post_init__(self) -> None:
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ServiceConfig":
        d = dict(d)
        if "reward" in d and isinstance(d["reward"], dict):
            d["reward"] = RewardConfig.from_dict(d["reward"])
        if "rollout" in d and isinstance(d["rollout"], dict):
            d["rollout"] = RolloutConfig.from_dict(d["rollout"])
        if "judge" in d and isinstance(d["judge"], dict):
            d["judge"] = JudgeConfig(**d["judge"])
        if "policy" in d and isinstance(d["policy"], dict):
            d["policy"] = PolicyEndpoint(**d["policy"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown service config fields: {sorted(unknown)}")
        return cls(**d)


class ScoreBody(BaseModel):
    trajectory: dict
    instance: dict
    reward_config: dict | None = None


class ScoreGroupBody(BaseModel):
    trajectories: list[dict]
    instance: dict
    reward_config: dict | None = None


class RolloutBody(BaseModel):
    instance_id: str | None = None
    instance: dict | None = None
    group_size: int | None = None
    seed: int | None = None
    reward_config: dict | None = None
    stream: bool = False


class _Metrics:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.requests: dict[str, int] = {}
        self.score_latency_sum = 0.0
        self.score_latency_count = 0

    def count(self, route: str) -> None:
        with self._lock:
            self.requests[route] = self.requests.get(route, 0) + 1

    def observe_latency(self, dt: float) -> None:
        with self._lock:
            self.score_latency_sum += dt
            self.score_latency_count += 1

    def render(self, judge: JudgeClient | None) -> str:
        with self._lock:
            lines = [
                f'requests_total{{route="{r}"}} {n}' for r, n in sorted(self.requests.items())
            ]
            mean = (
                self.score_latency_sum / self.score_latency_count
                if self.score_latency_count
                else 0.0
            )
            lines.append(f"score_latency_seconds_mean {mean:.6f}")
        if judge is not None:
            total = judge.cache_hits + judge.network_calls
            rate = judge.cache_hits / total if total else 0.0
            lines.append(f"judge_cache_hit_rate {rate:.6f}")
        return "\n".join(lines) + "\n"


class _BadRequest(Exception):
    def __init__(self, message: str, loc: list[str] | None = None):
        super().__init__(message)
        self.message = message
        self.loc = loc or []


def _request_id(request: Request) -> str:
    return request.headers.get("X-Request-ID") or uuid.uuid4().hex


def create_app(
    cfg: ServiceConfig,
    judge: JudgeClient | None = None,
    policy=None,
) -> FastAPI:
    """Build the service; ``judge`` and ``policy`` can be injected for tests."""
    app = FastAPI(title="zoomrl scoring service")
    metrics = _Metrics()
    limiter = threading.BoundedSemaphore(cfg.parallelism)
    patch_store = PatchStore(os.path.join(cfg.artifact_dir, "patches"))

    if judge is None and cfg.judge is not None:
        judge = JudgeClient(cfg.judge)
    if policy is None:
        if cfg.policy_script:
            policy = ScriptedPolicy.from_file(cfg.policy_script)
        elif cfg.policy is not None:
            policy = HttpPolicy(cfg.policy)

    registry: dict[str, TaskInstance] = {}
    if cfg.dataset_path:
        for inst in load_dataset(cfg.dataset_path):
            registry[inst.instance_id] = inst

    app.state.judge = judge
    app.state.policy = policy
    app.state.metrics = metrics

    @app.exception_handler(RequestValidationError)
    async def _schema_error(request: Request, exc: RequestValidationError):
        details = [
            {"loc": [str(p) for p in err.get("loc", [])], "msg": err.get("msg", "")}
            for err in exc.errors()
        ]
        return JSONResponse(status_code=400, content={"error": "schema_violation", "details": details})

    @app.middleware("http")
    async def _count_and_auth(request: Request, call_next):
        metrics.count(request.url.path)
        token = os.environ.get(cfg.auth_token_env)
        if token and request.url.path.startswith("/v1/"):
            header = request.headers.get("Authorization", "")
            if header != f"Bearer {token}":
                return JSONResponse(status_code=401, content={"error": "unauthorized"})
        return await call_next(request)

    def _decode_score_inputs(body: ScoreBody | ScoreGroupBody):
        try:
            inst = TaskInstance.from_dict(body.instance)
        except (KeyError, TypeError, ValueError) as exc:
            raise _BadRequest(str(exc), loc=["body", "instance"]) from exc
        try:
            reward_cfg = (
                RewardConfig.from_dict(body.reward_config) if body.reward_config else cfg.reward
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise _BadRequest(str(exc), loc=["body", "reward_config"]) from exc
        return inst, reward_cfg

    @app.post("/v1/score")
    def score(body: ScoreBody, request: Request, response: Response):
        rid = _request_id(request)
        response.headers["X-Request-ID"] = rid
        inst, reward_cfg = _decode_score_inputs(body)
        try:
            traj = Trajectory.from_dict(body.trajectory)
        except (KeyError, TypeError, ValueError) as exc:
            raise _BadRequest(str(exc), loc=["body", "trajectory"]) from exc
        with limiter:
            t0 = time.perf_counter()
            breakdown = total_reward(traj, inst, reward_cfg, judge)
            metrics.observe_latency(time.perf_counter() - t0)
        return {"request_id": rid, "breakdown": breakdown.to_dict()}

    @app.post("/v1/score_group")
    def score_group_endpoint(body: ScoreGroupBody, request: Request, response: Response):
        rid = _request_id(request)
        response.headers["X-Request-ID"] = rid
        inst, reward_cfg = _decode_score_inputs(body)
        if len(body.trajectories) < 2:
            raise GroupTooSmall(f"group size {len(body.trajectories)} < 2")
        try:
            trajectories = [Trajectory.from_dict(t) for t in body.trajectories]
        except (KeyError, TypeError, ValueError) as exc:
            raise _BadRequest(str(exc), loc=["body", "trajectories"]) from exc
        with limiter:
            breakdowns = [total_reward(t, inst, reward_cfg, judge) for t in trajectories]
        rewards = [b.total for b in breakdowns]
        advantages = group_advantages(rewards)
        return {
            "request_id": rid,
            "breakdowns": [b.to_dict() for b in breakdowns],
            "advantages": advantages,
        }

    @app.post("/v1/rollout")
    def rollout_endpoint(body: RolloutBody, request: Request, response: Response):
        rid = _request_id(request)
        response.headers["X-Request-ID"] = rid
        if policy is None:
            return JSONResponse(
                status_code=502, content={"error": "no policy endpoint configured"}
            )
        if body.instance is not None:
            try:
                inst = TaskInstance.from_dict(body.instance)
            except (KeyError, TypeError, ValueError) as exc:
                raise _BadRequest(str(exc), loc=["body", "instance"]) from exc
        elif body.instance_id is not None:
            inst = registry.get(body.instance_id)
            if inst is None:
                return JSONResponse(
                    status_code=404, content={"error": f"unknown instance_id {body.instance_id!r}"}
                )
        else:
            raise _BadRequest("need instance or instance_id")

        reward_cfg = (
            RewardConfig.from_dict(body.reward_config) if body.reward_config else cfg.reward
        )
        rollout_cfg = cfg.rollout
        if body.group_size is not None:
            rollout_cfg = replace(rollout_cfg, group_size=body.group_size)
        if body.seed is not None:
            rollout_cfg = replace(rollout_cfg, seed=body.seed)

        with limiter:
            group_rollout = run_group(
                inst, policy, rollout_cfg, phase=reward_cfg.phase, patch_store=patch_store
            )
            scored = score_group(group_rollout, reward_cfg, judge)

        records = [
            {
                "prompt_id": scored.group.prompt_id,
                "index": i,
                "trajectory": t.to_dict(),
                "reward": scored.group.rewards[i],
                "breakdown": scored.group.breakdowns[i].to_dict(),
                "advantage": scored.group.advantages[i],
            }
            for i, t in enumerate(scored.group.trajectories)
        ]
        if body.stream:
            def lines():
                for rec in records:
                    yield json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n"

            return StreamingResponse(lines(), media_type="application/jsonl")
        return {"request_id": rid, "records": records, "metrics": scored.metrics.to_dict()}

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/metrics")
    def metrics_endpoint():
        return PlainTextResponse(metrics.render(judge))

    @app.exception_handler(_BadRequest)
    async def _bad_request(request: Request, exc: _BadRequest):
        return JSONResponse(
            status_code=400,
            content={
                "error": exc.message,
                "details": [{"loc": exc.loc, "msg": exc.message}],
            },
        )

    @app.exception_handler(JudgeUnavailable)
    async def _judge_down(request: Request, exc: JudgeUnavailable):
        return JSONResponse(
            status_code=502,
            content={"error": f"judge unavailable: {exc}"},
            headers={"Retry-After": "1"},
        )

    @app.exception_handler(PolicyUnavailable)
    async def _policy_down(request: Request, exc: PolicyUnavailable):
        return JSONResponse(status_code=502, content={"error": f"policy unavailable: {exc}"})

    @app.exception_handler(GroupTooSmall)
    async def _group_too_small(request: Request, exc: GroupTooSmall):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    return app


def serve(cfg: ServiceConfig, judge: JudgeClient | None = None, policy=None) -> None:
    import uvicorn

    app = create_app(cfg, judge=judge, policy=policy)
    uvicorn.run(app, host=cfg.host, port=cfg.port, log_level="warning")
