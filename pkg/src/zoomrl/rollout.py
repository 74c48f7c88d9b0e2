"""Multi-turn rollout orchestration against a policy endpoint.

Drives the conversation loop: send the page and question, parse each model
turn, execute zoom-ins (clamp, crop, persist the patch, feed the result
back), enforce turn/tool/context budgets, and assemble Trajectories. Groups
of G trajectories per instance run concurrently with per-trajectory seeds
``seed ^ index`` so deterministic policies yield reproducible groups.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Protocol

import httpx
from PIL import Image

from .geometry import DegenerateBox, ResizePolicy, clamp_to_image, crop_region
from .grpo import TrajectoryGroup, group_advantages
from .protocol import (
    INVALID_TURN_TEXT,
    STATUS_CLAMPED,
    STATUS_DEGENERATE,
    STATUS_EXECUTED,
    STATUS_MALFORMED,
    STATUS_REFUSED,
    TERMINAL_ANSWERED,
    TERMINAL_CONTEXT_BUDGET,
    TERMINAL_MAX_TURNS,
    TOOL_REFUSAL_TEXT,
    ToolInvocation,
    Trajectory,
    Turn,
    parse_turn,
    render_system_prompt,
    render_tool_result,
)
from .rewards import RewardConfig, total_reward
from .tasks import TaskInstance

POLICY_API_KEY_ENV = "POLICY_API_KEY"


class PolicyUnavailable(Exception):
    """Policy endpoint failed after the configured retries."""


@dataclass(frozen=True)
class RolloutConfig:
    max_turns: int = 6
    max_tool_calls: int = 5
    max_response_chars_per_turn: int = 16384
    # Character proxy for the tokenizer-side context limit; images are
    # charged a flat per-image cost since the engine is tokenizer-agnostic.
    context_budget_chars: int = 81920
    image_char_cost: int = 2048
    group_size: int = 8
    temperature: float = 1.0
    seed: int = 0
    parallelism: int = 4
    min_patch_short_side: int = 28
    patch_dir: str = "patches"

    def __post_init__(self) -> None:
        if self.max_turns < 1:
            raise ValueError("max_turns must be >= 1")
        if self.max_tool_calls < 0:
            raise ValueError("max_tool_calls must be >= 0")
        if self.max_response_chars_per_turn <= 0 or self.context_budget_chars <= 0:
            raise ValueError("budgets must be positive")
        if self.group_size < 1:
            raise ValueError("group_size must be >= 1")

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "RolloutConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown rollout config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class PolicyEndpoint:
    url: str
    model_name: str = "policy"
    auth_env: str = POLICY_API_KEY_ENV
    timeout: float = 120.0

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


class Policy(Protocol):
    """Anything that can complete a chat turn: HTTP endpoint or scripted mock."""

    def complete(self, messages: list[dict], *, seed: int, temperature: float) -> str: ...


class HttpPolicy:
    """Chat-completions client with bounded retries and exponential backoff."""

    def __init__(
        self,
        endpoint: PolicyEndpoint,
        transport: httpx.BaseTransport | None = None,
        retries: int = 3,
        backoff: float = 1.0,
    ):
        self.endpoint = endpoint
        self.retries = retries
        self.backoff = backoff
        self._http = httpx.Client(transport=transport, timeout=endpoint.timeout)

    def complete(self, messages: list[dict], *, seed: int, temperature: float) -> str:
        body = {
            "model": self.endpoint.model_name,
            "messages": messages,
            "temperature": temperature,
            "seed": seed,
        }
        headers = {}
        token = os.environ.get(self.endpoint.auth_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        last_exc: Exception | None = None
        for attempt in range(self.retries):
            try:
                resp = self._http.post(self.endpoint.url, json=body, headers=headers)
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except (httpx.HTTPError, KeyError, IndexError, json.JSONDecodeError) as exc:
                last_exc = exc
                if attempt < self.retries - 1:
                    time.sleep(self.backoff * (2**attempt))
        raise PolicyUnavailable(f"policy endpoint failed after {self.retries} attempts: {last_exc}")

    def close(self) -> None:
        self._http.close()


class ScriptedPolicy:
    """Deterministic mock policy: a JSON map of turn index -> emitted text.

    The turn index is the count of assistant messages already in the
    conversation. A ``"*"`` entry is the fallback for unmapped turns.
    """

    def __init__(self, script: dict[str, str]):
        self.script = script

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedPolicy":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))

    def complete(self, messages: list[dict], *, seed: int, temperature: float) -> str:
        turn = sum(1 for m in messages if m.get("role") == "assistant")
        key = str(turn)
        if key in self.script:
            return self.script[key]
        return self.script.get("*", "")


class PatchStore:
    """Content-addressed patch files: identical crops dedupe to one file."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def save(self, img: Image.Image) -> str:
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        data = buf.getvalue()
        name = hashlib.sha256(data).hexdigest()[:24] + ".png"
        path = self.root / name
        if not path.exists():
            # unique temp per writer: concurrent saves of identical content race benignly
            tmp = path.with_name(f"{name}.tmp-{os.getpid()}-{threading.get_ident()}")
            tmp.write_bytes(data)
            os.replace(tmp, path)
        return str(path)


def _data_url(path: str) -> str:
    with open(path, "rb") as fh:
        payload = base64.b64encode(fh.read()).decode("ascii")
    suffix = Path(path).suffix.lower().lstrip(".") or "png"
    mime = "jpeg" if suffix in ("jpg", "jpeg") else suffix
    return f"data:image/{mime};base64,{payload}"


def build_messages(inst: TaskInstance, turns: Iterable[Turn], phase: str) -> list[dict]:
    """Chat-completions message list for the next policy call."""
    messages: list[dict] = [
        {"role": "system", "content": [{"type": "text", "text": render_system_prompt(inst, phase)}]},
        {
            "role": "user",
            "content": [
                {"type": "text", "text": inst.question},
                {"type": "image_url", "image_url": {"url": _data_url(inst.image.path)}},
            ],
        },
    ]
    for turn in turns:
        if turn.role == "model":
            messages.append({"role": "assistant", "content": [{"type": "text", "text": turn.text}]})
        else:
            content: list[dict] = [{"type": "text", "text": turn.text}]
            if turn.patch is not None:
                content.append({"type": "image_url", "image_url": {"url": _data_url(turn.patch.path)}})
            messages.append({"role": "user", "content": content})
    return messages


def _context_chars(inst: TaskInstance, turns: list[Turn], cfg: RolloutConfig, phase: str) -> int:
    total = len(render_system_prompt(inst, phase)) + len(inst.question) + cfg.image_char_cost
    for t in turns:
        total += len(t.text)
        if t.patch is not None:
            total += cfg.image_char_cost
    return total


def run_trajectory(
    inst: TaskInstance,
    policy: Policy,
    cfg: RolloutConfig,
    *,
    phase: str = "main",
    seed: int | None = None,
    patch_store: PatchStore | None = None,
) -> Trajectory:
    """Drive one conversation to termination and assemble the Trajectory.

    Budget rules: at most ``max_turns`` model turns; zoom requests past
    ``max_tool_calls`` dispatched crops are answered with a refusal message;
    the loop stops with ``context_budget`` once the accumulated character
    count (plus flat per-image costs) exceeds the budget.
    """
    store = patch_store or PatchStore(cfg.patch_dir)
    resize = ResizePolicy(min_short_side=cfg.min_patch_short_side)
    rng_seed = cfg.seed if seed is None else seed

    turns: list[Turn] = []
    invocations: list[ToolInvocation] = []
    final_answer: str | None = None
    terminal = TERMINAL_MAX_TURNS
    dispatched = 0  # crops attempted against the image (budget-relevant)

    for model_turn_idx in range(cfg.max_turns):
        if _context_chars(inst, turns, cfg, phase) > cfg.context_budget_chars:
            terminal = TERMINAL_CONTEXT_BUDGET
            break
        raw = policy.complete(
            build_messages(inst, turns, phase), seed=rng_seed, temperature=cfg.temperature
        )
        raw = raw[: cfg.max_response_chars_per_turn]
        parsed = parse_turn(raw)
        turns.append(Turn(role="model", text=raw))

        if parsed.answer is not None:
            # Answer terminates the loop; tool calls in a mixed turn are
            # dropped (the MIXED_TERMINAL violation already marks the turn).
            final_answer = parsed.answer
            terminal = TERMINAL_ANSWERED
            break

        if parsed.tool_calls:
            handled_primary = False  # at most one call per turn is acted on
            appended_msg = False
            for call in parsed.tool_calls:
                ordinal = len(invocations) + 1
                if not call.accepted:
                    invocations.append(
                        ToolInvocation(ordinal, call.box, None, model_turn_idx, STATUS_MALFORMED)
                    )
                    continue
                if handled_primary or dispatched >= cfg.max_tool_calls:
                    invocations.append(
                        ToolInvocation(ordinal, call.box, None, model_turn_idx, STATUS_REFUSED)
                    )
                    if not handled_primary:
                        turns.append(Turn(role="tool", text=TOOL_REFUSAL_TEXT))
                        appended_msg = True
                        handled_primary = True
                    continue
                handled_primary = True
                dispatched += 1
                try:
                    clamped = clamp_to_image(call.box, inst.image)
                except DegenerateBox:
                    invocations.append(
                        ToolInvocation(ordinal, call.box, None, model_turn_idx, STATUS_DEGENERATE)
                    )
                    turns.append(render_tool_result(None))
                    appended_msg = True
                    continue
                status = STATUS_EXECUTED if clamped == call.box else STATUS_CLAMPED
                patch_img, meta = crop_region(inst.image, clamped, resize)
                patch_path = store.save(patch_img)
                invocations.append(
                    ToolInvocation(ordinal, call.box, clamped, model_turn_idx, status)
                )
                turns.append(render_tool_result(meta, patch_path))
                appended_msg = True
            if not appended_msg:
                turns.append(Turn(role="tool", text=INVALID_TURN_TEXT))
        else:
            turns.append(Turn(role="tool", text=INVALID_TURN_TEXT))

    return Trajectory(
        instance_id=inst.instance_id,
        turns=turns,
        invocations=invocations,
        final_answer=final_answer,
        terminal_reason=terminal,
    )


@dataclass
class GroupRollout:
    """Raw result of G concurrent rollouts; may be partial on endpoint failure."""

    prompt_id: str
    instance: TaskInstance
    trajectories: list[Trajectory | None]
    failures: list[tuple[int, str]] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return not self.failures

    def to_group(self) -> TrajectoryGroup:
        if not self.complete:
            raise PolicyUnavailable(
                f"group {self.prompt_id!r} incomplete: {len(self.failures)} of "
                f"{len(self.trajectories)} rollouts failed ({self.failures[0][1]})"
            )
        return TrajectoryGroup(
            prompt_id=self.prompt_id, trajectories=[t for t in self.trajectories if t is not None]
        )


def run_group(
    inst: TaskInstance,
    policy: Policy,
    cfg: RolloutConfig,
    *,
    phase: str = "main",
    patch_store: PatchStore | None = None,
) -> GroupRollout:
    """Roll out ``cfg.group_size`` trajectories for one instance concurrently."""
    store = patch_store or PatchStore(cfg.patch_dir)
    size = cfg.group_size
    results: list[Trajectory | None] = [None] * size
    failures: list[tuple[int, str]] = []

    def one(i: int) -> tuple[int, Trajectory]:
        return i, run_trajectory(
            inst, policy, cfg, phase=phase, seed=cfg.seed ^ i, patch_store=store
        )

    with ThreadPoolExecutor(max_workers=max(1, cfg.parallelism)) as pool:
        futures = [pool.submit(one, i) for i in range(size)]
        for idx, fut in enumerate(futures):
            try:
                i, traj = fut.result()
                results[i] = traj
            except Exception as exc:  # noqa: BLE001 - partial reporting contract
                failures.append((idx, f"{type(exc).__name__}: {exc}"))
    return GroupRollout(
        prompt_id=inst.instance_id, instance=inst, trajectories=results, failures=failures
    )


@dataclass
class StepMetrics:
    """Per-group aggregates for tool-learning curves."""

    prompt_id: str
    mean_reward: float
    mean_tool_calls: float
    mean_iou: float

    def to_dict(self) -> dict:
        return {
            "prompt_id": self.prompt_id,
            "mean_reward": self.mean_reward,
            "mean_tool_calls": self.mean_tool_calls,
            "mean_iou": self.mean_iou,
        }


@dataclass
class ScoredGroup:
    group: TrajectoryGroup
    instance: TaskInstance
    metrics: StepMetrics


def score_group(
    rollout: GroupRollout, reward_cfg: RewardConfig, judge=None
) -> ScoredGroup:
    """Reward + advantage scoring for a complete group rollout."""
    group = rollout.to_group()
    breakdowns = [total_reward(t, rollout.instance, reward_cfg, judge) for t in group.trajectories]
    group.breakdowns = breakdowns
    group.rewards = [b.total for b in breakdowns]
    group.advantages = group_advantages(group.rewards)

    all_ious = [v for b in breakdowns for v in b.matched_ious]
    n = len(breakdowns)
    metrics = StepMetrics(
        prompt_id=group.prompt_id,
        mean_reward=sum(group.rewards) / n,
        mean_tool_calls=sum(b.m for b in breakdowns) / n,
        mean_iou=sum(all_ious) / len(all_ious) if all_ious else 0.0,
    )
    return ScoredGroup(group=group, instance=rollout.instance, metrics=metrics)


def run_phase(
    instances: Iterable[TaskInstance],
    policy: Policy,
    reward_cfg: RewardConfig,
    rollout_cfg: RolloutConfig,
    judge=None,
    patch_store: PatchStore | None = None,
) -> Iterator[ScoredGroup]:
    """Full pipeline per instance: rollout group -> rewards -> advantages.

    Yields scored groups in instance order; collect them and hand the groups
    to grpo.build_training_batch for export. Endpoint failures propagate.
    """
    store = patch_store or PatchStore(rollout_cfg.patch_dir)
    for inst in instances:
        rollout = run_group(
            inst, policy, rollout_cfg, phase=reward_cfg.phase, patch_store=store
        )
        yield score_group(rollout, reward_cfg, judge)
