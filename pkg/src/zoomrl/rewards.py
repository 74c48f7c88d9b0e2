"""Trajectory scoring: format, answer accuracy, and tool-usage rewards.

The total reward is the exact sum of three itemized components:

    total = r_format + r_acc + r_tool

r_format is penalize-only (0 when well formed, else -penalty). r_acc pays
``weight_acc`` for a correct final answer. The tool component combines a
binary invocation-count reward with a spatial-accuracy bonus

    r_tool_acc = (1 / sqrt(m)) * sum_i IoU_i

over the m zoom-in invocations, and is doubled when the final answer is
correct: ``r_tool = (1 + [correct]) * (r_tool_count + r_tool_acc)``.

Two-phase training support: in the ``warm_start`` phase only the basic tool
rewards are paid (r_acc forced to 0, correctness never evaluated, the
doubling indicator disabled) so tool-calling behavior can be established
before outcome optimization begins. Ablation modes reshape r_tool in the
main phase: ``conditional`` pays tool rewards only on correct answers,
``constant_bonus`` pays a flat bonus for any tool use on a correct answer,
``format_random`` replaces r_acc with a seeded coin flip and pays no tool
reward at all.

Instances with no ground-truth regions (the reordering tasks) force both
tool components to zero: there is no meaningful zoom target to reward.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .geometry import BBox, match_invocations
from .protocol import (
    STATUS_CLAMPED,
    STATUS_EXECUTED,
    ToolInvocation,
    Trajectory,
    validate_format,
)
from .tasks import TaskInstance
from .verifiers import JudgeClient, JudgeUnavailable, verify_closed

PHASE_WARM_START = "warm_start"
PHASE_MAIN = "main"
PHASES = (PHASE_WARM_START, PHASE_MAIN)

MODE_FULL = "full"
MODE_CONDITIONAL = "conditional"
MODE_CONSTANT_BONUS = "constant_bonus"
MODE_FORMAT_RANDOM = "format_random"
MODES = (MODE_FULL, MODE_CONDITIONAL, MODE_CONSTANT_BONUS, MODE_FORMAT_RANDOM)


@dataclass(frozen=True)
class RewardConfig:
    phase: str = PHASE_MAIN
    mode: str = MODE_FULL
    weight_acc: float = 1.0
    penalty_format: float = 1.0
    weight_tool_count: float = 0.5
    constant_bonus_value: float = 0.5

    def __post_init__(self) -> None:
        if self.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("weight_acc", "penalty_format", "weight_tool_count", "constant_bonus_value"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        return {
            "phase": self.phase,
            "mode": self.mode,
            "weight_acc": self.weight_acc,
            "penalty_format": self.penalty_format,
            "weight_tool_count": self.weight_tool_count,
            "constant_bonus_value": self.constant_bonus_value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RewardConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown reward config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class RewardBreakdown:
    """Itemized scoring result; ``total`` is exactly r_format + r_acc + r_tool."""

    r_format: float
    r_acc: float
    r_tool_count: float
    r_tool_acc: float
    r_tool: float
    total: float
    m: int
    matched_ious: list[float] = field(default_factory=list)
    answer_correct: bool = False

    def to_dict(self) -> dict:
        return {
            "r_format": self.r_format,
            "r_acc": self.r_acc,
            "r_tool_count": self.r_tool_count,
            "r_tool_acc": self.r_tool_acc,
            "r_tool": self.r_tool,
            "total": self.total,
            "m": self.m,
            "matched_ious": self.matched_ious,
            "answer_correct": self.answer_correct,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RewardBreakdown":
        return cls(
            r_format=float(d["r_format"]),
            r_acc=float(d["r_acc"]),
            r_tool_count=float(d["r_tool_count"]),
            r_tool_acc=float(d["r_tool_acc"]),
            r_tool=float(d["r_tool"]),
            total=float(d["total"]),
            m=int(d["m"]),
            matched_ious=[float(v) for v in d.get("matched_ious", [])],
            answer_correct=bool(d.get("answer_correct", False)),
        )


def tool_accuracy_reward(
    invocations: Sequence[ToolInvocation], gt_regions: Sequence[BBox]
) -> tuple[float, list[float]]:
    """Spatial-accuracy bonus: sum of matched IoUs, normalized by sqrt(m).

    Only executed (possibly clamped) boxes are matched against regions, in
    invocation order; degenerate, malformed, and refused attempts score 0
    but still count toward m. With no regions the bonus is 0 regardless.
    """
    m = len(invocations)
    matched = [0.0] * m
    if m == 0:
        return 0.0, matched
    executable = [
        (i, inv.executed_box)
        for i, inv in enumerate(invocations)
        if inv.status in (STATUS_EXECUTED, STATUS_CLAMPED) and inv.executed_box is not None
    ]
    if gt_regions and executable:
        assignments = match_invocations([b for _, b in executable], list(gt_regions))
        for (pred_idx, _gt_idx, iou_val), (inv_idx, _box) in zip(assignments, executable):
            matched[inv_idx] = iou_val
    return sum(matched) / math.sqrt(m), matched


def tool_count_reward(m: int, expected: int, cfg: RewardConfig) -> float:
    """Binary reward: full weight when the invocation count hits the target."""
    if m < 0 or expected < 0:
        raise ValueError("counts must be non-negative")
    return cfg.weight_tool_count if m == expected else 0.0


def tool_reward(
    r_tool_count: float,
    r_tool_acc: float,
    answer_correct: bool,
    cfg: RewardConfig,
    m: int = 0,
) -> float:
    """Compose the tool component per phase and mode.

    ``m`` (invocation count) only matters for ``constant_bonus`` mode, which
    pays a flat bonus for any tool use on a correct answer.
    """
    base = r_tool_count + r_tool_acc
    if cfg.phase == PHASE_WARM_START:
        return base
    if cfg.mode == MODE_FULL:
        return (2.0 if answer_correct else 1.0) * base
    if cfg.mode == MODE_CONDITIONAL:
        return base if answer_correct else 0.0
    if cfg.mode == MODE_CONSTANT_BONUS:
        return cfg.constant_bonus_value if (answer_correct and m >= 1) else 0.0
    return 0.0  # format_random: no tool reward by construction


def _seeded_flip(t: Trajectory) -> bool:
    return random.Random(int(t.fingerprint()[:16], 16)).random() < 0.5


def _resolve_judge(judge) -> Callable[[str, str, str], bool] | None:
    if judge is None:
        return None
    if isinstance(judge, JudgeClient):
        return judge.judge
    return judge


def answer_correct(
    t: Trajectory, inst: TaskInstance, judge: JudgeClient | Callable | None = None
) -> bool:
    """Verdict on the final answer; open-ended instances need a judge."""
    if t.final_answer is None or not t.final_answer.strip():
        return False
    spec = inst.answer_spec
    if spec.kind in ("multi_choice", "numerical"):
        return verify_closed(t.final_answer, spec)
    judge_fn = _resolve_judge(judge)
    if judge_fn is None:
        raise JudgeUnavailable("open-ended instance requires a judge")
    return judge_fn(inst.question, str(spec.gold), t.final_answer.strip())


def total_reward(
    t: Trajectory,
    inst: TaskInstance,
    cfg: RewardConfig,
    judge: JudgeClient | Callable | None = None,
) -> RewardBreakdown:
    """Score one trajectory against its instance, fully itemized.

    Judge failures propagate; a breakdown is never fabricated under a dead
    dependency. Malformed trajectories still earn tool rewards for the
    calls that did execute.
    """
    verdict = validate_format(t)
    r_format = 0.0 if verdict.well_formed else -cfg.penalty_format

    m = t.m
    if inst.gt_regions:
        r_tool_acc_val, matched = tool_accuracy_reward(t.invocations, inst.gt_regions)
        r_tool_count_val = tool_count_reward(m, inst.expected_tool_count, cfg)
    else:
        r_tool_acc_val, matched = 0.0, [0.0] * m
        r_tool_count_val = 0.0

    correct = False
    if cfg.phase == PHASE_MAIN and cfg.mode != MODE_FORMAT_RANDOM:
        correct = answer_correct(t, inst, judge)

    if cfg.phase == PHASE_WARM_START:
        r_acc = 0.0
    elif cfg.mode == MODE_FORMAT_RANDOM:
        r_acc = cfg.weight_acc if _seeded_flip(t) else 0.0
    else:
        r_acc = cfg.weight_acc if correct else 0.0

    r_tool_val = tool_reward(r_tool_count_val, r_tool_acc_val, correct, cfg, m=m)
    total = r_format + r_acc + r_tool_val

    return RewardBreakdown(
        r_format=r_format,
        r_acc=r_acc,
        r_tool_count=r_tool_count_val,
        r_tool_acc=r_tool_acc_val,
        r_tool=r_tool_val,
        total=total,
        m=m,
        matched_ious=matched,
        answer_correct=correct,
    )
