"""Reward engine and rollout orchestrator for zoom-in tool-calling RL."""

from .geometry import BBox, DegenerateBox, ImageRef, clamp_to_image, crop_region, iou, match_invocations
from .grpo import TrajectoryGroup, build_training_batch, group_advantages
from .protocol import (
    FormatVerdict,
    ToolInvocation,
    Trajectory,
    Turn,
    parse_turn,
    render_model_turn,
    render_system_prompt,
    render_tool_result,
    validate_format,
)
from .rewards import (
    RewardBreakdown,
    RewardConfig,
    tool_accuracy_reward,
    tool_count_reward,
    tool_reward,
    total_reward,
)
from .tasks import TaskInstance
from .verifiers import AnswerSpec, JudgeClient, JudgeConfig, extract_answer, judge_open_ended, verify_closed

__version__ = "0.1.0"
