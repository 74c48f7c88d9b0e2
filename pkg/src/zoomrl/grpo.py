"""Group-relative scoring and training-batch export.

Rewards for the G sampled trajectories of one prompt are standardized into
advantages (group mean/std, population std, zero-guarded), then exported as
a deterministic JSONL batch an external trainer can ingest. No gradients,
no KL math here: the trainer-side constants travel as config metadata.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .protocol import Trajectory
from .rewards import RewardBreakdown

STD_FLOOR = 1e-12


class GroupTooSmall(Exception):
    """Advantage normalization needs at least two trajectories."""


class IncompleteGroup(Exception):
    """A group reached batch export without full rewards/advantages."""


@dataclass
class TrajectoryGroup:
    """G trajectories for one prompt, with rewards and advantages once scored."""

    prompt_id: str
    trajectories: list[Trajectory]
    rewards: list[float] | None = None
    advantages: list[float] | None = None
    breakdowns: list[RewardBreakdown] | None = None

    @property
    def size(self) -> int:
        return len(self.trajectories)

    def scored(self) -> bool:
        return (
            self.rewards is not None
            and self.advantages is not None
            and len(self.rewards) == self.size
            and len(self.advantages) == self.size
            and all(r is not None for r in self.rewards)
        )


def group_advantages(rewards: Sequence[float]) -> list[float]:
    """Standardize rewards within one group: a_i = (r_i - mean) / std_pop.

    All-equal groups (std below the floor) get all-zero advantages instead
    of NaN. Raises GroupTooSmall for fewer than two rewards.
    """
    g = len(rewards)
    if g < 2:
        raise GroupTooSmall(f"group size {g} < 2")
    mean = sum(rewards) / g
    var = sum((r - mean) ** 2 for r in rewards) / g
    std = math.sqrt(var)
    if std < STD_FLOOR:
        return [0.0] * g
    return [(r - mean) / std for r in rewards]


@dataclass(frozen=True)
class TrainerMeta:
    """Trainer-side constants carried through into every batch record."""

    run_id: str = "run"
    kl_coefficient: float = 0.04
    max_response_tokens: int = 4096
    tool_response_tokens: int = 4096 * 5

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "kl_coefficient": self.kl_coefficient,
            "max_response_tokens": self.max_response_tokens,
            "tool_response_tokens": self.tool_response_tokens,
        }


def build_training_batch(
    groups: Sequence[TrajectoryGroup],
    run_meta: TrainerMeta | dict,
    out_path: str | Path,
) -> Path:
    """Write one JSONL record per trajectory, deterministically ordered.

    Record order is (prompt_id, trajectory index); patches appear by file
    reference inside the message sequence. Identical inputs produce a
    byte-identical file.
    """
    meta = run_meta.to_dict() if isinstance(run_meta, TrainerMeta) else dict(run_meta)
    out = Path(out_path)
    lines: list[str] = []
    for group in sorted(groups, key=lambda g: g.prompt_id):
        if not group.scored():
            raise IncompleteGroup(f"group {group.prompt_id!r} is missing rewards or advantages")
        breakdowns = group.breakdowns or [None] * group.size
        if len(breakdowns) != group.size:
            raise IncompleteGroup(f"group {group.prompt_id!r} has mismatched breakdowns")
        for i, traj in enumerate(group.trajectories):
            record = {
                "prompt_id": group.prompt_id,
                "index": i,
                "trajectory": traj.to_dict(),
                "reward": group.rewards[i],
                "breakdown": breakdowns[i].to_dict() if breakdowns[i] is not None else None,
                "advantage": group.advantages[i],
                "config": meta,
            }
            lines.append(json.dumps(record, sort_keys=True, ensure_ascii=False))
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return out


def read_training_batch(path: str | Path) -> list[dict]:
    """Load a batch file back into records (inverse of build_training_batch)."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
