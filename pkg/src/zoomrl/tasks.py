"""Task instances: the unit of work rollouts run against and rewards score."""

from __future__ import annotations

from dataclasses import dataclass, field

from .geometry import BBox, ImageRef
from .verifiers import AnswerSpec

TASK_PANEL_UNDERSTANDING = "panel_understanding"
TASK_ACTION_RECOGNITION = "action_recognition"
TASK_DEPTH_COMPARISON = "depth_comparison"
TASK_DIALOG_REORDERING = "dialog_reordering"
TASK_PANEL_REORDERING = "panel_reordering"
TASK_CHARACTER_IDENTIFICATION = "character_identification"
TASK_CHARACTER_COUNTING = "character_counting"

# Canonical reporting order for tables.
TASK_ORDER = (
    TASK_PANEL_UNDERSTANDING,
    TASK_ACTION_RECOGNITION,
    TASK_DEPTH_COMPARISON,
    TASK_DIALOG_REORDERING,
    TASK_PANEL_REORDERING,
    TASK_CHARACTER_IDENTIFICATION,
    TASK_CHARACTER_COUNTING,
)

# The two reordering tasks have no relevant region, hence no tool targets.
REGION_FREE_TASKS = (TASK_DIALOG_REORDERING, TASK_PANEL_REORDERING)


@dataclass(frozen=True)
class TaskInstance:
    """One VQA item: image, question, answer spec, and tool-usage targets."""

    instance_id: str
    task: str
    image: ImageRef
    question: str
    answer_spec: AnswerSpec
    gt_regions: tuple[BBox, ...] = ()
    expected_tool_count: int = 0
    split: str = "train"

    def __post_init__(self) -> None:
        if self.task in REGION_FREE_TASKS and self.gt_regions:
            raise ValueError(f"{self.task} instances must have empty gt_regions")

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "task": self.task,
            "image": {"path": self.image.path, "width": self.image.width, "height": self.image.height},
            "question": self.question,
            "answer_spec": self.answer_spec.to_dict(),
            "gt_regions": [b.to_list() for b in self.gt_regions],
            "expected_tool_count": self.expected_tool_count,
            "split": self.split,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskInstance":
        img = d["image"]
        return cls(
            instance_id=d["instance_id"],
            task=d["task"],
            image=ImageRef(path=img["path"], width=int(img["width"]), height=int(img["height"])),
            question=d["question"],
            answer_spec=AnswerSpec.from_dict(d["answer_spec"]),
            gt_regions=tuple(BBox.from_list(b) for b in d.get("gt_regions", [])),
            expected_tool_count=int(d.get("expected_tool_count", 0)),
            split=d.get("split", "train"),
        )


def default_expected_tool_count(task: str, gt_regions: tuple[BBox, ...] | list[BBox]) -> int:
    """Region cardinality, clamped to at least 1; zero for region-free tasks."""
    if task in REGION_FREE_TASKS:
        return 0
    return max(1, len(gt_regions))
