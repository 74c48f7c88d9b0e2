"""Wire-format fixture builders (no client-side reward math involved)."""

from __future__ import annotations

import random

from PIL import Image

from zoomrl.geometry import BBox, ImageRef, clamp_to_image
from zoomrl.protocol import (
    STATUS_EXECUTED,
    TERMINAL_ANSWERED,
    TERMINAL_MAX_TURNS,
    ToolInvocation,
    Trajectory,
    Turn,
    render_model_turn,
)
from zoomrl.tasks import TaskInstance
from zoomrl.verifiers import AnswerSpec


def make_instance_dict(tmp_path, name="page.png", gt_regions=((0, 0, 10, 10),), size=(1000, 100)):
    path = tmp_path / name
    if not path.exists():
        Image.new("RGB", size, (210, 205, 200)).save(path, format="PNG")
    inst = TaskInstance(
        instance_id=f"{name}:action_recognition:0",
        task="action_recognition",
        image=ImageRef(str(path), size[0], size[1]),
        question="What is the marked character doing? A) run B) sit C) jump D) fight",
        answer_spec=AnswerSpec(kind="multi_choice", choices=("run", "sit", "jump", "fight"), gold="B"),
        gt_regions=tuple(BBox.from_list(list(b)) for b in gt_regions),
        expected_tool_count=max(1, len(gt_regions)),
    )
    return inst.to_dict()


def make_trajectory_dict(instance: dict, boxes=(), answer=None):
    img = ImageRef(instance["image"]["path"], instance["image"]["width"], instance["image"]["height"])
    turns = []
    invocations = []
    for i, coords in enumerate(boxes):
        box = BBox.from_list(list(coords))
        turns.append(Turn(role="model", text=render_model_turn(reasoning="look", boxes=[box])))
        clamped = clamp_to_image(box, img)
        invocations.append(ToolInvocation(i + 1, box, clamped, i, STATUS_EXECUTED))
        turns.append(Turn(role="tool", text="Zoomed region."))
    final = None
    terminal = TERMINAL_MAX_TURNS
    if answer is not None:
        turns.append(Turn(role="model", text=render_model_turn(reasoning="done", answer=answer)))
        final = answer
        terminal = TERMINAL_ANSWERED
    return Trajectory(
        instance_id=instance["instance_id"],
        turns=turns,
        invocations=invocations,
        final_answer=final,
        terminal_reason=terminal,
    ).to_dict()


def random_trajectory_dict(rng: random.Random, instance: dict):
    n_regions = len(instance["gt_regions"])
    m = rng.randint(0, 3)
    boxes = []
    for j in range(m):
        base = 100 * (j % max(1, n_regions))
        x = base + rng.randint(0, 40)
        boxes.append((x, 0, x + rng.randint(5, 50), rng.randint(5, 50)))
    answer = rng.choice(["B", "A", None])
    return make_trajectory_dict(instance, boxes=boxes, answer=answer)
