"""Builders shared across test modules."""

from __future__ import annotations

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
    render_tool_result,
)
from zoomrl.geometry import PatchMeta
from zoomrl.tasks import TaskInstance
from zoomrl.verifiers import AnswerSpec


def write_page_image(path, size=(100, 100), color=(200, 200, 190)):
    img = Image.new("RGB", size, color)
    img.save(path, format="PNG")
    return str(path)


def make_instance(
    tmp_path,
    instance_id="page1:action_recognition:0",
    task="action_recognition",
    size=(100, 100),
    question="A character is marked Q. What is it doing? A) run B) sit C) jump D) fight",
    kind="multi_choice",
    choices=("run", "sit", "jump", "fight"),
    gold="B",
    gt_regions=((0, 0, 10, 10),),
    expected_tool_count=1,
    image_name="page.png",
):
    path = tmp_path / image_name
    if not path.exists():
        write_page_image(path, size=size)
    if kind == "multi_choice":
        spec = AnswerSpec(kind=kind, choices=tuple(choices), gold=gold)
    elif kind == "numerical":
        spec = AnswerSpec(kind=kind, gold=gold)
    else:
        spec = AnswerSpec(kind="open_ended", gold=gold)
    return TaskInstance(
        instance_id=instance_id,
        task=task,
        image=ImageRef(path=str(path), width=size[0], height=size[1]),
        question=question,
        answer_spec=spec,
        gt_regions=tuple(BBox.from_list(b) for b in gt_regions),
        expected_tool_count=expected_tool_count,
    )


def build_trajectory(inst, boxes=(), answer=None, reasoning="inspect the region"):
    """Well-formed trajectory: one executed zoom per box, then an answer turn."""
    turns: list[Turn] = []
    invocations: list[ToolInvocation] = []
    for i, coords in enumerate(boxes):
        box = BBox.from_list(list(coords)) if not isinstance(coords, BBox) else coords
        turns.append(Turn(role="model", text=render_model_turn(reasoning=reasoning, boxes=[box])))
        clamped = clamp_to_image(box, inst.image)
        status = STATUS_EXECUTED
        invocations.append(
            ToolInvocation(
                ordinal=i + 1,
                requested_box=box,
                executed_box=clamped,
                turn_index=i,
                status=status,
            )
        )
        meta = PatchMeta(box=clamped, patch_width=clamped.width, patch_height=clamped.height, scale=1.0)
        turns.append(render_tool_result(meta, patch_path="patch.png"))
    if answer is not None:
        turns.append(Turn(role="model", text=render_model_turn(reasoning="conclude", answer=answer)))
        return Trajectory(
            instance_id=inst.instance_id,
            turns=turns,
            invocations=invocations,
            final_answer=answer,
            terminal_reason=TERMINAL_ANSWERED,
        )
    return Trajectory(
        instance_id=inst.instance_id,
        turns=turns,
        invocations=invocations,
        final_answer=None,
        terminal_reason=TERMINAL_MAX_TURNS,
    )


def fixture_page(
    tmp_path,
    page_id="p1",
    n_panels=4,
    characters=(),
    dialogs=(),
    panel_size=100,
    cols=2,
):
    """Synthetic page annotation with a grid of panels.

    characters: tuples (identity_id, panel_index, action_label, depth_ordinal)
    dialogs:    tuples (panel_index, reading_order, ocr_text)
    """
    from zoomrl.benchgen import Character, Dialog, PageAnnotation, Panel

    rows = -(-n_panels // cols)
    width, height = cols * panel_size, rows * panel_size
    img_path = tmp_path / f"{page_id}.png"
    if not img_path.exists():
        write_page_image(img_path, (width, height))

    panels = []
    for i in range(n_panels):
        r, c = divmod(i, cols)
        x0, y0 = c * panel_size, r * panel_size
        panels.append(
            Panel(f"pnl{i}", BBox(x0 + 2, y0 + 2, x0 + panel_size - 2, y0 + panel_size - 2), i + 1)
        )

    chars = []
    per_panel: dict[int, int] = {}
    for j, (identity, p_idx, action, depth) in enumerate(characters):
        k = per_panel.get(p_idx, 0)
        per_panel[p_idx] = k + 1
        pb = panels[p_idx].bbox
        box = BBox(pb.x_min + 4 + k * 26, pb.y_min + 4, pb.x_min + 24 + k * 26, pb.y_min + 34)
        chars.append(Character(f"ch{j}", identity, panels[p_idx].panel_id, box, action, depth))

    dials = []
    for j, (p_idx, order, text) in enumerate(dialogs):
        pb = panels[p_idx].bbox
        box = BBox(pb.x_min + 6, pb.y_max - 26, pb.x_min + 46, pb.y_max - 6)
        dials.append(Dialog(f"dlg{j}", panels[p_idx].panel_id, box, order, text))

    page = PageAnnotation(
        page_id=page_id,
        image=ImageRef(str(img_path), width, height),
        panels=tuple(panels),
        characters=tuple(chars),
        dialogs=tuple(dials),
    )
    page.validate()
    return page


class StubQAClient:
    """Fixed QA pair per panel, with a call counter."""

    def __init__(self, pairs=None):
        self.calls = 0
        self.pairs = pairs

    def panel_qa(self, patch_path):
        from zoomrl.benchgen import QAPair

        self.calls += 1
        if self.pairs is not None:
            return self.pairs
        return [QAPair("What is happening in this panel?", "a synthetic scene")]


def box_with_iou(gt: BBox, target_iou_num: int, target_iou_den: int) -> BBox:
    """A box overlapping ``gt`` with IoU = num/den, for gt of width w:
    shrink the right edge. Requires gt wider than the shrink amount."""
    # For a box (x0,y0,x1,y1) shrunk to (x0,y0,x1-k,y1): IoU = (w-k)/w.
    w = gt.width
    k = w - (target_iou_num * w) // target_iou_den
    assert (w - k) * target_iou_den == target_iou_num * w, "IoU not exactly representable"
    return BBox(gt.x_min, gt.y_min, gt.x_max - k, gt.y_max)
