"""Compile comic-page annotations into the seven VQA task formats.

Input is one JSON document per page (panels, characters, dialogs, each with
boxes and ordering metadata). Generators are deterministic functions of
(annotation, seed, corpus label pool): rerunning with equal inputs yields
byte-identical instances and overlay images. Marker overlays are written
beside the originals with a ``.marked.png`` suffix.

Tasks and their answer shapes:

    panel_understanding       open-ended (externally generated QA pairs)
    action_recognition        4-way multiple choice
    depth_comparison          2-way multiple choice
    dialog_reordering         2-way multiple choice, no target regions
    panel_reordering          2-way multiple choice, no target regions
    character_identification  4-way multiple choice
    character_counting        numerical (count of appearances)
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import random
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import httpx
from PIL import Image, ImageDraw, ImageFont

from .geometry import BBox, ImageRef
from .tasks import (
    TASK_ACTION_RECOGNITION,
    TASK_CHARACTER_COUNTING,
    TASK_CHARACTER_IDENTIFICATION,
    TASK_DEPTH_COMPARISON,
    TASK_DIALOG_REORDERING,
    TASK_PANEL_REORDERING,
    TASK_PANEL_UNDERSTANDING,
    TASK_ORDER,
    TaskInstance,
)
from .verifiers import AnswerSpec, JsonlCache


class AnnotationError(Exception):
    """Page annotation violates the input schema."""


class InsufficientDistractors(Exception):
    """Corpus label pool too small to build a 4-way choice set."""


class InsufficientCandidates(Exception):
    """Not enough cross-panel characters for an identification line-up."""


class GeneratorUnavailable(Exception):
    """External QA-generation endpoint unreachable."""


# Marker palette by role: the query entity is red, candidates follow in a
# fixed order so letter tags map to stable colors.
QUERY_COLOR = (220, 30, 30)
CANDIDATE_COLORS = ((40, 70, 220), (20, 150, 60), (240, 140, 20), (140, 40, 170))
MARKER_STROKE = 3

TEMPLATE_VERSION = "q-templates-v1"


@dataclass(frozen=True)
class Panel:
    panel_id: str
    bbox: BBox
    reading_order: int


@dataclass(frozen=True)
class Character:
    instance_id: str
    identity_id: str
    panel_id: str
    bbox: BBox
    action_label: str | None
    depth_ordinal: int


@dataclass(frozen=True)
class Dialog:
    dialog_id: str
    panel_id: str
    bbox: BBox
    reading_order: int
    ocr_text: str


@dataclass(frozen=True)
class PageAnnotation:
    page_id: str
    image: ImageRef
    panels: tuple[Panel, ...]
    characters: tuple[Character, ...]
    dialogs: tuple[Dialog, ...]

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | Path | None = None) -> "PageAnnotation":
        try:
            img = d["image"]
            path = img["path"]
            if base_dir is not None and not os.path.isabs(path):
                path = str(Path(base_dir) / path)
            image = ImageRef(path=path, width=int(img["width"]), height=int(img["height"]))
            panels = tuple(
                Panel(p["panel_id"], BBox.from_list(p["bbox"]), int(p["reading_order"]))
                for p in d.get("panels", [])
            )
            characters = tuple(
                Character(
                    c["instance_id"],
                    c["identity_id"],
                    c["panel_id"],
                    BBox.from_list(c["bbox"]),
                    c.get("action_label"),
                    int(c["depth_ordinal"]),
                )
                for c in d.get("characters", [])
            )
            dialogs = tuple(
                Dialog(
                    g["dialog_id"],
                    g["panel_id"],
                    BBox.from_list(g["bbox"]),
                    int(g["reading_order"]),
                    g["ocr_text"],
                )
                for g in d.get("dialogs", [])
            )
            page_id = str(d.get("page_id") or Path(path).stem).replace(":", "_")
        except (KeyError, TypeError, ValueError) as exc:
            raise AnnotationError(f"malformed page annotation: {exc}") from exc
        page = cls(page_id=page_id, image=image, panels=panels, characters=characters, dialogs=dialogs)
        page.validate()
        return page

    def validate(self) -> None:
        orders = sorted(p.reading_order for p in self.panels)
        if orders != list(range(1, len(self.panels) + 1)):
            raise AnnotationError(f"page {self.page_id}: panel reading_order is not 1..N")
        dorders = sorted(g.reading_order for g in self.dialogs)
        if dorders != list(range(1, len(self.dialogs) + 1)):
            raise AnnotationError(f"page {self.page_id}: dialog reading_order is not 1..N")
        panel_ids = {p.panel_id for p in self.panels}
        for c in self.characters:
            if c.panel_id not in panel_ids:
                raise AnnotationError(f"page {self.page_id}: character {c.instance_id} references unknown panel")
            if c.depth_ordinal < 1:
                raise AnnotationError(f"page {self.page_id}: depth_ordinal must be >= 1")
            if not c.bbox.is_valid():
                raise AnnotationError(f"page {self.page_id}: character {c.instance_id} has invalid bbox")
        for g in self.dialogs:
            if g.panel_id not in panel_ids:
                raise AnnotationError(f"page {self.page_id}: dialog {g.dialog_id} references unknown panel")
        for p in self.panels:
            if not p.bbox.is_valid():
                raise AnnotationError(f"page {self.page_id}: panel {p.panel_id} has invalid bbox")

    def to_dict(self) -> dict:
        return {
            "page_id": self.page_id,
            "image": {"path": self.image.path, "width": self.image.width, "height": self.image.height},
            "panels": [
                {"panel_id": p.panel_id, "bbox": p.bbox.to_list(), "reading_order": p.reading_order}
                for p in self.panels
            ],
            "characters": [
                {
                    "instance_id": c.instance_id,
                    "identity_id": c.identity_id,
                    "panel_id": c.panel_id,
                    "bbox": c.bbox.to_list(),
                    "action_label": c.action_label,
                    "depth_ordinal": c.depth_ordinal,
                }
                for c in self.characters
            ],
            "dialogs": [
                {
                    "dialog_id": g.dialog_id,
                    "panel_id": g.panel_id,
                    "bbox": g.bbox.to_list(),
                    "reading_order": g.reading_order,
                    "ocr_text": g.ocr_text,
                }
                for g in self.dialogs
            ],
        }

    def panels_in_order(self) -> list[Panel]:
        return sorted(self.panels, key=lambda p: p.reading_order)

    def characters_in_panel(self, panel_id: str) -> list[Character]:
        return [c for c in self.characters if c.panel_id == panel_id]


def load_page(path: str | Path) -> PageAnnotation:
    with open(path, "r", encoding="utf-8") as fh:
        return PageAnnotation.from_dict(json.load(fh), base_dir=Path(path).parent)


def _rng(seed: int, *parts: str) -> random.Random:
    """Process-stable RNG derivation (never relies on salted hash())."""
    h = hashlib.sha256(str(seed).encode())
    for p in parts:
        h.update(b"\x1f" + p.encode())
    return random.Random(int.from_bytes(h.digest()[:8], "big"))


def _letter(i: int) -> str:
    return chr(ord("A") + i)


TAG_HEIGHT = 14


def _tag_origin(box: BBox, width: int, height: int) -> tuple[int, int]:
    # Prefer above, then below, then beside: the tag must stay off the
    # box interior so markers occlude nothing beyond the stroke.
    if box.y_min >= TAG_HEIGHT:
        return (box.x_min + 2, box.y_min - TAG_HEIGHT)
    if box.y_max + TAG_HEIGHT <= height:
        return (box.x_min + 2, box.y_max + 2)
    if box.x_max + TAG_HEIGHT <= width:
        return (box.x_max + 3, max(0, box.y_min))
    return (max(0, box.x_min - TAG_HEIGHT), max(0, box.y_min))


def _draw_marker(
    draw: ImageDraw.ImageDraw, box: BBox, color: tuple, tag: str, width: int, height: int
) -> None:
    draw.rectangle(box.to_list(), outline=color, width=MARKER_STROKE)
    font = ImageFont.load_default()
    draw.text(_tag_origin(box, width, height), tag, fill=color, font=font)


def _overlay_path(image: ImageRef, instance_id: str) -> str:
    p = Path(image.path)
    safe = instance_id.replace(":", "_").replace("/", "_")
    return str(p.with_name(f"{p.stem}.{safe}.marked.png"))


def _write_overlay(image: ImageRef, markers: list[tuple[BBox, tuple, str]], instance_id: str) -> ImageRef:
    out = _overlay_path(image, instance_id)
    with Image.open(image.path) as page:
        canvas = page.convert("RGB")
        draw = ImageDraw.Draw(canvas)
        for box, color, tag in markers:
            _draw_marker(draw, box, color, tag, image.width, image.height)
        canvas.save(out, format="PNG")
    return ImageRef(path=out, width=image.width, height=image.height)


def _choice_block(choices: Sequence[str]) -> str:
    return " ".join(f"{_letter(i)}) {c}" for i, c in enumerate(choices))


def gen_action_recognition(
    page: PageAnnotation, seed: int, label_pool: Sequence[str]
) -> list[TaskInstance]:
    """One 4-choice instance per character that carries an action label."""
    out: list[TaskInstance] = []
    labeled = [c for c in page.characters if c.action_label]
    for k, char in enumerate(labeled):
        rng = _rng(seed, page.page_id, TASK_ACTION_RECOGNITION, char.instance_id)
        gold = char.action_label
        pool = sorted(set(label_pool) - {gold})
        if len(pool) < 3:
            raise InsufficientDistractors(
                f"need 3 distractor labels besides {gold!r}, pool has {len(pool)}"
            )
        choices = [gold] + rng.sample(pool, 3)
        rng.shuffle(choices)
        gold_letter = _letter(choices.index(gold))
        inst_id = f"{page.page_id}:{TASK_ACTION_RECOGNITION}:{k}"
        image = _write_overlay(page.image, [(char.bbox, QUERY_COLOR, "Q")], inst_id)
        question = (
            "A character on the page is marked with a red box labeled Q. "
            f"What is this character doing? {_choice_block(choices)}"
        )
        out.append(
            TaskInstance(
                instance_id=inst_id,
                task=TASK_ACTION_RECOGNITION,
                image=image,
                question=question,
                answer_spec=AnswerSpec(kind="multi_choice", choices=tuple(choices), gold=gold_letter),
                gt_regions=(char.bbox,),
                expected_tool_count=1,
            )
        )
    return out


def gen_depth_comparison(page: PageAnnotation, seed: int) -> list[TaskInstance]:
    """One binary instance per panel holding characters at distinct depths."""
    out: list[TaskInstance] = []
    for panel in page.panels_in_order():
        chars = page.characters_in_panel(panel.panel_id)
        pairs = [
            (a, b)
            for i, a in enumerate(chars)
            for b in chars[i + 1 :]
            if a.depth_ordinal != b.depth_ordinal
        ]
        if not pairs:
            continue
        rng = _rng(seed, page.page_id, TASK_DEPTH_COMPARISON, panel.panel_id)
        pair = list(rng.choice(pairs))
        rng.shuffle(pair)  # tag letters follow shuffle order: position 0 gets "A"
        first_char, second_char = pair
        markers = [
            (first_char.bbox, CANDIDATE_COLORS[0], "A"),
            (second_char.bbox, CANDIDATE_COLORS[1], "B"),
        ]
        nearer = 0 if first_char.depth_ordinal < second_char.depth_ordinal else 1
        choices = ("The character marked A", "The character marked B")
        inst_id = f"{page.page_id}:{TASK_DEPTH_COMPARISON}:{panel.panel_id}"
        image = _write_overlay(page.image, markers, inst_id)
        question = (
            "Two characters in one panel are marked A (blue box) and B (green box). "
            f"Which one is closer to the viewer? {_choice_block(choices)}"
        )
        out.append(
            TaskInstance(
                instance_id=inst_id,
                task=TASK_DEPTH_COMPARISON,
                image=image,
                question=question,
                answer_spec=AnswerSpec(kind="multi_choice", choices=choices, gold=_letter(nearer)),
                gt_regions=(first_char.bbox, second_char.bbox),
                expected_tool_count=1,
            )
        )
    return out


def gen_character_identification(page: PageAnnotation, seed: int) -> list[TaskInstance]:
    """Line-up task: which of four marked candidates is the query character?"""
    panels_with_chars = {c.panel_id for c in page.characters}
    if len(panels_with_chars) < 2:
        return []
    out: list[TaskInstance] = []
    identities: dict[str, list[Character]] = {}
    for c in page.characters:
        identities.setdefault(c.identity_id, []).append(c)
    for k, (identity, appearances) in enumerate(sorted(identities.items())):
        cross = [
            c for c in appearances[1:] if c.panel_id != appearances[0].panel_id
        ]
        if not cross:
            continue
        rng = _rng(seed, page.page_id, TASK_CHARACTER_IDENTIFICATION, identity)
        query = appearances[0]
        gold_char = rng.choice(cross)
        distractor_pool = [
            c
            for c in page.characters
            if c.identity_id != identity and c.panel_id != query.panel_id
        ]
        if len(distractor_pool) < 3:
            raise InsufficientCandidates(
                f"page {page.page_id}: identity {identity} has only "
                f"{len(distractor_pool)} cross-panel distractors, need 3"
            )
        candidates = [gold_char] + rng.sample(distractor_pool, 3)
        rng.shuffle(candidates)
        gold_letter = _letter(candidates.index(gold_char))
        markers = [(query.bbox, QUERY_COLOR, "Q")]
        for i, cand in enumerate(candidates):
            markers.append((cand.bbox, CANDIDATE_COLORS[i], _letter(i)))
        choices = tuple(f"The character marked {_letter(i)}" for i in range(4))
        inst_id = f"{page.page_id}:{TASK_CHARACTER_IDENTIFICATION}:{k}"
        image = _write_overlay(page.image, markers, inst_id)
        question = (
            "One character is marked with a red box labeled Q. Four other characters "
            "are marked A, B, C, D in other panels. Which marked character is the "
            f"same character as Q? {_choice_block(choices)}"
        )
        out.append(
            TaskInstance(
                instance_id=inst_id,
                task=TASK_CHARACTER_IDENTIFICATION,
                image=image,
                question=question,
                answer_spec=AnswerSpec(kind="multi_choice", choices=choices, gold=gold_letter),
                gt_regions=(query.bbox, gold_char.bbox),
                expected_tool_count=2,
            )
        )
    return out


def gen_character_counting(page: PageAnnotation, seed: int) -> list[TaskInstance]:
    """Numerical task: count all appearances of the marked identity."""
    out: list[TaskInstance] = []
    identities: dict[str, list[Character]] = {}
    for c in page.characters:
        identities.setdefault(c.identity_id, []).append(c)
    k = 0
    for identity, appearances in sorted(identities.items()):
        if len(appearances) < 2:
            continue
        query = appearances[0]
        inst_id = f"{page.page_id}:{TASK_CHARACTER_COUNTING}:{k}"
        image = _write_overlay(page.image, [(query.bbox, QUERY_COLOR, "Q")], inst_id)
        question = (
            "One appearance of a character is marked with a red box labeled Q. "
            "How many times does this character appear on the whole page, "
            "including the marked appearance? Answer with an integer."
        )
        out.append(
            TaskInstance(
                instance_id=inst_id,
                task=TASK_CHARACTER_COUNTING,
                image=image,
                question=question,
                answer_spec=AnswerSpec(kind="numerical", gold=len(appearances)),
                gt_regions=tuple(c.bbox for c in appearances),
                expected_tool_count=len(appearances),
            )
        )
        k += 1
    return out


def _derangement(rng: random.Random, n: int) -> list[int]:
    idx = list(range(n))
    while True:
        perm = idx[:]
        rng.shuffle(perm)
        if all(perm[i] != i for i in range(n)):
            return perm


def gen_dialog_reordering(page: PageAnnotation, seed: int) -> list[TaskInstance]:
    """Binary choice between the true dialog order and a shuffled one."""
    if len(page.dialogs) < 3:
        return []
    rng = _rng(seed, page.page_id, TASK_DIALOG_REORDERING)
    ordered = sorted(page.dialogs, key=lambda g: g.reading_order)
    texts = [g.ocr_text for g in ordered]
    perm = _derangement(rng, len(texts))
    true_str = " -> ".join(texts)
    wrong_str = " -> ".join(texts[i] for i in perm)
    gold_first = rng.random() < 0.5
    choices = (true_str, wrong_str) if gold_first else (wrong_str, true_str)
    gold_letter = "A" if gold_first else "B"
    inst_id = f"{page.page_id}:{TASK_DIALOG_REORDERING}:0"
    question = (
        "The dialog balloons on this page were transcribed by OCR. Which ordering "
        f"matches the reading order of the story? {_choice_block(choices)}"
    )
    return [
        TaskInstance(
            instance_id=inst_id,
            task=TASK_DIALOG_REORDERING,
            image=page.image,
            question=question,
            answer_spec=AnswerSpec(kind="multi_choice", choices=choices, gold=gold_letter),
            gt_regions=(),
            expected_tool_count=0,
        )
    ]


def gen_panel_reordering(page: PageAnnotation, seed: int) -> list[TaskInstance]:
    """Remove one panel, show it beside the page, ask for its position."""
    n = len(page.panels)
    if n < 4:
        return []
    rng = _rng(seed, page.page_id, TASK_PANEL_REORDERING)
    removed = rng.choice(page.panels_in_order())
    true_pos = removed.reading_order
    wrong_options = [p for p in range(1, n + 1) if abs(p - true_pos) >= 2]
    wrong_pos = rng.choice(wrong_options)

    inst_id = f"{page.page_id}:{TASK_PANEL_REORDERING}:0"
    out_path = _overlay_path(page.image, inst_id)
    margin = 10
    with Image.open(page.image.path) as img:
        pageim = img.convert("RGB")
        panel_crop = pageim.crop(removed.bbox.to_list())
        draw = ImageDraw.Draw(pageim)
        draw.rectangle(removed.bbox.to_list(), fill=(255, 255, 255))
        canvas_w = page.image.width + margin + removed.bbox.width
        canvas_h = max(page.image.height, removed.bbox.height)
        canvas = Image.new("RGB", (canvas_w, canvas_h), (255, 255, 255))
        canvas.paste(pageim, (0, 0))
        canvas.paste(panel_crop, (page.image.width + margin, 0))
        canvas.save(out_path, format="PNG")
    image = ImageRef(path=out_path, width=canvas_w, height=canvas_h)

    gold_first = rng.random() < 0.5
    positions = (true_pos, wrong_pos) if gold_first else (wrong_pos, true_pos)
    choices = tuple(f"Position {p}" for p in positions)
    gold_letter = "A" if gold_first else "B"
    question = (
        "One panel was removed from the page (its area is blanked) and is shown "
        "to the right of the page. At which position in the page's reading order "
        f"does it belong? {_choice_block(choices)}"
    )
    return [
        TaskInstance(
            instance_id=inst_id,
            task=TASK_PANEL_REORDERING,
            image=image,
            question=question,
            answer_spec=AnswerSpec(kind="multi_choice", choices=choices, gold=gold_letter),
            gt_regions=(),
            expected_tool_count=0,
        )
    ]


@dataclass(frozen=True)
class QAPair:
    question: str
    answer: str


@dataclass(frozen=True)
class QAConfig:
    endpoint: str
    model_name: str = "qa-gen"
    prompt_template_id: str = "panel-qa-v1"
    timeout: float = 60.0
    cache_enabled: bool = True
    cache_path: str | None = None


class HttpQAClient:
    """Caption+QA generation over a chat-completions endpoint, cached by
    panel-image content so reruns replay offline."""

    def __init__(self, cfg: QAConfig, transport: httpx.BaseTransport | None = None):
        self.cfg = cfg
        self._http = httpx.Client(transport=transport, timeout=cfg.timeout)
        self._cache = JsonlCache(cfg.cache_path if cfg.cache_enabled else None)
        self.network_calls = 0

    def panel_qa(self, patch_path: str) -> list[QAPair]:
        with open(patch_path, "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        key = f"{self.cfg.prompt_template_id}:{digest}"
        cached = self._cache.get(key)
        if cached is not None:
            return [QAPair(q, a) for q, a in cached]
        with open(patch_path, "rb") as fh:
            b64 = base64.b64encode(fh.read()).decode("ascii")
        body = {
            "model": self.cfg.model_name,
            "messages": [
                {
                    "role": "system",
                    "content": "Write question-answer pairs about the comic panel. "
                    'Reply with a JSON array of {"question": ..., "answer": ...} objects.',
                },
                {
                    "role": "user",
                    "content": [
                        {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}}
                    ],
                },
            ],
            "temperature": 0,
        }
        try:
            resp = self._http.post(self.cfg.endpoint, json=body)
            resp.raise_for_status()
            text = resp.json()["choices"][0]["message"]["content"]
            pairs = json.loads(text)
            result = [[p["question"], p["answer"]] for p in pairs]
        except (httpx.HTTPError, KeyError, IndexError, TypeError, json.JSONDecodeError) as exc:
            raise GeneratorUnavailable(f"QA endpoint failed: {exc}") from exc
        self.network_calls += 1
        self._cache.put(key, result)
        return [QAPair(q, a) for q, a in result]


def gen_panel_understanding(
    page: PageAnnotation, positions: dict[str, str], qa_client
) -> list[TaskInstance]:
    """Open-ended instances: external QA pairs prefixed with panel positions.

    No markers are drawn; the panel is located only through the position
    text, so the instance image is the untouched page.
    """
    out: list[TaskInstance] = []
    k = 0
    for panel in page.panels_in_order():
        if panel.panel_id not in positions:
            raise AnnotationError(
                f"page {page.page_id}: no position description for panel {panel.panel_id}"
            )
        crop_path = _panel_crop_path(page, panel)
        for qa in qa_client.panel_qa(crop_path):
            question = f"{positions[panel.panel_id]} {qa.question}"
            out.append(
                TaskInstance(
                    instance_id=f"{page.page_id}:{TASK_PANEL_UNDERSTANDING}:{k}",
                    task=TASK_PANEL_UNDERSTANDING,
                    image=page.image,
                    question=question,
                    answer_spec=AnswerSpec(kind="open_ended", gold=qa.answer),
                    gt_regions=(panel.bbox,),
                    expected_tool_count=1,
                )
            )
            k += 1
    return out


def _panel_crop_path(page: PageAnnotation, panel: Panel) -> str:
    p = Path(page.image.path)
    out = p.with_name(f"{p.stem}.{panel.panel_id}.panel.png")
    if not out.exists():
        with Image.open(page.image.path) as img:
            img.crop(panel.bbox.to_list()).save(out, format="PNG")
    return str(out)


def split_dataset(
    instances: Sequence[TaskInstance],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> list[TaskInstance]:
    """Assign page-level splits: every instance of a page lands together.

    Pages are ordered by a seeded hash and sliced at the cumulative ratio
    boundaries, so counts are exact and assignment is reproducible.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    pages = sorted({inst.instance_id.split(":")[0] for inst in instances})
    ranked = sorted(
        pages, key=lambda p: hashlib.sha256(f"{seed}:{p}".encode()).hexdigest()
    )
    n = len(ranked)
    b1 = int(round(ratios[0] * n))
    b2 = int(round((ratios[0] + ratios[1]) * n))
    assignment = {}
    for i, p in enumerate(ranked):
        assignment[p] = "train" if i < b1 else ("val" if i < b2 else "test")
    return [replace(inst, split=assignment[inst.instance_id.split(":")[0]]) for inst in instances]


def generate_page(
    page: PageAnnotation,
    seed: int,
    label_pool: Sequence[str],
    positions: dict[str, str] | None = None,
    qa_client=None,
) -> list[TaskInstance]:
    """All task instances for one page, in canonical task order."""
    instances: list[TaskInstance] = []
    if qa_client is not None and positions is not None:
        instances.extend(gen_panel_understanding(page, positions, qa_client))
    instances.extend(gen_action_recognition(page, seed, label_pool))
    instances.extend(gen_depth_comparison(page, seed))
    instances.extend(gen_dialog_reordering(page, seed))
    instances.extend(gen_panel_reordering(page, seed))
    instances.extend(gen_character_identification(page, seed))
    instances.extend(gen_character_counting(page, seed))
    return instances


def dataset_stats(instances: Sequence[TaskInstance]) -> dict:
    """Per-task counts and choice arity, mirroring the benchmark summary."""
    stats: dict = {"tasks": {}, "total": len(instances)}
    for task in TASK_ORDER:
        insts = [i for i in instances if i.task == task]
        if not insts:
            continue
        kinds = {i.answer_spec.kind for i in insts}
        kind = kinds.pop() if len(kinds) == 1 else "mixed"
        n_choices = None
        if kind == "multi_choice":
            n_choices = len(insts[0].answer_spec.choices or ())
        stats["tasks"][task] = {"type": kind, "choices": n_choices, "count": len(insts)}
    return stats


def generate_dataset(
    pages: Sequence[PageAnnotation],
    out_dir: str | Path,
    seed: int = 0,
    positions: dict[str, dict[str, str]] | None = None,
    qa_client=None,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> tuple[Path, Path]:
    """Compile pages into dataset.jsonl + stats.json under ``out_dir``."""
    label_pool = sorted({c.action_label for p in pages for c in p.characters if c.action_label})
    instances: list[TaskInstance] = []
    for page in pages:
        page_positions = (positions or {}).get(page.page_id)
        instances.extend(
            generate_page(page, seed, label_pool, positions=page_positions, qa_client=qa_client)
        )
    instances = split_dataset(instances, ratios=ratios, seed=seed)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset_path = out / "dataset.jsonl"
    with open(dataset_path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")
    stats_path = out / "stats.json"
    with open(stats_path, "w", encoding="utf-8") as fh:
        json.dump(dataset_stats(instances), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return dataset_path, stats_path


def load_dataset(path: str | Path, split: str | None = None) -> list[TaskInstance]:
    """Read a dataset JSONL, optionally filtered to one split."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            inst = TaskInstance.from_dict(json.loads(line))
            if split is None or inst.split == split:
                out.append(inst)
    return out
