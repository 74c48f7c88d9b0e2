"""Grammar for the multi-turn zoom-in conversation.

A model turn is, in order: an optional ``<think>...</think>`` block, then
either one or more ``<tool_call>...</tool_call>`` blocks or one
``<answer>...</answer>`` block. Tool-call payloads are JSON:

    {"name": "zoom_in", "arguments": {"bbox_2d": [x_min, y_min, x_max, y_max]}}

Tag matching is case-sensitive; whitespace between blocks is ignored.
Parsing is total: any deviation from the grammar is reported as a violation
code, never an exception. This module also renders the fixed-text messages
(tool results, system prompts) that flow back to the policy, and judges
whole-trajectory structural validity for the format reward.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .geometry import BBox, PatchMeta
from .verifiers import AnswerSpec

# Violation codes. EMPTY_ANSWER through UNCLOSED_TAG are per-turn grammar
# breaches; NO_ANSWER also marks trajectories that never answered. STRAY_TEXT
# flags non-whitespace outside recognized blocks, MISPLACED_BLOCK flags
# blocks out of the think/tool_call/answer order.
NO_ANSWER = "NO_ANSWER"
WRONG_ARITY = "WRONG_ARITY"
BAD_JSON = "BAD_JSON"
UNKNOWN_TOOL = "UNKNOWN_TOOL"
MIXED_TERMINAL = "MIXED_TERMINAL"
MULTI_CALL = "MULTI_CALL"
UNCLOSED_TAG = "UNCLOSED_TAG"
EMPTY_ANSWER = "EMPTY_ANSWER"
STRAY_TEXT = "STRAY_TEXT"
MISPLACED_BLOCK = "MISPLACED_BLOCK"

TOOL_NAME = "zoom_in"
BOX_ARG = "bbox_2d"

THINK_OPEN, THINK_CLOSE = "<think>", "</think>"
CALL_OPEN, CALL_CLOSE = "<tool_call>", "</tool_call>"
ANSWER_OPEN, ANSWER_CLOSE = "<answer>", "</answer>"

_TAGS = (
    ("think", THINK_OPEN, THINK_CLOSE),
    ("tool_call", CALL_OPEN, CALL_CLOSE),
    ("answer", ANSWER_OPEN, ANSWER_CLOSE),
)

# Fixed tool-role texts. Byte-stable so replays are deterministic.
ZOOM_FAILED_TEXT = "Zoom-in failed: region outside image."
TOOL_REFUSAL_TEXT = "Zoom-in limit reached. Answer with the information you already have."
INVALID_TURN_TEXT = (
    "No valid tool call or answer detected. Reply with a <tool_call> or an <answer>."
)

# Invocation statuses.
STATUS_EXECUTED = "executed"
STATUS_CLAMPED = "clamped"
STATUS_DEGENERATE = "degenerate"
STATUS_MALFORMED = "malformed"
STATUS_REFUSED = "refused"

TERMINAL_ANSWERED = "answered"
TERMINAL_MAX_TURNS = "max_turns"
TERMINAL_CONTEXT_BUDGET = "context_budget"
TERMINAL_MALFORMED = "malformed"


@dataclass(frozen=True)
class RawToolCall:
    """One tool-call block as emitted by the model, before execution."""

    name: str
    box: BBox | None
    error: str | None = None  # violation code when the block was rejected

    @property
    def accepted(self) -> bool:
        return self.error is None


@dataclass
class ParsedTurn:
    reasoning: str
    tool_calls: list[RawToolCall]
    answer: str | None
    violations: list[str]

    @property
    def accepted_calls(self) -> list[RawToolCall]:
        return [c for c in self.tool_calls if c.accepted]


@dataclass(frozen=True)
class PatchRef:
    """A crop in the message stream, referenced by file path."""

    path: str
    box: BBox
    scale: float

    def to_dict(self) -> dict:
        return {"path": self.path, "box": self.box.to_list(), "scale": self.scale}

    @classmethod
    def from_dict(cls, d: dict) -> "PatchRef":
        return cls(path=d["path"], box=BBox.from_list(d["box"]), scale=float(d["scale"]))


@dataclass(frozen=True)
class Turn:
    role: str  # "model" | "tool"
    text: str
    patch: PatchRef | None = None

    def to_dict(self) -> dict:
        d: dict = {"role": self.role, "text": self.text}
        if self.patch is not None:
            d["patch"] = self.patch.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Turn":
        patch = PatchRef.from_dict(d["patch"]) if d.get("patch") else None
        return cls(role=d["role"], text=d["text"], patch=patch)


@dataclass(frozen=True)
class ToolInvocation:
    """One zoom-in attempt within a trajectory.

    ``requested_box`` is what the model asked for (None when the block never
    parsed); ``executed_box`` is the clamped box actually cropped (None for
    degenerate, malformed, and budget-refused attempts). Ordinals are
    contiguous from 1 within a trajectory.
    """

    ordinal: int
    requested_box: BBox | None
    executed_box: BBox | None
    turn_index: int
    status: str

    def to_dict(self) -> dict:
        return {
            "ordinal": self.ordinal,
            "requested_box": self.requested_box.to_list() if self.requested_box else None,
            "executed_box": self.executed_box.to_list() if self.executed_box else None,
            "turn_index": self.turn_index,
            "status": self.status,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToolInvocation":
        return cls(
            ordinal=int(d["ordinal"]),
            requested_box=BBox.from_list(d["requested_box"]) if d.get("requested_box") else None,
            executed_box=BBox.from_list(d["executed_box"]) if d.get("executed_box") else None,
            turn_index=int(d["turn_index"]),
            status=d["status"],
        )


@dataclass
class Trajectory:
    """One complete multi-turn interaction with a task instance."""

    instance_id: str
    turns: list[Turn] = field(default_factory=list)
    invocations: list[ToolInvocation] = field(default_factory=list)
    final_answer: str | None = None
    terminal_reason: str = TERMINAL_MALFORMED

    @property
    def m(self) -> int:
        return len(self.invocations)

    def model_turns(self) -> list[Turn]:
        return [t for t in self.turns if t.role == "model"]

    def fingerprint(self) -> str:
        """Content hash identifying this trajectory across reruns."""
        h = hashlib.sha256()
        h.update(self.instance_id.encode())
        for t in self.turns:
            h.update(b"\x1f" + t.role.encode() + b"\x1e" + t.text.encode())
        h.update(b"\x1f" + (self.final_answer or "").encode())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "turns": [t.to_dict() for t in self.turns],
            "invocations": [inv.to_dict() for inv in self.invocations],
            "final_answer": self.final_answer,
            "terminal_reason": self.terminal_reason,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls(
            instance_id=d["instance_id"],
            turns=[Turn.from_dict(t) for t in d.get("turns", [])],
            invocations=[ToolInvocation.from_dict(i) for i in d.get("invocations", [])],
            final_answer=d.get("final_answer"),
            terminal_reason=d.get("terminal_reason", TERMINAL_MALFORMED),
        )


@dataclass(frozen=True)
class FormatVerdict:
    well_formed: bool
    violations: tuple[str, ...]


def _add(violations: list[str], code: str) -> None:
    if code not in violations:
        violations.append(code)


def _parse_call_payload(payload: str) -> RawToolCall:
    try:
        obj = json.loads(payload)
    except (json.JSONDecodeError, RecursionError):
        return RawToolCall(name="", box=None, error=BAD_JSON)
    if not isinstance(obj, dict) or "name" not in obj or "arguments" not in obj:
        return RawToolCall(name="", box=None, error=BAD_JSON)
    name = obj["name"]
    args = obj["arguments"]
    if not isinstance(name, str) or not isinstance(args, dict):
        return RawToolCall(name=str(name), box=None, error=BAD_JSON)
    if name != TOOL_NAME:
        return RawToolCall(name=name, box=None, error=UNKNOWN_TOOL)
    coords = args.get(BOX_ARG)
    if not isinstance(coords, list) or len(coords) != 4:
        return RawToolCall(name=name, box=None, error=WRONG_ARITY)
    ints: list[int] = []
    for v in coords:
        if isinstance(v, bool):
            return RawToolCall(name=name, box=None, error=WRONG_ARITY)
        if isinstance(v, int):
            ints.append(v)
        elif isinstance(v, float) and v.is_integer():
            ints.append(int(v))
        else:
            return RawToolCall(name=name, box=None, error=WRONG_ARITY)
    return RawToolCall(name=name, box=BBox(*ints))


def parse_turn(text: str) -> ParsedTurn:
    """Parse one model turn. Total: all errors surface as violation codes."""
    violations: list[str] = []
    blocks: list[tuple[str, str]] = []

    pos = 0
    n = len(text)
    while pos < n:
        ch = text[pos]
        if ch.isspace():
            pos += 1
            continue
        matched = False
        for kind, open_tag, close_tag in _TAGS:
            if text.startswith(open_tag, pos):
                end = text.find(close_tag, pos + len(open_tag))
                if end == -1:
                    _add(violations, UNCLOSED_TAG)
                    pos = n
                else:
                    blocks.append((kind, text[pos + len(open_tag) : end]))
                    pos = end + len(close_tag)
                matched = True
                break
        if matched:
            continue
        _add(violations, STRAY_TEXT)
        nxt = text.find("<", pos + 1)
        pos = n if nxt == -1 else nxt

    reasoning = ""
    tool_calls: list[RawToolCall] = []
    answer: str | None = None
    seen_think = False
    seen_answer = False

    for i, (kind, content) in enumerate(blocks):
        if kind == "think":
            if i != 0 or seen_think:
                _add(violations, MISPLACED_BLOCK)
            if not seen_think:
                reasoning = content
                seen_think = True
        elif kind == "tool_call":
            if seen_answer:
                _add(violations, MISPLACED_BLOCK)
            call = _parse_call_payload(content)
            tool_calls.append(call)
            if call.error is not None:
                _add(violations, call.error)
        else:  # answer
            if seen_answer:
                _add(violations, MISPLACED_BLOCK)
            else:
                answer = content
                seen_answer = True
            if not content.strip():
                _add(violations, EMPTY_ANSWER)

    if tool_calls and answer is not None:
        _add(violations, MIXED_TERMINAL)
    if len(tool_calls) > 1:
        _add(violations, MULTI_CALL)
    if not tool_calls and answer is None:
        _add(violations, NO_ANSWER)

    return ParsedTurn(
        reasoning=reasoning, tool_calls=tool_calls, answer=answer, violations=violations
    )


def validate_format(t: Trajectory) -> FormatVerdict:
    """Structural validity of a whole trajectory, for the format reward.

    Well-formed means every model turn parses with zero violations, the
    trajectory terminated with an answer, and the answer text is non-empty.
    """
    violations: list[str] = []
    for turn in t.turns:
        if turn.role != "model":
            continue
        for code in parse_turn(turn.text).violations:
            _add(violations, code)
    if t.terminal_reason != TERMINAL_ANSWERED:
        _add(violations, NO_ANSWER)
    elif t.final_answer is None or not t.final_answer.strip():
        _add(violations, EMPTY_ANSWER)
    return FormatVerdict(well_formed=not violations, violations=tuple(violations))


def render_model_turn(
    reasoning: str = "",
    boxes: list[BBox] | None = None,
    answer: str | None = None,
) -> str:
    """Canonical rendering of a model turn; inverse of :func:`parse_turn`.

    The building block for scripted policies and round-trip tests. Content
    strings must not contain the grammar's closing tags.
    """
    parts: list[str] = []
    if reasoning:
        parts.append(f"{THINK_OPEN}{reasoning}{THINK_CLOSE}")
    for box in boxes or []:
        payload = json.dumps({"name": TOOL_NAME, "arguments": {BOX_ARG: box.to_list()}})
        parts.append(f"{CALL_OPEN}{payload}{CALL_CLOSE}")
    if answer is not None:
        parts.append(f"{ANSWER_OPEN}{answer}{ANSWER_CLOSE}")
    return "".join(parts)


def render_tool_result(meta: PatchMeta | None, patch_path: str | None = None) -> Turn:
    """Tool-role message for a zoom-in outcome.

    With patch metadata, emits the fixed coordinate header plus the patch
    reference; with ``meta=None`` (degenerate request), emits the failure
    text and no attachment. Byte-stable for identical inputs.
    """
    if meta is None:
        return Turn(role="tool", text=ZOOM_FAILED_TEXT)
    coords = ", ".join(str(v) for v in meta.box.to_list())
    patch = None
    if patch_path is not None:
        patch = PatchRef(path=patch_path, box=meta.box, scale=meta.scale)
    return Turn(role="tool", text=f"Zoomed region: [{coords}]", patch=patch)


_TOOL_SCHEMA = json.dumps(
    {
        "name": TOOL_NAME,
        "description": "Crop a region of the page image and add the enlarged patch to the conversation.",
        "parameters": {
            "type": "object",
            "properties": {
                BOX_ARG: {
                    "type": "array",
                    "items": {"type": "integer"},
                    "description": "[x_min, y_min, x_max, y_max] in original page pixels",
                }
            },
            "required": [BOX_ARG],
        },
    },
    indent=2,
)


def _answer_instruction(spec: AnswerSpec) -> str:
    if spec.kind == "multi_choice":
        letters = "".join(chr(ord("A") + i) for i in range(len(spec.choices or [])))
        return f"give only the letter of your choice ({'/'.join(letters)}) inside <answer></answer>."
    if spec.kind == "numerical":
        return "give only an integer inside <answer></answer>."
    return "give a concise free-text answer inside <answer></answer>."


def render_system_prompt(task, phase: str = "main") -> str:
    """Deterministic system prompt: tool schema, answer format, zoom guidance.

    ``task`` is a TaskInstance; only its answer spec shapes the prompt.
    """
    guidance = (
        "Practice using the zoom_in tool on the region relevant to the question "
        "before answering."
        if phase == "warm_start"
        else "Zoom into the relevant region when the page detail is too small to read."
    )
    return (
        "You are answering a question about a comic page image.\n"
        "You may call the following tool by emitting "
        f'{CALL_OPEN}{{"name": "{TOOL_NAME}", "arguments": {{"{BOX_ARG}": [x_min, y_min, x_max, y_max]}}}}{CALL_CLOSE}:\n'
        f"{_TOOL_SCHEMA}\n"
        f"Coordinates are pixels in the original page image. {guidance}\n"
        f"Think inside {THINK_OPEN}{THINK_CLOSE} tags. Emit at most one tool call per turn. "
        f"When you are ready, {_answer_instruction(task.answer_spec)}"
    )
