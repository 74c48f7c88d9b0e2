"""Typed models mirroring the scoring service's wire schema.

The client performs no reward math: every field is carried verbatim from
the service response, and ``to_dict`` reproduces the wire payload exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class Breakdown:
    r_format: float
    r_acc: float
    r_tool_count: float
    r_tool_acc: float
    r_tool: float
    total: float
    m: int
    matched_ious: tuple[float, ...] = ()
    answer_correct: bool = False

    @classmethod
    def from_wire(cls, d: dict) -> "Breakdown":
        return cls(
            r_format=d["r_format"],
            r_acc=d["r_acc"],
            r_tool_count=d["r_tool_count"],
            r_tool_acc=d["r_tool_acc"],
            r_tool=d["r_tool"],
            total=d["total"],
            m=d["m"],
            matched_ious=tuple(d["matched_ious"]),
            answer_correct=d["answer_correct"],
        )

    def to_dict(self) -> dict:
        return {
            "r_format": self.r_format,
            "r_acc": self.r_acc,
            "r_tool_count": self.r_tool_count,
            "r_tool_acc": self.r_tool_acc,
            "r_tool": self.r_tool,
            "total": self.total,
            "m": self.m,
            "matched_ious": list(self.matched_ious),
            "answer_correct": self.answer_correct,
        }


@dataclass(frozen=True)
class GroupScore:
    breakdowns: tuple[Breakdown, ...]
    advantages: tuple[float, ...]
