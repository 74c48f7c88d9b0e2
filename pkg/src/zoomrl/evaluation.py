"""Batch evaluation of a policy over a dataset split.

One rollout per instance (no sampling groups), verifier-scored, with an
on-disk progress journal so an interrupted run resumes without re-evaluating
finished instances. Reports per-task accuracy plus zoom-in usage statistics
(average call count, pooled average IoU, per-ordinal IoU).
"""

from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .rewards import RewardBreakdown, RewardConfig, total_reward
from .rollout import PatchStore, Policy, RolloutConfig, run_trajectory
from .tasks import TASK_ORDER, TaskInstance


@dataclass
class EvalReport:
    accuracy: dict[str, float] = field(default_factory=dict)  # task -> percent
    correct: dict[str, int] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    zoomin: dict[str, dict] = field(default_factory=dict)
    errors: list[dict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "correct": self.correct,
            "counts": self.counts,
            "zoomin": self.zoomin,
            "errors": self.errors,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            accuracy=dict(d.get("accuracy", {})),
            correct={k: int(v) for k, v in d.get("correct", {}).items()},
            counts={k: int(v) for k, v in d.get("counts", {}).items()},
            zoomin=dict(d.get("zoomin", {})),
            errors=list(d.get("errors", [])),
            metadata=dict(d.get("metadata", {})),
        )


def zoomin_stats(grouped: dict[str, list[RewardBreakdown]]) -> dict[str, dict]:
    """Tool-usage statistics per task from scored breakdowns.

    ``avg_iou`` pools every invocation's matched IoU across the task's
    trajectories (a re-grouping-invariant mean); ``per_ordinal_iou[k]``
    averages only the (k+1)-th invocation over trajectories that made at
    least k+1 calls. Tasks with no trajectories are absent from the map.
    """
    out: dict[str, dict] = {}
    for task, breakdowns in grouped.items():
        if not breakdowns:
            continue
        n = len(breakdowns)
        all_ious = [v for b in breakdowns for v in b.matched_ious]
        max_m = max((b.m for b in breakdowns), default=0)
        per_ordinal = []
        for k in range(max_m):
            vals = [b.matched_ious[k] for b in breakdowns if b.m >= k + 1]
            per_ordinal.append(sum(vals) / len(vals))
        out[task] = {
            "avg_toolcalls": sum(b.m for b in breakdowns) / n,
            "avg_iou": sum(all_ious) / len(all_ious) if all_ious else 0.0,
            "per_ordinal_iou": per_ordinal,
        }
    return out


class _Journal:
    """Append-only JSONL of finished instances, keyed by instance_id."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self.entries: dict[str, dict] = {}
        if self.path and self.path.exists():
            with open(self.path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = json.loads(line)
                    self.entries[rec["instance_id"]] = rec

    def add(self, rec: dict) -> None:
        with self._lock:
            self.entries[rec["instance_id"]] = rec
            if self.path:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")


def evaluate_split(
    dataset: list[TaskInstance],
    policy: Policy,
    rollout_cfg: RolloutConfig,
    judge=None,
    journal_path: str | Path | None = None,
    reward_cfg: RewardConfig | None = None,
) -> EvalReport:
    """Evaluate every instance once; endpoint failures never abort the run.

    Failed instances are excluded from the accuracy denominator and listed
    under ``errors``. Rerunning with the same journal is a no-op that
    reproduces the identical report.
    """
    scoring = reward_cfg or RewardConfig()
    journal = _Journal(journal_path)
    store = PatchStore(rollout_cfg.patch_dir)
    by_id = {inst.instance_id: inst for inst in dataset}
    pending = [inst for inst in dataset if inst.instance_id not in journal.entries]

    errors: list[dict] = []
    errors_lock = threading.Lock()

    def one(inst: TaskInstance) -> None:
        try:
            traj = run_trajectory(
                inst, policy, rollout_cfg, seed=rollout_cfg.seed, patch_store=store
            )
            breakdown = total_reward(traj, inst, scoring, judge)
            journal.add(
                {
                    "instance_id": inst.instance_id,
                    "trajectory": traj.to_dict(),
                    "breakdown": breakdown.to_dict(),
                }
            )
        except Exception as exc:  # noqa: BLE001 - per-instance failure contract
            with errors_lock:
                errors.append(
                    {"instance_id": inst.instance_id, "error": f"{type(exc).__name__}: {exc}"}
                )

    if pending:
        with ThreadPoolExecutor(max_workers=max(1, rollout_cfg.parallelism)) as pool:
            list(pool.map(one, pending))

    report = EvalReport(metadata={"instances": len(dataset), "evaluated": len(journal.entries)})
    grouped: dict[str, list[RewardBreakdown]] = {}
    for rec in journal.entries.values():
        inst = by_id.get(rec["instance_id"])
        if inst is None:
            continue
        breakdown = RewardBreakdown.from_dict(rec["breakdown"])
        grouped.setdefault(inst.task, []).append(breakdown)
        report.counts[inst.task] = report.counts.get(inst.task, 0) + 1
        if breakdown.answer_correct:
            report.correct[inst.task] = report.correct.get(inst.task, 0) + 1

    for task, count in report.counts.items():
        report.accuracy[task] = 100.0 * report.correct.get(task, 0) / count
    report.zoomin = zoomin_stats(grouped)
    report.errors = sorted(errors, key=lambda e: e["instance_id"])
    return report


def render_report(report: EvalReport, fmt: str = "json") -> str:
    """Serialize a report as JSON or a pair of markdown tables."""
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if fmt != "markdown-table":
        raise ValueError(f"unknown report format {fmt!r}")

    tasks = [t for t in TASK_ORDER if t in report.counts]
    extra = sorted(set(report.counts) - set(tasks))
    tasks.extend(extra)

    lines = ["| Task | Accuracy (%) | Correct | Count |", "| --- | --- | --- | --- |"]
    for t in tasks:
        lines.append(
            f"| {t} | {report.accuracy[t]:.2f} | {report.correct.get(t, 0)} | {report.counts[t]} |"
        )
    lines.append("")
    lines.append("| Task | Avg. #Toolcall | Avg. IoU | Per-ordinal IoU |")
    lines.append("| --- | --- | --- | --- |")
    for t in tasks:
        z = report.zoomin.get(t)
        if z is None:
            continue
        ordinals = ", ".join(f"{v:.3f}" for v in z["per_ordinal_iou"]) or "-"
        lines.append(f"| {t} | {z['avg_toolcalls']:.2f} | {z['avg_iou']:.3f} | {ordinals} |")
    if report.errors:
        lines.append("")
        lines.append(f"Failed instances: {len(report.errors)}")
        for e in report.errors:
            lines.append(f"- {e['instance_id']}: {e['error']}")
    return "\n".join(lines) + "\n"
