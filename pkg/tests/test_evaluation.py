import json

import pytest

from zoomrl.evaluation import EvalReport, evaluate_split, render_report, zoomin_stats
from zoomrl.protocol import render_model_turn
from zoomrl.rewards import RewardBreakdown
from zoomrl.rollout import RolloutConfig

from helpers import make_instance


def bd(m, ious, correct=False):
    return RewardBreakdown(
        r_format=0.0,
        r_acc=1.0 if correct else 0.0,
        r_tool_count=0.0,
        r_tool_acc=0.0,
        r_tool=0.0,
        total=0.0,
        m=m,
        matched_ious=list(ious),
        answer_correct=correct,
    )


def test_zoomin_stats_avg_toolcalls():
    breakdowns = [bd(1, [1.0]) for _ in range(9)] + [bd(2, [1.0, 1.0])]
    stats = zoomin_stats({"action_recognition": breakdowns})
    assert stats["action_recognition"]["avg_toolcalls"] == pytest.approx(1.1, abs=1e-12)


def test_zoomin_stats_constant_iou():
    stats = zoomin_stats({"t": [bd(1, [1.0]), bd(2, [1.0, 1.0])]})
    assert stats["t"]["avg_iou"] == 1.0


def test_zoomin_stats_per_ordinal():
    breakdowns = [bd(1, [0.9]), bd(2, [0.8, 0.6])]
    stats = zoomin_stats({"t": breakdowns})
    assert stats["t"]["per_ordinal_iou"] == [pytest.approx(0.85), pytest.approx(0.6)]


def test_zoomin_stats_empty_task_absent():
    assert zoomin_stats({"t": []}) == {}


def make_dataset(tmp_path, n=20):
    return [
        make_instance(
            tmp_path,
            instance_id=f"page{i}:action_recognition:0",
            gold="B",
            gt_regions=((0, 0, 10, 10),),
            expected_tool_count=1,
            image_name=f"page{i}.png",
        )
        for i in range(n)
    ]


class MarkerPolicy:
    """Scripted by a marker embedded in the question text."""

    def complete(self, messages, *, seed, temperature):
        question = messages[1]["content"][0]["text"]
        gold = "B" if "EVEN" in question else "A"
        return render_model_turn(reasoning="guess", answer=gold)


def test_evaluate_split_scripted_accuracy(tmp_path):
    dataset = []
    for i in range(20):
        dataset.append(
            make_instance(
                tmp_path,
                instance_id=f"page{i}:action_recognition:0",
                question=f"{'EVEN' if i % 2 == 0 else 'ODD'} what action? A) a B) b C) c D) d",
                gold="B",
                gt_regions=((0, 0, 10, 10),),
                image_name=f"page{i}.png",
            )
        )
    cfg = RolloutConfig(group_size=1, parallelism=4, patch_dir=str(tmp_path / "patches"))
    report = evaluate_split(dataset, MarkerPolicy(), cfg)
    assert report.accuracy["action_recognition"] == pytest.approx(50.0)
    assert report.counts["action_recognition"] == 20
    assert report.correct["action_recognition"] == 10
    # correct-count identity: accuracy * count is an integer (a correct count)
    acc = report.accuracy["action_recognition"]
    assert round(acc * 20 / 100) == 10


class CountingPolicy:
    def __init__(self, answer="B"):
        self.calls = 0
        self.answer = answer

    def complete(self, messages, *, seed, temperature):
        self.calls += 1
        return render_model_turn(reasoning="sure", answer=self.answer)


def test_evaluate_split_journal_resume(tmp_path):
    dataset = make_dataset(tmp_path, n=10)
    cfg = RolloutConfig(group_size=1, parallelism=2, patch_dir=str(tmp_path / "patches"))
    journal = tmp_path / "journal.jsonl"

    policy = CountingPolicy()
    report1 = evaluate_split(dataset[:4], policy, cfg, journal_path=journal)
    assert policy.calls == 4
    assert report1.counts["action_recognition"] == 4

    # resume over the full set: only the 6 new instances are evaluated
    report2 = evaluate_split(dataset, policy, cfg, journal_path=journal)
    assert policy.calls == 10
    assert report2.counts["action_recognition"] == 10

    # identical rerun is a no-op producing the identical report
    report3 = evaluate_split(dataset, policy, cfg, journal_path=journal)
    assert policy.calls == 10
    assert report3.to_dict() == report2.to_dict()


class ExplodingPolicy:
    def complete(self, messages, *, seed, temperature):
        raise RuntimeError("endpoint dead")


def test_evaluate_split_failures_excluded_not_counted_wrong(tmp_path):
    dataset = make_dataset(tmp_path, n=3)
    cfg = RolloutConfig(group_size=1, parallelism=1, patch_dir=str(tmp_path / "patches"))
    report = evaluate_split(dataset, ExplodingPolicy(), cfg)
    assert report.counts == {}
    assert len(report.errors) == 3
    assert all("endpoint dead" in e["error"] for e in report.errors)


def test_render_report_markdown_golden(tmp_path):
    report = EvalReport(
        accuracy={"action_recognition": 50.0, "depth_comparison": 75.0},
        correct={"action_recognition": 10, "depth_comparison": 3},
        counts={"action_recognition": 20, "depth_comparison": 4},
        zoomin={
            "action_recognition": {
                "avg_toolcalls": 1.1,
                "avg_iou": 0.862,
                "per_ordinal_iou": [0.87, 0.8],
            }
        },
        metadata={"instances": 24},
    )
    md = render_report(report, fmt="markdown-table")
    golden = (
        "| Task | Accuracy (%) | Correct | Count |\n"
        "| --- | --- | --- | --- |\n"
        "| action_recognition | 50.00 | 10 | 20 |\n"
        "| depth_comparison | 75.00 | 3 | 4 |\n"
        "\n"
        "| Task | Avg. #Toolcall | Avg. IoU | Per-ordinal IoU |\n"
        "| --- | --- | --- | --- |\n"
        "| action_recognition | 1.10 | 0.862 | 0.870, 0.800 |\n"
    )
    assert md == golden


def test_render_report_json_roundtrip():
    report = EvalReport(
        accuracy={"t": 100.0}, correct={"t": 1}, counts={"t": 1}, zoomin={}, metadata={}
    )
    text = render_report(report, fmt="json")
    back = EvalReport.from_dict(json.loads(text))
    assert back.to_dict() == report.to_dict()


def test_render_report_unknown_format():
    with pytest.raises(ValueError):
        render_report(EvalReport(), fmt="yaml")
