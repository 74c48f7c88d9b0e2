"""Command line entry point: gen | eval | rollout | score | serve.

Exit codes: 0 success, 1 hard error during execution, 2 configuration or
usage error. Config files are JSON or TOML, chosen by suffix.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import benchgen, evaluation
from .grpo import TrainerMeta, build_training_batch
from .protocol import Trajectory
from .rewards import MODES, PHASES, RewardConfig, total_reward
from .rollout import HttpPolicy, PolicyEndpoint, RolloutConfig, ScriptedPolicy, run_phase
from .service import ServiceConfig, serve
from .verifiers import JudgeClient, JudgeConfig

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2


class ConfigError(Exception):
    pass


def load_config_file(path: str | Path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    text = p.read_text(encoding="utf-8")
    if p.suffix == ".toml":
        try:
            import tomllib  # py >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        try:
            return tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"bad TOML in {p}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"bad JSON in {p}: {exc}") from exc


def _reward_config(args) -> RewardConfig:
    base: dict = {}
    if args.config:
        base = load_config_file(args.config)
        if "reward" in base:  # allow a combined config file
            base = base["reward"]
    if getattr(args, "phase", None):
        base["phase"] = args.phase
    if getattr(args, "mode", None):
        base["mode"] = args.mode
    try:
        return RewardConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad reward config: {exc}") from exc


def _rollout_config(args) -> RolloutConfig:
    base: dict = {}
    if getattr(args, "rollout_config", None):
        base = load_config_file(args.rollout_config)
        if "rollout" in base:
            base = base["rollout"]
    if getattr(args, "seed", None) is not None:
        base["seed"] = args.seed
    if getattr(args, "parallel", None) is not None:
        base["parallelism"] = args.parallel
    if getattr(args, "patch_dir", None):
        base["patch_dir"] = args.patch_dir
    try:
        return RolloutConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad rollout config: {exc}") from exc


def _policy(args):
    if getattr(args, "policy_script", None):
        return ScriptedPolicy.from_file(args.policy_script)
    if getattr(args, "policy_url", None):
        return HttpPolicy(PolicyEndpoint(url=args.policy_url, model_name=args.policy_model))
    raise ConfigError("need --policy-url or --policy-script")


def _judge(args) -> JudgeClient | None:
    if getattr(args, "judge_url", None):
        return JudgeClient(
            JudgeConfig(
                endpoint=args.judge_url,
                model_name=args.judge_model,
                cache_path=getattr(args, "judge_cache", None),
            )
        )
    return None


def cmd_gen(args) -> int:
    pages_dir = Path(args.pages)
    page_files = sorted(pages_dir.glob("*.json"))
    if not page_files:
        raise ConfigError(f"no page annotation files in {pages_dir}")
    pages = [benchgen.load_page(p) for p in page_files]
    dataset_path, stats_path = benchgen.generate_dataset(
        pages, out_dir=args.out, seed=args.seed
    )
    print(f"wrote {dataset_path} and {stats_path}")
    return EXIT_OK


def cmd_score(args) -> int:
    dataset = benchgen.load_dataset(args.dataset)
    by_id = {inst.instance_id: inst for inst in dataset}
    reward_cfg = _reward_config(args)
    judge = _judge(args)
    out = Path(args.out) if args.out else None
    lines = []
    with open(args.trajectories, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            traj = Trajectory.from_dict(json.loads(line))
            inst = by_id.get(traj.instance_id)
            if inst is None:
                raise ConfigError(f"trajectory references unknown instance {traj.instance_id!r}")
            breakdown = total_reward(traj, inst, reward_cfg, judge)
            lines.append(json.dumps(breakdown.to_dict(), sort_keys=True))
    text = "\n".join(lines) + ("\n" if lines else "")
    if out:
        out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_rollout(args) -> int:
    dataset = benchgen.load_dataset(args.dataset, split=args.split)
    if not dataset:
        raise ConfigError(f"no instances in split {args.split!r}")
    reward_cfg = _reward_config(args)
    rollout_cfg = _rollout_config(args)
    policy = _policy(args)
    judge = _judge(args)

    groups = []
    metrics_lines = []
    for scored in run_phase(dataset, policy, reward_cfg, rollout_cfg, judge=judge):
        groups.append(scored.group)
        metrics_lines.append(json.dumps(scored.metrics.to_dict(), sort_keys=True))
    meta = TrainerMeta(run_id=args.run_id)
    out = build_training_batch(groups, meta, args.out)
    metrics_path = Path(args.out).with_suffix(".metrics.jsonl")
    metrics_path.write_text("\n".join(metrics_lines) + "\n", encoding="utf-8")
    print(f"wrote {out} ({sum(g.size for g in groups)} records) and {metrics_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    dataset = benchgen.load_dataset(args.dataset, split=args.split)
    if not dataset:
        raise ConfigError(f"no instances in split {args.split!r}")
    rollout_cfg = _rollout_config(args)
    policy = _policy(args)
    judge = _judge(args)
    report = evaluation.evaluate_split(
        dataset, policy, rollout_cfg, judge=judge, journal_path=args.journal
    )
    text = evaluation.render_report(report, fmt=args.format)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_serve(args) -> int:
    cfg_dict = load_config_file(args.config) if args.config else {}
    try:
        cfg = ServiceConfig.from_dict(cfg_dict)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad service config: {exc}") from exc
    if args.host:
        cfg.host = args.host
    if args.port:
        cfg.port = args.port
    serve(cfg)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zoomrl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="compile page annotations into a dataset")
    p_gen.add_argument("--pages", required=True, help="directory of page annotation JSON files")
    p_gen.add_argument("--out", required=True, help="output directory")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.set_defaults(func=cmd_gen)

    common_policy = argparse.ArgumentParser(add_help=False)
    common_policy.add_argument("--policy-url", help="chat-completions endpoint URL")
    common_policy.add_argument("--policy-model", default="policy")
    common_policy.add_argument("--policy-script", help="scripted mock policy JSON file")
    common_policy.add_argument("--judge-url", help="judge endpoint URL for open-ended answers")
    common_policy.add_argument("--judge-model", default="judge")
    common_policy.add_argument("--judge-cache", help="judge verdict cache path")

    p_score = sub.add_parser("score", help="score a trajectory JSONL offline")
    p_score.add_argument("--dataset", required=True)
    p_score.add_argument("--trajectories", required=True)
    p_score.add_argument("--config", help="reward config file (JSON/TOML)")
    p_score.add_argument("--phase", choices=PHASES)
    p_score.add_argument("--mode", choices=MODES)
    p_score.add_argument("--judge-url")
    p_score.add_argument("--judge-model", default="judge")
    p_score.add_argument("--judge-cache")
    p_score.add_argument("--out")
    p_score.set_defaults(func=cmd_score)

    p_roll = sub.add_parser("rollout", help="run scored rollouts into a training batch", parents=[common_policy])
    p_roll.add_argument("--dataset", required=True)
    p_roll.add_argument("--split", default="train")
    p_roll.add_argument("--config", help="reward config file")
    p_roll.add_argument("--rollout-config", help="rollout config file")
    p_roll.add_argument("--phase", choices=PHASES)
    p_roll.add_argument("--mode", choices=MODES)
    p_roll.add_argument("--seed", type=int)
    p_roll.add_argument("--parallel", type=int)
    p_roll.add_argument("--patch-dir")
    p_roll.add_argument("--run-id", default="run")
    p_roll.add_argument("--out", required=True, help="batch JSONL path")
    p_roll.set_defaults(func=cmd_rollout)

    p_eval = sub.add_parser("eval", help="evaluate a policy on a split", parents=[common_policy])
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--split", default="test")
    p_eval.add_argument("--rollout-config")
    p_eval.add_argument("--seed", type=int)
    p_eval.add_argument("--parallel", type=int)
    p_eval.add_argument("--patch-dir")
    p_eval.add_argument("--journal", help="progress journal path (enables resume)")
    p_eval.add_argument("--format", choices=("json", "markdown-table"), default="json")
    p_eval.add_argument("--out")
    p_eval.set_defaults(func=cmd_eval)

    p_serve = sub.add_parser("serve", help="run the HTTP scoring service")
    p_serve.add_argument("--config", help="service config file")
    p_serve.add_argument("--host")
    p_serve.add_argument("--port", type=int)
    p_serve.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors already
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
