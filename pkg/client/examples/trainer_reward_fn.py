"""Plugging the scoring service into an RL trainer as its reward function.

A GRPO-style trainer hands the reward function a batch of rollout
trajectories (wire-format dicts) with their task instances and expects one
scalar per trajectory, in order. The adapter batches the HTTP calls and
fails loudly rather than returning partial rewards.

Run the service first:  zoomrl serve --config service.json
"""

from zoomrl_client import Client, ClientConfig

client = Client(ClientConfig(base_url="http://127.0.0.1:8000", timeout=60.0))

# Conditional-mode scoring (an ablation) can be requested per batch:
# reward_fn = client.reward_fn_adapter(config={"mode": "conditional"})
reward_fn = client.reward_fn_adapter()


def compute_rewards(trajectories: list[dict], instances: list[dict]) -> list[float]:
    """The callable a trainer registers; totals come back in input order."""
    return reward_fn(trajectories, instances)


if __name__ == "__main__":
    import json
    import sys

    # Offline smoke run: score a JSONL of {"trajectory": ..., "instance": ...} pairs.
    pairs = [json.loads(line) for line in sys.stdin if line.strip()]
    totals = compute_rewards([p["trajectory"] for p in pairs], [p["instance"] for p in pairs])
    for total in totals:
        print(total)
