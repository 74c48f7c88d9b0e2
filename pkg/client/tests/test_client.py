import random

import httpx
import pytest

from zoomrl_client import Client, ClientConfig, SchemaError, ServiceUnavailable

from fixtures import make_instance_dict, make_trajectory_dict, random_trajectory_dict


@pytest.fixture(scope="session")
def shared_tmp(tmp_path_factory):
    return tmp_path_factory.mktemp("fixtures")


@pytest.fixture(scope="session")
def instance(shared_tmp):
    return make_instance_dict(shared_tmp, gt_regions=((0, 0, 10, 10),), size=(100, 100))


@pytest.fixture()
def client(service_url):
    with Client(ClientConfig(base_url=service_url, backoff=0.0)) as c:
        yield c


def test_healthy(client):
    assert client.healthy()


def test_score_canonical_fixture(client, instance):
    traj = make_trajectory_dict(instance, boxes=[(0, 0, 8, 10)], answer="B")
    breakdown = client.score(traj, instance)
    assert breakdown.total == pytest.approx(3.6, abs=1e-12)
    assert breakdown.m == 1


def test_score_schema_error_has_field_path(client):
    with pytest.raises(SchemaError) as exc:
        client.score({"bogus": 1}, {"also": "bogus"})
    assert exc.value.details  # field-path diagnostics from the service


def test_score_group_fixture(client, instance):
    trajs = [
        make_trajectory_dict(instance, boxes=[(0, 0, 8, 10)], answer="B"),
        make_trajectory_dict(instance, boxes=(), answer="A"),
        make_trajectory_dict(instance, boxes=(), answer="A"),
        make_trajectory_dict(instance, boxes=[(0, 0, 8, 10)], answer="B"),
    ]
    result = client.score_group(trajs, instance)
    assert list(result.advantages) == pytest.approx([1.0, -1.0, -1.0, 1.0], abs=1e-9)
    assert len(result.breakdowns) == 4


def test_score_group_degenerate_zeroes(client, instance):
    traj = make_trajectory_dict(instance, boxes=[(0, 0, 8, 10)], answer="B")
    result = client.score_group([traj, traj, traj], instance)
    assert list(result.advantages) == [0.0, 0.0, 0.0]


def test_score_group_g1_is_schema_error(client, instance):
    traj = make_trajectory_dict(instance, boxes=(), answer="B")
    with pytest.raises(SchemaError):
        client.score_group([traj], instance)


def test_retry_then_succeed_flaky_stub():
    attempts = []

    def handler(request: httpx.Request) -> httpx.Response:
        attempts.append(1)
        if len(attempts) < 3:
            return httpx.Response(503, json={"error": "busy"})
        return httpx.Response(
            200,
            json={
                "request_id": "r",
                "breakdown": {
                    "r_format": 0.0,
                    "r_acc": 1.0,
                    "r_tool_count": 0.0,
                    "r_tool_acc": 0.0,
                    "r_tool": 0.0,
                    "total": 1.0,
                    "m": 0,
                    "matched_ious": [],
                    "answer_correct": True,
                },
            },
        )

    client = Client(
        ClientConfig(base_url="http://svc.test", retries=3, backoff=0.0),
        transport=httpx.MockTransport(handler),
    )
    breakdown = client.score({"t": 1}, {"i": 2})
    assert breakdown.total == 1.0
    assert len(attempts) == 3


def test_gives_up_after_retries():
    def handler(request: httpx.Request) -> httpx.Response:
        return httpx.Response(500, json={"error": "down"})

    client = Client(
        ClientConfig(base_url="http://svc.test", retries=2, backoff=0.0),
        transport=httpx.MockTransport(handler),
    )
    with pytest.raises(ServiceUnavailable):
        client.score({"t": 1}, {"i": 2})


def test_reward_fn_adapter_shared_fixtures(client, instance):
    trajs = [
        make_trajectory_dict(instance, boxes=[(0, 0, 8, 10)], answer="B"),  # correct: 3.6
        make_trajectory_dict(instance, boxes=[(0, 0, 8, 10)], answer="A"),  # wrong: 1.3
        make_trajectory_dict(instance, boxes=(), answer=None),  # malformed: -1.0
    ]
    reward_fn = client.reward_fn_adapter()
    totals = reward_fn(trajs, [instance] * 3)
    assert totals == pytest.approx([3.6, 1.3, -1.0], abs=1e-12)


def test_reward_fn_adapter_empty_batch(client):
    assert client.reward_fn_adapter()([], []) == []


def test_reward_fn_adapter_preserves_order(client, shared_tmp):
    rng = random.Random(17)
    instance = make_instance_dict(
        shared_tmp, name="wide.png", gt_regions=((0, 0, 50, 50), (100, 0, 150, 50)), size=(1000, 100)
    )
    trajs = [random_trajectory_dict(rng, instance) for _ in range(24)]
    per_item = [client.score(t, instance).total for t in trajs]
    batched = client.reward_fn_adapter(max_concurrency=8)(trajs, [instance] * len(trajs))
    assert batched == per_item


# Acceptance criterion 11 (secondary): bit-for-bit parity with the service.
def test_acceptance_client_parity(client, service_url, shared_tmp):
    rng = random.Random(2025)
    instance = make_instance_dict(
        shared_tmp,
        name="parity.png",
        gt_regions=((0, 0, 60, 60), (100, 0, 160, 60), (200, 0, 260, 60)),
        size=(1000, 100),
    )
    raw = httpx.Client(base_url=service_url)
    try:
        for k in range(100):
            traj = random_trajectory_dict(rng, instance)
            via_client = client.score(traj, instance)
            direct = raw.post(
                "/v1/score", json={"trajectory": traj, "instance": instance}
            ).json()["breakdown"]
            assert via_client.to_dict() == direct, f"fixture {k} diverged"

        group = [random_trajectory_dict(rng, instance) for _ in range(4)]
        via = client.score_group(group, instance)
        direct = raw.post(
            "/v1/score_group", json={"trajectories": group, "instance": instance}
        ).json()
        assert [b.to_dict() for b in via.breakdowns] == direct["breakdowns"]
        assert list(via.advantages) == direct["advantages"]
    finally:
        raw.close()
    print("\nACCEPTANCE 11 PASS  client parity: score/score_group bit-for-bit on 100 fixtures")
