"""Streaming behavior over real sockets: disconnect propagation and SSE framing."""

import json
import time

import httpx
import pytest

from helpers import ServerHandle, UPSTREAM_SECRET

from verde.config import GatewayConfig
from verde.gateway import build_gateway, create_app
from verde.mockllm import create_mock_app


@pytest.fixture(scope="module")
def slow_stack(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("slowstream")
    upstream = ServerHandle(create_mock_app(delta_delay=0.05))
    config = GatewayConfig(storage_path=str(tmp / "data"))
    gw = build_gateway(config)
    gw.router.secrets["mock-cred"] = UPSTREAM_SECRET
    admin_key = gw.bootstrap_admin()
    server = ServerHandle(create_app(gw))
    admin_h = {"Authorization": f"Bearer {admin_key}"}
    with httpx.Client(base_url=server.base_url) as client:
        client.post(
            "/admin/backends",
            headers=admin_h,
            json={
                "name": "local",
                "backend_class": "self_hosted",
                "base_url": upstream.base_url,
                "credential_ref": "mock-cred",
                "timeout_ms": 30_000,
                "models": [
                    {"name": "mock-echo", "input_per_1k_tokens": 1000, "output_per_1k_tokens": 1000}
                ],
            },
        ).raise_for_status()
        user = client.post(
            "/admin/users",
            headers=admin_h,
            json={"external_subject": "live", "display_name": "Live", "email": "l@x"},
        ).json()
        course = client.post(
            "/admin/courses",
            headers=admin_h,
            json={"name": "Live", "allowed_models": ["mock-echo"], "mode": "pass_through"},
        ).json()
        client.post(
            f"/admin/courses/{course['id']}/members",
            headers=admin_h,
            json={"user_id": user["id"], "role": "student"},
        )
        client.post(
            f"/admin/courses/{course['id']}/budget",
            headers=admin_h,
            json={"add_funds": 10_000_000},
        )
        key = client.post(
            f"/admin/courses/{course['id']}/keys",
            headers=admin_h,
            json={"user_id": user["id"], "label": "live"},
        ).json()["key"]
    yield {"gw": gw, "server": server, "key": key, "course": course}
    server.stop()
    upstream.stop()


def test_client_disconnect_over_socket_cancels_reservation(slow_stack):
    gw = slow_stack["gw"]
    body = {
        "model": "mock-echo",
        "messages": [{"role": "user", "content": " ".join(["tok"] * 30)}],
        "stream": True,
    }
    with httpx.Client(base_url=slow_stack["server"].base_url, timeout=30.0) as client:
        with client.stream(
            "POST",
            "/v1/chat/completions",
            headers={"Authorization": f"Bearer {slow_stack['key']}"},
            json=body,
        ) as response:
            iterator = response.iter_lines()
            first = next(line for line in iterator if line.startswith("data:"))
            assert json.loads(first[5:])["choices"][0]["delta"]["content"]
            # walk away mid-stream: the context exit closes the connection
    ledger_before = len(gw.metering.ledger_entries())
    deadline = time.time() + 10
    while gw.metering.outstanding_count() and time.time() < deadline:
        time.sleep(0.05)
    assert gw.metering.outstanding_count() == 0
    assert len(gw.metering.ledger_entries()) == ledger_before == 0
    budget = gw.metering.get_budget(slow_stack["course"]["id"])
    assert budget["reserved_microcredits"] == 0
    assert budget["spent_microcredits"] == 0


def test_completed_stream_over_socket_settles(slow_stack):
    gw = slow_stack["gw"]
    body = {
        "model": "mock-echo",
        "messages": [{"role": "user", "content": "one two three"}],
        "stream": True,
    }
    with httpx.Client(base_url=slow_stack["server"].base_url, timeout=30.0) as client:
        with client.stream(
            "POST",
            "/v1/chat/completions",
            headers={"Authorization": f"Bearer {slow_stack['key']}"},
            json=body,
        ) as response:
            payload = response.read().decode()
    assert payload.rstrip().endswith("data: [DONE]")
    assert gw.metering.outstanding_count() == 0
    entries = gw.metering.ledger_entries()
    assert len(entries) == 1
    assert entries[0].completion_tokens == 3
