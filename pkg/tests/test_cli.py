import json
import re
import uuid

import httpx
import pytest

from helpers import GatewayHarness, ServerHandle

from verde import cli
from verde.metering import LedgerEntry, Price


@pytest.fixture(scope="module")
def live(tmp_path_factory):
    harness = GatewayHarness(tmp_path_factory.mktemp("cli"))
    harness.register_backend()
    server = ServerHandle(harness.app)
    yield harness, server
    server.stop()


def run_cli(server, harness, *args, output="table"):
    return cli.main(
        ["--endpoint", server.base_url, "--token", harness.admin_key, "--output", output, *args]
    )


def test_course_create_and_list(live, capsys):
    harness, server = live
    code = run_cli(
        server, harness, "course", "create", "--name", "CLI 101", "--models", "mock-echo"
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "CLI 101" in out
    assert run_cli(server, harness, "course", "list", output="json") == 0
    listing = json.loads(capsys.readouterr().out)
    assert any(c["name"] == "CLI 101" for c in listing["data"])


def test_json_output_is_byte_identical_to_api_body(live, capsys):
    harness, server = live
    assert run_cli(server, harness, "course", "list", output="json") == 0
    cli_body = capsys.readouterr().out
    direct = httpx.get(
        server.base_url + "/admin/courses",
        headers={"Authorization": f"Bearer {harness.admin_key}"},
    )
    assert cli_body.rstrip("\n") == direct.text.rstrip("\n")


def test_member_add_key_issue_and_revoke(live, capsys):
    harness, server = live
    course = harness.create_course()
    user = harness.create_user()
    assert (
        run_cli(
            server, harness, "member", "add",
            "--course", course["id"], "--user", user["id"], "--role", "student",
        )
        == 0
    )
    capsys.readouterr()
    assert (
        run_cli(server, harness, "key", "issue", "--course", course["id"], "--user", user["id"])
        == 0
    )
    printed = capsys.readouterr().out.strip()
    assert re.fullmatch(r"verde-[0-9a-f]{40}", printed)
    key_id = harness.gw.tenancy.list_keys(course_id=course["id"])[0].id
    assert run_cli(server, harness, "key", "revoke", "--id", key_id) == 0


def test_budget_set_and_add(live, capsys):
    harness, server = live
    course = harness.create_course()
    assert (
        run_cli(server, harness, "budget", "set", "--course", course["id"], "--limit", "5000000")
        == 0
    )
    assert "5,000,000" in capsys.readouterr().out
    assert (
        run_cli(server, harness, "budget", "add", "--course", course["id"], "--amount", "1")
        == 0
    )
    assert harness.gw.metering.get_budget(course["id"])["limit_microcredits"] == 5_000_001


def test_budget_set_negative_fails_before_any_network(capsys):
    # endpoint points at a port nobody listens on: a network attempt would
    # surface as exit 1, client-side validation as exit 2
    code = cli.main(
        [
            "--endpoint", "http://127.0.0.1:9", "--token", "x",
            "budget", "set", "--course", "c", "--limit", "-5",
        ]
    )
    assert code == 2


def test_backend_register_conflict_is_api_error(live, capsys):
    harness, server = live
    code = run_cli(
        server, harness, "backend", "register",
        "--name", "dup", "--class", "self_hosted",
        "--base-url", "http://mock.upstream", "--credential-ref", "mock-cred",
        "--model", "mock-echo:1000:1000",
    )
    assert code == 1  # mock-echo already owned by the harness backend
    assert "conflict" in capsys.readouterr().err.lower()


def test_usage_report_renders_table2_grid(live, capsys):
    harness, server = live
    metering = harness.gw.metering
    metering.set_price(Price("cli-self", 0, 0))
    metering.set_price(Price("cli-proxy", 0, 0))
    rows = [
        ("cli-self", "self_hosted", 74_960_000, 34_800_000, 96_403),
        ("cli-proxy", "proxy", 689_000, 230_000, 1_255),
    ]
    for model, cls, prompt, completion, calls in rows:
        metering.append_entry(
            LedgerEntry(
                id=uuid.uuid4().hex,
                timestamp_utc="1999-06-01T00:00:00Z",  # isolated period
                key_id="k",
                course_id="cli-seed",
                model=model,
                backend_class=cls,
                prompt_tokens=prompt,
                completion_tokens=completion,
                cost_microcredits=0,
                api_calls=calls,
            )
        )
    code = run_cli(
        server, harness, "usage", "report",
        "--from", "1999-01-01T00:00:00Z", "--to", "1999-12-31T00:00:00Z",
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "110.68M" in out
    assert "97,658" in out
    assert "75.65M" in out
    assert "0.92M" in out


def test_ingest_delegates_and_imports(live, capsys, tmp_path):
    harness, server = live
    doc = tmp_path / "notes.txt"
    doc.write_text("the sky is blue and wide")
    code = run_cli(
        server, harness, "ingest", "--collection", "cli-facts",
        "--chunk-size", "8", "--overlap", "2", str(doc),
    )
    assert code == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["documents"] == 1
    assert stats["collection_id"] == "cli-facts"
    assert harness.gw.rag.collection_info("cli-facts")["chunk_count"] == stats["chunks"]


def test_unreachable_gateway_exit_one(capsys):
    code = cli.main(
        ["--endpoint", "http://127.0.0.1:9", "--token", "x", "course", "list"]
    )
    assert code == 1


def test_env_variable_configuration(live, capsys, monkeypatch):
    harness, server = live
    monkeypatch.setenv("VERDE_ENDPOINT", server.base_url)
    monkeypatch.setenv("VERDE_ADMIN_TOKEN", harness.admin_key)
    assert cli.main(["--output", "json", "course", "list"]) == 0
