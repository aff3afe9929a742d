"""Operator CLI over the gateway's admin REST API.

Thin client by design: every subcommand maps onto one admin endpoint and
`--output json` prints the raw response body untouched so scripts can pipe
it. Exit codes: 0 success, 1 API/connection error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from typing import List, Optional

import httpx

from . import intake

DEFAULT_ENDPOINT = "http://127.0.0.1:8080"


class CliError(Exception):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


class Client:
    def __init__(self, endpoint: str, token: str, output: str):
        if not endpoint.startswith(("http://", "https://")):
            raise CliError(f"endpoint {endpoint!r} is not an http(s) URL", 2)
        self.endpoint = endpoint.rstrip("/")
        self.token = token
        self.output = output

    def request(self, method: str, path: str, json_body=None, params=None, content=None):
        headers = {"Authorization": f"Bearer {self.token}"}
        try:
            response = httpx.request(
                method,
                self.endpoint + path,
                json=json_body,
                params=params,
                content=content,
                headers=headers,
                timeout=30.0,
            )
        except httpx.HTTPError as exc:
            raise CliError(f"cannot reach gateway: {exc}", 1) from exc
        if response.status_code >= 400:
            print(response.text, file=sys.stderr)
            raise CliError(f"{method} {path} failed with {response.status_code}", 1)
        return response

    def emit(self, response, table_renderer=None) -> None:
        if self.output == "json" or table_renderer is None:
            # Byte-identical to the API response body; no client reshaping.
            sys.stdout.write(response.text)
            if not response.text.endswith("\n"):
                sys.stdout.write("\n")
        else:
            table_renderer(response.json())


def _render_course_table(payload) -> None:
    rows = payload.get("data", [payload]) if isinstance(payload, dict) else payload
    print(f"{'ID':<18} {'NAME':<24} {'MODE':<12} MODELS")
    for course in rows:
        print(
            f"{course['id']:<18} {course['name']:<24} {course['mode']:<12} "
            f"{','.join(course['allowed_models'])}"
        )


def _render_budget_table(body) -> None:
    print(f"{'LIMIT':>14} {'SPENT':>14} {'RESERVED':>14}")
    print(
        f"{body['limit_microcredits']:>14,} {body['spent_microcredits']:>14,} "
        f"{body['reserved_microcredits']:>14,}"
    )


def _render_usage_table(body) -> None:
    display = body["display"]
    columns = ("self_hosted", "proxy", "total")
    header = ("Self-hosted", "Proxy", "Total")
    print(f"{'Token Consumption':<20}" + "".join(f"{h:>14}" for h in header))
    for row, label in (("prompt", "Prompt"), ("completion", "Completion"), ("total", "Total")):
        print(f"{label:<20}" + "".join(f"{display[row][c]:>14}" for c in columns))
    print(f"{'API Calls':<20}" + "".join(f"{display['api_calls'][c]:>14}" for c in columns))


def _cmd_course_create(client: Client, args) -> None:
    models = [m for m in (args.models or "").split(",") if m]
    if not models:
        raise CliError("--models must list at least one model", 2)
    if args.mode == "rag" and not args.collection:
        raise CliError("rag mode requires --collection", 2)
    body = {
        "name": args.name,
        "allowed_models": models,
        "mode": args.mode,
        "collection_id": args.collection,
    }
    if args.temperature is not None:
        body["default_temperature"] = args.temperature
    client.emit(client.request("POST", "/admin/courses", json_body=body), _render_course_table)


def _cmd_course_list(client: Client, args) -> None:
    client.emit(client.request("GET", "/admin/courses"), _render_course_table)


def _cmd_user_create(client: Client, args) -> None:
    body = {"external_subject": args.subject, "display_name": args.name, "email": args.email}
    client.emit(client.request("POST", "/admin/users", json_body=body))


def _cmd_member_add(client: Client, args) -> None:
    body = {"user_id": args.user, "role": args.role}
    client.emit(client.request("POST", f"/admin/courses/{args.course}/members", json_body=body))


def _cmd_key_issue(client: Client, args) -> None:
    body = {"user_id": args.user, "label": args.label}
    response = client.request("POST", f"/admin/courses/{args.course}/keys", json_body=body)
    if client.output == "json":
        client.emit(response)
    else:
        record = response.json()
        # The plaintext is printed once and exists nowhere else.
        print(record["key"])


def _cmd_key_revoke(client: Client, args) -> None:
    client.emit(client.request("DELETE", f"/admin/keys/{args.id}"))


def _cmd_budget_set(client: Client, args) -> None:
    if args.limit < 0:
        raise CliError("--limit must be non-negative", 2)
    response = client.request(
        "POST", f"/admin/courses/{args.course}/budget", json_body={"set_limit": args.limit}
    )
    client.emit(response, _render_budget_table)


def _cmd_budget_add(client: Client, args) -> None:
    if args.amount < 0:
        raise CliError("--amount must be non-negative", 2)
    response = client.request(
        "POST", f"/admin/courses/{args.course}/budget", json_body={"add_funds": args.amount}
    )
    client.emit(response, _render_budget_table)


def _parse_model_spec(spec: str):
    # name:input_per_1k:output_per_1k
    parts = spec.split(":")
    if len(parts) != 3:
        raise CliError(f"model spec {spec!r} must be name:input_per_1k:output_per_1k", 2)
    try:
        return {"name": parts[0], "input_per_1k_tokens": int(parts[1]), "output_per_1k_tokens": int(parts[2])}
    except ValueError:
        raise CliError(f"model spec {spec!r} has non-integer prices", 2) from None


def _cmd_backend_register(client: Client, args) -> None:
    body = {
        "name": args.name,
        "backend_class": args.backend_class,
        "base_url": args.base_url,
        "credential_ref": args.credential_ref,
        "timeout_ms": args.timeout_ms,
        "models": [_parse_model_spec(spec) for spec in args.model],
    }
    client.emit(client.request("POST", "/admin/backends", json_body=body))


def _cmd_usage_report(client: Client, args) -> None:
    params = {"from": getattr(args, "from"), "to": args.to}
    if args.course:
        params["course_id"] = args.course
    client.emit(client.request("GET", "/admin/usage", params=params), _render_usage_table)


def _cmd_ingest(client: Client, args) -> None:
    config = intake.ChunkingConfig(size_tokens=args.chunk_size, overlap_tokens=args.overlap)
    with tempfile.NamedTemporaryFile("w+", suffix=".jsonl", delete=False) as fh:
        out_path = fh.name
    try:
        stats = intake.ingest(args.paths, args.collection, config, out_path=out_path)
        with open(out_path, "r", encoding="utf-8") as fh:
            payload = fh.read()
    finally:
        try:
            os.unlink(out_path)
        except OSError:
            pass
    response = client.request("POST", "/admin/collections/import", content=payload.encode("utf-8"))
    merged = dict(stats)
    merged.update(response.json())
    print(json.dumps(merged, sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    # shared flags work both before and after the subcommand; SUPPRESS keeps
    # a subcommand's unset flag from clobbering a value parsed at the root
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--endpoint", default=argparse.SUPPRESS, help="gateway URL (env VERDE_ENDPOINT)"
    )
    common.add_argument(
        "--token", default=argparse.SUPPRESS, help="admin API key (env VERDE_ADMIN_TOKEN)"
    )
    common.add_argument("--output", choices=("json", "table"), default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="verde-admin", description="verde gateway admin CLI")
    parser.add_argument("--endpoint", default=None, help="gateway URL (env VERDE_ENDPOINT)")
    parser.add_argument("--token", default=None, help="admin API key (env VERDE_ADMIN_TOKEN)")
    parser.add_argument("--output", choices=("json", "table"), default="table")
    sub = parser.add_subparsers(dest="command", required=True)

    course = sub.add_parser("course").add_subparsers(dest="subcommand", required=True)
    create = course.add_parser("create", parents=[common])
    create.add_argument("--name", required=True)
    create.add_argument("--models", required=True, help="comma-separated model names")
    create.add_argument("--mode", choices=("pass_through", "rag"), default="pass_through")
    create.add_argument("--collection", default=None)
    create.add_argument("--temperature", type=float, default=None)
    create.set_defaults(func=_cmd_course_create)
    course.add_parser("list", parents=[common]).set_defaults(func=_cmd_course_list)

    user = sub.add_parser("user").add_subparsers(dest="subcommand", required=True)
    ucreate = user.add_parser("create", parents=[common])
    ucreate.add_argument("--subject", required=True)
    ucreate.add_argument("--name", required=True)
    ucreate.add_argument("--email", required=True)
    ucreate.set_defaults(func=_cmd_user_create)

    member = sub.add_parser("member").add_subparsers(dest="subcommand", required=True)
    madd = member.add_parser("add", parents=[common])
    madd.add_argument("--course", required=True)
    madd.add_argument("--user", required=True)
    madd.add_argument("--role", choices=("student", "instructor"), required=True)
    madd.set_defaults(func=_cmd_member_add)

    key = sub.add_parser("key").add_subparsers(dest="subcommand", required=True)
    kissue = key.add_parser("issue", parents=[common])
    kissue.add_argument("--course", required=True)
    kissue.add_argument("--user", required=True)
    kissue.add_argument("--label", default="")
    kissue.set_defaults(func=_cmd_key_issue)
    krevoke = key.add_parser("revoke", parents=[common])
    krevoke.add_argument("--id", required=True)
    krevoke.set_defaults(func=_cmd_key_revoke)

    budget = sub.add_parser("budget").add_subparsers(dest="subcommand", required=True)
    bset = budget.add_parser("set", parents=[common])
    bset.add_argument("--course", required=True)
    bset.add_argument("--limit", type=int, required=True)
    bset.set_defaults(func=_cmd_budget_set)
    badd = budget.add_parser("add", parents=[common])
    badd.add_argument("--course", required=True)
    badd.add_argument("--amount", type=int, required=True)
    badd.set_defaults(func=_cmd_budget_add)

    backend = sub.add_parser("backend").add_subparsers(dest="subcommand", required=True)
    bregister = backend.add_parser("register", parents=[common])
    bregister.add_argument("--name", required=True)
    bregister.add_argument("--class", dest="backend_class", choices=("self_hosted", "proxy"), required=True)
    bregister.add_argument("--base-url", required=True)
    bregister.add_argument("--credential-ref", required=True)
    bregister.add_argument("--timeout-ms", type=int, default=30_000)
    bregister.add_argument(
        "--model",
        action="append",
        required=True,
        help="model spec name:input_per_1k:output_per_1k (repeatable)",
    )
    bregister.set_defaults(func=_cmd_backend_register)

    usage = sub.add_parser("usage").add_subparsers(dest="subcommand", required=True)
    ureport = usage.add_parser("report", parents=[common])
    ureport.add_argument("--from", required=True)
    ureport.add_argument("--to", required=True)
    ureport.add_argument("--course", default=None)
    ureport.set_defaults(func=_cmd_usage_report)

    ing = sub.add_parser("ingest", parents=[common])
    ing.add_argument("--collection", required=True)
    ing.add_argument("--chunk-size", type=int, default=512)
    ing.add_argument("--overlap", type=int, default=64)
    ing.add_argument("paths", nargs="+")
    ing.set_defaults(func=_cmd_ingest)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    endpoint = args.endpoint or os.environ.get("VERDE_ENDPOINT", DEFAULT_ENDPOINT)
    token = args.token or os.environ.get("VERDE_ADMIN_TOKEN", "")
    try:
        client = Client(endpoint, token, args.output)
        args.func(client, args)
        return 0
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except intake.ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
