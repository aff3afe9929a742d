#!/usr/bin/env python3
"""Spin up a seeded gateway + mock upstream for the frontend e2e suite.

Prints one JSON line with connection info and login assertions, then blocks
until killed. All provisioning happens over the gateway's admin REST API.
"""

import json
import socket
import sys
import tempfile
import threading
import time

import httpx
import uvicorn
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from verde.config import GatewayConfig
from verde.gateway import build_gateway, create_app
from verde.intake import ChunkingConfig, ingest
from verde.mockllm import create_mock_app
from verde.rag import RagEngine
from verde.tenancy import sign_assertion

UPSTREAM_SECRET = "e2e-upstream-secret"


def free_port() -> int:
    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    return port


def serve(app, port: int) -> uvicorn.Server:
    server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=port, log_level="warning"))
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    while not server.started:
        time.sleep(0.01)
    return server


def main() -> int:
    workdir = tempfile.mkdtemp(prefix="verde-e2e-")
    login_key = Ed25519PrivateKey.generate()
    public_hex = login_key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw).hex()

    upstream_port = free_port()
    serve(create_mock_app(), upstream_port)

    config = GatewayConfig(
        storage_path=f"{workdir}/data",
        denylist=["forbiddenword"],
        login_public_key_hex=public_hex,
    )
    gateway = build_gateway(config)
    gateway.router.secrets["mock-cred"] = UPSTREAM_SECRET
    admin_key = gateway.bootstrap_admin()
    gateway_port = free_port()
    serve(create_app(gateway), gateway_port)
    base_url = f"http://127.0.0.1:{gateway_port}"

    admin = httpx.Client(
        base_url=base_url, headers={"Authorization": f"Bearer {admin_key}"}, timeout=30.0
    )

    def post(path, body):
        response = admin.post(path, json=body)
        response.raise_for_status()
        return response.json()

    post(
        "/admin/backends",
        {
            "name": "local",
            "backend_class": "self_hosted",
            "base_url": f"http://127.0.0.1:{upstream_port}",
            "credential_ref": "mock-cred",
            "timeout_ms": 30_000,
            "models": [
                {"name": "mock-echo", "input_per_1k_tokens": 1000, "output_per_1k_tokens": 1000}
            ],
        },
    )

    student = post(
        "/admin/users",
        {"external_subject": "e2e-student", "display_name": "E2E Student", "email": "stu@x"},
    )
    instructor = post(
        "/admin/users",
        {"external_subject": "e2e-instructor", "display_name": "E2E Instructor", "email": "ins@x"},
    )

    course = post(
        "/admin/courses",
        {"name": "E2E Pass-through", "allowed_models": ["mock-echo"], "mode": "pass_through"},
    )
    post(f"/admin/courses/{course['id']}/members", {"user_id": student["id"], "role": "student"})
    post(
        f"/admin/courses/{course['id']}/members",
        {"user_id": instructor["id"], "role": "instructor"},
    )
    post(f"/admin/courses/{course['id']}/budget", {"add_funds": 10_000_000})

    # collection via the intake pipeline -> line-JSON -> import endpoint
    doc_path = f"{workdir}/facts.txt"
    with open(doc_path, "w", encoding="utf-8") as fh:
        fh.write("the sky is blue. antennas radiate energy. grass is green.")
    export_path = f"{workdir}/facts.jsonl"
    ingest([doc_path], "e2e-facts", ChunkingConfig(4, 1), RagEngine(), out_path=export_path)
    with open(export_path, "rb") as fh:
        admin.post("/admin/collections/import", content=fh.read()).raise_for_status()

    rag_course = post(
        "/admin/courses",
        {
            "name": "E2E RAG",
            "allowed_models": ["mock-echo"],
            "mode": "rag",
            "collection_id": "e2e-facts",
        },
    )
    post(f"/admin/courses/{rag_course['id']}/members", {"user_id": student["id"], "role": "student"})
    post(f"/admin/courses/{rag_course['id']}/budget", {"add_funds": 10_000_000})

    broke_course = post(
        "/admin/courses",
        {"name": "E2E Broke", "allowed_models": ["mock-echo"], "mode": "pass_through"},
    )
    post(f"/admin/courses/{broke_course['id']}/members", {"user_id": student["id"], "role": "student"})

    expiry = time.time() + 3600

    def assertion(user):
        return sign_assertion(
            login_key,
            {
                "subject": user["external_subject"],
                "email": user["email"],
                "display_name": user["display_name"],
                "expiry": expiry,
            },
        )

    print(
        json.dumps(
            {
                "base_url": base_url,
                "admin_key": admin_key,
                "course_id": course["id"],
                "rag_course_id": rag_course["id"],
                "broke_course_id": broke_course["id"],
                "student_assertion": assertion(student),
                "instructor_assertion": assertion(instructor),
            }
        ),
        flush=True,
    )
    threading.Event().wait()
    return 0


if __name__ == "__main__":
    sys.exit(main())
