"""Shared test machinery: in-process mock transports, a raw TCP tee proxy
for byte-level traffic capture, a threaded uvicorn runner, and a gateway
harness that wires a full service over a temp directory."""

from __future__ import annotations

import json
import socket
import threading
import time
from typing import Dict, List, Optional, Tuple

import httpx
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat
from fastapi.testclient import TestClient

from verde.config import GatewayConfig
from verde.errors import NotFound, ValidationError
from verde.gateway import build_gateway, create_app
from verde.mockllm import mock_completion, stream_chunks

UPSTREAM_SECRET = "upstream-secret-0123456789abcdef"
MOCK_BASE_URL = "http://mock.upstream"


class MockUpstreamTransport(httpx.BaseTransport):
    """Serves the deterministic echo contract without a socket."""

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        payload = json.loads(request.read())
        try:
            if payload.get("stream"):
                body = b"".join(
                    f"data: {chunk}\n\n".encode() for chunk in stream_chunks(payload)
                ) + b"data: [DONE]\n\n"
                return httpx.Response(
                    200, content=body, headers={"content-type": "text/event-stream"}
                )
            return httpx.Response(200, json=mock_completion(payload))
        except NotFound as exc:
            return httpx.Response(
                404,
                json={"error": {"message": exc.message, "code": "model_not_found"}},
            )
        except ValidationError as exc:
            return httpx.Response(400, json={"error": {"message": exc.message}})


class RecordingTransport(httpx.BaseTransport):
    """Wraps a transport, capturing the serialized request bytes."""

    def __init__(self, inner: httpx.BaseTransport):
        self.inner = inner
        self.requests: List[Tuple[httpx.Request, bytes]] = []
        self._lock = threading.Lock()

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        body = request.read()
        head = f"{request.method} {request.url}\r\n".encode()
        head += b"".join(f"{k}: {v}\r\n".encode() for k, v in request.headers.items())
        with self._lock:
            self.requests.append((request, head + b"\r\n" + body))
        return self.inner.handle_request(request)

    @property
    def raw_bytes(self) -> bytes:
        with self._lock:
            return b"".join(raw for _, raw in self.requests)

    def bodies(self) -> List[bytes]:
        with self._lock:
            return [req.content for req, _ in self.requests]


class ErrorTransport(httpx.BaseTransport):
    def __init__(self, status: int = 500, body: str = "boom"):
        self.status = status
        self.body = body

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        return httpx.Response(self.status, text=self.body)


class TimeoutTransport(httpx.BaseTransport):
    def handle_request(self, request: httpx.Request) -> httpx.Response:
        raise httpx.ReadTimeout("simulated timeout", request=request)


class BrokenStreamTransport(httpx.BaseTransport):
    """Streams a couple of deltas, then dies mid-stream."""

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        payload = json.loads(request.read())
        chunks = list(stream_chunks(payload))

        def pump():
            for chunk in chunks[:2]:
                yield f"data: {chunk}\n\n".encode()
            raise httpx.ReadError("connection lost mid-stream", request=request)

        return httpx.Response(
            200, content=pump(), headers={"content-type": "text/event-stream"}
        )


def free_port() -> int:
    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    return port


class ServerHandle:
    """uvicorn in a daemon thread, for tests that need real sockets."""

    def __init__(self, app, host: str = "127.0.0.1", port: Optional[int] = None):
        import uvicorn

        self.host = host
        self.port = port or free_port()
        config = uvicorn.Config(app, host=host, port=self.port, log_level="warning")
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)
        self.thread.start()
        deadline = time.time() + 10
        while not self.server.started:
            if time.time() > deadline:
                raise RuntimeError("server failed to start")
            time.sleep(0.01)

    @property
    def base_url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def stop(self) -> None:
        self.server.should_exit = True
        self.thread.join(timeout=10)


class TeeProxy:
    """Raw TCP proxy recording every byte that crosses it, both directions."""

    def __init__(self, upstream_host: str, upstream_port: int):
        self.upstream = (upstream_host, upstream_port)
        self.client_to_upstream = bytearray()
        self.upstream_to_client = bytearray()
        self._lock = threading.Lock()
        self._server = socket.create_server(("127.0.0.1", 0))
        self._server.settimeout(0.2)
        self.port = self._server.getsockname()[1]
        self._stop = False
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def _accept_loop(self) -> None:
        while not self._stop:
            try:
                conn, _ = self._server.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            try:
                up = socket.create_connection(self.upstream)
            except OSError:
                conn.close()
                continue
            threading.Thread(
                target=self._pump, args=(conn, up, self.client_to_upstream), daemon=True
            ).start()
            threading.Thread(
                target=self._pump, args=(up, conn, self.upstream_to_client), daemon=True
            ).start()

    def _pump(self, src: socket.socket, dst: socket.socket, sink: bytearray) -> None:
        try:
            while True:
                data = src.recv(65536)
                if not data:
                    break
                with self._lock:
                    sink.extend(data)
                dst.sendall(data)
        except OSError:
            pass
        finally:
            for sock in (src, dst):
                try:
                    sock.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass

    def captured(self) -> Tuple[bytes, bytes]:
        with self._lock:
            return bytes(self.client_to_upstream), bytes(self.upstream_to_client)

    def close(self) -> None:
        self._stop = True
        try:
            self._server.close()
        except OSError:
            pass


class GatewayHarness:
    """A fully wired gateway over a temp dir, driven through TestClient."""

    def __init__(
        self,
        tmp_path,
        denylist=("forbiddenword",),
        upstream_transport: Optional[httpx.BaseTransport] = None,
        history_token_budget: int = 3072,
    ):
        self.login_key = Ed25519PrivateKey.generate()
        public_hex = self.login_key.public_key().public_bytes(
            Encoding.Raw, PublicFormat.Raw
        ).hex()
        self.config = GatewayConfig(
            storage_path=str(tmp_path / "data"),
            denylist=list(denylist),
            login_public_key_hex=public_hex,
            history_token_budget=history_token_budget,
        )
        self.recording = RecordingTransport(upstream_transport or MockUpstreamTransport())
        self.gw = build_gateway(self.config, transport=self.recording)
        self.gw.router.secrets["mock-cred"] = UPSTREAM_SECRET
        self.admin_key = self.gw.bootstrap_admin()
        self.app = create_app(self.gw)
        self.client = TestClient(self.app)
        self._counter = 0

    # -- header helpers ----------------------------------------------------

    @property
    def admin_headers(self) -> Dict[str, str]:
        return {"Authorization": f"Bearer {self.admin_key}"}

    @staticmethod
    def bearer(token: str) -> Dict[str, str]:
        return {"Authorization": f"Bearer {token}"}

    # -- provisioning ----------------------------------------------------------

    def register_backend(
        self,
        name: str = "local",
        backend_class: str = "self_hosted",
        base_url: str = MOCK_BASE_URL,
        models=(("mock-echo", 1000, 1000),),
        timeout_ms: int = 30_000,
        credential_ref: str = "mock-cred",
    ) -> Dict:
        response = self.client.post(
            "/admin/backends",
            headers=self.admin_headers,
            json={
                "name": name,
                "backend_class": backend_class,
                "base_url": base_url,
                "credential_ref": credential_ref,
                "timeout_ms": timeout_ms,
                "models": [
                    {"name": m, "input_per_1k_tokens": i, "output_per_1k_tokens": o}
                    for m, i, o in models
                ],
            },
        )
        assert response.status_code == 200, response.text
        return response.json()

    def create_user(self, subject: Optional[str] = None) -> Dict:
        self._counter += 1
        subject = subject or f"subject-{self._counter}"
        response = self.client.post(
            "/admin/users",
            headers=self.admin_headers,
            json={
                "external_subject": subject,
                "display_name": f"User {self._counter}",
                "email": f"user{self._counter}@example.edu",
            },
        )
        assert response.status_code == 200, response.text
        return response.json()

    def create_course(self, models=("mock-echo",), mode="pass_through", **extra) -> Dict:
        self._counter += 1
        body = {
            "name": extra.pop("name", f"Course {self._counter}"),
            "allowed_models": list(models),
            "mode": mode,
        }
        body.update(extra)
        response = self.client.post("/admin/courses", headers=self.admin_headers, json=body)
        assert response.status_code == 200, response.text
        return response.json()

    def enroll(self, course_id: str, user_id: str, role: str = "student") -> None:
        response = self.client.post(
            f"/admin/courses/{course_id}/members",
            headers=self.admin_headers,
            json={"user_id": user_id, "role": role},
        )
        assert response.status_code == 200, response.text

    def issue_key(self, course_id: str, user_id: str, label: str = "test") -> Tuple[str, str]:
        response = self.client.post(
            f"/admin/courses/{course_id}/keys",
            headers=self.admin_headers,
            json={"user_id": user_id, "label": label},
        )
        assert response.status_code == 200, response.text
        body = response.json()
        return body["id"], body["key"]

    def fund(self, course_id: str, amount: int) -> None:
        response = self.client.post(
            f"/admin/courses/{course_id}/budget",
            headers=self.admin_headers,
            json={"add_funds": amount},
        )
        assert response.status_code == 200, response.text

    def quick_member(
        self, mode: str = "pass_through", funds: int = 10_000_000, role: str = "student", **extra
    ) -> Tuple[Dict, Dict, str]:
        """Create course + funded budget + enrolled user; returns (course, user, key)."""
        course = self.create_course(mode=mode, **extra)
        user = self.create_user()
        self.enroll(course["id"], user["id"], role)
        if funds:
            self.fund(course["id"], funds)
        _, key = self.issue_key(course["id"], user["id"])
        return course, user, key

    def seed_collection(self, collection_id: str, texts) -> None:
        self.gw.rag.create_collection(collection_id)
        for seq, text in enumerate(texts):
            self.gw.rag.upsert(collection_id, text, "seed.txt", seq)


def collect_sse(response) -> List[str]:
    """Extract the data payloads from an SSE byte stream response."""
    events = []
    for line in response.iter_lines():
        if line.startswith("data:"):
            events.append(line[len("data:") :].strip())
    return events


def sse_deltas(events: List[str]) -> Tuple[str, Optional[Dict], Optional[str]]:
    """Return (concatenated content, terminal usage, finish_reason)."""
    content = []
    usage = None
    finish = None
    for event in events:
        if event == "[DONE]":
            continue
        chunk = json.loads(event)
        if "choices" in chunk and chunk["choices"]:
            delta = chunk["choices"][0].get("delta") or {}
            if delta.get("content"):
                content.append(delta["content"])
            if chunk["choices"][0].get("finish_reason"):
                finish = chunk["choices"][0]["finish_reason"]
        if chunk.get("usage"):
            usage = chunk["usage"]
    return "".join(content), usage, finish
