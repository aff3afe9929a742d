"""Model-name routing and request forwarding to upstream backends.

A model name resolves to exactly one registered backend; forwarding swaps
the caller's surrogate credential for the backend's real credential (loaded
from a separate secrets file, never from the main store) and speaks the
OpenAI chat-completions wire, unary or streaming.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional

import httpx

from .errors import (
    ConflictError,
    NotFound,
    UpstreamError,
    UpstreamTimeout,
    ValidationError,
)
from .store import Store, canonical_json

DEFAULT_TIMEOUT_MS = 30_000
BACKEND_CLASSES = ("self_hosted", "proxy")


@dataclass(frozen=True)
class Backend:
    name: str
    backend_class: str
    base_url: str
    credential_ref: str
    model_names: List[str]
    timeout_ms: int = DEFAULT_TIMEOUT_MS

    def to_json(self) -> Dict:
        return {
            "name": self.name,
            "backend_class": self.backend_class,
            "base_url": self.base_url,
            "credential_ref": self.credential_ref,
            "model_names": list(self.model_names),
            "timeout_ms": self.timeout_ms,
        }


@dataclass(frozen=True)
class UpstreamResult:
    content: str
    finish_reason: str
    usage: Optional[Dict[str, int]] = None


@dataclass(frozen=True)
class StreamEvent:
    kind: str  # "delta" | "done" | "error"
    content: str = ""
    finish_reason: str = ""
    usage: Optional[Dict[str, int]] = None
    error: str = ""


def load_secrets(path: str) -> Dict[str, str]:
    """Read the credential_ref -> secret map from the secrets file."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or not all(isinstance(v, str) for v in data.values()):
        raise ValidationError("secrets file must map credential refs to strings")
    return data


class Router:
    """Backend registry plus the forwarding edge.

    The backend table is read-mostly; registration replaces it atomically
    under a lock. Forwards are independent httpx calls with per-backend
    timeouts, so one slow upstream cannot block another request.
    """

    def __init__(
        self,
        store: Store,
        secrets: Optional[Dict[str, str]] = None,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        self.store = store
        self.secrets = dict(secrets or {})
        self._lock = threading.Lock()
        self._client = httpx.Client(transport=transport)

    # -- registry ----------------------------------------------------------

    def register_backend(self, backend: Backend) -> None:
        if not backend.model_names:
            raise ValidationError("backend must serve at least one model")
        if backend.backend_class not in BACKEND_CLASSES:
            raise ValidationError(f"backend class must be one of {BACKEND_CLASSES}")
        if backend.timeout_ms <= 0:
            raise ValidationError("timeout_ms must be positive")
        with self._lock:
            for other in self.list_backends():
                if other.name == backend.name:
                    continue
                overlap = set(other.model_names) & set(backend.model_names)
                if overlap:
                    raise ConflictError(
                        f"models {sorted(overlap)} already served by backend {other.name!r}"
                    )
            from .errors import VersionConflict

            while True:
                try:
                    version = self.store.get("backends", backend.name)[0]
                except NotFound:
                    version = 0
                try:
                    self.store.put_cas("backends", backend.name, version, backend.to_json())
                    return
                except VersionConflict:
                    continue

    def list_backends(self) -> List[Backend]:
        backends = []
        for key in self.store.list_prefix("backends"):
            _, body = self.store.get("backends", key)
            backends.append(Backend(**body))
        return backends

    def resolve(self, model_name: str) -> Backend:
        for backend in self.list_backends():
            if model_name in backend.model_names:
                return backend
        raise NotFound(f"no backend serves model {model_name!r}")

    # -- forwarding ----------------------------------------------------------

    def _headers(self, backend: Backend) -> Dict[str, str]:
        secret = self.secrets.get(backend.credential_ref)
        if secret is None:
            raise NotFound(f"no credential for ref {backend.credential_ref!r}")
        # Only the upstream credential goes out; the caller's surrogate key
        # never reaches this layer.
        return {"Authorization": f"Bearer {secret}", "Content-Type": "application/json"}

    def _post(self, backend: Backend, payload: Dict, stream: bool):
        url = backend.base_url.rstrip("/") + "/v1/chat/completions"
        request = self._client.build_request(
            "POST",
            url,
            content=canonical_json(payload),
            headers=self._headers(backend),
            timeout=backend.timeout_ms / 1000.0,
        )
        return self._client.send(request, stream=stream)

    def forward(self, backend: Backend, payload: Dict) -> UpstreamResult:
        try:
            response = self._post(backend, payload, stream=False)
        except httpx.TimeoutException as exc:
            raise UpstreamTimeout(f"backend {backend.name} timed out: {exc}") from exc
        except httpx.HTTPError as exc:
            raise UpstreamError(0, str(exc)) from exc
        if response.status_code != 200:
            raise UpstreamError(response.status_code, response.text)
        body = response.json()
        try:
            choice = body["choices"][0]
            content = choice["message"]["content"]
            finish_reason = choice.get("finish_reason") or "stop"
        except (KeyError, IndexError, TypeError) as exc:
            raise UpstreamError(200, f"malformed upstream body: {body}") from exc
        usage = body.get("usage")
        if usage is not None:
            usage = {
                "prompt_tokens": int(usage.get("prompt_tokens", 0)),
                "completion_tokens": int(usage.get("completion_tokens", 0)),
            }
            if usage["prompt_tokens"] < 0 or usage["completion_tokens"] < 0:
                raise UpstreamError(200, "upstream reported negative usage")
        return UpstreamResult(content=content, finish_reason=finish_reason, usage=usage)

    def forward_stream(self, backend: Backend, payload: Dict) -> Iterator[StreamEvent]:
        payload = dict(payload, stream=True)
        try:
            response = self._post(backend, payload, stream=True)
        except httpx.TimeoutException as exc:
            yield StreamEvent(kind="error", error=f"backend {backend.name} timed out: {exc}")
            return
        except httpx.HTTPError as exc:
            yield StreamEvent(kind="error", error=str(exc))
            return
        if response.status_code != 200:
            response.read()
            response.close()
            yield StreamEvent(
                kind="error", error=f"upstream returned {response.status_code}: {response.text[:200]}"
            )
            return
        finish_reason = "stop"
        usage: Optional[Dict[str, int]] = None
        try:
            for line in response.iter_lines():
                if not line.startswith("data:"):
                    continue
                data = line[len("data:") :].strip()
                if data == "[DONE]":
                    break
                try:
                    chunk = json.loads(data)
                except json.JSONDecodeError:
                    continue
                choices = chunk.get("choices") or []
                if choices:
                    delta = choices[0].get("delta") or {}
                    content = delta.get("content")
                    if content:
                        yield StreamEvent(kind="delta", content=content)
                    if choices[0].get("finish_reason"):
                        finish_reason = choices[0]["finish_reason"]
                if chunk.get("usage"):
                    usage = {
                        "prompt_tokens": int(chunk["usage"].get("prompt_tokens", 0)),
                        "completion_tokens": int(chunk["usage"].get("completion_tokens", 0)),
                    }
        except httpx.TimeoutException as exc:
            yield StreamEvent(kind="error", error=f"backend {backend.name} timed out: {exc}")
            return
        except httpx.HTTPError as exc:
            yield StreamEvent(kind="error", error=f"stream failed: {exc}")
            return
        finally:
            response.close()
        yield StreamEvent(kind="done", finish_reason=finish_reason, usage=usage)

    def close(self) -> None:
        self._client.close()
