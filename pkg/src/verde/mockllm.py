"""Deterministic mock LLM backend speaking the OpenAI chat-completions wire.

The contract is simple enough to predict by hand in any test: the reply is
the last user message uppercased, truncated to `max_tokens` whitespace
tokens, and usage counts come from the same whitespace token counter the
gateway uses. Runs standalone via `verde-mock-upstream` or in-process as an
ASGI app.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import re
import time
from typing import Dict, Iterator, List, Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, StreamingResponse

from .errors import NotFound, ValidationError
from .metering import count_tokens
from .store import canonical_json

MOCK_MODEL = "mock-echo"
_CREATED = 1700000000  # fixed so responses are fully deterministic

_TOKEN_SPAN_RE = re.compile(r"\S+")


def _truncate_tokens(text: str, max_tokens: int) -> tuple[str, bool]:
    spans = [m.span() for m in _TOKEN_SPAN_RE.finditer(text)]
    if not spans:
        return "", False
    keep = min(max_tokens, len(spans))
    truncated = keep < len(spans)
    return text[spans[0][0] : spans[keep - 1][1]], truncated


def mock_completion(payload: Dict) -> Dict:
    """Apply the echo contract to an OpenAI-wire chat request."""
    model = payload.get("model")
    if model != MOCK_MODEL:
        raise NotFound(f"model {model!r} is not served here")
    messages = payload.get("messages") or []
    last_user = None
    for message in messages:
        if message.get("role") == "user":
            last_user = message
    if last_user is None:
        raise ValidationError("request has no user message")
    max_tokens = payload.get("max_tokens") or 1024
    content, truncated = _truncate_tokens(str(last_user.get("content", "")).upper(), max_tokens)
    prompt_tokens = sum(count_tokens(str(m.get("content", ""))) for m in messages)
    completion_tokens = count_tokens(content)
    request_id = "mock-" + hashlib.sha256(canonical_json(payload)).hexdigest()[:12]
    return {
        "id": request_id,
        "object": "chat.completion",
        "created": _CREATED,
        "model": MOCK_MODEL,
        "choices": [
            {
                "index": 0,
                "message": {"role": "assistant", "content": content},
                "finish_reason": "length" if truncated else "stop",
            }
        ],
        "usage": {
            "prompt_tokens": prompt_tokens,
            "completion_tokens": completion_tokens,
            "total_tokens": prompt_tokens + completion_tokens,
        },
    }


def split_deltas(content: str) -> List[str]:
    """Split content into per-token streaming deltas that concatenate exactly."""
    spans = [m.span() for m in _TOKEN_SPAN_RE.finditer(content)]
    if not spans:
        return []
    deltas = [content[: spans[0][1]]]
    for (_, prev_end), (_, end) in zip(spans, spans[1:]):
        deltas.append(content[prev_end:end])
    tail = content[spans[-1][1] :]
    if tail:
        deltas[-1] += tail
    return deltas


def stream_chunks(payload: Dict) -> Iterator[str]:
    """Yield the SSE `data:` payload strings for a streaming mock response."""
    response = mock_completion(payload)
    choice = response["choices"][0]
    base = {
        "id": response["id"],
        "object": "chat.completion.chunk",
        "created": response["created"],
        "model": response["model"],
    }
    deltas = split_deltas(choice["message"]["content"])
    for i, delta in enumerate(deltas):
        body: Dict = {"content": delta}
        if i == 0:
            body["role"] = "assistant"
        chunk = dict(base, choices=[{"index": 0, "delta": body, "finish_reason": None}])
        yield json.dumps(chunk, separators=(",", ":"))
    final = dict(
        base,
        choices=[{"index": 0, "delta": {}, "finish_reason": choice["finish_reason"]}],
        usage=response["usage"],
    )
    yield json.dumps(final, separators=(",", ":"))


def _error_body(status: int, message: str, code: str) -> Dict:
    return {
        "error": {
            "message": message,
            "type": "invalid_request_error",
            "param": None,
            "code": code,
        }
    }


def create_mock_app(delta_delay: float = 0.0) -> FastAPI:
    """Build the ASGI app. `delta_delay` paces stream chunks (fault tests)."""
    app = FastAPI(title="verde mock upstream")

    @app.post("/v1/chat/completions")
    async def chat(request: Request):
        try:
            payload = json.loads(await request.body())
        except json.JSONDecodeError:
            return JSONResponse(_error_body(400, "bad JSON", "invalid_json"), status_code=400)
        try:
            if payload.get("stream"):
                chunks = list(stream_chunks(payload))

                def pump():
                    for chunk in chunks:
                        if delta_delay:
                            time.sleep(delta_delay)
                        yield f"data: {chunk}\n\n"
                    yield "data: [DONE]\n\n"

                return StreamingResponse(pump(), media_type="text/event-stream")
            return JSONResponse(mock_completion(payload))
        except NotFound as exc:
            return JSONResponse(_error_body(404, exc.message, "model_not_found"), status_code=404)
        except ValidationError as exc:
            return JSONResponse(_error_body(400, exc.message, exc.code), status_code=400)

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok"}

    return app


def main(argv: Optional[List[str]] = None) -> int:
    import uvicorn

    parser = argparse.ArgumentParser(prog="verde-mock-upstream")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=9801)
    args = parser.parse_args(argv)
    uvicorn.run(create_mock_app(), host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
