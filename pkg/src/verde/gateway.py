"""The HTTP gateway: OpenAI-compatible chat plus the admin surface.

Request pipeline for chat, in order: authenticate, authorize, model
allow-list, input guardrail, RAG assembly or pass-through, history
truncation, budget reserve, upstream forward, output guardrail, settle,
conversation append. Reserve always precedes the upstream call and every
upstream call ends in exactly one settle or cancel, which is what the
budget-safety guarantees hang on.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import uuid
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, StreamingResponse

from .config import GatewayConfig, load_config
from .conversations import ConversationLog
from .errors import (
    AuthError,
    Forbidden,
    NotFound,
    UpstreamError,
    UpstreamTimeout,
    ValidationError,
    VerdeError,
)
from .metering import MeteringService, Price, count_tokens
from .rag import DEFAULT_RAG_TEMPLATE, RagEngine, assemble_prompt
from .router import Backend, Router, load_secrets
from .store import Store
from .tenancy import (
    Course,
    Principal,
    SessionManager,
    StaticKeyLoginProvider,
    TenancyService,
    authorize,
)

VALID_ROLES = ("system", "user", "assistant")


# -- guardrails ---------------------------------------------------------------


class Guardrail:
    """Deterministic denylist filter over request and response text."""

    def __init__(self, denylist: List[str], blocked_message: str):
        if any(not p for p in denylist):
            raise ValidationError("denylist patterns must be nonempty")
        self.denylist = list(denylist)
        self._lowered = [p.lower() for p in self.denylist]
        self.blocked_message = blocked_message

    def check(self, text: str) -> Optional[str]:
        """Return the first matching pattern in list order, else None."""
        haystack = text.lower()
        for pattern, lowered in zip(self.denylist, self._lowered):
            if lowered in haystack:
                return pattern
        return None


# -- history truncation --------------------------------------------------------


def truncate_history(turns: List[Dict[str, str]], token_budget: int = 3072) -> List[Dict[str, str]]:
    """Keep the newest whole turns whose cumulative token count fits the budget.

    System messages are always kept and never counted. If even the newest
    non-system turn exceeds the budget on its own it is kept anyway, so a
    request never degenerates to zero user content.
    """
    keep = [False] * len(turns)
    budget = token_budget
    newest_non_system = None
    stopped = False
    for i in range(len(turns) - 1, -1, -1):
        if turns[i].get("role") == "system":
            keep[i] = True
            continue
        if newest_non_system is None:
            newest_non_system = i
        if stopped:
            continue
        cost = count_tokens(turns[i].get("content", ""))
        if cost <= budget:
            keep[i] = True
            budget -= cost
        else:
            stopped = True
    if newest_non_system is not None and not any(
        keep[i] for i in range(len(turns)) if turns[i].get("role") != "system"
    ):
        keep[newest_non_system] = True
    return [turn for i, turn in enumerate(turns) if keep[i]]


# -- chat request parsing --------------------------------------------------------


@dataclass
class ChatRequest:
    model: str
    messages: List[Dict[str, str]]
    max_tokens: int
    temperature: float
    stream: bool
    conversation_id: Optional[str]


def parse_chat_request(body: Dict, course: Optional[Course] = None) -> ChatRequest:
    if not isinstance(body, dict):
        raise ValidationError("request body must be a JSON object")
    model = body.get("model")
    if not isinstance(model, str) or not model:
        raise ValidationError("model is required")
    messages = body.get("messages")
    if not isinstance(messages, list) or not messages:
        raise ValidationError("messages must be a nonempty list")
    saw_user = False
    for message in messages:
        if not isinstance(message, dict):
            raise ValidationError("each message must be an object")
        role = message.get("role")
        if role not in VALID_ROLES:
            raise ValidationError(f"message role must be one of {VALID_ROLES}")
        if not isinstance(message.get("content"), str):
            raise ValidationError("message content must be a string")
        saw_user = saw_user or role == "user"
    if not saw_user:
        raise ValidationError("at least one user message is required")
    max_tokens = body.get("max_tokens", 1024)
    if not isinstance(max_tokens, int) or isinstance(max_tokens, bool) or max_tokens <= 0:
        raise ValidationError("max_tokens must be a positive integer")
    default_temperature = 0.7
    if course is not None and course.default_temperature is not None:
        default_temperature = course.default_temperature
    temperature = body.get("temperature", default_temperature)
    if isinstance(temperature, bool) or not isinstance(temperature, (int, float)):
        raise ValidationError("temperature must be a number")
    if not 0 <= temperature <= 2:
        raise ValidationError("temperature must be within [0, 2]")
    stream = body.get("stream", False)
    if not isinstance(stream, bool):
        raise ValidationError("stream must be a boolean")
    conversation_id = body.get("conversation_id")
    if conversation_id is not None and not isinstance(conversation_id, str):
        raise ValidationError("conversation_id must be a string")
    return ChatRequest(
        model=model,
        messages=messages,
        max_tokens=max_tokens,
        temperature=temperature,
        stream=stream,
        conversation_id=conversation_id,
    )


# -- pipeline state ---------------------------------------------------------------


@dataclass
class PreparedChat:
    request: ChatRequest
    course: Course
    conversation: Optional[Dict]
    payload: Dict
    new_turns: List[Dict[str, str]]
    backend: Optional[object] = None
    reservation: Optional[object] = None
    blocked_pattern: Optional[str] = None


class Gateway:
    def __init__(
        self,
        store: Store,
        tenancy: TenancyService,
        metering: MeteringService,
        router: Router,
        rag_engine: RagEngine,
        conversations: ConversationLog,
        config: GatewayConfig,
    ):
        self.store = store
        self.tenancy = tenancy
        self.metering = metering
        self.router = router
        self.rag = rag_engine
        self.conversations = conversations
        self.config = config
        self.guardrail = Guardrail(config.denylist, config.blocked_message)

    # -- bootstrap -------------------------------------------------------------

    def bootstrap_admin(self) -> Optional[str]:
        """Create the first admin user/key; returns the plaintext exactly once."""
        try:
            _, roster = self.store.get("users", "@admins")
            if roster["admin_user_ids"]:
                return None
        except NotFound:
            pass
        user = self.tenancy.create_user("bootstrap-admin", "Gateway Admin", "admin@localhost")
        self.tenancy.grant_admin(user.id)
        plaintext, _ = self.tenancy.issue_admin_key(user.id, label="bootstrap")
        return plaintext

    # -- authentication --------------------------------------------------------

    def principal_from(self, authorization: Optional[str], course_header: Optional[str]) -> Principal:
        if not authorization or not authorization.startswith("Bearer "):
            raise AuthError("missing bearer credential")
        token = authorization[len("Bearer ") :].strip()
        if token.startswith("sess-"):
            user_id = self.tenancy.sessions.resolve(token)
            if self.tenancy.is_admin(user_id):
                return Principal(user_id=user_id, course_id=course_header, role="admin")
            if course_header:
                course = self.tenancy.get_course(course_header)
                role = course.role_of(user_id)
                if role is None:
                    raise Forbidden("not a member of this course")
                return Principal(user_id=user_id, course_id=course_header, role=role)
            return Principal(user_id=user_id, course_id=None, role="student")
        principal = self.tenancy.authenticate(token)
        if principal.role == "admin" and course_header:
            principal = Principal(
                user_id=principal.user_id,
                course_id=course_header,
                role="admin",
                key_id=principal.key_id,
            )
        return principal

    def require(self, principal: Principal, action: str) -> None:
        if not authorize(principal, action):
            raise Forbidden(f"role {principal.role!r} may not {action}")

    def _course_scope(self, principal: Principal, course_id: str) -> None:
        if principal.role != "admin" and principal.course_id != course_id:
            raise Forbidden("course outside the caller's scope")

    # -- chat pipeline -----------------------------------------------------------

    def _prepare(self, principal: Principal, body: Dict, stream: bool) -> PreparedChat:
        self.require(principal, "chat")
        if principal.course_id is None:
            raise ValidationError("chat requires a course context (API key or X-Course-Id)")
        course = self.tenancy.get_course(principal.course_id)
        request = parse_chat_request(body, course)
        if request.model not in course.allowed_models:
            raise Forbidden(f"model {request.model!r} is not allowed for this course")

        for message in request.messages:
            pattern = self.guardrail.check(message["content"])
            if pattern is not None:
                return PreparedChat(
                    request=request,
                    course=course,
                    conversation=None,
                    payload={},
                    new_turns=[],
                    blocked_pattern=pattern,
                )

        conversation = None
        if request.conversation_id:
            conversation = self.conversations.get_owned(request.conversation_id, principal.user_id)
            if conversation["course_id"] != course.id:
                raise NotFound("conversation not found")

        stored_turns = [
            {"role": t["role"], "content": t["content"]}
            for t in (conversation["turns"] if conversation else [])
        ]
        new_turns = [m for m in request.messages if m.get("role") != "system"]

        if course.mode == "rag":
            question_index = max(
                i for i, m in enumerate(request.messages) if m.get("role") == "user"
            )
            question = request.messages[question_index]["content"]
            history = stored_turns + [
                {"role": m["role"], "content": m["content"]}
                for i, m in enumerate(request.messages)
                if i != question_index and m.get("role") != "system"
            ]
            history = truncate_history(history, self.config.history_token_budget)
            top_k = course.rag_top_k or self.config.rag_default_top_k
            threshold = (
                course.rag_threshold
                if course.rag_threshold is not None
                else self.config.rag_default_threshold
            )
            results = self.rag.top_k(course.collection_id, question, top_k, threshold)
            template = course.system_prompt_override or DEFAULT_RAG_TEMPLATE
            upstream_messages = assemble_prompt(results, question, history, template)
        else:
            if conversation is not None:
                upstream_messages = truncate_history(
                    stored_turns + request.messages, self.config.history_token_budget
                )
            else:
                upstream_messages = request.messages

        backend = self.router.resolve(request.model)
        prompt_estimate = sum(count_tokens(m.get("content", "")) for m in upstream_messages)
        reservation = self.metering.reserve(
            course.id,
            request.model,
            prompt_estimate,
            request.max_tokens,
            key_id=principal.key_id,
        )
        payload = {
            "model": request.model,
            "messages": upstream_messages,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "stream": stream,
        }
        return PreparedChat(
            request=request,
            course=course,
            conversation=conversation,
            payload=payload,
            new_turns=new_turns,
            backend=backend,
            reservation=reservation,
        )

    def _record_turns(self, principal: Principal, prep: PreparedChat, assistant_content: str) -> str:
        conversation = prep.conversation
        if conversation is None:
            conversation = self.conversations.create(
                principal.user_id, prep.course.id, prep.course.mode
            )
        self.conversations.append_turns(
            conversation["id"],
            prep.new_turns + [{"role": "assistant", "content": assistant_content}],
        )
        return conversation["id"]

    @staticmethod
    def _usage_from(result_usage: Optional[Dict[str, int]], payload: Dict, content: str) -> Dict[str, int]:
        # Upstream-reported usage is authoritative; whitespace-token counting
        # is only the fallback when the upstream omits it.
        if result_usage is not None:
            return dict(result_usage)
        prompt = sum(count_tokens(m.get("content", "")) for m in payload.get("messages", []))
        return {"prompt_tokens": prompt, "completion_tokens": count_tokens(content)}

    def _response_body(
        self,
        model: str,
        content: str,
        finish_reason: str,
        usage: Dict[str, int],
        conversation_id: Optional[str],
    ) -> Dict:
        body = {
            "id": "chatcmpl-" + uuid.uuid4().hex[:12],
            "object": "chat.completion",
            "created": int(time.time()),
            "model": model,
            "choices": [
                {
                    "index": 0,
                    "message": {"role": "assistant", "content": content},
                    "finish_reason": finish_reason,
                }
            ],
            "usage": {
                "prompt_tokens": usage["prompt_tokens"],
                "completion_tokens": usage["completion_tokens"],
                "total_tokens": usage["prompt_tokens"] + usage["completion_tokens"],
            },
        }
        if conversation_id is not None:
            body["conversation_id"] = conversation_id
        return body

    def chat_unary(self, principal: Principal, body: Dict) -> Dict:
        prep = self._prepare(principal, body, stream=False)
        if prep.blocked_pattern is not None:
            zero = {"prompt_tokens": 0, "completion_tokens": 0}
            return self._response_body(
                prep.request.model, self.guardrail.blocked_message, "content_filter", zero, None
            )
        try:
            result = self.router.forward(prep.backend, prep.payload)
        except (UpstreamError, UpstreamTimeout):
            self.metering.cancel(prep.reservation)
            raise
        if self.guardrail.check(result.content) is not None:
            self.metering.cancel(prep.reservation)
            zero = {"prompt_tokens": 0, "completion_tokens": 0}
            return self._response_body(
                prep.request.model, self.guardrail.blocked_message, "content_filter", zero, None
            )
        usage = self._usage_from(result.usage, prep.payload, result.content)
        self.metering.settle(
            prep.reservation,
            usage["prompt_tokens"],
            usage["completion_tokens"],
            prep.backend.backend_class,
        )
        conversation_id = self._record_turns(principal, prep, result.content)
        return self._response_body(
            prep.request.model, result.content, result.finish_reason, usage, conversation_id
        )

    def chat_stream(self, principal: Principal, body: Dict) -> Tuple[PreparedChat, Iterator[str]]:
        """Prepare the request (raising pre-stream errors), return the SSE pump."""
        prep = self._prepare(principal, body, stream=True)
        return prep, self._stream_events(principal, prep)

    def _sse_chunk(self, chunk_id: str, model: str, *, delta: Dict, finish_reason, extra: Optional[Dict] = None) -> str:
        body = {
            "id": chunk_id,
            "object": "chat.completion.chunk",
            "created": int(time.time()),
            "model": model,
            "choices": [{"index": 0, "delta": delta, "finish_reason": finish_reason}],
        }
        if extra:
            body.update(extra)
        return f"data: {json.dumps(body, separators=(',', ':'))}\n\n"

    def _stream_events(self, principal: Principal, prep: PreparedChat) -> Iterator[str]:
        chunk_id = "chatcmpl-" + uuid.uuid4().hex[:12]
        model = prep.request.model
        if prep.blocked_pattern is not None:
            yield self._sse_chunk(
                chunk_id,
                model,
                delta={"role": "assistant", "content": self.guardrail.blocked_message},
                finish_reason="content_filter",
            )
            yield "data: [DONE]\n\n"
            return
        settled = False
        try:
            pieces: List[str] = []
            finish_reason = "stop"
            usage: Optional[Dict[str, int]] = None
            error: Optional[str] = None
            first = True
            for event in self.router.forward_stream(prep.backend, prep.payload):
                if event.kind == "delta":
                    pieces.append(event.content)
                    delta = {"content": event.content}
                    if first:
                        delta["role"] = "assistant"
                        first = False
                    yield self._sse_chunk(chunk_id, model, delta=delta, finish_reason=None)
                elif event.kind == "done":
                    finish_reason = event.finish_reason or "stop"
                    usage = event.usage
                elif event.kind == "error":
                    error = event.error
                    break
            if error is not None:
                self.metering.cancel(prep.reservation)
                settled = True
                payload = {"error": {"message": error, "type": "upstream_error", "code": "upstream_error"}}
                yield f"data: {json.dumps(payload, separators=(',', ':'))}\n\n"
                yield "data: [DONE]\n\n"
                return
            content = "".join(pieces)
            if self.guardrail.check(content) is not None:
                self.metering.cancel(prep.reservation)
                settled = True
                yield self._sse_chunk(chunk_id, model, delta={}, finish_reason="content_filter")
                yield "data: [DONE]\n\n"
                return
            final_usage = self._usage_from(usage, prep.payload, content)
            self.metering.settle(
                prep.reservation,
                final_usage["prompt_tokens"],
                final_usage["completion_tokens"],
                prep.backend.backend_class,
            )
            settled = True
            conversation_id = self._record_turns(principal, prep, content)
            yield self._sse_chunk(
                chunk_id,
                model,
                delta={},
                finish_reason=finish_reason,
                extra={
                    "usage": {
                        "prompt_tokens": final_usage["prompt_tokens"],
                        "completion_tokens": final_usage["completion_tokens"],
                        "total_tokens": final_usage["prompt_tokens"]
                        + final_usage["completion_tokens"],
                    },
                    "conversation_id": conversation_id,
                },
            )
            yield "data: [DONE]\n\n"
        finally:
            if not settled:
                try:
                    self.metering.cancel(prep.reservation)
                except NotFound:
                    pass

    # -- models / conversations ---------------------------------------------------

    def list_models(self, principal: Principal) -> Dict:
        if principal.course_id is not None:
            course = self.tenancy.get_course(principal.course_id)
            names = course.allowed_models
        elif principal.role == "admin":
            names = sorted({m for b in self.router.list_backends() for m in b.model_names})
        else:
            names = []
        return {
            "object": "list",
            "data": [
                {"id": name, "object": "model", "created": 0, "owned_by": "verde"}
                for name in names
            ],
        }

    def list_conversations(self, principal: Principal) -> List[Dict]:
        self.require(principal, "list_own_conversations")
        rows = self.conversations.list_for(principal.user_id, principal.course_id)
        return [
            {
                "id": row["id"],
                "course_id": row["course_id"],
                "mode": row["mode"],
                "created_at": row["created_at"],
                "updated_at": row["updated_at"],
                "turn_count": len(row["turns"]),
            }
            for row in rows
        ]

    def get_conversation(self, principal: Principal, conversation_id: str) -> Dict:
        self.require(principal, "list_own_conversations")
        return self.conversations.get_owned(conversation_id, principal.user_id)

    def delete_conversation(self, principal: Principal, conversation_id: str) -> None:
        self.require(principal, "list_own_conversations")
        self.conversations.soft_delete(conversation_id, principal.user_id)


# -- HTTP layer -------------------------------------------------------------------


_STATUS_BY_ERROR = {
    "auth_error": 401,
    "insufficient_budget": 402,
    "forbidden": 403,
    "not_found": 404,
    "conflict": 409,
    "validation_error": 400,
    "upstream_error": 502,
    "upstream_timeout": 502,
}


def _error_payload(exc: VerdeError, code: Optional[str] = None) -> Dict:
    return {
        "error": {
            "message": exc.message,
            "type": "invalid_request_error" if _STATUS_BY_ERROR.get(exc.code, 500) < 500 else "upstream_error",
            "param": None,
            "code": code or exc.code,
        }
    }


def create_app(gateway: Gateway) -> FastAPI:
    app = FastAPI(title="verde gateway")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.gateway = gateway

    def fail(exc: VerdeError, code: Optional[str] = None) -> JSONResponse:
        status = _STATUS_BY_ERROR.get(exc.code, 500)
        return JSONResponse(_error_payload(exc, code), status_code=status)

    def principal_of(request: Request) -> Principal:
        return gateway.principal_from(
            request.headers.get("authorization"), request.headers.get("x-course-id")
        )

    @app.exception_handler(VerdeError)
    async def verde_error_handler(_request, exc: VerdeError):
        return fail(exc)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    # -- auth ------------------------------------------------------------

    @app.post("/auth/login")
    async def login(request: Request):
        body = await request.json()
        assertion = body.get("assertion") if isinstance(body, dict) else None
        if not isinstance(assertion, str):
            raise ValidationError("assertion is required")
        token, user = gateway.tenancy.federated_login(assertion)
        return {"session_token": token, "user": user.to_json()}

    # -- OpenAI-compatible surface ------------------------------------------

    @app.get("/v1/models")
    def models(request: Request):
        principal = principal_of(request)
        return gateway.list_models(principal)

    @app.post("/v1/chat/completions")
    async def chat(request: Request):
        principal = principal_of(request)
        try:
            body = json.loads(await request.body())
        except json.JSONDecodeError:
            raise ValidationError("request body must be valid JSON") from None
        streaming = isinstance(body, dict) and bool(body.get("stream"))
        if not streaming:
            return JSONResponse(gateway.chat_unary(principal, body))
        _, pump = gateway.chat_stream(principal, body)
        return StreamingResponse(pump, media_type="text/event-stream")

    @app.get("/v1/courses")
    def my_courses(request: Request):
        principal = principal_of(request)
        rows = []
        for course in gateway.tenancy.list_courses():
            role = course.role_of(principal.user_id)
            if role is None and principal.role != "admin":
                continue
            rows.append(
                {
                    "id": course.id,
                    "name": course.name,
                    "mode": course.mode,
                    "role": role or "admin",
                    "allowed_models": course.allowed_models,
                }
            )
        return {"object": "list", "data": rows}

    @app.get("/v1/conversations")
    def conversations_list(request: Request):
        principal = principal_of(request)
        return {"object": "list", "data": gateway.list_conversations(principal)}

    @app.get("/v1/conversations/{conversation_id}")
    def conversations_get(conversation_id: str, request: Request):
        principal = principal_of(request)
        return gateway.get_conversation(principal, conversation_id)

    @app.delete("/v1/conversations/{conversation_id}")
    def conversations_delete(conversation_id: str, request: Request):
        principal = principal_of(request)
        gateway.delete_conversation(principal, conversation_id)
        return {"deleted": True, "id": conversation_id}

    # -- admin surface ------------------------------------------------------

    @app.post("/admin/users")
    async def create_user(request: Request):
        principal = principal_of(request)
        gateway.require(principal, "create_course")
        body = await request.json()
        user = gateway.tenancy.create_user(
            body.get("external_subject") or "local:" + uuid.uuid4().hex[:8],
            body.get("display_name", ""),
            body.get("email", ""),
        )
        return user.to_json()

    @app.post("/admin/courses")
    async def create_course(request: Request):
        principal = principal_of(request)
        gateway.require(principal, "create_course")
        body = await request.json()
        course = gateway.tenancy.create_course(
            name=body.get("name", ""),
            allowed_models=body.get("allowed_models") or [],
            mode=body.get("mode", "pass_through"),
            collection_id=body.get("collection_id"),
            system_prompt_override=body.get("system_prompt_override"),
            default_temperature=body.get("default_temperature"),
            rag_top_k=body.get("rag_top_k"),
            rag_threshold=body.get("rag_threshold"),
        )
        gateway.metering.create_budget(course.id)
        return course.to_json()

    @app.get("/admin/courses")
    def list_courses(request: Request):
        principal = principal_of(request)
        gateway.require(principal, "create_course")
        return {"data": [c.to_json() for c in gateway.tenancy.list_courses()]}

    @app.post("/admin/courses/{course_id}/members")
    async def enroll(course_id: str, request: Request):
        principal = principal_of(request)
        gateway.require(principal, "enroll")
        body = await request.json()
        membership = gateway.tenancy.enroll(course_id, body.get("user_id", ""), body.get("role", ""))
        return membership

    @app.get("/admin/courses/{course_id}/members")
    def list_members(course_id: str, request: Request):
        principal = principal_of(request)
        gateway.require(principal, "list_members")
        gateway._course_scope(principal, course_id)
        course = gateway.tenancy.get_course(course_id)
        members = []
        for member in course.members:
            user = gateway.tenancy.get_user(member["user_id"])
            members.append(
                {
                    "user_id": user.id,
                    "role": member["role"],
                    "display_name": user.display_name,
                    "email": user.email,
                }
            )
        return {"data": members}

    @app.post("/admin/courses/{course_id}/keys")
    async def issue_key(course_id: str, request: Request):
        principal = principal_of(request)
        body = await request.json()
        user_id = body.get("user_id") or principal.user_id
        if user_id == principal.user_id and principal.role != "admin":
            gateway.require(principal, "issue_own_key")
            if principal.course_id != course_id:
                raise Forbidden("course outside the caller's scope")
        else:
            gateway.require(principal, "issue_key")
            gateway._course_scope(principal, course_id)
        plaintext, key = gateway.tenancy.issue_key(course_id, user_id, body.get("label", ""))
        record = key.to_json()
        record.pop("key_hash")
        record["key"] = plaintext  # shown exactly once, never persisted
        return record

    @app.get("/admin/courses/{course_id}/keys")
    def list_keys(course_id: str, request: Request):
        principal = principal_of(request)
        if principal.role in ("admin", "instructor"):
            gateway.require(principal, "issue_key")
            gateway._course_scope(principal, course_id)
            keys = gateway.tenancy.list_keys(course_id=course_id)
        else:
            gateway.require(principal, "view_own_key")
            if principal.course_id != course_id:
                raise Forbidden("course outside the caller's scope")
            keys = gateway.tenancy.list_keys(course_id=course_id, user_id=principal.user_id)
        rows = []
        for key in keys:
            row = key.to_json()
            row.pop("key_hash")
            rows.append(row)
        return {"data": rows}

    @app.delete("/admin/keys/{key_id}")
    def revoke_key(key_id: str, request: Request):
        principal = principal_of(request)
        key = gateway.tenancy.get_key(key_id)
        if key.user_id == principal.user_id:
            gateway.require(principal, "revoke_own_key")
        else:
            gateway.require(principal, "revoke_key")
            gateway._course_scope(principal, key.course_id)
        gateway.tenancy.revoke_key(key_id)
        return {"revoked": True, "id": key_id}

    @app.get("/admin/courses/{course_id}/budget")
    def get_budget(course_id: str, request: Request):
        principal = principal_of(request)
        gateway.require(principal, "view_budget")
        gateway._course_scope(principal, course_id)
        return gateway.metering.get_budget(course_id)

    @app.post("/admin/courses/{course_id}/budget")
    async def modify_budget(course_id: str, request: Request):
        principal = principal_of(request)
        gateway.require(principal, "modify_budget")
        gateway._course_scope(principal, course_id)
        body = await request.json()
        if "add_funds" in body:
            return gateway.metering.add_funds(course_id, int(body["add_funds"]))
        if "set_limit" in body:
            return gateway.metering.set_limit(course_id, int(body["set_limit"]))
        raise ValidationError("body must contain add_funds or set_limit")

    @app.get("/admin/usage")
    def usage(request: Request):
        principal = principal_of(request)
        period_from = request.query_params.get("from")
        period_to = request.query_params.get("to")
        course_id = request.query_params.get("course_id")
        if not period_from or not period_to:
            raise ValidationError("from and to query parameters are required")
        if principal.role != "admin":
            # Instructors may pull usage scoped to their own course only.
            gateway.require(principal, "view_budget")
            if not course_id or principal.course_id != course_id:
                raise Forbidden("usage outside the caller's course")
        report = gateway.metering.aggregate(period_from, period_to, course_id=course_id)
        return report.to_json()

    @app.post("/admin/backends")
    async def register_backend(request: Request):
        principal = principal_of(request)
        gateway.require(principal, "register_backend")
        body = await request.json()
        models = body.get("models") or []
        if not isinstance(models, list) or not models:
            raise ValidationError("models must be a nonempty list")
        names = []
        prices = []
        for row in models:
            if isinstance(row, str):
                raise ValidationError("each model entry needs a price row")
            names.append(row["name"])
            prices.append(
                Price(
                    model=row["name"],
                    input_per_1k_tokens=int(row.get("input_per_1k_tokens", 0)),
                    output_per_1k_tokens=int(row.get("output_per_1k_tokens", 0)),
                )
            )
        backend = Backend(
            name=body.get("name", ""),
            backend_class=body.get("backend_class", "self_hosted"),
            base_url=body.get("base_url", ""),
            credential_ref=body.get("credential_ref", ""),
            model_names=names,
            timeout_ms=int(body.get("timeout_ms", 30_000)),
        )
        if not backend.name or not backend.base_url:
            raise ValidationError("backend name and base_url are required")
        gateway.router.register_backend(backend)
        for price in prices:
            gateway.metering.set_price(price)
        return backend.to_json()

    @app.post("/admin/collections/import")
    async def import_collection(request: Request):
        principal = principal_of(request)
        gateway.require(principal, "import_collection")
        text = (await request.body()).decode("utf-8")
        collection_id, count = gateway.rag.import_lines(text.splitlines())
        if collection_id is None:
            raise ValidationError("no collection lines in body")
        return {"collection_id": collection_id, "chunks": count}

    return app


# -- assembly ------------------------------------------------------------------


def build_gateway(config: GatewayConfig, transport=None) -> Gateway:
    store = Store(config.storage_path)
    secrets = load_secrets(config.secrets_path) if config.secrets_path else {}
    login_provider = None
    if config.login_public_key_hex:
        login_provider = StaticKeyLoginProvider(bytes.fromhex(config.login_public_key_hex))
    tenancy = TenancyService(store, login_provider)
    tenancy.sessions = SessionManager(config.session_ttl_seconds)
    metering = MeteringService(store)
    router = Router(store, secrets, transport=transport)
    rag_engine = RagEngine(store)
    conversations = ConversationLog(store)
    return Gateway(store, tenancy, metering, router, rag_engine, conversations, config)


def main(argv: Optional[List[str]] = None) -> int:
    import uvicorn

    parser = argparse.ArgumentParser(prog="verde-gateway")
    parser.add_argument("--config", required=True, help="path to the YAML config file")
    args = parser.parse_args(argv)
    config = load_config(args.config)
    gateway = build_gateway(config)
    plaintext = gateway.bootstrap_admin()
    if plaintext:
        print(f"bootstrap admin key (shown once): {plaintext}", file=sys.stderr)
    app = create_app(gateway)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
