"""Gateway configuration: one YAML file, flat sections, explicit defaults."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import yaml

from .errors import ValidationError

DEFAULT_BLOCKED_MESSAGE = "This request was blocked by content policy."


@dataclass
class GatewayConfig:
    listen_addr: str = "127.0.0.1:8080"
    secrets_path: Optional[str] = None
    storage_path: Optional[str] = None
    denylist: List[str] = field(default_factory=list)
    blocked_message: str = DEFAULT_BLOCKED_MESSAGE
    rag_default_top_k: int = 4
    rag_default_threshold: float = 0.0
    history_token_budget: int = 3072
    login_public_key_hex: Optional[str] = None
    session_ttl_seconds: int = 3600

    @property
    def host(self) -> str:
        return self.listen_addr.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        return int(self.listen_addr.rsplit(":", 1)[1])


def load_config(path: str) -> GatewayConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ValidationError("config root must be a mapping")
    server = raw.get("server") or {}
    secrets = raw.get("secrets") or {}
    storage = raw.get("storage") or {}
    guardrails = raw.get("guardrails") or {}
    rag = raw.get("rag") or {}
    history = raw.get("history") or {}
    auth = raw.get("auth") or {}
    denylist = guardrails.get("denylist") or []
    if not all(isinstance(p, str) and p for p in denylist):
        raise ValidationError("guardrails.denylist entries must be nonempty strings")
    return GatewayConfig(
        listen_addr=server.get("listen_addr", "127.0.0.1:8080"),
        secrets_path=secrets.get("path"),
        storage_path=storage.get("path"),
        denylist=list(denylist),
        blocked_message=guardrails.get("blocked_message", DEFAULT_BLOCKED_MESSAGE),
        rag_default_top_k=int(rag.get("default_top_k", 4)),
        rag_default_threshold=float(rag.get("default_threshold", 0.0)),
        history_token_budget=int(history.get("token_budget", 3072)),
        login_public_key_hex=auth.get("login_public_key_hex"),
        session_ttl_seconds=int(auth.get("session_ttl_seconds", 3600)),
    )
