"""Persisted conversation history, scoped per user and course."""

from __future__ import annotations

import uuid
from typing import Dict, List, Optional

from .errors import NotFound, VersionConflict
from .metering import utc_now_iso
from .store import Store


class ConversationLog:
    """Append-only turn histories with soft deletion.

    Turn appends go through compare-and-set so concurrent requests against
    the same conversation serialize; deleted conversations disappear from
    listings but stay in the store for audit.
    """

    def __init__(self, store: Store):
        self.store = store

    def create(self, user_id: str, course_id: str, mode: str) -> Dict:
        now = utc_now_iso()
        body = {
            "id": "conv-" + uuid.uuid4().hex[:12],
            "user_id": user_id,
            "course_id": course_id,
            "mode": mode,
            "turns": [],
            "created_at": now,
            "updated_at": now,
            "deleted_at": None,
        }
        self.store.put_cas("conversations", body["id"], 0, body)
        return body

    def get(self, conversation_id: str) -> Dict:
        try:
            return self.store.get("conversations", conversation_id)[1]
        except NotFound:
            raise NotFound("conversation not found") from None

    def get_owned(self, conversation_id: str, user_id: str) -> Dict:
        """Fetch a conversation, refusing to reveal other users' ids exist."""
        body = self.get(conversation_id)
        if body["user_id"] != user_id or body["deleted_at"] is not None:
            raise NotFound("conversation not found")
        return body

    def append_turns(self, conversation_id: str, turns: List[Dict[str, str]]) -> Dict:
        stamped = [
            {"role": t["role"], "content": t["content"], "timestamp": utc_now_iso()}
            for t in turns
        ]
        while True:
            try:
                version, body = self.store.get("conversations", conversation_id)
            except NotFound:
                raise NotFound("conversation not found") from None
            body = dict(body)
            body["turns"] = list(body["turns"]) + stamped
            body["updated_at"] = utc_now_iso()
            try:
                self.store.put_cas("conversations", conversation_id, version, body)
                return body
            except VersionConflict:
                continue

    def list_for(self, user_id: str, course_id: Optional[str] = None) -> List[Dict]:
        out = []
        for key in self.store.list_prefix("conversations"):
            body = self.store.get("conversations", key)[1]
            if body["user_id"] != user_id or body["deleted_at"] is not None:
                continue
            if course_id is not None and body["course_id"] != course_id:
                continue
            out.append(body)
        out.sort(key=lambda b: b["updated_at"], reverse=True)
        return out

    def soft_delete(self, conversation_id: str, user_id: str) -> None:
        while True:
            body = self.get_owned(conversation_id, user_id)
            version = self.store.get("conversations", conversation_id)[0]
            body = dict(body)
            body["deleted_at"] = utc_now_iso()
            try:
                self.store.put_cas("conversations", conversation_id, version, body)
                return
            except VersionConflict:
                continue
