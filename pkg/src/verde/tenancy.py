"""Courses, users, roles, surrogate API keys, and the login boundary.

API keys are surrogate credentials: the plaintext (`verde-` + 40 hex chars)
is returned exactly once at issuance and only its SHA-256 is ever persisted,
so no store record can reveal either the key or any upstream provider
secret. Web sessions come from a pluggable login provider; the default
implementation verifies Ed25519-signed identity assertions against a static
public key.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import json
import secrets
import threading
import time
import uuid
from dataclasses import dataclass
from typing import Dict, List, Optional, Protocol, Tuple

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .errors import AuthError, NotFound, ValidationError, VersionConflict
from .store import Store

COURSE_ROLES = ("student", "instructor")
COURSE_MODES = ("pass_through", "rag")

KEY_PREFIX = "verde-"
KEY_SECRET_BYTES = 20

_ADMIN_ROSTER_KEY = "@admins"
_SUBJECT_INDEX_PREFIX = "subject:"
_HASH_INDEX_PREFIX = "hash:"
_KEY_RECORD_PREFIX = "id:"

# Policy table: what each course role may do. Admin is a global role and
# is allowed everything.
ACTIONS = (
    "chat",
    "list_own_conversations",
    "view_own_key",
    "issue_own_key",
    "revoke_own_key",
    "list_members",
    "view_budget",
    "modify_budget",
    "issue_key",
    "revoke_key",
    "enroll",
    "create_course",
    "register_backend",
    "view_usage",
    "import_collection",
)

_STUDENT_ACTIONS = frozenset(
    {"chat", "list_own_conversations", "view_own_key", "issue_own_key", "revoke_own_key"}
)
_INSTRUCTOR_ACTIONS = _STUDENT_ACTIONS | frozenset(
    {"list_members", "view_budget", "modify_budget", "issue_key", "revoke_key"}
)


def role_allows(role: str, action: str) -> bool:
    if role == "admin":
        return True
    if role == "instructor":
        return action in _INSTRUCTOR_ACTIONS
    if role == "student":
        return action in _STUDENT_ACTIONS
    return False


@dataclass(frozen=True)
class Principal:
    user_id: str
    course_id: Optional[str]
    role: str
    key_id: str = ""


def authorize(principal: Principal, action: str) -> bool:
    """Pure allow/deny decision from (role, action)."""
    return role_allows(principal.role, action)


@dataclass(frozen=True)
class User:
    id: str
    external_subject: str
    display_name: str
    email: str

    def to_json(self) -> Dict:
        return {
            "id": self.id,
            "external_subject": self.external_subject,
            "display_name": self.display_name,
            "email": self.email,
        }


@dataclass
class Course:
    id: str
    name: str
    members: List[Dict[str, str]]  # {"user_id", "role"}
    allowed_models: List[str]
    mode: str
    collection_id: Optional[str] = None
    budget_id: str = ""
    system_prompt_override: Optional[str] = None
    default_temperature: Optional[float] = None
    rag_top_k: Optional[int] = None
    rag_threshold: Optional[float] = None

    def role_of(self, user_id: str) -> Optional[str]:
        for member in self.members:
            if member["user_id"] == user_id:
                return member["role"]
        return None

    def to_json(self) -> Dict:
        return {
            "id": self.id,
            "name": self.name,
            "members": self.members,
            "allowed_models": self.allowed_models,
            "mode": self.mode,
            "collection_id": self.collection_id,
            "budget_id": self.budget_id,
            "system_prompt_override": self.system_prompt_override,
            "default_temperature": self.default_temperature,
            "rag_top_k": self.rag_top_k,
            "rag_threshold": self.rag_threshold,
        }

    @classmethod
    def from_json(cls, body: Dict) -> "Course":
        return cls(**body)


@dataclass(frozen=True)
class ApiKey:
    id: str
    key_hash: str
    user_id: str
    course_id: str  # empty string for global admin keys
    created_at: str
    revoked_at: Optional[str]
    label: str

    def to_json(self) -> Dict:
        return {
            "id": self.id,
            "key_hash": self.key_hash,
            "user_id": self.user_id,
            "course_id": self.course_id,
            "created_at": self.created_at,
            "revoked_at": self.revoked_at,
            "label": self.label,
        }


# -- login provider ---------------------------------------------------------


class LoginProvider(Protocol):
    def verify(self, assertion: str) -> Dict:
        """Return claims {subject, email, display_name, expiry} or raise AuthError."""


def _b64url_decode(data: str) -> bytes:
    pad = "=" * (-len(data) % 4)
    try:
        return base64.urlsafe_b64decode(data + pad)
    except Exception as exc:
        raise AuthError("malformed assertion") from exc


def _b64url_encode(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).decode("ascii").rstrip("=")


class StaticKeyLoginProvider:
    """Verifies `payload_b64.signature_b64` assertions with one Ed25519 key.

    Stands in for the deployment's federated identity provider; anything
    that produces the same claim set can be swapped in behind LoginProvider.
    """

    def __init__(self, public_key_bytes: bytes):
        self._key = Ed25519PublicKey.from_public_bytes(public_key_bytes)

    def verify(self, assertion: str) -> Dict:
        parts = assertion.split(".")
        if len(parts) != 2:
            raise AuthError("malformed assertion")
        payload, signature = _b64url_decode(parts[0]), _b64url_decode(parts[1])
        try:
            self._key.verify(signature, payload)
        except InvalidSignature:
            raise AuthError("invalid assertion signature") from None
        try:
            claims = json.loads(payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise AuthError("malformed assertion payload") from exc
        for field in ("subject", "email", "display_name", "expiry"):
            if field not in claims:
                raise AuthError(f"assertion missing {field}")
        if claims["expiry"] <= time.time():
            raise AuthError("assertion expired")
        return claims


def sign_assertion(private_key: Ed25519PrivateKey, claims: Dict) -> str:
    """Produce an assertion the static-key provider accepts (tests, dev login)."""
    payload = json.dumps(claims, sort_keys=True, separators=(",", ":")).encode("utf-8")
    signature = private_key.sign(payload)
    return f"{_b64url_encode(payload)}.{_b64url_encode(signature)}"


class SessionManager:
    """Short-lived opaque web-session tokens, kept in process memory."""

    def __init__(self, ttl_seconds: int = 3600):
        self._ttl = ttl_seconds
        self._lock = threading.Lock()
        self._sessions: Dict[str, Tuple[str, float]] = {}

    def issue(self, user_id: str) -> str:
        token = "sess-" + secrets.token_hex(16)
        with self._lock:
            self._sessions[token] = (user_id, time.time() + self._ttl)
        return token

    def resolve(self, token: str) -> str:
        with self._lock:
            entry = self._sessions.get(token)
            if entry is None or entry[1] <= time.time():
                self._sessions.pop(token, None)
                raise AuthError("invalid or expired session")
            return entry[0]


# ---------------------------------------------------------------------------


class TenancyService:
    """Course/user/key management over the persistent store."""

    def __init__(self, store: Store, login_provider: Optional[LoginProvider] = None):
        self.store = store
        self.login_provider = login_provider
        self.sessions = SessionManager()

    # -- users -------------------------------------------------------------

    def create_user(self, external_subject: str, display_name: str, email: str) -> User:
        user = User(
            id="usr-" + uuid.uuid4().hex[:12],
            external_subject=external_subject,
            display_name=display_name,
            email=email,
        )
        try:
            self.store.put_cas("users", _SUBJECT_INDEX_PREFIX + external_subject, 0, {"user_id": user.id})
        except VersionConflict:
            raise ValidationError(f"subject {external_subject!r} already registered") from None
        self.store.put_cas("users", user.id, 0, user.to_json())
        return user

    def get_user(self, user_id: str) -> User:
        try:
            _, body = self.store.get("users", user_id)
        except NotFound:
            raise NotFound(f"user {user_id!r}") from None
        return User(**body)

    def find_user_by_subject(self, subject: str) -> Optional[User]:
        try:
            _, idx = self.store.get("users", _SUBJECT_INDEX_PREFIX + subject)
        except NotFound:
            return None
        return self.get_user(idx["user_id"])

    def grant_admin(self, user_id: str) -> None:
        self.get_user(user_id)
        while True:
            try:
                version, body = self.store.get("users", _ADMIN_ROSTER_KEY)
            except NotFound:
                version, body = 0, {"admin_user_ids": []}
            if user_id in body["admin_user_ids"]:
                return
            body = {"admin_user_ids": sorted(body["admin_user_ids"] + [user_id])}
            try:
                self.store.put_cas("users", _ADMIN_ROSTER_KEY, version, body)
                return
            except VersionConflict:
                continue

    def is_admin(self, user_id: str) -> bool:
        try:
            _, body = self.store.get("users", _ADMIN_ROSTER_KEY)
        except NotFound:
            return False
        return user_id in body["admin_user_ids"]

    # -- courses ----------------------------------------------------------

    def create_course(
        self,
        name: str,
        allowed_models,
        mode: str,
        collection_id: Optional[str] = None,
        system_prompt_override: Optional[str] = None,
        default_temperature: Optional[float] = None,
        rag_top_k: Optional[int] = None,
        rag_threshold: Optional[float] = None,
    ) -> Course:
        models = sorted(set(allowed_models))
        if not models:
            raise ValidationError("allowed_models must be nonempty")
        if mode not in COURSE_MODES:
            raise ValidationError(f"mode must be one of {COURSE_MODES}")
        if mode == "rag" and not collection_id:
            raise ValidationError("rag mode requires a collection_id")
        course_id = "crs-" + uuid.uuid4().hex[:12]
        course = Course(
            id=course_id,
            name=name,
            members=[],
            allowed_models=models,
            mode=mode,
            collection_id=collection_id,
            budget_id=course_id,
            system_prompt_override=system_prompt_override,
            default_temperature=default_temperature,
            rag_top_k=rag_top_k,
            rag_threshold=rag_threshold,
        )
        self.store.put_cas("courses", course.id, 0, course.to_json())
        return course

    def get_course(self, course_id: str) -> Course:
        try:
            _, body = self.store.get("courses", course_id)
        except NotFound:
            raise NotFound(f"course {course_id!r}") from None
        return Course.from_json(body)

    def list_courses(self) -> List[Course]:
        return [self.get_course(key) for key in self.store.list_prefix("courses")]

    def enroll(self, course_id: str, user_id: str, role: str) -> Dict[str, str]:
        if role not in COURSE_ROLES:
            raise ValidationError(f"role must be one of {COURSE_ROLES}")
        self.get_user(user_id)
        while True:
            try:
                version, body = self.store.get("courses", course_id)
            except NotFound:
                raise NotFound(f"course {course_id!r}") from None
            members = [m for m in body["members"] if m["user_id"] != user_id]
            membership = {"user_id": user_id, "role": role}
            members.append(membership)
            body = dict(body)
            body["members"] = members
            try:
                self.store.put_cas("courses", course_id, version, body)
                return membership
            except VersionConflict:
                continue

    # -- API keys ---------------------------------------------------------

    @staticmethod
    def hash_key(plaintext: str) -> str:
        return hashlib.sha256(plaintext.encode("utf-8")).hexdigest()

    def _store_key(self, user_id: str, course_id: str, label: str) -> Tuple[str, ApiKey]:
        from .metering import utc_now_iso

        while True:
            plaintext = KEY_PREFIX + secrets.token_hex(KEY_SECRET_BYTES)
            key_hash = self.hash_key(plaintext)
            key = ApiKey(
                id="key-" + uuid.uuid4().hex[:12],
                key_hash=key_hash,
                user_id=user_id,
                course_id=course_id,
                created_at=utc_now_iso(),
                revoked_at=None,
                label=label,
            )
            try:
                # CAS-create on the hash index is what enforces hash uniqueness.
                self.store.put_cas("keys", _HASH_INDEX_PREFIX + key_hash, 0, {"key_id": key.id})
            except VersionConflict:
                continue
            self.store.put_cas("keys", _KEY_RECORD_PREFIX + key.id, 0, key.to_json())
            return plaintext, key

    def issue_key(self, course_id: str, user_id: str, label: str = "") -> Tuple[str, ApiKey]:
        course = self.get_course(course_id)
        if course.role_of(user_id) is None:
            raise NotFound(f"user {user_id!r} is not a member of course {course_id!r}")
        return self._store_key(user_id, course_id, label)

    def issue_admin_key(self, user_id: str, label: str = "admin") -> Tuple[str, ApiKey]:
        if not self.is_admin(user_id):
            raise NotFound(f"user {user_id!r} is not an admin")
        return self._store_key(user_id, "", label)

    def get_key(self, key_id: str) -> ApiKey:
        try:
            _, body = self.store.get("keys", _KEY_RECORD_PREFIX + key_id)
        except NotFound:
            raise NotFound(f"key {key_id!r}") from None
        return ApiKey(**body)

    def list_keys(self, course_id: Optional[str] = None, user_id: Optional[str] = None) -> List[ApiKey]:
        keys = []
        for record_key in self.store.list_prefix("keys", _KEY_RECORD_PREFIX):
            key = ApiKey(**self.store.get("keys", record_key)[1])
            if course_id is not None and key.course_id != course_id:
                continue
            if user_id is not None and key.user_id != user_id:
                continue
            keys.append(key)
        return keys

    def revoke_key(self, key_id: str) -> None:
        from .metering import utc_now_iso

        while True:
            try:
                version, body = self.store.get("keys", _KEY_RECORD_PREFIX + key_id)
            except NotFound:
                raise NotFound(f"key {key_id!r}") from None
            if body["revoked_at"] is not None:
                return  # idempotent
            body = dict(body)
            body["revoked_at"] = utc_now_iso()
            try:
                self.store.put_cas("keys", _KEY_RECORD_PREFIX + key_id, version, body)
                return
            except VersionConflict:
                continue

    def authenticate(self, presented_key: str) -> Principal:
        # Unknown and revoked keys must be indistinguishable to the caller.
        failure = AuthError("invalid API key")
        presented_hash = self.hash_key(presented_key)
        try:
            _, idx = self.store.get("keys", _HASH_INDEX_PREFIX + presented_hash)
        except NotFound:
            raise failure from None
        key = self.get_key(idx["key_id"])
        if not hmac.compare_digest(key.key_hash, presented_hash):
            raise failure
        if key.revoked_at is not None:
            raise failure
        if key.course_id == "":
            if not self.is_admin(key.user_id):
                raise failure
            return Principal(user_id=key.user_id, course_id=None, role="admin", key_id=key.id)
        try:
            course = self.get_course(key.course_id)
        except NotFound:
            raise failure from None
        role = course.role_of(key.user_id)
        if role is None:
            raise failure
        return Principal(user_id=key.user_id, course_id=key.course_id, role=role, key_id=key.id)

    # -- federated login -----------------------------------------------------

    def federated_login(self, assertion: str) -> Tuple[str, User]:
        if self.login_provider is None:
            raise AuthError("no login provider configured")
        claims = self.login_provider.verify(assertion)
        user = self.find_user_by_subject(claims["subject"])
        if user is None:
            user = self.create_user(claims["subject"], claims["display_name"], claims["email"])
        elif user.display_name != claims["display_name"] or user.email != claims["email"]:
            version, body = self.store.get("users", user.id)
            body.update(display_name=claims["display_name"], email=claims["email"])
            try:
                self.store.put_cas("users", user.id, version, body)
            except VersionConflict:
                pass  # racing update already refreshed the profile
            user = User(**body)
        return self.sessions.issue(user.id), user
