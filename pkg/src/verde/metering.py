"""Token counting, reserve/settle budget enforcement, and the usage ledger.

Budgets are integers in microcredits (1 credit = 10^6 microcredits) and all
arithmetic is integer arithmetic; display strings divide by 10^6 and round
half-up to two decimals. Every chat request first reserves its worst-case
cost, then settles the actual cost (or cancels), which is what guarantees
spent never exceeds the limit as long as upstreams respect max_tokens.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from decimal import ROUND_HALF_UP, Decimal
from typing import Dict, List, Optional

from .errors import InsufficientBudget, NotFound, ValidationError, VersionConflict
from .store import Store

MICROCREDITS_PER_CREDIT = 10**6
BACKEND_CLASSES = ("self_hosted", "proxy")


def count_tokens(text: str) -> int:
    """Count maximal runs of non-whitespace characters (Unicode whitespace)."""
    return len(text.split())


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def parse_rfc3339(value: str) -> datetime:
    try:
        dt = datetime.fromisoformat(value.replace("Z", "+00:00"))
    except ValueError as exc:
        raise ValidationError(f"bad timestamp {value!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


@dataclass(frozen=True)
class Price:
    model: str
    input_per_1k_tokens: int
    output_per_1k_tokens: int

    def __post_init__(self) -> None:
        if self.input_per_1k_tokens < 0 or self.output_per_1k_tokens < 0:
            raise ValidationError("price rows must be non-negative")


def cost_microcredits(price: Price, prompt_tokens: int, completion_tokens: int) -> int:
    """ceil(prompt*in/1000) + ceil(completion*out/1000), all integer math."""
    if prompt_tokens < 0 or completion_tokens < 0:
        raise ValidationError("token counts must be non-negative")
    prompt_cost = -(-(prompt_tokens * price.input_per_1k_tokens) // 1000)
    completion_cost = -(-(completion_tokens * price.output_per_1k_tokens) // 1000)
    return prompt_cost + completion_cost


@dataclass(frozen=True)
class Reservation:
    id: str
    course_id: str
    model: str
    amount: int
    key_id: str = ""


@dataclass(frozen=True)
class LedgerEntry:
    id: str
    timestamp_utc: str
    key_id: str
    course_id: str
    model: str
    backend_class: str
    prompt_tokens: int
    completion_tokens: int
    cost_microcredits: int
    api_calls: int = 1
    over_reserved: bool = False

    def to_json(self) -> Dict:
        return {
            "id": self.id,
            "timestamp_utc": self.timestamp_utc,
            "key_id": self.key_id,
            "course_id": self.course_id,
            "model": self.model,
            "backend_class": self.backend_class,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "cost_microcredits": self.cost_microcredits,
            "api_calls": self.api_calls,
            "over_reserved": self.over_reserved,
        }


def _display_millions(microunits: int) -> str:
    value = (Decimal(microunits) / Decimal(MICROCREDITS_PER_CREDIT)).quantize(
        Decimal("0.01"), rounding=ROUND_HALF_UP
    )
    return f"{value}M"


@dataclass
class UsageReport:
    """Token/api-call aggregation grouped by backend class.

    `tokens` is the 3x3 integer matrix: rows prompt/completion/total,
    columns self_hosted/proxy/total. Totals are exact integer sums.
    """

    period_from: str
    period_to: str
    tokens: Dict[str, Dict[str, int]]
    api_calls: Dict[str, int]

    def display(self) -> Dict[str, Dict[str, str]]:
        out: Dict[str, Dict[str, str]] = {}
        for row, cols in self.tokens.items():
            out[row] = {col: _display_millions(n) for col, n in cols.items()}
        out["api_calls"] = {col: f"{n:,}" for col, n in self.api_calls.items()}
        return out

    def to_json(self) -> Dict:
        return {
            "period": {"from": self.period_from, "to": self.period_to},
            "tokens": self.tokens,
            "api_calls": self.api_calls,
            "display": self.display(),
        }

    def check_consistent(self) -> bool:
        for cols in self.tokens.values():
            if cols["self_hosted"] + cols["proxy"] != cols["total"]:
                return False
        for col in ("self_hosted", "proxy", "total"):
            if self.tokens["prompt"][col] + self.tokens["completion"][col] != self.tokens["total"][col]:
                return False
        return self.api_calls["self_hosted"] + self.api_calls["proxy"] == self.api_calls["total"]


_PRICE_PREFIX = "price:"


class MeteringService:
    """Budget enforcement and the immutable usage ledger.

    Budget state is persisted per course in the `budgets` keyspace and all
    mutations go through compare-and-set, so concurrent reserves/settles
    across threads serialize correctly. Reservations themselves are
    in-flight request state and live in process memory.
    """

    def __init__(self, store: Store):
        self.store = store
        self._lock = threading.Lock()
        self._outstanding: Dict[str, Reservation] = {}

    # -- prices ----------------------------------------------------------

    def set_price(self, price: Price) -> None:
        key = _PRICE_PREFIX + price.model
        body = {
            "model": price.model,
            "input_per_1k_tokens": price.input_per_1k_tokens,
            "output_per_1k_tokens": price.output_per_1k_tokens,
        }
        while True:
            try:
                version = self.store.get("budgets", key)[0]
            except NotFound:
                version = 0
            try:
                self.store.put_cas("budgets", key, version, body)
                return
            except VersionConflict:
                continue

    def get_price(self, model: str) -> Price:
        try:
            _, body = self.store.get("budgets", _PRICE_PREFIX + model)
        except NotFound:
            raise NotFound(f"no price row for model {model!r}") from None
        return Price(body["model"], body["input_per_1k_tokens"], body["output_per_1k_tokens"])

    # -- budgets ---------------------------------------------------------

    def create_budget(self, course_id: str, limit_microcredits: int = 0) -> Dict:
        if limit_microcredits < 0:
            raise ValidationError("limit must be non-negative")
        body = {
            "course_id": course_id,
            "limit_microcredits": limit_microcredits,
            "spent_microcredits": 0,
            "reserved_microcredits": 0,
        }
        self.store.put_cas("budgets", course_id, 0, body)
        return body

    def get_budget(self, course_id: str) -> Dict:
        try:
            return self.store.get("budgets", course_id)[1]
        except NotFound:
            raise NotFound(f"no budget for course {course_id!r}") from None

    def _mutate_budget(self, course_id: str, fn) -> Dict:
        while True:
            try:
                version, body = self.store.get("budgets", course_id)
            except NotFound:
                raise NotFound(f"no budget for course {course_id!r}") from None
            body = fn(dict(body))
            try:
                self.store.put_cas("budgets", course_id, version, body)
                return body
            except VersionConflict:
                continue

    def add_funds(self, course_id: str, amount: int) -> Dict:
        if amount < 0:
            raise ValidationError("amount must be non-negative")

        def bump(body: Dict) -> Dict:
            body["limit_microcredits"] += amount
            return body

        return self._mutate_budget(course_id, bump)

    def set_limit(self, course_id: str, limit: int) -> Dict:
        if limit < 0:
            raise ValidationError("limit must be non-negative")

        def assign(body: Dict) -> Dict:
            committed = body["spent_microcredits"] + body["reserved_microcredits"]
            if limit < committed:
                raise ValidationError(
                    f"limit {limit} below spent+reserved {committed}; cannot strand spend"
                )
            body["limit_microcredits"] = limit
            return body

        return self._mutate_budget(course_id, assign)

    # -- reserve / settle / cancel -----------------------------------------

    def reserve(
        self,
        course_id: str,
        model: str,
        prompt_tokens_est: int,
        max_tokens: int,
        key_id: str = "",
    ) -> Reservation:
        price = self.get_price(model)
        amount = cost_microcredits(price, prompt_tokens_est, max_tokens)
        while True:
            try:
                version, body = self.store.get("budgets", course_id)
            except NotFound:
                raise NotFound(f"no budget for course {course_id!r}") from None
            if body["spent_microcredits"] + body["reserved_microcredits"] + amount > body[
                "limit_microcredits"
            ]:
                raise InsufficientBudget(
                    f"course {course_id}: reserving {amount} would exceed limit "
                    f"{body['limit_microcredits']}"
                )
            body = dict(body)
            body["reserved_microcredits"] += amount
            try:
                self.store.put_cas("budgets", course_id, version, body)
                break
            except VersionConflict:
                continue
        reservation = Reservation(
            id=uuid.uuid4().hex, course_id=course_id, model=model, amount=amount, key_id=key_id
        )
        with self._lock:
            self._outstanding[reservation.id] = reservation
        return reservation

    def settle(
        self,
        reservation: Reservation,
        actual_prompt_tokens: int,
        actual_completion_tokens: int,
        backend_class: str,
        timestamp_utc: Optional[str] = None,
    ) -> LedgerEntry:
        if backend_class not in BACKEND_CLASSES:
            raise ValidationError(f"unknown backend class {backend_class!r}")
        with self._lock:
            live = self._outstanding.pop(reservation.id, None)
        if live is None:
            raise NotFound(f"reservation {reservation.id} is not outstanding")
        price = self.get_price(live.model)
        actual_cost = cost_microcredits(price, actual_prompt_tokens, actual_completion_tokens)

        def release(body: Dict) -> Dict:
            body["reserved_microcredits"] -= live.amount
            body["spent_microcredits"] += actual_cost
            return body

        self._mutate_budget(live.course_id, release)
        entry = LedgerEntry(
            id=uuid.uuid4().hex,
            timestamp_utc=timestamp_utc or utc_now_iso(),
            key_id=live.key_id,
            course_id=live.course_id,
            model=live.model,
            backend_class=backend_class,
            prompt_tokens=actual_prompt_tokens,
            completion_tokens=actual_completion_tokens,
            cost_microcredits=actual_cost,
            api_calls=1,
            over_reserved=actual_cost > live.amount,
        )
        self.store.append("ledger", entry.to_json())
        return entry

    def cancel(self, reservation: Reservation) -> None:
        with self._lock:
            live = self._outstanding.pop(reservation.id, None)
        if live is None:
            raise NotFound(f"reservation {reservation.id} is not outstanding")

        def release(body: Dict) -> Dict:
            body["reserved_microcredits"] -= live.amount
            return body

        self._mutate_budget(live.course_id, release)

    def outstanding_count(self) -> int:
        with self._lock:
            return len(self._outstanding)

    # -- ledger / reporting -------------------------------------------------

    def append_entry(self, entry: LedgerEntry) -> int:
        """Append a pre-built entry (imports and report fixtures)."""
        price = self.get_price(entry.model)
        expected = cost_microcredits(price, entry.prompt_tokens, entry.completion_tokens)
        if entry.cost_microcredits != expected:
            raise ValidationError(
                f"entry cost {entry.cost_microcredits} does not match price formula {expected}"
            )
        return self.store.append("ledger", entry.to_json())

    def ledger_entries(self) -> List[LedgerEntry]:
        return [LedgerEntry(**body) for _, body in self.store.read_log("ledger")]

    def aggregate(
        self, period_from: str, period_to: str, course_id: Optional[str] = None
    ) -> UsageReport:
        start = parse_rfc3339(period_from)
        end = parse_rfc3339(period_to)
        if not start < end:
            raise ValidationError("aggregation period must satisfy from < to")
        tokens = {
            row: {"self_hosted": 0, "proxy": 0, "total": 0}
            for row in ("prompt", "completion", "total")
        }
        api_calls = {"self_hosted": 0, "proxy": 0, "total": 0}
        for _, body in self.store.read_log("ledger"):
            ts = parse_rfc3339(body["timestamp_utc"])
            if not (start <= ts < end):
                continue
            if course_id is not None and body["course_id"] != course_id:
                continue
            cls = body["backend_class"]
            tokens["prompt"][cls] += body["prompt_tokens"]
            tokens["completion"][cls] += body["completion_tokens"]
            api_calls[cls] += body["api_calls"]
        for cls in ("self_hosted", "proxy"):
            tokens["total"][cls] = tokens["prompt"][cls] + tokens["completion"][cls]
        for row in ("prompt", "completion", "total"):
            tokens[row]["total"] = tokens[row]["self_hosted"] + tokens[row]["proxy"]
        api_calls["total"] = api_calls["self_hosted"] + api_calls["proxy"]
        return UsageReport(
            period_from=period_from, period_to=period_to, tokens=tokens, api_calls=api_calls
        )
