"""Durable record store: namespaced keys, compare-and-set, append-only logs.

Layout on disk is one log file per keyspace (`<dir>/<keyspace>.log`) holding
length-prefixed, CRC32-checked records, plus an optional snapshot file
(`<dir>/<keyspace>.snap`) in line-JSON. Recovery loads the snapshot (if any)
and replays the log, discarding a torn tail so a crash mid-write never yields
a corrupt body.

Bodies are canonical JSON: sorted keys, no insignificant whitespace, UTF-8.
"""

from __future__ import annotations

import json
import os
import struct
import threading
import zlib
from typing import Any, Dict, List, Optional, Tuple

from .errors import NotFound, ValidationError, VersionConflict

KEYSPACES = (
    "users",
    "courses",
    "keys",
    "budgets",
    "ledger",
    "conversations",
    "collections",
    "backends",
)

_HEADER = struct.Struct(">II")  # payload length, crc32(payload)


def canonical_json(obj: Any) -> bytes:
    """Encode `obj` as canonical JSON bytes (sorted keys, compact, UTF-8)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode(
        "utf-8"
    )


class _Keyspace:
    def __init__(self) -> None:
        self.records: Dict[str, Tuple[int, bytes]] = {}  # key -> (version, body bytes)
        self.log_entries: List[Tuple[int, bytes]] = []  # (seq, body bytes)
        self.next_seq = 1


class Store:
    """Single-node store shared by all gateway subsystems.

    Thread-safe: every mutation happens under one lock, which is what makes
    `put_cas` and `append` atomic for concurrent callers.
    """

    def __init__(self, directory: Optional[str] = None):
        self._dir = directory
        self._lock = threading.RLock()
        self._spaces: Dict[str, _Keyspace] = {ks: _Keyspace() for ks in KEYSPACES}
        self._files: Dict[str, Any] = {}
        if directory is not None:
            os.makedirs(directory, exist_ok=True)
            for ks in KEYSPACES:
                self._recover(ks)
                self._files[ks] = open(self._log_path(ks), "ab")

    # -- paths ------------------------------------------------------------

    def _log_path(self, keyspace: str) -> str:
        assert self._dir is not None
        return os.path.join(self._dir, f"{keyspace}.log")

    def _snap_path(self, keyspace: str) -> str:
        assert self._dir is not None
        return os.path.join(self._dir, f"{keyspace}.snap")

    # -- recovery ----------------------------------------------------------

    def _recover(self, keyspace: str) -> None:
        space = self._spaces[keyspace]
        snap = self._snap_path(keyspace)
        if os.path.exists(snap):
            with open(snap, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = json.loads(line)
                    if rec["kind"] == "kv":
                        space.records[rec["key"]] = (
                            rec["version"],
                            canonical_json(rec["body"]),
                        )
                    else:
                        space.log_entries.append((rec["seq"], canonical_json(rec["body"])))
                        space.next_seq = max(space.next_seq, rec["seq"] + 1)
        path = self._log_path(keyspace)
        if not os.path.exists(path):
            return
        good_until = 0
        with open(path, "rb") as fh:
            data = fh.read()
        offset = 0
        while offset + _HEADER.size <= len(data):
            length, crc = _HEADER.unpack_from(data, offset)
            start = offset + _HEADER.size
            end = start + length
            if end > len(data):
                break  # torn tail: record was cut mid-write
            payload = data[start:end]
            if zlib.crc32(payload) != crc:
                break
            self._apply(keyspace, json.loads(payload.decode("utf-8")))
            offset = end
            good_until = offset
        if good_until < len(data):
            with open(path, "r+b") as fh:
                fh.truncate(good_until)

    def _apply(self, keyspace: str, payload: Dict[str, Any]) -> None:
        space = self._spaces[keyspace]
        if payload["op"] == "put":
            space.records[payload["key"]] = (
                payload["version"],
                canonical_json(payload["body"]),
            )
        elif payload["op"] == "append":
            space.log_entries.append((payload["seq"], canonical_json(payload["body"])))
            space.next_seq = max(space.next_seq, payload["seq"] + 1)

    # -- write path ---------------------------------------------------------

    def _write_record(self, keyspace: str, payload: Dict[str, Any]) -> None:
        fh = self._files.get(keyspace)
        if fh is None:
            return
        raw = canonical_json(payload)
        fh.write(_HEADER.pack(len(raw), zlib.crc32(raw)))
        fh.write(raw)
        fh.flush()

    def _space(self, keyspace: str) -> _Keyspace:
        try:
            return self._spaces[keyspace]
        except KeyError:
            raise ValidationError(f"unknown keyspace {keyspace!r}") from None

    # -- public API -----------------------------------------------------

    def put_cas(self, keyspace: str, key: str, expected_version: int, body: Dict[str, Any]) -> int:
        """Write `body` iff the stored version equals `expected_version`.

        Creation uses expected_version=0. Returns the new version; raises
        VersionConflict (leaving the record untouched) on a stale version.
        """
        space = self._space(keyspace)
        with self._lock:
            current = space.records.get(key)
            current_version = current[0] if current else 0
            if expected_version != current_version:
                raise VersionConflict(
                    f"{keyspace}/{key}: expected version {expected_version}, have {current_version}"
                )
            new_version = current_version + 1
            space.records[key] = (new_version, canonical_json(body))
            self._write_record(
                keyspace, {"op": "put", "key": key, "version": new_version, "body": body}
            )
            return new_version

    def get(self, keyspace: str, key: str) -> Tuple[int, Dict[str, Any]]:
        space = self._space(keyspace)
        with self._lock:
            rec = space.records.get(key)
            if rec is None:
                raise NotFound(f"{keyspace}/{key}")
            version, raw = rec
            return version, json.loads(raw.decode("utf-8"))

    def get_raw(self, keyspace: str, key: str) -> Tuple[int, bytes]:
        """Like get() but returns the stored canonical body bytes."""
        space = self._space(keyspace)
        with self._lock:
            rec = space.records.get(key)
            if rec is None:
                raise NotFound(f"{keyspace}/{key}")
            return rec

    def exists(self, keyspace: str, key: str) -> bool:
        with self._lock:
            return key in self._space(keyspace).records

    def list_prefix(self, keyspace: str, prefix: str = "") -> List[str]:
        space = self._space(keyspace)
        with self._lock:
            return sorted(k for k in space.records if k.startswith(prefix))

    def append(self, keyspace: str, body: Dict[str, Any]) -> int:
        """Append an immutable entry, returning its strictly increasing seq."""
        space = self._space(keyspace)
        with self._lock:
            seq = space.next_seq
            space.next_seq += 1
            space.log_entries.append((seq, canonical_json(body)))
            self._write_record(keyspace, {"op": "append", "seq": seq, "body": body})
            return seq

    def read_log(self, keyspace: str) -> List[Tuple[int, Dict[str, Any]]]:
        space = self._space(keyspace)
        with self._lock:
            return [(seq, json.loads(raw.decode("utf-8"))) for seq, raw in space.log_entries]

    def snapshot(self, keyspace: Optional[str] = None) -> None:
        """Write snapshot files and truncate the corresponding logs."""
        if self._dir is None:
            return
        spaces = [keyspace] if keyspace else list(KEYSPACES)
        with self._lock:
            for ks in spaces:
                space = self._space(ks)
                tmp = self._snap_path(ks) + ".tmp"
                with open(tmp, "w", encoding="utf-8") as fh:
                    for key, (version, raw) in sorted(space.records.items()):
                        fh.write(
                            json.dumps(
                                {
                                    "kind": "kv",
                                    "key": key,
                                    "version": version,
                                    "body": json.loads(raw.decode("utf-8")),
                                },
                                sort_keys=True,
                                separators=(",", ":"),
                                ensure_ascii=False,
                            )
                        )
                        fh.write("\n")
                    for seq, raw in space.log_entries:
                        fh.write(
                            json.dumps(
                                {"kind": "log", "seq": seq, "body": json.loads(raw.decode("utf-8"))},
                                sort_keys=True,
                                separators=(",", ":"),
                                ensure_ascii=False,
                            )
                        )
                        fh.write("\n")
                    fh.flush()
                    os.fsync(fh.fileno())
                os.replace(tmp, self._snap_path(ks))
                fh2 = self._files.get(ks)
                if fh2 is not None:
                    fh2.close()
                self._files[ks] = open(self._log_path(ks), "wb")

    def close(self) -> None:
        with self._lock:
            for fh in self._files.values():
                fh.close()
            self._files.clear()
