"""Append-only JSONL event log with periodic JSON snapshots.

Replaying the log reproduces service state exactly; the snapshot only
shortcuts replay. Sequence numbers are strictly increasing and assigned at
append time. Appends are flushed before the caller acknowledges anything.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass

from ..errors import ValidationError

LOG_NAME = "events.jsonl"
SNAPSHOT_NAME = "snapshot.json"


@dataclass(frozen=True)
class EventRecord:
    seq: int
    timestamp: float
    kind: str
    payload: dict

    def to_json(self) -> str:
        return json.dumps(
            {"seq": self.seq, "timestamp": self.timestamp, "kind": self.kind, "payload": self.payload},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "EventRecord":
        doc = json.loads(line)
        return cls(
            seq=doc["seq"], timestamp=doc["timestamp"], kind=doc["kind"], payload=doc["payload"]
        )


class EventLog:
    """Single-appender log; reads never block appends."""

    def __init__(self, directory: str):
        os.makedirs(directory, exist_ok=True)
        self.directory = directory
        self.path = os.path.join(directory, LOG_NAME)
        self.snapshot_path = os.path.join(directory, SNAPSHOT_NAME)
        self._lock = threading.Lock()
        self._next_seq = 1
        if os.path.exists(self.path):
            for record in self.read_all():
                self._next_seq = record.seq + 1

    def append(self, kind: str, payload: dict) -> EventRecord:
        with self._lock:
            record = EventRecord(
                seq=self._next_seq, timestamp=time.time(), kind=kind, payload=payload
            )
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(record.to_json() + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._next_seq += 1
            return record

    def read_all(self, after_seq: int = 0) -> list[EventRecord]:
        if not os.path.exists(self.path):
            return []
        records = []
        with open(self.path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = EventRecord.from_json(line)
                if record.seq > after_seq:
                    records.append(record)
        prev = after_seq
        for r in records:
            if r.seq <= prev:
                raise ValidationError(f"event log corrupt: seq {r.seq} after {prev}")
            prev = r.seq
        return records

    def write_snapshot(self, state_doc: dict, last_seq: int) -> None:
        doc = {"last_seq": last_seq, "state": state_doc}
        tmp = self.snapshot_path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.snapshot_path)

    def read_snapshot(self) -> tuple[dict, int] | None:
        if not os.path.exists(self.snapshot_path):
            return None
        with open(self.snapshot_path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        return doc["state"], doc["last_seq"]
