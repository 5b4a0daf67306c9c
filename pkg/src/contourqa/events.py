"""Append-only JSONL session log; replaying it reconstructs service state exactly."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

EVENT_KINDS = ("assessment", "verdict", "threshold_change")


@dataclass(frozen=True)
class SessionEvent:
    seq: int
    timestamp: str
    kind: str
    payload: dict

    def to_json(self) -> dict:
        return {"seq": self.seq, "timestamp": self.timestamp, "kind": self.kind, "payload": self.payload}


class EventLog:
    """Single-writer append log. Appends are serialised; reads see committed events."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self.events: list[SessionEvent] = []
        if self.path.exists():
            for line in self.path.read_text().splitlines():
                if not line.strip():
                    continue
                raw = json.loads(line)
                self.events.append(
                    SessionEvent(raw["seq"], raw["timestamp"], raw["kind"], raw["payload"])
                )
            for i, ev in enumerate(self.events, start=1):
                if ev.seq != i:
                    raise ValueError(f"event log corrupt: expected seq {i}, found {ev.seq}")
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.touch()

    @property
    def last_seq(self) -> int:
        return self.events[-1].seq if self.events else 0

    def append(self, kind: str, payload: dict) -> SessionEvent:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        with self._lock:
            event = SessionEvent(
                seq=self.last_seq + 1,
                timestamp=datetime.now(timezone.utc).isoformat(),
                kind=kind,
                payload=payload,
            )
            with open(self.path, "a") as fh:
                fh.write(json.dumps(event.to_json(), sort_keys=True) + "\n")
                fh.flush()
            self.events.append(event)
            return event
