"""Event records and the newline-delimited log format."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterable


class EventKind(str, Enum):
    FETCH = "fetch"
    RESPONSE = "response"
    INJECT = "inject"
    CACHE_HIT = "cache_hit"
    CACHE_EVICT = "cache_evict"
    INFECT = "infect"
    PROPAGATE = "propagate"
    C2_TRANSFER = "c2_transfer"
    ATTACK_DISPATCH = "attack_dispatch"
    CLEAR = "clear"
    SEGMENT = "segment"
    BLOCKED = "blocked"
    NOTE = "note"
    SCENARIO_START = "scenario_start"
    SCENARIO_END = "scenario_end"


@dataclass(frozen=True)
class SimEvent:
    seq: int
    time: int
    kind: EventKind
    node: str
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"seq": self.seq, "time": self.time, "kind": self.kind.value,
                "node": self.node, "detail": self.detail}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"), ensure_ascii=True)

    @classmethod
    def from_dict(cls, d: dict) -> SimEvent:
        return cls(d["seq"], d["time"], EventKind(d["kind"]), d["node"], d.get("detail", {}))


def write_log(events: Iterable[SimEvent], fh: IO[str], meta: dict | None = None) -> None:
    if meta is not None:
        fh.write(json.dumps({"_meta": meta}, separators=(",", ":")) + "\n")
    for ev in events:
        fh.write(ev.to_json() + "\n")


def dumps_log(events: Iterable[SimEvent], meta: dict | None = None) -> str:
    buf = io.StringIO()
    write_log(events, buf, meta)
    return buf.getvalue()


def read_log(lines: Iterable[str]) -> list[SimEvent]:
    out = []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        d = json.loads(line)
        if "_meta" not in d:
            out.append(SimEvent.from_dict(d))
    return out


def of_kind(events: Iterable[SimEvent], kind: EventKind | str, node: str | None = None) -> list[SimEvent]:
    kind = EventKind(kind)
    return [e for e in events if e.kind is kind and (node is None or e.node == node)]
