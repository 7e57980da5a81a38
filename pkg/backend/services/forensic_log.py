"""
Self-forensics: append-only event capture with deterministic exports.

Each emitter (a tier, the GMT, a store) writes its own sequence; exports
merge all emitters by (timestamp, emitter id, sequence number).
"""

import json
import logging
import threading
from typing import Any, Callable, Iterable

from sqlalchemy import insert
from sqlalchemy.dialects import sqlite
from sqlalchemy.engine import Engine
from sqlalchemy.orm import Session
from sqlalchemy.schema import CreateTable

from models import Base, ForensicEventRecord
from models.demands import Context
from models.forensics import ForensicEvent

logger = logging.getLogger(__name__)

EXPORT_FORMATS = ("lines", "dot", "sql")


class ForensicEmitter:
    """Write handle for one emitter id"""

    def __init__(self, log: "ForensicLog", emitter_id: str, tier_id: str | None = None,
                 node_id: str | None = None):
        self.log = log
        self.emitter_id = emitter_id
        self.tier_id = tier_id
        self.node_id = node_id

    def emit(self, name: str, duration_micros: int | None = None,
             context: Context | dict | None = None, **properties: Any) -> ForensicEvent:
        if isinstance(context, Context):
            context = context.as_dict()
        event = ForensicEvent(
            name=name,
            emitter=self.emitter_id,
            occurred_at=self.log.clock.now_micros(),
            duration_micros=duration_micros,
            tier_id=self.tier_id,
            node_id=self.node_id,
            properties={k: v for k, v in properties.items() if v is not None},
            context=context,
        )
        return self.log.record(event)


class ForensicLog:
    def __init__(self, clock):
        self.clock = clock
        self._lock = threading.RLock()
        self._events: list[ForensicEvent] = []
        self._next_seq: dict[str, int] = {}
        self._last_ts: dict[str, int] = {}
        self._listeners: list[Callable[[ForensicEvent], None]] = []

    def emitter(self, emitter_id: str, tier_id: str | None = None,
                node_id: str | None = None) -> ForensicEmitter:
        return ForensicEmitter(self, emitter_id, tier_id, node_id)

    def record(self, event: ForensicEvent) -> ForensicEvent:
        """recordForensicEvent: append, assigning the per-emitter sequence number"""
        with self._lock:
            seq = self._next_seq.get(event.emitter, 0)
            self._next_seq[event.emitter] = seq + 1
            # timestamps never go backwards within one emitter
            occurred_at = max(event.occurred_at, self._last_ts.get(event.emitter, event.occurred_at))
            self._last_ts[event.emitter] = occurred_at
            stored = ForensicEvent(
                name=event.name,
                emitter=event.emitter,
                occurred_at=occurred_at,
                seq=seq,
                duration_micros=event.duration_micros,
                tier_id=event.tier_id,
                node_id=event.node_id,
                properties=dict(event.properties),
                context=dict(event.context) if event.context is not None else None,
            )
            self._events.append(stored)
            listeners = list(self._listeners)
        for listener in listeners:
            listener(stored)
        return stored

    def subscribe(self, listener: Callable[[ForensicEvent], None]) -> None:
        with self._lock:
            self._listeners.append(listener)

    def __len__(self) -> int:
        return len(self._events)

    def raw(self, start: int = 0) -> list[ForensicEvent]:
        """Events in arrival order from position `start`"""
        with self._lock:
            return self._events[start:]

    def events(self, name: str | None = None) -> list[ForensicEvent]:
        with self._lock:
            selected = [e for e in self._events if name is None or e.name == name]
        return sorted(selected, key=lambda e: e.order_key)

    def count(self, name: str) -> int:
        with self._lock:
            return sum(1 for e in self._events if e.name == name)

    def export(self, fmt: str = "lines") -> bytes:
        """exportForensicLog"""
        return export_events(self.events(), fmt)


# ------------------------------------------------------------------ exports

def render_value(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        plain = value and value[0] not in "[{" and not any(c.isspace() or c in '="' for c in value)
        if plain and _parse_scalar(value) == value:
            return value
        return json.dumps(value)
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


def format_line(event: ForensicEvent) -> str:
    parts = [
        f"ts={event.occurred_at}",
        f"emitter={render_value(event.emitter)}",
        f"name={render_value(event.name)}",
        f"dur={render_value(event.duration_micros)}",
    ]
    if event.tier_id is not None:
        parts.append(f"tier={render_value(event.tier_id)}")
    if event.node_id is not None:
        parts.append(f"node={render_value(event.node_id)}")
    for key in sorted(event.properties):
        parts.append(f"{key}={render_value(event.properties[key])}")
    if event.context is not None:
        parts.append(f"ctx={render_value(event.context)}")
    return " ".join(parts)


def parse_line(line: str) -> ForensicEvent:
    """Inverse of format_line for the fields the lifecycle graph needs"""
    fields: dict[str, Any] = {}
    rest = line.strip()
    while rest:
        key, _, rest = rest.partition("=")
        if rest.startswith('"') or rest.startswith("{") or rest.startswith("["):
            decoder = json.JSONDecoder()
            value, end = decoder.raw_decode(rest)
            rest = rest[end:].lstrip()
        else:
            raw, _, rest = rest.partition(" ")
            value = _parse_scalar(raw)
        fields[key.strip()] = value
    try:
        occurred_at = int(fields.pop("ts"))
        emitter = str(fields.pop("emitter"))
        name = str(fields.pop("name"))
    except (KeyError, ValueError) as e:
        raise ValueError(f"not a forensic line: {line!r}") from e
    duration = fields.pop("dur", None)
    return ForensicEvent(
        name=name,
        emitter=emitter,
        occurred_at=occurred_at,
        duration_micros=duration,
        tier_id=fields.pop("tier", None),
        node_id=fields.pop("node", None),
        context=fields.pop("ctx", None),
        properties=fields,
    )


def _parse_scalar(raw: str) -> Any:
    if raw == "-":
        return None
    if raw in ("true", "false"):
        return raw == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def read_lines(data: bytes | str) -> list[ForensicEvent]:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return [parse_line(line) for line in data.splitlines() if line.strip()]


def export_lines(events: Iterable[ForensicEvent]) -> bytes:
    body = "".join(format_line(e) + "\n" for e in events)
    return body.encode("utf-8")


def export_sql(events: Iterable[ForensicEvent]) -> bytes:
    """CREATE TABLE plus one INSERT per event, rendered for SQLite"""
    dialect = sqlite.dialect()
    table = ForensicEventRecord.__table__
    statements = [str(CreateTable(table).compile(dialect=dialect)).strip()]
    for event in events:
        stmt = insert(table).values(**_record_values(event))
        statements.append(str(stmt.compile(dialect=dialect, compile_kwargs={"literal_binds": True})))
    return ("".join(s + ";\n" for s in statements)).encode("utf-8")


def export_events(events: Iterable[ForensicEvent], fmt: str) -> bytes:
    events = list(events)
    if fmt == "lines":
        return export_lines(events)
    if fmt == "dot":
        from services.graph_service import lifecycle_dot
        return lifecycle_dot(events).encode("utf-8")
    if fmt == "sql":
        return export_sql(events)
    raise ValueError(f"unknown forensic export format {fmt!r} (expected one of {EXPORT_FORMATS})")


def _record_values(event: ForensicEvent) -> dict:
    return {
        "occurred_at": event.occurred_at,
        "emitter": event.emitter,
        "seq": event.seq,
        "name": event.name,
        "duration_micros": event.duration_micros,
        "tier_id": event.tier_id,
        "node_id": event.node_id,
        "properties": json.dumps(event.properties, sort_keys=True, separators=(",", ":")),
        "context": json.dumps(event.context, sort_keys=True) if event.context is not None else None,
    }


def persist_forensic_log(events: Iterable[ForensicEvent], engine: Engine) -> int:
    """Store events in a database through the ORM; returns the row count"""
    Base.metadata.create_all(engine)
    rows = [ForensicEventRecord(**_record_values(e)) for e in events]
    try:
        with Session(engine) as session:
            session.add_all(rows)
            session.commit()
    except Exception as e:
        logger.error(f"Error persisting forensic log: {e}")
        raise
    logger.info(f"Persisted {len(rows)} forensic events")
    return len(rows)
