"""Append-only event log plus the analytics computed from it.

Storage is a JSON Lines file, one object per line, UTF-8:

    {"seq": N, "at": MS, "device": "id", "kind": "command"|"status"|"alarm", ...}

Kind-specific fields:
    command   command_id, switch, origin
    status    switch, cause
    alarm     alarm_id, reason, triggering_seq

Sequence numbers start at 1 and increment by exactly 1. In the default
"each" flush mode an append is flushed and fsynced before its sequence
number is returned, so an acknowledged append survives a hard kill; "batch"
mode trades that guarantee for buffered writes.

This module also owns the request-body schemas for occupancy windows
(`{"away": [{"from": MS, "to": MS}, ...]}`) and schedules
(`{"actions": [{"minute": M, "days": ["mon", ...], "switch": "on"|"off"}, ...]}`),
and the pure analytics over the log: total on-time, away-window threat
matching, and schedule-firing evaluation.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .protocol import SchemaViolation, StatusReport, SwitchState, switch_state_from_wire

MINUTE_MS = 60_000
DAY_MS = 86_400_000
# Longest window tick_schedules / due_actions will evaluate in one call.
MAX_CATCHUP_MS = 7 * DAY_MS

WEEKDAY_NAMES = ("mon", "tue", "wed", "thu", "fri", "sat", "sun")


class LedgerError(Exception):
    pass


class StorageFailure(LedgerError):
    """I/O failure; the ledger refuses further writes once this is raised."""


class BadRange(LedgerError):
    pass


class WindowTooLarge(LedgerError):
    pass


class Ledger:
    """Single-writer append-only log with the full entry list mirrored in memory."""

    def __init__(self, path: str | Path, flush: str = "each"):
        if flush not in ("each", "batch"):
            raise ValueError(f"flush mode must be 'each' or 'batch', got {flush!r}")
        self.path = Path(path)
        self.flush_mode = flush
        self._entries: list[dict] = []
        self._seq = 0
        self._failed = False
        self._lock = threading.Lock()
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._load()
        try:
            self._file = open(self.path, "a", encoding="utf-8")
        except OSError as exc:
            raise StorageFailure(f"cannot open ledger {self.path}: {exc}") from exc

    def _load(self) -> None:
        if not self.path.exists():
            return
        raw = self.path.read_bytes()
        pieces = raw.splitlines(keepends=True)
        good_bytes = 0
        for i, piece in enumerate(pieces):
            last = i == len(pieces) - 1
            # an append is acknowledged only after its trailing newline is
            # flushed, so an unterminated or unparseable final line is a torn
            # write from a mid-append crash: drop it
            torn = last and not piece.endswith(b"\n")
            if not torn:
                try:
                    entry = json.loads(piece.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError):
                    if last:
                        torn = True
                    else:
                        raise StorageFailure(f"ledger {self.path} is corrupt at line {i + 1}")
            if torn:
                with open(self.path, "r+b") as f:
                    f.truncate(good_bytes)
                break
            if entry.get("seq") != self._seq + 1:
                raise StorageFailure(
                    f"ledger {self.path} has sequence {entry.get('seq')} at line {i + 1}, expected {self._seq + 1}"
                )
            self._entries.append(entry)
            self._seq += 1
            good_bytes += len(piece)

    def append(self, kind: str, at: int, device: str, **fields) -> int:
        """Durably record one event and return its sequence number."""
        with self._lock:
            if self._failed:
                raise StorageFailure("ledger is in a failed state; refusing writes")
            entry = {"seq": self._seq + 1, "at": at, "device": device, "kind": kind, **fields}
            try:
                self._file.write(json.dumps(entry, separators=(",", ":")) + "\n")
                self._file.flush()
                if self.flush_mode == "each":
                    os.fsync(self._file.fileno())
            except (OSError, ValueError) as exc:
                self._failed = True
                raise StorageFailure(f"append to {self.path} failed: {exc}") from exc
            self._seq += 1
            self._entries.append(entry)
            return self._seq

    def query(self, device: str, from_ms: int, to_ms: int) -> list[dict]:
        """Entries for one device with at in [from_ms, to_ms], in sequence order."""
        if from_ms > to_ms:
            raise BadRange(f"query range start {from_ms} exceeds end {to_ms}")
        with self._lock:
            return [e for e in self._entries if e["device"] == device and from_ms <= e["at"] <= to_ms]

    def entries_for(self, device: str) -> list[dict]:
        with self._lock:
            return [e for e in self._entries if e["device"] == device]

    def all_entries(self) -> list[dict]:
        with self._lock:
            return list(self._entries)

    def count_kind(self, kind: str) -> int:
        with self._lock:
            return sum(1 for e in self._entries if e["kind"] == kind)

    @property
    def last_seq(self) -> int:
        return self._seq

    def close(self) -> None:
        with self._lock:
            if self._file.closed:
                return
            try:
                self._file.flush()
                os.fsync(self._file.fileno())
            except (OSError, ValueError):
                pass
            self._file.close()


# --- analytics -------------------------------------------------------------


def total_on_time(timeline: Iterable[tuple[int, SwitchState]], from_ms: int, to_ms: int) -> int:
    """Total milliseconds within [from_ms, to_ms) during which the switch was On.

    `timeline` is the device's (at, state) report pairs in ledger order;
    simultaneous reports resolve to the later ledger entry. The state before
    the first report is Off; a trailing On extends to the window end.
    """
    if from_ms > to_ms:
        raise BadRange(f"window start {from_ms} exceeds end {to_ms}")
    ordered = sorted(timeline, key=lambda r: r[0])  # stable: ledger order breaks ties
    total = 0
    cursor = from_ms
    state = SwitchState.OFF
    for at, reported in ordered:
        if at < from_ms:
            state = reported
            continue
        if at >= to_ms:
            break
        if state is SwitchState.ON:
            total += at - cursor
        cursor = at
        state = reported
    if state is SwitchState.ON and cursor < to_ms:
        total += to_ms - cursor
    return total


def detect_threat(
    report: StatusReport,
    away: Sequence[tuple[int, int]],
    *,
    local_only: bool = False,
) -> tuple[int, int] | None:
    """Return the declared-away interval an On report falls into, else None.

    Intervals are half-open [start, end). Off reports never match. By
    default every cause counts (a cloud command during a declared absence is
    as anomalous as a wall press); `local_only` narrows matching to
    LAN-caused reports.
    """
    if report.state is not SwitchState.ON:
        return None
    if local_only and report.cause.kind != "local":
        return None
    for start, end in away:
        if start <= report.at < end:
            return (start, end)
    return None


@dataclass(frozen=True)
class ScheduleAction:
    minute_of_day: int
    days: frozenset[int]  # 0 = Monday, matching datetime.weekday()
    state: SwitchState


@dataclass(frozen=True)
class Schedule:
    device: str
    actions: tuple[ScheduleAction, ...]


def _weekday_of_epoch_day(day: int) -> int:
    # day 0 (1970-01-01) was a Thursday
    return (day + 3) % 7


def due_actions(
    schedule: Schedule,
    prev_ms: int,
    now_ms: int,
    tz_offset_min: int,
) -> list[tuple[int, SwitchState, int]]:
    """All (fire_at_utc_ms, state, action_index) with prev < fire_at <= now.

    Fire times are minute-granular local times; local = UTC + fixed offset,
    no DST. Results are sorted by fire time, then action index.
    """
    if prev_ms > now_ms:
        raise BadRange(f"window start {prev_ms} exceeds end {now_ms}")
    if now_ms - prev_ms > MAX_CATCHUP_MS:
        raise WindowTooLarge(f"window of {now_ms - prev_ms} ms exceeds the {MAX_CATCHUP_MS} ms catch-up limit")
    offset_ms = tz_offset_min * MINUTE_MS
    local_prev = prev_ms + offset_ms
    local_now = now_ms + offset_ms
    fired: list[tuple[int, SwitchState, int]] = []
    for index, action in enumerate(schedule.actions):
        for day in range(local_prev // DAY_MS, local_now // DAY_MS + 1):
            if _weekday_of_epoch_day(day) not in action.days:
                continue
            fire_utc = day * DAY_MS + action.minute_of_day * MINUTE_MS - offset_ms
            if prev_ms < fire_utc <= now_ms:
                fired.append((fire_utc, action.state, index))
    fired.sort(key=lambda f: (f[0], f[2]))
    return fired


# --- request-body schemas ----------------------------------------------------


def parse_occupancy_body(body: object) -> list[tuple[int, int]]:
    """Validate an occupancy PUT body into a list of [start, end) interval tuples."""
    if not isinstance(body, dict) or set(body) != {"away"}:
        raise SchemaViolation('occupancy body must be an object with the single key "away"')
    intervals = body["away"]
    if not isinstance(intervals, list):
        raise SchemaViolation('"away" must be a list of {"from", "to"} objects')
    parsed: list[tuple[int, int]] = []
    for i, item in enumerate(intervals):
        if not isinstance(item, dict) or set(item) != {"from", "to"}:
            raise SchemaViolation(f'away[{i}] must be an object with exactly the keys "from" and "to"')
        start, end = item["from"], item["to"]
        for name, value in (("from", start), ("to", end)):
            if isinstance(value, bool) or not isinstance(value, int):
                raise SchemaViolation(f'away[{i}].{name} must be an integer millisecond timestamp, got {value!r}')
        if start < 0:
            raise SchemaViolation(f"away[{i}] starts before the epoch: {start}")
        if start >= end:
            raise SchemaViolation(f"away[{i}] is empty or inverted: [{start}, {end})")
        parsed.append((start, end))
    return parsed


def parse_schedule_body(device: str, body: object) -> Schedule:
    """Validate a schedule PUT body into a Schedule."""
    if not isinstance(body, dict) or set(body) != {"actions"}:
        raise SchemaViolation('schedule body must be an object with the single key "actions"')
    actions = body["actions"]
    if not isinstance(actions, list):
        raise SchemaViolation('"actions" must be a list')
    parsed: list[ScheduleAction] = []
    for i, item in enumerate(actions):
        if not isinstance(item, dict) or set(item) != {"minute", "days", "switch"}:
            raise SchemaViolation(f'actions[{i}] must have exactly the keys "minute", "days" and "switch"')
        minute = item["minute"]
        if isinstance(minute, bool) or not isinstance(minute, int) or not 0 <= minute <= 1439:
            raise SchemaViolation(f"actions[{i}].minute must be an integer in 0..1439, got {minute!r}")
        days = item["days"]
        if not isinstance(days, list) or not days:
            raise SchemaViolation(f"actions[{i}].days must be a non-empty list of weekday names")
        day_set = set()
        for d in days:
            if d not in WEEKDAY_NAMES:
                raise SchemaViolation(f"actions[{i}].days contains unknown weekday {d!r}")
            day_set.add(WEEKDAY_NAMES.index(d))
        state = switch_state_from_wire(item["switch"])
        parsed.append(ScheduleAction(minute_of_day=minute, days=frozenset(day_set), state=state))
    return Schedule(device=device, actions=tuple(parsed))
