"""Cloud-side hub: device shadows, command queues, ledger feed, threats, schedules.

Every mutation of a shadow or the ledger happens under one broker lock, so
observable behaviour is a sequential interleaving of whole operations.
Command delivery is at-least-once: a command stays in its device's pending
queue, returned on every channel poll, until a status report acknowledges it
by command id; devices suppress duplicate deliveries on their side.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field

from .ledger import MAX_CATCHUP_MS, Ledger, Schedule, detect_threat, due_actions, total_on_time
from .protocol import CommandMessage, StatusReport, SwitchState


class BrokerError(Exception):
    pass


class DuplicateDevice(BrokerError):
    pass


class UnknownDevice(BrokerError):
    pass


class CrossDeviceReport(BrokerError):
    pass


class PendingOverflow(BrokerError):
    """Per-device pending queue hit its cap; guards runaway clients."""


@dataclass
class DeviceShadow:
    """Broker-side belief about one switch, plus its undelivered commands."""

    device: str
    believed_state: SwitchState | None = None
    last_seen: int | None = None
    channel_active: bool = False
    pending: deque[CommandMessage] = field(default_factory=deque)


@dataclass(frozen=True)
class Alarm:
    alarm_id: str
    device: str
    reason: str
    triggering_seq: int
    raised_at: int


class Broker:
    def __init__(
        self,
        ledger: Ledger,
        *,
        liveness_window_ms: int = 10_000,
        pending_cap: int = 1000,
        threat_local_only: bool = False,
        tz_offset_min: int = 0,
    ):
        self._ledger = ledger
        self._lock = threading.RLock()
        self._shadows: dict[str, DeviceShadow] = {}
        self._occupancy: dict[str, list[tuple[int, int]]] = {}
        self._schedules: dict[str, Schedule] = {}
        self._alarms: list[Alarm] = []
        self._alarmed_seqs: set[int] = set()
        # id counters continue past entries already in a reopened ledger
        self._command_counter = ledger.count_kind("command")
        self._alarm_counter = ledger.count_kind("alarm")
        self._last_issued = 0
        self._last_tick: int | None = None
        self.liveness_window_ms = liveness_window_ms
        self.pending_cap = pending_cap
        self.threat_local_only = threat_local_only
        self.tz_offset_min = tz_offset_min

    @property
    def ledger(self) -> Ledger:
        return self._ledger

    def _require(self, device: str) -> DeviceShadow:
        shadow = self._shadows.get(device)
        if shadow is None:
            raise UnknownDevice(f"device {device!r} is not registered")
        return shadow

    def ensure_registered(self, device: str) -> None:
        with self._lock:
            self._require(device)

    def register_device(self, device: str) -> DeviceShadow:
        with self._lock:
            if device in self._shadows:
                raise DuplicateDevice(f"device {device!r} is already registered")
            shadow = DeviceShadow(device=device)
            self._shadows[device] = shadow
            return shadow

    def submit_command(self, origin: str, device: str, desired: SwitchState, now: int) -> str:
        with self._lock:
            shadow = self._require(device)
            if len(shadow.pending) >= self.pending_cap:
                raise PendingOverflow(
                    f"device {device!r} already has {len(shadow.pending)} undelivered commands"
                )
            self._last_issued = max(self._last_issued, now)
            self._command_counter += 1
            cmd = CommandMessage(
                command_id=f"c{self._command_counter:06d}",
                device=device,
                desired=desired,
                origin=origin,
                issued_at=self._last_issued,
            )
            self._ledger.append(
                "command", cmd.issued_at, device,
                command_id=cmd.command_id, switch=desired.value, origin=origin,
            )
            shadow.pending.append(cmd)
            return cmd.command_id

    def device_poll(self, device: str, reports: list[StatusReport], now: int) -> list[CommandMessage]:
        """One channel exchange: ingest reports, then return the full pending queue."""
        with self._lock:
            shadow = self._require(device)
            for report in reports:
                if report.device != device:
                    raise CrossDeviceReport(
                        f"report for {report.device!r} arrived on the channel of {device!r}"
                    )
            for report in reports:
                seq = self._ledger.append(
                    "status", report.at, device,
                    switch=report.state.value, cause=report.cause.tag(),
                )
                shadow.believed_state = report.state
                self.raise_alarm_if_threat(report, seq, now)
                if report.cause.kind == "cloud":
                    self._acknowledge(shadow, report.cause.command_id)
            shadow.last_seen = now
            shadow.channel_active = True
            return list(shadow.pending)

    @staticmethod
    def _acknowledge(shadow: DeviceShadow, command_id: str | None) -> None:
        for cmd in shadow.pending:
            if cmd.command_id == command_id:
                shadow.pending.remove(cmd)
                return

    def raise_alarm_if_threat(self, report: StatusReport, seq: int, now: int) -> Alarm | None:
        """Evaluate one ledgered report against the device's away windows; idempotent per seq."""
        with self._lock:
            if seq in self._alarmed_seqs:
                return None
            away = self._occupancy.get(report.device)
            if not away:
                return None
            hit = detect_threat(report, away, local_only=self.threat_local_only)
            if hit is None:
                return None
            start, end = hit
            self._alarm_counter += 1
            alarm = Alarm(
                alarm_id=f"a{self._alarm_counter:06d}",
                device=report.device,
                reason=f"switch reported on at {report.at} inside declared-away window [{start}, {end})",
                triggering_seq=seq,
                raised_at=now,
            )
            self._ledger.append(
                "alarm", now, report.device,
                alarm_id=alarm.alarm_id, reason=alarm.reason, triggering_seq=seq,
            )
            self._alarmed_seqs.add(seq)
            self._alarms.append(alarm)
            return alarm

    def mark_disconnected(self, device: str, now: int) -> None:
        with self._lock:
            shadow = self._require(device)
            if shadow.last_seen is None or now - shadow.last_seen > self.liveness_window_ms:
                shadow.channel_active = False

    def sweep_liveness(self, now: int) -> None:
        with self._lock:
            for device in self._shadows:
                self.mark_disconnected(device, now)

    def shadow_view(self, device: str, now: int) -> dict:
        with self._lock:
            s = self._require(device)
            active = (
                s.channel_active
                and s.last_seen is not None
                and now - s.last_seen <= self.liveness_window_ms
            )
            return {
                "device": s.device,
                "believed_state": s.believed_state.value if s.believed_state else None,
                "last_seen": s.last_seen,
                "channel_active": active,
                "pending_count": len(s.pending),
            }

    def list_views(self, now: int) -> list[dict]:
        with self._lock:
            return [self.shadow_view(device, now) for device in sorted(self._shadows)]

    def set_occupancy(self, device: str, intervals: list[tuple[int, int]]) -> None:
        with self._lock:
            self._require(device)
            self._occupancy[device] = list(intervals)

    def set_schedule(self, device: str, schedule: Schedule) -> None:
        with self._lock:
            self._require(device)
            self._schedules[device] = schedule

    def tick_schedules(self, now: int) -> list[str]:
        """Issue every schedule action that came due since the last tick."""
        with self._lock:
            if self._last_tick is None:
                # first tick anchors the window; no historical catch-up at boot
                self._last_tick = now
                return []
            prev = min(now, max(self._last_tick, now - MAX_CATCHUP_MS))
            issued: list[str] = []
            for device in sorted(self._schedules):
                schedule = self._schedules[device]
                for _fire_at, state, _index in due_actions(schedule, prev, now, self.tz_offset_min):
                    try:
                        issued.append(self.submit_command("scheduler", device, state, now))
                    except PendingOverflow:
                        continue  # full queue: skip the firing rather than wedge the tick
            self._last_tick = now
            return issued

    def alarms(self) -> list[Alarm]:
        with self._lock:
            return list(self._alarms)

    def query_log(self, device: str, from_ms: int, to_ms: int) -> list[dict]:
        with self._lock:
            self._require(device)
        return self._ledger.query(device, from_ms, to_ms)

    def on_time_ms(self, device: str, from_ms: int, to_ms: int) -> int:
        with self._lock:
            self._require(device)
            timeline = [
                (e["at"], SwitchState(e["switch"]))
                for e in self._ledger.entries_for(device)
                if e["kind"] == "status"
            ]
        return total_on_time(timeline, from_ms, to_ms)
