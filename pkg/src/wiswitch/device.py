"""Virtual relay switch: the software stand-in for the physical wall module.

Each switch owns a relay position, a connectivity mode, and a bounded outbox
of status reports awaiting the next cloud exchange. A switch is driven by
exactly one loop at a time (the simulator wraps it in a lock when the LAN
endpoint and the poll loop share it); the methods themselves do no locking.
"""

from __future__ import annotations

from collections import deque
from enum import Enum

from .protocol import Cause, CommandMessage, StatusReport, SwitchState

# Outbox capacity; oldest reports are dropped first once it fills.
OUTBOX_CAP = 256


class ConnectivityMode(Enum):
    CLOUD = "cloud"          # broker channel and LAN endpoint both reachable
    LOCAL_ONLY = "local"     # LAN endpoint reachable, no broker channel
    OFFLINE = "offline"      # unreachable on every path


class DeviceError(Exception):
    pass


class WrongDevice(DeviceError):
    pass


class NotConnected(DeviceError):
    pass


class NotReachable(DeviceError):
    pass


class VirtualSwitch:
    """Deterministic switch state machine.

    Applying the same event sequence to a fresh instance always yields the
    same relay positions and the same report stream.
    """

    def __init__(self, device_id: str, boot_state: SwitchState, now: int = 0):
        self.device_id = device_id
        self.relay = boot_state
        self.mode = ConnectivityMode.OFFLINE
        self.outbox: deque[StatusReport] = deque()
        self.dropped = 0
        self.last_applied_command: str | None = None
        self._last_cause = Cause.boot()
        self._last_event_at = now
        self._record(StatusReport(device_id, boot_state, now, Cause.boot()))

    def _record(self, report: StatusReport) -> StatusReport:
        if len(self.outbox) >= OUTBOX_CAP:
            self.outbox.popleft()
            self.dropped += 1
        self.outbox.append(report)
        self._last_cause = report.cause
        self._last_event_at = report.at
        return report

    def apply_cloud_command(self, cmd: CommandMessage, now: int) -> StatusReport | None:
        """Actuate a broker-delivered command; returns None for a duplicate delivery.

        A report is emitted even when the desired state equals the current
        relay position: command receipt is itself a loggable event. Only a
        repeat of the most recently applied command id is suppressed.
        """
        if cmd.device != self.device_id:
            raise WrongDevice(f"command for {cmd.device!r} delivered to {self.device_id!r}")
        if self.mode is not ConnectivityMode.CLOUD:
            raise NotConnected(f"{self.device_id} has no cloud channel in mode {self.mode.value!r}")
        if cmd.command_id == self.last_applied_command:
            return None
        self.relay = cmd.desired
        self.last_applied_command = cmd.command_id
        return self._record(StatusReport(self.device_id, self.relay, now, Cause.cloud(cmd.command_id)))

    def apply_local_command(self, desired: SwitchState, now: int) -> StatusReport:
        """Actuate a LAN-path command; works in any mode except full offline."""
        if self.mode is ConnectivityMode.OFFLINE:
            raise NotReachable(f"{self.device_id} is offline")
        self.relay = desired
        return self._record(StatusReport(self.device_id, desired, now, Cause.local()))

    def set_mode(self, mode: ConnectivityMode) -> None:
        # Connectivity is not a switch event: no report, relay untouched.
        self.mode = mode

    def drain_outbox(self) -> list[StatusReport]:
        """Hand every buffered report to the cloud channel, oldest first."""
        if self.mode is not ConnectivityMode.CLOUD:
            raise NotConnected(f"{self.device_id} cannot drain in mode {self.mode.value!r}")
        reports = list(self.outbox)
        self.outbox.clear()
        return reports

    def read_status(self) -> StatusReport:
        """Current state snapshot; does not consume the outbox."""
        return StatusReport(self.device_id, self.relay, self._last_event_at, self._last_cause)
