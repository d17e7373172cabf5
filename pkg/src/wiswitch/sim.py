"""Simulated switch fleet: poll loops, LAN endpoints, and fault scripts.

A fleet owns `count` virtual switches named ``<prefix>-1 .. <prefix>-N``.
Each switch runs the same loop the embedded firmware would: drain the
outbox, exchange it for pending commands on the broker's device channel,
apply the commands, repeat. Every switch also gets a real loopback HTTP
endpoint (GET /status, POST /switch) so the LAN control path crosses an
actual socket.

Fault scripts are JSON Lines of {"at": MS, "device": N, "mode": "cloud" |
"local" | "offline"}, with `device` the 1-based index matching the id
suffix and `at` an offset from the run start. Channel exchanges are atomic:
a failed POST leaves the drained reports in a carry buffer and they ride
along on the next attempt, so no report is ever lost to a transport error.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import httpx

from .clock import Clock, SimClock
from .device import ConnectivityMode, VirtualSwitch
from .protocol import (
    CommandMessage,
    ProtocolError,
    SchemaViolation,
    StatusReport,
    SwitchState,
    decode_command,
    encode_status,
    status_to_obj,
    switch_state_from_wire,
)


class SimError(Exception):
    pass


class BrokerUnreachable(SimError):
    pass


@dataclass(frozen=True)
class FaultStep:
    at_ms: int
    device_index: int  # 1-based, matches the "<prefix>-<n>" suffix
    mode: ConnectivityMode


def parse_fault_step(obj: dict) -> FaultStep:
    if not isinstance(obj, dict) or set(obj) != {"at", "device", "mode"}:
        raise SchemaViolation('fault step must have exactly the keys "at", "device" and "mode"')
    at, device, mode = obj["at"], obj["device"], obj["mode"]
    if isinstance(at, bool) or not isinstance(at, int) or at < 0:
        raise SchemaViolation(f'fault step "at" must be a non-negative integer, got {at!r}')
    if isinstance(device, bool) or not isinstance(device, int) or device < 1:
        raise SchemaViolation(f'fault step "device" must be a positive 1-based index, got {device!r}')
    try:
        parsed_mode = ConnectivityMode(mode)
    except ValueError:
        raise SchemaViolation(f'fault step "mode" must be "cloud", "local" or "offline", got {mode!r}') from None
    return FaultStep(at_ms=at, device_index=device, mode=parsed_mode)


def load_fault_script(path: str | Path) -> list[FaultStep]:
    steps = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"fault script line {line_no} is not JSON: {exc}") from None
            steps.append(parse_fault_step(obj))
    steps.sort(key=lambda s: s.at_ms)
    return steps


def parse_channel_command(obj: dict, device: str) -> CommandMessage:
    """Parse one entry of the channel response's "commands" array."""
    if not isinstance(obj, dict) or set(obj) != {"Switch", "command_id"}:
        raise SchemaViolation(f"channel command must have exactly the keys 'Switch' and 'command_id', got {obj!r}")
    desired = switch_state_from_wire(obj["Switch"])
    command_id = obj["command_id"]
    if not isinstance(command_id, str) or not command_id:
        raise SchemaViolation(f"command_id must be a non-empty string, got {command_id!r}")
    return CommandMessage(command_id=command_id, device=device, desired=desired, origin="cloud", issued_at=0)


class DeviceRuntime:
    """One simulated switch plus the lock shared by its poll loop and LAN endpoint."""

    def __init__(self, switch: VirtualSwitch, clock: Clock):
        self.switch = switch
        self.clock = clock
        self.lock = threading.Lock()
        self.carry: list[StatusReport] = []  # drained but not yet delivered
        self.server: ThreadingHTTPServer | None = None
        self.lan_port: int | None = None


class _LanHandler(BaseHTTPRequestHandler):
    runtime: DeviceRuntime  # bound per device via a subclass

    def log_message(self, fmt, *args):  # quiet; diagnostics belong to the fleet
        pass

    def _send(self, status: int, payload: bytes) -> None:
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def _send_error_obj(self, status: int, error: str, detail: str) -> None:
        self._send(status, json.dumps({"error": error, "detail": detail}).encode())

    def do_GET(self):
        if self.path != "/status":
            self._send_error_obj(404, "NotFound", f"unknown path {self.path}")
            return
        rt = self.runtime
        with rt.lock:
            if rt.switch.mode is ConnectivityMode.OFFLINE:
                self._send_error_obj(503, "NotReachable", f"{rt.switch.device_id} is offline")
                return
            payload = encode_status(rt.switch.read_status())
        self._send(200, payload)

    def do_POST(self):
        if self.path != "/switch":
            self._send_error_obj(404, "NotFound", f"unknown path {self.path}")
            return
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length)
        rt = self.runtime
        try:
            desired = decode_command(body)
        except ProtocolError as exc:
            self._send_error_obj(400, type(exc).__name__, str(exc))
            return
        with rt.lock:
            if rt.switch.mode is ConnectivityMode.OFFLINE:
                self._send_error_obj(503, "NotReachable", f"{rt.switch.device_id} is offline")
                return
            report = rt.switch.apply_local_command(desired, rt.clock.now())
            payload = encode_status(report)
        self._send(200, payload)


class SimFleet:
    def __init__(
        self,
        *,
        count: int,
        client: httpx.Client,
        clock: Clock,
        prefix: str = "switch",
        boot_state: SwitchState = SwitchState.OFF,
        poll_interval_ms: int = 500,
        fault_steps: list[FaultStep] | None = None,
        lan_base_port: int | None = None,
        push_clock: bool = False,
        register_attempts: int = 1,
        register_backoff_s: float = 0.5,
    ):
        if count < 1:
            raise ValueError("fleet needs at least one device")
        if poll_interval_ms < 10:
            raise ValueError("poll interval below 10 ms")
        self.client = client
        self.clock = clock
        self.poll_interval_ms = poll_interval_ms
        self.fault_steps = sorted(fault_steps or [], key=lambda s: s.at_ms)
        self._next_fault = 0
        self.push_clock = push_clock
        self.register_attempts = register_attempts
        self.register_backoff_s = register_backoff_s
        now = clock.now()
        self.runtimes = [
            DeviceRuntime(VirtualSwitch(f"{prefix}-{i}", boot_state, now), clock)
            for i in range(1, count + 1)
        ]
        self._lan_base_port = lan_base_port

    # --- lifecycle ---------------------------------------------------------

    def start_lan_servers(self) -> None:
        for i, rt in enumerate(self.runtimes):
            if rt.server is not None:
                continue
            port = 0 if self._lan_base_port is None else self._lan_base_port + i
            handler = type("LanHandler", (_LanHandler,), {"runtime": rt})
            server = ThreadingHTTPServer(("127.0.0.1", port), handler)
            rt.server = server
            rt.lan_port = server.server_address[1]
            threading.Thread(target=server.serve_forever, daemon=True,
                             name=f"lan-{rt.switch.device_id}").start()

    def stop_lan_servers(self) -> None:
        for rt in self.runtimes:
            if rt.server is not None:
                rt.server.shutdown()
                rt.server.server_close()
                rt.server = None

    def register_all(self) -> None:
        for rt in self.runtimes:
            last_exc: Exception | None = None
            for attempt in range(self.register_attempts):
                try:
                    resp = self.client.post("/api/devices", json={"id": rt.switch.device_id})
                except httpx.TransportError as exc:
                    last_exc = exc
                    time.sleep(self.register_backoff_s * (attempt + 1))
                    continue
                if resp.status_code in (201, 409):  # 409: already registered, fine
                    last_exc = None
                    break
                raise SimError(f"registration of {rt.switch.device_id} failed: {resp.status_code} {resp.text}")
            if last_exc is not None:
                raise BrokerUnreachable(
                    f"broker unreachable after {self.register_attempts} attempts: {last_exc}"
                ) from last_exc

    # --- one step of the world ----------------------------------------------

    def apply_due_faults(self, now_ms: int) -> None:
        while self._next_fault < len(self.fault_steps) and self.fault_steps[self._next_fault].at_ms <= now_ms:
            step = self.fault_steps[self._next_fault]
            self._next_fault += 1
            if not 1 <= step.device_index <= len(self.runtimes):
                continue
            rt = self.runtimes[step.device_index - 1]
            with rt.lock:
                rt.switch.set_mode(step.mode)

    def poll_cycle(self, index: int, now: int) -> list[CommandMessage]:
        """Drain-and-exchange for one device; returns the commands it applied."""
        rt = self.runtimes[index]
        with rt.lock:
            if rt.switch.mode is not ConnectivityMode.CLOUD:
                return []
            batch = rt.carry + rt.switch.drain_outbox()
            rt.carry = batch
        device_id = rt.switch.device_id
        try:
            resp = self.client.post(
                f"/api/device-channel/{device_id}",
                json={"reports": [status_to_obj(r) for r in batch]},
            )
        except httpx.TransportError:
            return []  # reports stay in the carry buffer for the next attempt
        if resp.status_code != 200:
            raise SimError(f"channel exchange for {device_id} failed: {resp.status_code} {resp.text}")
        commands = [parse_channel_command(obj, device_id) for obj in resp.json()["commands"]]
        applied = []
        with rt.lock:
            rt.carry = []
            for cmd in commands:
                if rt.switch.mode is not ConnectivityMode.CLOUD:
                    break  # went dark mid-batch; unapplied commands stay pending broker-side
                if rt.switch.apply_cloud_command(cmd, now) is not None:
                    applied.append(cmd)
        return applied

    def step_to(self, now_ms: int) -> None:
        """Advance the scripted world to `now_ms`: clock, faults, then one poll each."""
        if isinstance(self.clock, SimClock):
            self.clock.advance_to(now_ms)
        if self.push_clock:
            resp = self.client.post("/api/clock", json={"now_ms": now_ms})
            if resp.status_code != 200:
                raise SimError(f"clock push rejected: {resp.status_code} {resp.text}")
        self.apply_due_faults(now_ms)
        for i in range(len(self.runtimes)):
            self.poll_cycle(i, now_ms)

    def run_scripted(self, until_ms: int, step_ms: int | None = None) -> None:
        step = step_ms or self.poll_interval_ms
        now = self.clock.now()
        while now < until_ms:
            now = min(until_ms, now + step)
            self.step_to(now)

    # --- wall-clock operation ------------------------------------------------

    def run_wall(self, duration_ms: int | None = None, stop: threading.Event | None = None) -> None:
        """Run poll loops on real time until `duration_ms` elapses or `stop` is set."""
        stop = stop or threading.Event()
        start = self.clock.now()

        def fault_loop():
            for step in self.fault_steps:
                wait_s = max(0.0, (start + step.at_ms - self.clock.now()) / 1000)
                if stop.wait(wait_s):
                    return
                rt = self.runtimes[step.device_index - 1]
                with rt.lock:
                    rt.switch.set_mode(step.mode)

        def device_loop(index: int):
            while not stop.is_set():
                self.poll_cycle(index, self.clock.now())
                if stop.wait(self.poll_interval_ms / 1000):
                    return

        threads = [threading.Thread(target=fault_loop, daemon=True, name="faults")]
        threads += [
            threading.Thread(target=device_loop, args=(i,), daemon=True, name=f"poll-{rt.switch.device_id}")
            for i, rt in enumerate(self.runtimes)
        ]
        for t in threads:
            t.start()
        try:
            if duration_ms is None:
                while not stop.wait(0.2):
                    pass
            else:
                stop.wait(duration_ms / 1000)
        finally:
            stop.set()
            for t in threads:
                t.join(timeout=2)
