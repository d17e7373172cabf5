"""JSON wire protocol shared by the broker, the virtual switches, and clients.

Two payloads travel between the layers, both UTF-8 encoded JSON objects with
a fixed key order and no whitespace, so encodings are byte-stable:

    command  {"Switch": "on" | "off"}
    status   {"Switch": "on" | "off", "at": <ms since epoch>, "cause": "<tag>"}

Cause tags: ``cloud:<command_id>``, ``local``, ``boot``, ``schedule:<index>``.

Decoding is strict: unknown keys, missing keys, wrong case, or wrong types
are rejected with SchemaViolation naming the offending fragment. Payloads
that are not UTF-8 JSON at all raise MalformedJson. Decoders never raise
anything outside ProtocolError, no matter the input bytes.

The status payload carries no device id; the transport names the device
(URL path on both the cloud channel and the LAN endpoint), so the status
decoder takes it as an argument.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum


class ProtocolError(ValueError):
    """Base class for every wire-level rejection."""


class MalformedJson(ProtocolError):
    """Payload is not parseable UTF-8 JSON."""


class SchemaViolation(ProtocolError):
    """Payload is JSON but does not match the message schema."""


class InvalidDeviceId(ProtocolError):
    """Device id token outside the [a-z0-9-]{1,64} rule."""


class SwitchState(Enum):
    ON = "on"
    OFF = "off"


def switch_state_from_wire(value: object) -> SwitchState:
    """Parse a "Switch" value; only the exact lowercase strings are valid."""
    if value == "on":
        return SwitchState.ON
    if value == "off":
        return SwitchState.OFF
    raise SchemaViolation(f'"Switch" must be "on" or "off", got {value!r}')


@dataclass(frozen=True)
class Cause:
    """Why a switch reported its state: cloud command, LAN command, boot, or schedule."""

    kind: str
    command_id: str | None = None
    action_index: int | None = None

    @classmethod
    def cloud(cls, command_id: str) -> "Cause":
        return cls("cloud", command_id=command_id)

    @classmethod
    def local(cls) -> "Cause":
        return cls("local")

    @classmethod
    def boot(cls) -> "Cause":
        return cls("boot")

    @classmethod
    def schedule(cls, action_index: int) -> "Cause":
        return cls("schedule", action_index=action_index)

    def tag(self) -> str:
        if self.kind == "cloud":
            return f"cloud:{self.command_id}"
        if self.kind == "schedule":
            return f"schedule:{self.action_index}"
        return self.kind

    @classmethod
    def from_tag(cls, tag: str) -> "Cause":
        if tag in ("local", "boot"):
            return cls(tag)
        if tag.startswith("cloud:"):
            command_id = tag[len("cloud:"):]
            if not command_id:
                raise SchemaViolation('cause "cloud:" is missing its command id')
            return cls.cloud(command_id)
        if tag.startswith("schedule:"):
            raw = tag[len("schedule:"):]
            # canonical decimal only: no sign, no leading zeros
            if not raw.isdigit() or (len(raw) > 1 and raw.startswith("0")):
                raise SchemaViolation(f"cause schedule index {raw!r} is not a canonical non-negative integer")
            return cls.schedule(int(raw))
        raise SchemaViolation(f"unknown cause tag {tag!r}")


@dataclass(frozen=True)
class CommandMessage:
    """A routed on/off command: wire payload plus broker-side metadata."""

    command_id: str
    device: str
    desired: SwitchState
    origin: str
    issued_at: int


@dataclass(frozen=True)
class StatusReport:
    """One observed switch state change (or boot snapshot) with its cause."""

    device: str
    state: SwitchState
    at: int
    cause: Cause


_DEVICE_ID_RE = re.compile(r"[a-z0-9-]{1,64}")


def validate_device_id(s: str) -> str:
    if not isinstance(s, str):
        raise InvalidDeviceId(f"device id must be a string, got {type(s).__name__}")
    if not s:
        raise InvalidDeviceId("device id is empty")
    if len(s) > 64:
        raise InvalidDeviceId(f"device id is {len(s)} characters long, limit is 64")
    if not _DEVICE_ID_RE.fullmatch(s):
        raise InvalidDeviceId(f"device id {s!r} contains characters outside [a-z0-9-]")
    return s


def command_to_obj(desired: SwitchState) -> dict:
    return {"Switch": desired.value}


def status_to_obj(report: StatusReport) -> dict:
    return {"Switch": report.state.value, "at": report.at, "cause": report.cause.tag()}


def encode_command(desired: SwitchState) -> bytes:
    return json.dumps(command_to_obj(desired), separators=(",", ":")).encode("utf-8")


def encode_status(report: StatusReport) -> bytes:
    return json.dumps(status_to_obj(report), separators=(",", ":")).encode("utf-8")


def _load_object(payload: bytes) -> dict:
    try:
        text = payload.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedJson(f"payload is not UTF-8: {exc}") from None
    try:
        obj = json.loads(text)
    except (json.JSONDecodeError, RecursionError) as exc:
        raise MalformedJson(f"payload is not JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise SchemaViolation(f"payload must be a JSON object, got {type(obj).__name__}")
    return obj


def command_state_from_obj(obj: dict) -> SwitchState:
    extra = set(obj) - {"Switch"}
    if extra:
        raise SchemaViolation(f"unexpected keys {sorted(extra)} in command payload")
    if "Switch" not in obj:
        raise SchemaViolation('command payload is missing the "Switch" key')
    return switch_state_from_wire(obj["Switch"])


def decode_command(payload: bytes) -> SwitchState:
    """Strictly parse a command payload; the only accepted form is {"Switch": "on"|"off"}."""
    return command_state_from_obj(_load_object(payload))


def status_report_from_obj(obj: dict, device: str) -> StatusReport:
    expected = {"Switch", "at", "cause"}
    extra = set(obj) - expected
    if extra:
        raise SchemaViolation(f"unexpected keys {sorted(extra)} in status payload")
    missing = expected - set(obj)
    if missing:
        raise SchemaViolation(f"status payload is missing keys {sorted(missing)}")
    state = switch_state_from_wire(obj["Switch"])
    at = obj["at"]
    if isinstance(at, bool) or not isinstance(at, int):
        raise SchemaViolation(f'"at" must be an integer millisecond timestamp, got {at!r}')
    if at < 0:
        raise SchemaViolation(f'"at" must be non-negative, got {at}')
    cause_tag = obj["cause"]
    if not isinstance(cause_tag, str):
        raise SchemaViolation(f'"cause" must be a string tag, got {cause_tag!r}')
    return StatusReport(device=device, state=state, at=at, cause=Cause.from_tag(cause_tag))


def decode_status(payload: bytes, device: str) -> StatusReport:
    """Strict inverse of encode_status; `device` comes from the transport path."""
    return status_report_from_obj(_load_object(payload), device)
