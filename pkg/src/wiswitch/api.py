"""REST surface over the broker core.

Handlers are thin: they stamp the current time, validate wire payloads with
the strict protocol decoders (not pydantic, so rejects match the wire
contract byte for byte), and delegate to the broker. Envelope bodies and
responses use pydantic models.

In sim-time mode the service exposes POST /api/clock so an external harness
can advance the logical clock; schedule ticking and liveness sweeps then
piggyback on clock pushes instead of a background thread.
"""

from __future__ import annotations

import threading
from contextlib import asynccontextmanager
from dataclasses import dataclass
from pathlib import Path

from fastapi import Body, FastAPI, HTTPException, Query, Request, Response
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .broker import (
    Broker,
    BrokerError,
    CrossDeviceReport,
    DuplicateDevice,
    PendingOverflow,
    UnknownDevice,
)
from .clock import Clock, SimClock, WallClock
from .ledger import (
    BadRange,
    Ledger,
    LedgerError,
    StorageFailure,
    WindowTooLarge,
    parse_occupancy_body,
    parse_schedule_body,
)
from .protocol import (
    ProtocolError,
    command_to_obj,
    decode_command,
    status_report_from_obj,
    validate_device_id,
)


@dataclass
class BrokerConfig:
    ledger_path: str = "./wiswitch-ledger.jsonl"
    liveness_window_ms: int = 10_000
    pending_cap: int = 1000
    threat_local_only: bool = False
    tz_offset_min: int = 0
    flush: str = "each"
    sim_time: bool = False
    ui_dir: str | None = None


class RegisterBody(BaseModel):
    id: str


class ChannelBody(BaseModel):
    reports: list[dict]


class ClockBody(BaseModel):
    now_ms: int


class CommandAccepted(BaseModel):
    command_id: str


class ShadowView(BaseModel):
    device: str
    believed_state: str | None
    last_seen: int | None
    channel_active: bool
    pending_count: int


class AlarmView(BaseModel):
    alarm_id: str
    device: str
    reason: str
    triggering_seq: int
    raised_at: int


class OnTimeView(BaseModel):
    on_ms: int


_STATUS_BY_ERROR: list[tuple[type[Exception], int]] = [
    (UnknownDevice, 404),
    (DuplicateDevice, 409),
    (PendingOverflow, 429),
    (StorageFailure, 503),
    (CrossDeviceReport, 400),
    (BadRange, 400),
    (WindowTooLarge, 400),
    (ProtocolError, 400),  # covers MalformedJson, SchemaViolation, InvalidDeviceId
]


def _error_response(exc: Exception) -> JSONResponse:
    for cls, status in _STATUS_BY_ERROR:
        if isinstance(exc, cls):
            return JSONResponse(
                status_code=status,
                content={"error": type(exc).__name__, "detail": str(exc)},
            )
    raise exc


def create_app(config: BrokerConfig, clock: Clock | None = None) -> FastAPI:
    if clock is None:
        clock = SimClock(0) if config.sim_time else WallClock()
    ledger = Ledger(config.ledger_path, flush=config.flush)
    broker = Broker(
        ledger,
        liveness_window_ms=config.liveness_window_ms,
        pending_cap=config.pending_cap,
        threat_local_only=config.threat_local_only,
        tz_offset_min=config.tz_offset_min,
    )

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        stop = threading.Event()
        ticker = None
        if not config.sim_time:
            def tick_loop():
                while not stop.wait(1.0):
                    now = clock.now()
                    broker.tick_schedules(now)
                    broker.sweep_liveness(now)

            ticker = threading.Thread(target=tick_loop, daemon=True, name="broker-ticker")
            ticker.start()
        try:
            yield
        finally:
            stop.set()
            if ticker is not None:
                ticker.join(timeout=2)
            ledger.close()

    app = FastAPI(title="wiswitch broker", lifespan=lifespan)
    app.state.broker = broker
    app.state.clock = clock
    app.state.ledger = ledger
    app.state.config = config

    for err_cls in (BrokerError, ProtocolError, LedgerError):
        app.add_exception_handler(err_cls, lambda request, exc: _error_response(exc))

    @app.post("/api/devices", status_code=201)
    async def register_device(body: RegisterBody) -> dict:
        device = validate_device_id(body.id)
        broker.register_device(device)
        return {"device": device}

    @app.get("/api/devices")
    async def list_devices() -> list[ShadowView]:
        return [ShadowView(**view) for view in broker.list_views(clock.now())]

    @app.get("/api/devices/{device_id}/status")
    async def device_status(device_id: str) -> ShadowView:
        return ShadowView(**broker.shadow_view(device_id, clock.now()))

    @app.post("/api/devices/{device_id}/command")
    async def submit_command(device_id: str, request: Request) -> CommandAccepted:
        broker.ensure_registered(device_id)
        desired = decode_command(await request.body())
        command_id = broker.submit_command("rest-client", device_id, desired, clock.now())
        return CommandAccepted(command_id=command_id)

    @app.get("/api/devices/{device_id}/log")
    async def device_log(
        device_id: str,
        from_ms: int = Query(0, alias="from"),
        to_ms: int | None = Query(None, alias="to"),
    ) -> list[dict]:
        if to_ms is None:
            to_ms = clock.now()
        return broker.query_log(device_id, from_ms, to_ms)

    @app.get("/api/devices/{device_id}/ontime")
    async def device_on_time(
        device_id: str,
        from_ms: int = Query(0, alias="from"),
        to_ms: int | None = Query(None, alias="to"),
    ) -> OnTimeView:
        if to_ms is None:
            to_ms = clock.now()
        return OnTimeView(on_ms=broker.on_time_ms(device_id, from_ms, to_ms))

    @app.get("/api/alarms")
    async def list_alarms() -> list[AlarmView]:
        return [AlarmView(**vars(alarm)) for alarm in broker.alarms()]

    @app.put("/api/devices/{device_id}/occupancy", status_code=204)
    async def put_occupancy(device_id: str, body: dict = Body(...)) -> Response:
        broker.set_occupancy(device_id, parse_occupancy_body(body))
        return Response(status_code=204)

    @app.put("/api/devices/{device_id}/schedule", status_code=204)
    async def put_schedule(device_id: str, body: dict = Body(...)) -> Response:
        broker.set_schedule(device_id, parse_schedule_body(device_id, body))
        return Response(status_code=204)

    @app.post("/api/device-channel/{device_id}")
    async def device_channel(device_id: str, body: ChannelBody) -> dict:
        broker.ensure_registered(device_id)
        reports = [status_report_from_obj(obj, device_id) for obj in body.reports]
        commands = broker.device_poll(device_id, reports, clock.now())
        return {
            "commands": [
                {**command_to_obj(cmd.desired), "command_id": cmd.command_id}
                for cmd in commands
            ]
        }

    @app.post("/api/clock")
    async def push_clock(body: ClockBody) -> dict:
        if not isinstance(clock, SimClock):
            raise HTTPException(
                status_code=409,
                detail="broker runs on wall time; start it with --sim-time to drive the clock",
            )
        now = clock.advance_to(body.now_ms)
        broker.tick_schedules(now)
        broker.sweep_liveness(now)
        return {"now_ms": now}

    if config.ui_dir and Path(config.ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=config.ui_dir, html=True), name="ui")

    return app
