"""Operator command line: run the broker, drive simulated fleets, switch and query.

Every flag can also come from an environment variable with the WISWITCH_
prefix (the flag wins). JSON output goes to stdout; diagnostics to stderr.

Exit codes:
    0 success                 5 bad range / window too large
    1 schema or protocol      6 listen address busy (bind failure)
    2 usage error             7 ledger storage failure
    3 target unreachable      8 duplicate device
    4 unknown device          9 pending queue overflow
"""

from __future__ import annotations

import json
import signal
import socket
import threading

import click

from .api import BrokerConfig, create_app
from .client import BrokerClient, ClientError, Unreachable, local_switch
from .clock import SimClock, WallClock
from .protocol import SwitchState
from .sim import SimFleet, load_fault_script

EXIT_SCHEMA = 1
EXIT_UNREACHABLE = 3
EXIT_UNKNOWN_DEVICE = 4
EXIT_BAD_RANGE = 5
EXIT_BIND = 6
EXIT_STORAGE = 7
EXIT_DUPLICATE = 8
EXIT_OVERFLOW = 9

_ERROR_EXITS = {
    "UnknownDevice": EXIT_UNKNOWN_DEVICE,
    "DuplicateDevice": EXIT_DUPLICATE,
    "PendingOverflow": EXIT_OVERFLOW,
    "BadRange": EXIT_BAD_RANGE,
    "WindowTooLarge": EXIT_BAD_RANGE,
    "StorageFailure": EXIT_STORAGE,
}


def _fail(code: int, message: str) -> "click.exceptions.Exit":
    click.echo(message, err=True)
    return click.exceptions.Exit(code)


def _fail_client_error(exc: ClientError) -> "click.exceptions.Exit":
    return _fail(_ERROR_EXITS.get(exc.error, EXIT_SCHEMA), str(exc))


def _parse_listen(listen: str) -> tuple[str, int]:
    host, _, port = listen.rpartition(":")
    if not host or not port.isdigit():
        raise click.UsageError(f"--listen must be HOST:PORT, got {listen!r}")
    return host, int(port)


def _parse_state(value: str) -> SwitchState:
    try:
        return SwitchState(value.lower())
    except ValueError:
        raise click.UsageError(f"state must be 'on' or 'off', got {value!r}") from None


def _emit(ctx: click.Context, data, human: str | None = None) -> None:
    if ctx.obj["json"] or human is None:
        click.echo(json.dumps(data))
    else:
        click.echo(human)


@click.group()
@click.option("--broker-url", envvar="WISWITCH_BROKER_URL", default="http://127.0.0.1:8080",
              show_default=True, help="Broker base URL used by client subcommands.")
@click.option("--json", "json_mode", is_flag=True, envvar="WISWITCH_JSON",
              help="Machine output: one JSON document on stdout.")
@click.option("--sim-time", is_flag=True, envvar="WISWITCH_SIM_TIME",
              help="Drive broker/simulator from a scripted logical clock instead of wall time.")
@click.pass_context
def main(ctx, broker_url, json_mode, sim_time):
    """Remote switch platform: broker, device fleet simulator, and control client."""
    ctx.obj = {"broker_url": broker_url, "json": json_mode, "sim_time": sim_time}


@main.command()
@click.option("--listen", envvar="WISWITCH_LISTEN", default="127.0.0.1:8080", show_default=True)
@click.option("--ledger-path", envvar="WISWITCH_LEDGER_PATH", default="./wiswitch-ledger.jsonl",
              show_default=True)
@click.option("--liveness-window-ms", envvar="WISWITCH_LIVENESS_WINDOW_MS", default=10_000,
              show_default=True, type=int)
@click.option("--pending-cap", envvar="WISWITCH_PENDING_CAP", default=1000, show_default=True, type=int)
@click.option("--tz-offset-min", envvar="WISWITCH_TZ_OFFSET_MIN", default=0, show_default=True, type=int)
@click.option("--threat-local-only", is_flag=True, envvar="WISWITCH_THREAT_LOCAL_ONLY",
              help="Alarm only on LAN-caused switch-ons inside away windows.")
@click.option("--flush", envvar="WISWITCH_FLUSH", type=click.Choice(["each", "batch"]),
              default="each", show_default=True)
@click.option("--ui-dir", envvar="WISWITCH_UI_DIR", default=None,
              help="Directory of built web panel assets to serve under /ui.")
@click.pass_context
def serve(ctx, listen, ledger_path, liveness_window_ms, pending_cap, tz_offset_min,
          threat_local_only, flush, ui_dir):
    """Run the broker until interrupted."""
    import uvicorn

    from .ledger import StorageFailure

    host, port = _parse_listen(listen)
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        probe.bind((host, port))
    except OSError as exc:
        raise _fail(EXIT_BIND, f"cannot listen on {listen}: {exc}")
    finally:
        probe.close()

    config = BrokerConfig(
        ledger_path=ledger_path,
        liveness_window_ms=liveness_window_ms,
        pending_cap=pending_cap,
        threat_local_only=threat_local_only,
        tz_offset_min=tz_offset_min,
        flush=flush,
        sim_time=ctx.obj["sim_time"],
        ui_dir=ui_dir,
    )
    try:
        app = create_app(config)
    except StorageFailure as exc:
        raise _fail(EXIT_STORAGE, str(exc))
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command()
@click.option("--count", default=1, show_default=True, type=int)
@click.option("--prefix", envvar="WISWITCH_PREFIX", default="switch", show_default=True)
@click.option("--boot-state", type=click.Choice(["on", "off"]), default="off", show_default=True)
@click.option("--poll-interval-ms", envvar="WISWITCH_POLL_INTERVAL_MS", default=500,
              show_default=True, type=int)
@click.option("--fault-script", envvar="WISWITCH_FAULT_SCRIPT", default=None,
              help="JSON Lines of {at, device, mode} connectivity steps.")
@click.option("--lan-base-port", envvar="WISWITCH_LAN_BASE_PORT", default=9100, show_default=True,
              type=int, help="Device i listens on base+i-1; 0 picks free ports.")
@click.option("--duration-ms", default=None, type=int,
              help="Stop after this long (scripted: logical; wall: real). Default: run until Ctrl-C.")
@click.option("--register-attempts", default=10, show_default=True, type=int)
@click.pass_context
def sim(ctx, count, prefix, boot_state, poll_interval_ms, fault_script, lan_base_port,
        duration_ms, register_attempts):
    """Spawn and drive a fleet of simulated switches against the broker."""
    import httpx

    steps = load_fault_script(fault_script) if fault_script else []
    sim_time = ctx.obj["sim_time"]
    clock = SimClock(0) if sim_time else WallClock()
    client = httpx.Client(base_url=ctx.obj["broker_url"], timeout=10.0)
    fleet = SimFleet(
        count=count,
        client=client,
        clock=clock,
        prefix=prefix,
        boot_state=SwitchState(boot_state),
        poll_interval_ms=poll_interval_ms,
        fault_steps=steps,
        lan_base_port=None if lan_base_port == 0 else lan_base_port,
        push_clock=sim_time,
        register_attempts=register_attempts,
    )
    try:
        fleet.register_all()
    except Exception as exc:
        raise _fail(EXIT_UNREACHABLE, str(exc))
    fleet.start_lan_servers()
    # devices come up cloud-connected; a fault step at t=0 overrides that
    from .device import ConnectivityMode

    for rt in fleet.runtimes:
        with rt.lock:
            rt.switch.set_mode(ConnectivityMode.CLOUD)
    fleet.apply_due_faults(0)
    for rt in fleet.runtimes:
        click.echo(f"{rt.switch.device_id}: lan http://127.0.0.1:{rt.lan_port}", err=True)
    try:
        if sim_time:
            fleet.run_scripted(duration_ms if duration_ms is not None else 60_000)
        else:
            stop = threading.Event()
            try:
                signal.signal(signal.SIGINT, lambda *a: stop.set())
                signal.signal(signal.SIGTERM, lambda *a: stop.set())
            except ValueError:
                pass  # not the main thread (test harness); rely on duration
            fleet.run_wall(duration_ms, stop)
    finally:
        fleet.stop_lan_servers()
        client.close()


@main.command()
@click.argument("device")
@click.argument("state")
@click.option("--via", type=click.Choice(["cloud", "local"]), default="cloud", show_default=True)
@click.option("--target", default=None,
              help="Override target URL: broker for --via cloud, device LAN URL for --via local.")
@click.pass_context
def switch(ctx, device, state, via, target):
    """Turn DEVICE on or off, through the broker or straight over the LAN."""
    desired = _parse_state(state)
    try:
        if via == "cloud":
            client = BrokerClient(target or ctx.obj["broker_url"])
            command_id = client.send_command(device, desired)
            _emit(ctx, {"command_id": command_id}, f"queued as {command_id}")
        else:
            if not target:
                raise click.UsageError("--via local needs --target http://HOST:PORT of the device")
            status = local_switch(target, desired)
            _emit(ctx, status, f"{device} is now {status['Switch']} (local, at {status['at']})")
    except Unreachable as exc:
        raise _fail(EXIT_UNREACHABLE, str(exc))
    except ClientError as exc:
        raise _fail_client_error(exc)


@main.command()
@click.argument("device")
@click.argument("which", type=click.Choice(["log", "ontime", "alarms"]))
@click.option("--from", "from_ms", default=None, type=int, help="Window start, ms since epoch.")
@click.option("--to", "to_ms", default=None, type=int, help="Window end, ms since epoch.")
@click.pass_context
def report(ctx, device, which, from_ms, to_ms):
    """Print DEVICE's event log, total on-time, or alarms."""
    client = BrokerClient(ctx.obj["broker_url"])
    try:
        if which == "ontime":
            on_ms = client.on_time(device, from_ms, to_ms)
            _emit(ctx, {"on_ms": on_ms}, f"{device} was on for {on_ms} ms")
        elif which == "log":
            entries = client.log(device, from_ms, to_ms)
            if ctx.obj["json"]:
                click.echo(json.dumps(entries))
            else:
                for e in entries:
                    detail = {k: v for k, v in e.items() if k not in ("seq", "at", "device", "kind")}
                    click.echo(f"{e['seq']:>6}  {e['at']:>13}  {e['kind']:<7}  {detail}")
        else:
            alarms = [a for a in client.alarms() if a["device"] == device]
            if ctx.obj["json"]:
                click.echo(json.dumps(alarms))
            else:
                for a in alarms:
                    click.echo(f"{a['alarm_id']}  at {a['raised_at']}  {a['reason']}")
    except Unreachable as exc:
        raise _fail(EXIT_UNREACHABLE, str(exc))
    except ClientError as exc:
        raise _fail_client_error(exc)


@main.group()
def schedule():
    """Manage pre-programmed time-of-day switch actions."""


@schedule.command("set")
@click.argument("device")
@click.argument("body", required=False)
@click.option("--file", "file_path", default=None, help="Read the JSON body from a file.")
@click.pass_context
def schedule_set(ctx, device, body, file_path):
    """Replace DEVICE's schedule. BODY is {"actions": [{"minute", "days", "switch"}...]}."""
    _put_body(ctx, device, body, file_path, "set_schedule")


@main.group()
def occupancy():
    """Manage declared away windows used for threat detection."""


@occupancy.command("set")
@click.argument("device")
@click.argument("body", required=False)
@click.option("--file", "file_path", default=None, help="Read the JSON body from a file.")
@click.pass_context
def occupancy_set(ctx, device, body, file_path):
    """Replace DEVICE's away windows. BODY is {"away": [{"from", "to"}...]}."""
    _put_body(ctx, device, body, file_path, "set_occupancy")


def _put_body(ctx, device, body, file_path, method_name):
    if (body is None) == (file_path is None):
        raise click.UsageError("pass the JSON body inline or via --file, not both or neither")
    raw = body if body is not None else open(file_path, "r", encoding="utf-8").read()
    try:
        parsed = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise _fail(EXIT_SCHEMA, f"body is not JSON: {exc}")
    client = BrokerClient(ctx.obj["broker_url"])
    try:
        getattr(client, method_name)(device, parsed)
    except Unreachable as exc:
        raise _fail(EXIT_UNREACHABLE, str(exc))
    except ClientError as exc:
        raise _fail_client_error(exc)
    _emit(ctx, {"device": device, "ok": True}, f"{device}: updated")


if __name__ == "__main__":
    main()
