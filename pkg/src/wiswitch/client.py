"""Thin HTTP client for the broker REST API and the device LAN endpoints."""

from __future__ import annotations

import httpx

from .protocol import SwitchState, encode_command


class ClientError(Exception):
    """Broker or device rejected the request; carries the wire error name."""

    def __init__(self, status_code: int, error: str, detail: str):
        super().__init__(f"{error}: {detail}")
        self.status_code = status_code
        self.error = error
        self.detail = detail


class Unreachable(Exception):
    pass


def _check(resp: httpx.Response) -> httpx.Response:
    if resp.status_code < 400:
        return resp
    try:
        body = resp.json()
        error, detail = body.get("error", "Error"), body.get("detail", resp.text)
    except ValueError:
        error, detail = "Error", resp.text
    raise ClientError(resp.status_code, error, detail)


class BrokerClient:
    def __init__(self, base_url: str, timeout: float = 10.0, client: httpx.Client | None = None):
        self._client = client or httpx.Client(base_url=base_url, timeout=timeout)

    def _request(self, method: str, path: str, **kwargs) -> httpx.Response:
        try:
            return _check(self._client.request(method, path, **kwargs))
        except httpx.TransportError as exc:
            raise Unreachable(f"broker unreachable: {exc}") from exc

    def register(self, device: str) -> dict:
        return self._request("POST", "/api/devices", json={"id": device}).json()

    def list_devices(self) -> list[dict]:
        return self._request("GET", "/api/devices").json()

    def status(self, device: str) -> dict:
        return self._request("GET", f"/api/devices/{device}/status").json()

    def send_command(self, device: str, desired: SwitchState) -> str:
        resp = self._request(
            "POST",
            f"/api/devices/{device}/command",
            content=encode_command(desired),
            headers={"Content-Type": "application/json"},
        )
        return resp.json()["command_id"]

    def log(self, device: str, from_ms: int | None = None, to_ms: int | None = None) -> list[dict]:
        return self._request("GET", f"/api/devices/{device}/log", params=_window(from_ms, to_ms)).json()

    def on_time(self, device: str, from_ms: int | None = None, to_ms: int | None = None) -> int:
        resp = self._request("GET", f"/api/devices/{device}/ontime", params=_window(from_ms, to_ms))
        return resp.json()["on_ms"]

    def alarms(self) -> list[dict]:
        return self._request("GET", "/api/alarms").json()

    def set_occupancy(self, device: str, body: dict) -> None:
        self._request("PUT", f"/api/devices/{device}/occupancy", json=body)

    def set_schedule(self, device: str, body: dict) -> None:
        self._request("PUT", f"/api/devices/{device}/schedule", json=body)

    def push_clock(self, now_ms: int) -> int:
        return self._request("POST", "/api/clock", json={"now_ms": now_ms}).json()["now_ms"]

    def close(self) -> None:
        self._client.close()


def local_switch(device_url: str, desired: SwitchState, timeout: float = 10.0) -> dict:
    """POST a command straight to a device's LAN endpoint; returns the status payload."""
    try:
        resp = httpx.post(
            device_url.rstrip("/") + "/switch",
            content=encode_command(desired),
            headers={"Content-Type": "application/json"},
            timeout=timeout,
        )
    except httpx.TransportError as exc:
        raise Unreachable(f"device unreachable: {exc}") from exc
    return _check(resp).json()


def local_status(device_url: str, timeout: float = 10.0) -> dict:
    try:
        resp = httpx.get(device_url.rstrip("/") + "/status", timeout=timeout)
    except httpx.TransportError as exc:
        raise Unreachable(f"device unreachable: {exc}") from exc
    return _check(resp).json()


def _window(from_ms: int | None, to_ms: int | None) -> dict:
    params = {}
    if from_ms is not None:
        params["from"] = from_ms
    if to_ms is not None:
        params["to"] = to_ms
    return params
