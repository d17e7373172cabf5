"""Remote switch platform: wire protocol, virtual devices, cloud broker, tooling."""

from .broker import Alarm, Broker, DeviceShadow
from .device import ConnectivityMode, VirtualSwitch
from .ledger import Ledger, Schedule, detect_threat, due_actions, total_on_time
from .protocol import Cause, CommandMessage, StatusReport, SwitchState

__version__ = "0.1.0"

__all__ = [
    "Alarm",
    "Broker",
    "Cause",
    "CommandMessage",
    "ConnectivityMode",
    "DeviceShadow",
    "Ledger",
    "Schedule",
    "StatusReport",
    "SwitchState",
    "VirtualSwitch",
    "detect_threat",
    "due_actions",
    "total_on_time",
    "__version__",
]
