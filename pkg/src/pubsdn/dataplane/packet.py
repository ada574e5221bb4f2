"""Packets, match structures and actions of the simulated data plane."""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Any, Optional, Union

HEADER_BYTES = 32

DATA = "data"
DISCOVERY = "discovery"
CONTROL = "control"
PROTOCOLS = (DATA, DISCOVERY, CONTROL)

MULTICAST_PREFIX = "mc:"


def is_multicast(addr: Optional[str]) -> bool:
    return bool(addr) and addr.startswith(MULTICAST_PREFIX)


def payload_bytes(payload: Any) -> bytes:
    if payload is None:
        return b""
    if isinstance(payload, (bytes, bytearray)):
        return bytes(payload)
    return payload.to_wire()


@dataclass(frozen=True)
class Packet:
    src_addr: str
    dst_addr: str
    protocol: str = DATA
    dscp: int = 0
    payload: Any = b""
    reliable: bool = False
    packet_id: int = 0
    origin_time: int = 0
    size_bytes: int = field(default=0, compare=False)

    def __post_init__(self):
        if not 0 <= self.dscp <= 63:
            raise ValueError(f"dscp {self.dscp} out of range")
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.size_bytes == 0:
            object.__setattr__(
                self, "size_bytes", HEADER_BYTES + len(payload_bytes(self.payload))
            )

    def with_dscp(self, dscp: int) -> "Packet":
        return replace(self, dscp=dscp)

    def samples(self):
        """Sample batch carried by the packet, or None for opaque payloads."""
        return getattr(self.payload, "samples", None)

    def to_dict(self) -> dict:
        return {
            "packet_id": self.packet_id,
            "src_addr": self.src_addr,
            "dst_addr": self.dst_addr,
            "protocol": self.protocol,
            "dscp": self.dscp,
            "size_bytes": self.size_bytes,
        }


@dataclass(frozen=True)
class FlowMatch:
    """Absent (None) fields are wildcards."""

    in_port: Optional[int] = None
    src_addr: Optional[str] = None
    dst_addr: Optional[str] = None
    protocol: Optional[str] = None
    dscp: Optional[int] = None
    payload_keyword: Optional[tuple] = None  # (field_path, value)

    def matches(self, packet: Packet, in_port: int) -> bool:
        if self.in_port is not None and self.in_port != in_port:
            return False
        if self.src_addr is not None and self.src_addr != packet.src_addr:
            return False
        if self.dst_addr is not None and self.dst_addr != packet.dst_addr:
            return False
        if self.protocol is not None and self.protocol != packet.protocol:
            return False
        if self.dscp is not None and self.dscp != packet.dscp:
            return False
        if self.payload_keyword is not None:
            return keyword_in_payload(packet, *self.payload_keyword)
        return True

    def constrained(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)
                if getattr(self, f.name) is not None}

    def to_dict(self) -> dict:
        d = self.constrained()
        if "payload_keyword" in d:
            d["payload_keyword"] = list(d["payload_keyword"])
        return d

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "FlowMatch":
        d = dict(d or {})
        if d.get("payload_keyword") is not None:
            d["payload_keyword"] = tuple(d["payload_keyword"])
        return cls(**d)


WILDCARD = FlowMatch()


def keyword_in_payload(packet: Packet, field_path: str, value) -> bool:
    samples = packet.samples()
    if not samples:
        return False
    for s in samples:
        v = s.fields.get(field_path)
        if v is not None and type(v) is type(value) and v == value:
            return True
    return False


@dataclass(frozen=True)
class Output:
    port: int


@dataclass(frozen=True)
class ToController:
    pass


@dataclass(frozen=True)
class Drop:
    pass


@dataclass(frozen=True)
class SetDscp:
    value: int

    def __post_init__(self):
        if not 0 <= self.value <= 63:
            raise ValueError(f"dscp {self.value} out of range")


@dataclass(frozen=True)
class Group:
    ports: tuple

    def __post_init__(self):
        if not self.ports:
            raise ValueError("group action needs at least one port")
        object.__setattr__(self, "ports", tuple(self.ports))


Action = Union[Output, ToController, Drop, SetDscp, Group]


def action_to_dict(a: Action) -> dict:
    if isinstance(a, Output):
        return {"output": a.port}
    if isinstance(a, ToController):
        return {"to_controller": True}
    if isinstance(a, Drop):
        return {"drop": True}
    if isinstance(a, SetDscp):
        return {"set_dscp": a.value}
    return {"group": list(a.ports)}


def action_from_dict(d: dict) -> Action:
    if len(d) != 1:
        raise ValueError(f"action must have exactly one key: {d!r}")
    (key, val), = d.items()
    if key == "output":
        return Output(int(val))
    if key == "to_controller":
        return ToController()
    if key == "drop":
        return Drop()
    if key == "set_dscp":
        return SetDscp(int(val))
    if key == "group":
        return Group(tuple(int(p) for p in val))
    raise ValueError(f"unknown action {key!r}")


ADD, MODIFY, DELETE = "add", "modify", "delete"


@dataclass(frozen=True)
class FlowMod:
    command: str
    priority: int = 0
    match: FlowMatch = WILDCARD
    actions: tuple = ()
    idle_timeout: Optional[int] = None

    def __post_init__(self):
        if self.command not in (ADD, MODIFY, DELETE):
            raise ValueError(f"unknown flow-mod command {self.command!r}")
        object.__setattr__(self, "actions", tuple(self.actions))
        if self.command != DELETE and not self.actions:
            raise ValueError(f"{self.command} needs a nonempty action list")
