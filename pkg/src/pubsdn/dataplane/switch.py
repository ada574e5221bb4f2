"""Single-table OpenFlow-style switch and the IoT gateway subtype.

``Switch`` is a pure state machine: ``process_packet`` and ``packet_out``
return effect records and never schedule anything themselves. The network
runtime turns effects into link transmissions and PACKET_IN samples.
"""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Optional

from ..errors import DuplicateEntity, DuplicateEntry, MediationViolation, NoSuchEntry
from .packet import (
    ADD, DELETE, MODIFY, Drop, FlowMatch, FlowMod, Group, Output, Packet, SetDscp,
    ToController,
)

TO_CONTROLLER = "to_controller"
DROP = "drop"


@dataclass
class FlowEntry:
    priority: int
    match: FlowMatch
    actions: tuple
    install_seq: int
    idle_timeout: Optional[int] = None
    packet_count: int = 0
    byte_count: int = 0
    last_hit: int = 0
    app_id: Optional[str] = None

    @property
    def key(self):
        return (self.priority, self.match)

    def stats(self) -> dict:
        return {
            "priority": self.priority,
            "match": self.match,
            "packet_count": self.packet_count,
            "byte_count": self.byte_count,
        }


# effects ---------------------------------------------------------------------

@dataclass(frozen=True)
class Transmit:
    port: int
    packet: Packet


@dataclass(frozen=True)
class PacketIn:
    switch_id: str
    in_port: Optional[int]
    packet: Packet


@dataclass(frozen=True)
class Dropped:
    reason: str  # action | miss | BadPort
    packet: Packet
    port: Optional[int] = None


@dataclass(frozen=True)
class ModResult:
    command: str
    installed: int = 0
    modified: int = 0
    removed: int = 0


class Switch:
    def __init__(self, switch_id: str, ports=(), miss_behavior: str = TO_CONTROLLER,
                 multicast_capable: bool = False):
        if miss_behavior not in (TO_CONTROLLER, DROP):
            raise ValueError(f"bad miss_behavior {miss_behavior!r}")
        ports = list(ports)
        if len(set(ports)) != len(ports):
            raise DuplicateEntity(f"duplicate port ids on {switch_id}")
        self.switch_id = switch_id
        self.ports: dict[int, object] = {p: None for p in ports}
        self.miss_behavior = miss_behavior
        self.multicast_capable = multicast_capable
        self.flow_table: list[FlowEntry] = []
        self._install_seq = 0
        # when locked, table mutations are only accepted inside mediated()
        self.locked = False
        self._mediating = False
        # replay journal: ("mod", time, FlowMod, app_id) | ("packet", time, in_port, Packet)
        # | ("expire", time, priority, match)
        self.journal: Optional[list] = None
        # disposition counters for the conservation identity
        self.received = 0
        self.forwarded = 0
        self.to_controller = 0
        self.dropped = 0
        self.packet_outs = 0

    def __repr__(self):
        return f"<{type(self).__name__} {self.switch_id} entries={len(self.flow_table)}>"

    def add_port(self, port: int) -> None:
        if port in self.ports:
            raise DuplicateEntity(f"port {port} exists on {self.switch_id}")
        self.ports[port] = None

    # table ---------------------------------------------------------------
    def lookup(self, packet: Packet, in_port: int) -> Optional[FlowEntry]:
        best = None
        for e in self.flow_table:
            if not e.match.matches(packet, in_port):
                continue
            if best is None or e.priority > best.priority or (
                e.priority == best.priority and e.install_seq < best.install_seq
            ):
                best = e
        return best

    def _find(self, priority: int, match: FlowMatch) -> Optional[FlowEntry]:
        for e in self.flow_table:
            if e.priority == priority and e.match == match:
                return e
        return None

    @contextmanager
    def mediated(self):
        self._mediating = True
        try:
            yield self
        finally:
            self._mediating = False

    def _guard(self) -> None:
        if self.locked and not self._mediating:
            raise MediationViolation(
                f"{self.switch_id}: flow table mutated outside the mediation layer"
            )

    def apply_flow_mod(self, mod: FlowMod, now: int = 0,
                       app_id: Optional[str] = None) -> ModResult:
        self._guard()
        if mod.command == ADD:
            if self._find(mod.priority, mod.match) is not None:
                raise DuplicateEntry(f"{self.switch_id}: ({mod.priority}, {mod.match})")
            self.flow_table.append(FlowEntry(
                mod.priority, mod.match, mod.actions, self._install_seq,
                mod.idle_timeout, last_hit=now, app_id=app_id,
            ))
            self._install_seq += 1
            result = ModResult(ADD, installed=1)
        elif mod.command == MODIFY:
            entry = self._find(mod.priority, mod.match)
            if entry is None:
                raise NoSuchEntry(f"{self.switch_id}: ({mod.priority}, {mod.match})")
            entry.actions = mod.actions
            result = ModResult(MODIFY, modified=1)
        else:
            before = len(self.flow_table)
            self.flow_table = [e for e in self.flow_table if e.match != mod.match]
            result = ModResult(DELETE, removed=before - len(self.flow_table))
        if self.journal is not None:
            self.journal.append(("mod", now, mod, app_id))
        return result

    def query_stats(self, match: Optional[FlowMatch] = None) -> list:
        return [e.stats() for e in self.flow_table if match is None or e.match == match]

    def expire_idle(self, now: int) -> list:
        """Remove entries idle for at least their timeout; returns them."""
        self._guard()
        gone = [e for e in self.flow_table
                if e.idle_timeout is not None and now - e.last_hit >= e.idle_timeout]
        if gone:
            ids = {id(e) for e in gone}
            self.flow_table = [e for e in self.flow_table if id(e) not in ids]
            if self.journal is not None:
                for e in gone:
                    self.journal.append(("expire", now, e.priority, e.match))
        return gone

    # packets -------------------------------------------------------------
    def process_packet(self, in_port: int, packet: Packet, now: int = 0) -> list:
        self.received += 1
        if self.journal is not None:
            self.journal.append(("packet", now, in_port, packet))
        entry = self.lookup(packet, in_port)
        if entry is None:
            if self.miss_behavior == TO_CONTROLLER:
                effects = [PacketIn(self.switch_id, in_port, packet)]
            else:
                effects = [Dropped("miss", packet)]
        else:
            entry.packet_count += 1
            entry.byte_count += packet.size_bytes
            entry.last_hit = now
            effects = self._execute(entry.actions, packet, in_port)
        self._tally(effects)
        return effects

    def packet_out(self, actions, packet: Packet, in_port: Optional[int] = None) -> list:
        """Execute actions directly, bypassing the table and its counters."""
        self.packet_outs += 1
        return self._execute(actions, packet, in_port)

    def _execute(self, actions, packet: Packet, in_port) -> list:
        effects = []
        for act in actions:
            if isinstance(act, Drop):
                if not effects:
                    effects.append(Dropped("action", packet))
                break
            if isinstance(act, SetDscp):
                packet = packet.with_dscp(act.value)
            elif isinstance(act, ToController):
                effects.append(PacketIn(self.switch_id, in_port, packet))
            elif isinstance(act, Output):
                effects.append(self._out(act.port, packet))
            elif isinstance(act, Group):
                effects.extend(self._out(p, packet) for p in act.ports)
        return effects

    def _out(self, port: int, packet: Packet):
        if port not in self.ports:
            return Dropped("BadPort", packet, port)
        return Transmit(port, packet)

    def _tally(self, effects) -> None:
        # each received packet lands in exactly one bucket
        if any(isinstance(e, Transmit) for e in effects):
            self.forwarded += 1
        elif any(isinstance(e, PacketIn) for e in effects):
            self.to_controller += 1
        else:
            self.dropped += 1


@dataclass
class ObjectRecord:
    object_id: str
    location: str
    description: str
    addresses: list = field(default_factory=list)

    def format(self) -> str:
        return f"{self.object_id};{self.location};{self.description};{','.join(self.addresses)}"


class Gateway(Switch):
    """Edge switch that also keeps a list of the IoT objects behind it."""

    def __init__(self, switch_id: str, ports=(), miss_behavior: str = TO_CONTROLLER,
                 multicast_capable: bool = False):
        super().__init__(switch_id, ports, miss_behavior, multicast_capable)
        self.object_list: list[ObjectRecord] = []

    def add_object(self, record: ObjectRecord) -> None:
        if any(o.object_id == record.object_id for o in self.object_list):
            raise DuplicateEntity(f"object {record.object_id} already on {self.switch_id}")
        self.object_list.append(record)

    def remove_object(self, object_id: str) -> Optional[ObjectRecord]:
        for i, o in enumerate(self.object_list):
            if o.object_id == object_id:
                return self.object_list.pop(i)
        return None

    def objects_text(self) -> str:
        return "\n".join(o.format() for o in self.object_list)
