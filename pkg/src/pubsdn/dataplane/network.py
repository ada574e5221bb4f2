"""Links, end devices, and the runtime that moves packets between them."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..errors import DuplicateEntity, InvalidOperation, UnknownEntity
from ..simkernel import PACKET_ARRIVAL, Simulator
from .packet import DATA, Packet
from .switch import Dropped, Gateway, ObjectRecord, PacketIn, Switch, Transmit

log = logging.getLogger(__name__)


@dataclass
class Link:
    link_id: str
    a: tuple  # (node_id, port)
    b: tuple
    latency_us: int = 100
    jitter_us: int = 0
    up: bool = True
    lossy: bool = False  # drop flag: discards best-effort packets
    epoch: int = 0
    drops: int = 0
    tx: Counter = field(default_factory=Counter)  # (from_node, protocol) -> packets

    def peer(self, node_id: str) -> tuple:
        if self.a[0] == node_id:
            return self.b
        if self.b[0] == node_id:
            return self.a
        raise UnknownEntity(f"{node_id} is not an end of {self.link_id}")

    def end(self, node_id: str) -> tuple:
        return self.a if self.a[0] == node_id else self.b


@dataclass(frozen=True)
class LogRecord:
    time: int
    kind: str  # inject|tx|rx_switch|rx_device|ignored|dead_egress|link_drop|stale|packet_in|drop
    node: str
    port: Optional[int]
    packet: Packet
    via: Optional[tuple] = None  # attachment (switch, port) for rx_device


class Device:
    """An IoT end device with one access link."""

    def __init__(self, device_id: str, address: str, groups=()):
        self.device_id = device_id
        self.address = address
        self.groups = set(groups)
        self.link: Optional[Link] = None
        self.listeners: list[Callable] = []
        self.received: list = []  # (time, packet, via)
        self.ignored = 0

    def accepts(self, packet: Packet) -> bool:
        return packet.dst_addr == self.address or packet.dst_addr in self.groups

    @property
    def attachment(self) -> Optional[tuple]:
        return None if self.link is None else self.link.peer(self.device_id)


class Network:
    def __init__(self, sim: Simulator, keep_log: bool = True):
        self.sim = sim
        self.switches: dict[str, Switch] = {}
        self.devices: dict[str, Device] = {}
        self.links: dict[str, Link] = {}
        self._port_links: dict[tuple, Link] = {}
        self._next_packet_id = 1
        self.keep_log = keep_log
        self.log: list[LogRecord] = []
        self.packet_in_sink: Optional[Callable[[str, Optional[int], Packet], None]] = None
        self.hops = Counter()  # started, link_drop, stale, arrived_switch, arrived_device
        self.injected = 0

    # construction --------------------------------------------------------
    def add_switch(self, sw: Switch) -> Switch:
        if sw.switch_id in self.switches or sw.switch_id in self.devices:
            raise DuplicateEntity(sw.switch_id)
        self.switches[sw.switch_id] = sw
        self.sim.register(sw.switch_id, self._on_switch_event)
        return sw

    def add_device(self, dev: Device) -> Device:
        if dev.device_id in self.switches or dev.device_id in self.devices:
            raise DuplicateEntity(dev.device_id)
        if any(d.address == dev.address for d in self.devices.values()):
            raise DuplicateEntity(f"address {dev.address}")
        self.devices[dev.device_id] = dev
        self.sim.register(dev.device_id, self._on_device_event)
        return dev

    def _node_exists(self, node_id: str) -> bool:
        return node_id in self.switches or node_id in self.devices

    def connect(self, link_id: str, a: tuple, b: tuple, latency_us: int = 100,
                jitter_us: int = 0, lossy: bool = False, up: bool = True) -> Link:
        if link_id in self.links:
            raise DuplicateEntity(link_id)
        for node, port in (a, b):
            if not self._node_exists(node):
                raise UnknownEntity(node)
            if node in self.switches and port not in self.switches[node].ports:
                raise UnknownEntity(f"port {port} on {node}")
            if (node, port) in self._port_links:
                raise DuplicateEntity(f"port {node}:{port} already linked")
        link = Link(link_id, tuple(a), tuple(b), latency_us, jitter_us, up, lossy)
        self.links[link_id] = link
        for end in (link.a, link.b):
            self._port_links[end] = link
            if end[0] in self.devices:
                self.devices[end[0]].link = link
            else:
                self.switches[end[0]].ports[end[1]] = link
        return link

    def attach_device(self, dev: Device, switch_id: str, port: int, latency_us: int = 100,
                      location: str = "", description: str = "") -> Link:
        link = self.connect(f"acc-{dev.device_id}", (dev.device_id, 0), (switch_id, port),
                            latency_us)
        sw = self.switches[switch_id]
        if isinstance(sw, Gateway):
            sw.add_object(self._object_record(dev, switch_id, port, location, description))
        return link

    @staticmethod
    def _object_record(dev, switch_id, port, location, description):
        return ObjectRecord(dev.device_id, location or f"{switch_id}:{port}", description,
                            [dev.address, *sorted(dev.groups)])

    def rebind(self, device_id: str, new_switch: str, new_port: int) -> tuple:
        """Move a device's access link to another switch port. Returns the old end."""
        dev = self.devices.get(device_id)
        if dev is None or dev.link is None:
            raise UnknownEntity(device_id)
        sw = self.switches.get(new_switch)
        if sw is None or new_port not in sw.ports:
            raise UnknownEntity(f"{new_switch}:{new_port}")
        link = dev.link
        old = link.peer(device_id)
        if old == (new_switch, new_port):
            return old
        if (new_switch, new_port) in self._port_links:
            raise InvalidOperation(f"{new_switch}:{new_port} is occupied")
        old_sw = self.switches[old[0]]
        old_sw.ports[old[1]] = None
        del self._port_links[old]
        new_end = (new_switch, new_port)
        if link.a[0] == device_id:
            link.b = new_end
        else:
            link.a = new_end
        link.epoch += 1
        self._port_links[new_end] = link
        sw.ports[new_port] = link
        record = None
        if isinstance(old_sw, Gateway):
            record = old_sw.remove_object(device_id)
        if isinstance(sw, Gateway):
            desc = record.description if record else ""
            sw.add_object(self._object_record(dev, new_switch, new_port, "", desc))
        return old

    def link_at(self, node_id: str, port: int) -> Optional[Link]:
        return self._port_links.get((node_id, port))

    # packets -------------------------------------------------------------
    def new_packet(self, src: str, dst: str, protocol: str = DATA, payload=b"",
                   dscp: int = 0, reliable: bool = False) -> Packet:
        pid = self._next_packet_id
        self._next_packet_id += 1
        return Packet(src, dst, protocol, dscp, payload, reliable, pid, self.sim.now)

    def send_from_device(self, device_id: str, packet: Packet) -> None:
        dev = self.devices[device_id]
        self.injected += 1
        self._log("inject", device_id, 0, packet)
        if dev.link is None:
            self._log("link_drop", device_id, 0, packet)
            return
        self.transmit(dev.link, device_id, packet)

    def transmit(self, link: Link, from_node: str, packet: Packet) -> None:
        self.hops["started"] += 1
        link.tx[(from_node, packet.protocol)] += 1
        src_port = link.end(from_node)[1]
        if not link.up or (link.lossy and not packet.reliable):
            link.drops += 1
            self.hops["link_drop"] += 1
            self._log("link_drop", from_node, src_port, packet)
            return
        self._log("tx", from_node, src_port, packet)
        peer_node, peer_port = link.peer(from_node)
        delay = link.latency_us
        if link.jitter_us:
            delay += self.sim.rng.randint(0, link.jitter_us)
        via = link.end(from_node) if peer_node in self.devices else None
        self.sim.schedule(peer_node, delay, PACKET_ARRIVAL,
                          (link.link_id, link.epoch, peer_port, packet, via))

    def packet_out(self, switch_id: str, actions, packet: Packet,
                   in_port: Optional[int] = None) -> list:
        sw = self.switches.get(switch_id)
        if sw is None:
            raise UnknownEntity(switch_id)
        effects = sw.packet_out(actions, packet, in_port)
        self._apply(sw, effects)
        return effects

    def _arrival_ok(self, node: str, payload) -> Optional[tuple]:
        link_id, epoch, port, packet, via = payload
        link = self.links[link_id]
        if link.epoch != epoch:
            # the access link was rebound while the packet was on the wire
            self.hops["stale"] += 1
            self._log("stale", node, port, packet, via)
            return None
        return port, packet, via

    def _on_switch_event(self, ev) -> None:
        got = self._arrival_ok(ev.target, ev.payload)
        if got is None:
            return
        port, packet, _ = got
        self.hops["arrived_switch"] += 1
        self._log("rx_switch", ev.target, port, packet)
        sw = self.switches[ev.target]
        self._apply(sw, sw.process_packet(port, packet, self.sim.now))

    def _on_device_event(self, ev) -> None:
        got = self._arrival_ok(ev.target, ev.payload)
        if got is None:
            return
        _, packet, via = got
        self.hops["arrived_device"] += 1
        dev = self.devices[ev.target]
        if not dev.accepts(packet):
            dev.ignored += 1
            self._log("ignored", dev.device_id, 0, packet, via)
            return
        self._log("rx_device", dev.device_id, 0, packet, via)
        dev.received.append((self.sim.now, packet, via))
        for listener in list(dev.listeners):
            listener(packet)

    def _apply(self, sw: Switch, effects) -> None:
        for eff in effects:
            if isinstance(eff, Transmit):
                link = self._port_links.get((sw.switch_id, eff.port))
                if link is None:
                    self._log("dead_egress", sw.switch_id, eff.port, eff.packet)
                else:
                    self.transmit(link, sw.switch_id, eff.packet)
            elif isinstance(eff, PacketIn):
                self._log("packet_in", sw.switch_id, eff.in_port, eff.packet)
                if self.packet_in_sink is not None:
                    self.packet_in_sink(sw.switch_id, eff.in_port, eff.packet)
            elif isinstance(eff, Dropped):
                self._log("drop", sw.switch_id, eff.port, eff.packet)

    def _log(self, kind, node, port, packet, via=None) -> None:
        if self.keep_log:
            self.log.append(LogRecord(self.sim.now, kind, node, port, packet, via))

    # bookkeeping ---------------------------------------------------------
    def hop_balance(self) -> dict:
        """Hop outcomes; ``in_flight`` closes the identity by construction check."""
        h = self.hops
        ended = h["link_drop"] + h["stale"] + h["arrived_switch"] + h["arrived_device"]
        return {
            "started": h["started"],
            "link_drop": h["link_drop"],
            "stale": h["stale"],
            "arrived_switch": h["arrived_switch"],
            "arrived_device": h["arrived_device"],
            "in_flight": h["started"] - ended,
        }

    def in_flight_now(self) -> int:
        nodes = self.switches.keys() | self.devices.keys()
        return sum(1 for ev in self.sim.pending_events()
                   if ev.kind == PACKET_ARRIVAL and ev.target in nodes)
