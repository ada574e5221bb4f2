"""The SDN controller built on the pub/sub mediation layer.

Packet Handler: a reader listener on the PacketIn topic feeding the apps.
Packet Forwarder: ``send_packet_out`` publishes on PacketOut.
Flow Programming: ``program_flow`` publishes on FlowMod and correlates the
switch's FlowModReply (request/response over topics).
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..dataplane import DELETE, FlowMatch, FlowMod, Packet
from ..errors import (
    DuplicateEntity, DuplicateEntry, NoSuchEntry, SliceViolation, UnknownEntity,
)
from ..pubsub import BusTransport, ControlBus, PubSub
from ..simkernel import MOBILITY_TRIGGER, STATS_TICK
from .mediation import (
    CONTROL_DOMAIN, FLOW_MOD, FLOW_MOD_REPLY, NO_PORT, PACKET_IN, PACKET_OUT,
    STATS_REPLY, STATS_REQUEST, TopologyView,
)

log = logging.getLogger(__name__)

_REMOTE_ERRORS = {"NoSuchEntry": NoSuchEntry, "DuplicateEntry": DuplicateEntry}


@dataclass
class PendingRequest:
    correlation_id: int
    switch_id: str
    kind: str  # flow_mod | stats
    app_id: str = ""
    mod: Optional[FlowMod] = None
    done: bool = False
    status: str = "pending"
    error: Optional[Exception] = None
    value: object = None
    completed_at: Optional[int] = None
    callbacks: list = field(default_factory=list)

    def result(self):
        if not self.done:
            raise RuntimeError(f"request {self.correlation_id} still pending")
        if self.error is not None:
            raise self.error
        return self.value


@dataclass(frozen=True)
class Location:
    switch_id: str
    port: int
    last_seen: int


class LearnedLocations:
    def __init__(self):
        self._by_addr: dict[str, Location] = {}

    def learn(self, addr: str, switch_id: str, port: int, now: int) -> bool:
        """Record a sighting; returns True if the location changed."""
        old = self._by_addr.get(addr)
        if old is not None and now < old.last_seen:
            return False
        self._by_addr[addr] = Location(switch_id, port, now)
        return old is None or (old.switch_id, old.port) != (switch_id, port)

    def get(self, addr: str) -> Optional[Location]:
        return self._by_addr.get(addr)

    def __contains__(self, addr):
        return addr in self._by_addr

    def as_dict(self) -> dict:
        return {a: [l.switch_id, l.port, l.last_seen] for a, l in sorted(self._by_addr.items())}


@dataclass
class Slice:
    app_id: str
    templates: list

    def __post_init__(self):
        if not self.templates:
            raise ValueError(f"slice for {self.app_id} has no templates")

    def allows(self, match: FlowMatch) -> bool:
        return any(subsumes(t, match) for t in self.templates)


def subsumes(template: FlowMatch, match: FlowMatch) -> bool:
    """True when every field the template constrains is pinned identically in match."""
    mine = match.constrained()
    return all(mine.get(k) == v for k, v in template.constrained().items())


class App:
    """Base class for controller applications; the default claims nothing."""

    app_id = "app"

    def bind(self, controller: "Controller") -> None:
        self.controller = controller

    def on_packet_in(self, switch_id: str, in_port: Optional[int], packet: Packet) -> bool:
        return False


class Controller:
    ENTITY = "controller"

    def __init__(self, pubsub: PubSub, bus: ControlBus, topology: TopologyView,
                 domain_id: int = CONTROL_DOMAIN):
        self.sim = pubsub.sim
        self.topology = topology
        self.participant = pubsub.create_participant(domain_id, BusTransport(bus),
                                                     "controller")
        p = self.participant
        self.packet_out_writer = p.create_writer(PACKET_OUT.name)
        self.flow_mod_writer = p.create_writer(FLOW_MOD.name)
        self.stats_writer = p.create_writer(STATS_REQUEST.name)
        p.create_reader(PACKET_IN.name, listener=self._packet_in_listener)
        p.create_reader(FLOW_MOD_REPLY.name, listener=self._on_flow_mod_reply)
        p.create_reader(STATS_REPLY.name, listener=self._on_stats_reply)
        self.sim.register(self.ENTITY, self._on_event)
        self.apps: list[App] = []
        self._apps_by_id: dict[str, App] = {}
        self.slices: dict[str, Slice] = {}
        self.locations = LearnedLocations()
        self.pending: dict[int, PendingRequest] = {}
        self.completed: dict[int, PendingRequest] = {}
        self._corr = 0
        # mirror of installed entries: switch -> {(priority, match): (actions, app_id)}
        self.installed: dict[str, dict] = {s: {} for s in topology.ports}
        self.packet_in_by_protocol = Counter()
        self.unclaimed = 0
        self.malformed = 0
        self.orphan_replies = 0
        self.packet_outs = 0
        self.slice_violations: list = []
        self.claims = Counter()
        self._tick_handlers: list[Callable] = []

    # apps ----------------------------------------------------------------
    def register_app(self, app: App, slice: Optional[Slice] = None) -> App:
        if app.app_id in self._apps_by_id:
            raise DuplicateEntity(app.app_id)
        self.apps.append(app)
        self._apps_by_id[app.app_id] = app
        if slice is not None:
            self.slices[app.app_id] = slice
        app.bind(self)
        return app

    def app(self, app_id: str) -> App:
        try:
            return self._apps_by_id[app_id]
        except KeyError:
            raise UnknownEntity(app_id) from None

    # packet handler ------------------------------------------------------
    def _packet_in_listener(self, reader, sample) -> None:
        self.on_packet_in(sample)

    def on_packet_in(self, sample) -> str:
        f = getattr(sample, "fields", sample)
        try:
            switch_id, in_port, packet = f["switch_id"], f["in_port"], f["packet"]
            if not isinstance(packet, Packet) or not self.topology.has_switch(switch_id):
                raise TypeError("bad packet_in sample")
        except (KeyError, TypeError) as exc:
            self.malformed += 1
            log.warning("malformed packet_in: %s", exc)
            return "malformed"
        in_port = None if in_port == NO_PORT else in_port
        self.packet_in_by_protocol[packet.protocol] += 1
        for app in self.apps:
            if app.on_packet_in(switch_id, in_port, packet):
                self.claims[app.app_id] += 1
                return app.app_id
        self.unclaimed += 1
        return "unclaimed"

    # packet forwarder ----------------------------------------------------
    def send_packet_out(self, switch_id: str, actions, packet: Packet,
                        in_port: Optional[int] = None) -> None:
        if not self.topology.has_switch(switch_id):
            raise UnknownEntity(switch_id)
        self.packet_outs += 1
        self.packet_out_writer.write({
            "switch_id": switch_id, "in_port": NO_PORT if in_port is None else in_port,
            "actions": tuple(actions), "packet": packet,
        })

    # flow programming ----------------------------------------------------
    def authorize_flow_mod(self, app_id: str, mod: FlowMod) -> bool:
        sl = self.slices.get(app_id)
        if sl is not None and not sl.allows(mod.match):
            raise SliceViolation(f"{app_id}: match {mod.match} is outside its slice")
        return True

    def program_flow(self, app_id: str, switch_id: str, mod: FlowMod,
                     on_reply: Optional[Callable] = None) -> PendingRequest:
        self.app(app_id)
        if not self.topology.has_switch(switch_id):
            raise UnknownEntity(switch_id)
        try:
            self.authorize_flow_mod(app_id, mod)
        except SliceViolation:
            self.slice_violations.append((self.sim.now, app_id, switch_id, mod))
            raise
        req = self._new_request(switch_id, "flow_mod", app_id=app_id, mod=mod)
        if on_reply is not None:
            req.callbacks.append(on_reply)
        self.flow_mod_writer.write({
            "switch_id": switch_id, "app_id": app_id,
            "correlation_id": req.correlation_id, "command": mod.command,
            "priority": mod.priority, "match": mod.match, "actions": mod.actions,
            "idle_timeout": -1 if mod.idle_timeout is None else mod.idle_timeout,
        })
        return req

    def request_stats(self, switch_id: str, match: Optional[FlowMatch] = None,
                      on_reply: Optional[Callable] = None) -> PendingRequest:
        if not self.topology.has_switch(switch_id):
            raise UnknownEntity(switch_id)
        req = self._new_request(switch_id, "stats")
        if on_reply is not None:
            req.callbacks.append(on_reply)
        self.stats_writer.write({"switch_id": switch_id,
                                 "correlation_id": req.correlation_id, "match": match})
        return req

    def _new_request(self, switch_id: str, kind: str, **kw) -> PendingRequest:
        self._corr += 1
        req = PendingRequest(self._corr, switch_id, kind, **kw)
        self.pending[req.correlation_id] = req
        return req

    def _complete(self, sample, kind: str):
        f = sample.fields
        req = self.pending.get(f["correlation_id"])
        if req is None or req.kind != kind or req.switch_id != f["switch_id"]:
            self.orphan_replies += 1
            return None
        del self.pending[req.correlation_id]
        self.completed[req.correlation_id] = req
        req.done = True
        return req

    def _on_flow_mod_reply(self, reader, sample) -> None:
        req = self._complete(sample, "flow_mod")
        if req is None:
            return
        f = sample.fields
        req.status = f["status"]
        req.completed_at = f["applied_at"]
        if req.status == "ok":
            self._mirror(req.switch_id, req.mod, req.app_id)
            req.value = req.mod.command
        else:
            req.error = _REMOTE_ERRORS.get(req.status, RuntimeError)(f["error"])
        for cb in req.callbacks:
            cb(req)

    def _on_stats_reply(self, reader, sample) -> None:
        req = self._complete(sample, "stats")
        if req is None:
            return
        req.status = "ok"
        req.value = sample.fields["stats"]
        req.completed_at = sample.fields["time"]
        for cb in req.callbacks:
            cb(req)

    def _mirror(self, switch_id: str, mod: FlowMod, app_id: str) -> None:
        table = self.installed.setdefault(switch_id, {})
        if mod.command == DELETE:
            for key in [k for k in table if k[1] == mod.match]:
                del table[key]
        else:
            table[(mod.priority, mod.match)] = (mod.actions, app_id)

    def has_rule(self, switch_id: str, priority: int, match: FlowMatch) -> bool:
        """Installed, or requested and still in flight."""
        if (priority, match) in self.installed.get(switch_id, {}):
            return True
        return any(r.kind == "flow_mod" and r.switch_id == switch_id and r.mod.command != DELETE
                   and r.mod.priority == priority and r.mod.match == match
                   for r in self.pending.values())

    # timers and external triggers ----------------------------------------
    def every(self, period: int, fn: Callable[[], None], start: Optional[int] = None) -> None:
        """Run ``fn`` on a stats-tick every ``period`` microseconds."""
        self._tick_handlers.append((period, fn))
        self.sim.schedule(self.ENTITY, period if start is None else start, STATS_TICK,
                          len(self._tick_handlers) - 1)

    def trigger_mobility(self, delay: int, device_addr: str, old_gw: str, new_gw: str,
                         new_port: int) -> None:
        self.sim.schedule(self.ENTITY, delay, MOBILITY_TRIGGER,
                          (device_addr, old_gw, new_gw, new_port))

    def _on_event(self, ev) -> None:
        if ev.kind == STATS_TICK:
            period, fn = self._tick_handlers[ev.payload]
            fn()
            self.sim.schedule(self.ENTITY, period, STATS_TICK, ev.payload)
        elif ev.kind == MOBILITY_TRIGGER:
            mgr = next(a for a in self.apps if hasattr(a, "handle_mobility_event"))
            mgr.handle_mobility_event(*ev.payload)
