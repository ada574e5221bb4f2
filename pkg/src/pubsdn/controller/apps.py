"""Northbound controller applications.

Registration order is the claim order: discovery proxy, mobility manager,
flood monitor, learning forwarder.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

from ..dataplane import (
    ADD, DATA, DELETE, DISCOVERY, Drop, FlowMatch, FlowMod, Group, Output, Packet,
    is_multicast,
)
from ..errors import UnknownEntity
from .core import App

log = logging.getLogger(__name__)

FORWARD_PRIORITY = 10
DISCOVERY_PRIORITY = 20
MULTICAST_PRIORITY = 30
DEFAULT_MITIGATION_PRIORITY = 1000


def flood_actions(ports) -> tuple:
    ports = tuple(ports)
    return (Group(ports),) if ports else (Drop(),)


class LearningForwarder(App):
    """Reactive forwarding: learn source attachment points, route to known ones."""

    app_id = "learning"

    def __init__(self, priority: int = FORWARD_PRIORITY):
        self.priority = priority
        self.floods = 0
        self.installs = 0

    def on_packet_in(self, switch_id, in_port, packet: Packet) -> bool:
        if packet.protocol != DATA:
            return False
        ctl = self.controller
        topo = ctl.topology
        src, dst = packet.src_addr, packet.dst_addr
        if topo.is_edge_port(switch_id, in_port):
            ctl.locations.learn(src, switch_id, in_port, ctl.sim.now)
        dst_loc = None if is_multicast(dst) else ctl.locations.get(dst)
        if dst_loc is None:
            self.floods += 1
            ports = [p for p in topo.ports[switch_id] if p != in_port]
            if ports:
                ctl.send_packet_out(switch_id, (Group(tuple(ports)),), packet, in_port)
            return True
        self.install_path(dst, switch_id, dst_loc)
        src_loc = ctl.locations.get(src)
        if src_loc is not None:
            self.install_path(src, dst_loc.switch_id, src_loc)
        out = topo.out_port(switch_id, (dst_loc.switch_id, dst_loc.port))
        ctl.send_packet_out(switch_id, (Output(out),), packet, in_port)
        return True

    def install_path(self, addr: str, from_switch: str, loc) -> int:
        """Install ``dst=addr`` rules on every switch from ``from_switch`` to ``loc``."""
        ctl = self.controller
        topo = ctl.topology
        match = FlowMatch(dst_addr=addr)
        n = 0
        for sid in topo.path(from_switch, loc.switch_id):
            if ctl.has_rule(sid, self.priority, match):
                continue
            port = topo.out_port(sid, (loc.switch_id, loc.port))
            ctl.program_flow(self.app_id, sid,
                             FlowMod(ADD, self.priority, match, (Output(port),)))
            n += 1
        self.installs += n
        return n


@dataclass
class Handover:
    device: str
    old: tuple
    new: tuple
    event_time: int
    deleted: int
    installed: int
    requests: list
    completed_at: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "device": self.device, "old": list(self.old), "new": list(self.new),
            "event_time": self.event_time, "deleted": self.deleted,
            "installed": self.installed, "completed_at": self.completed_at,
        }


class MobilityManager(App):
    """Reprograms forwarding when a device is moved to another gateway port."""

    app_id = "mobility"

    def __init__(self, priority: int = FORWARD_PRIORITY):
        self.priority = priority
        self.handovers: list[Handover] = []

    def handle_mobility_event(self, device_addr: str, old_gw: str, new_gw: str,
                              new_port: int) -> Handover:
        ctl = self.controller
        topo = ctl.topology
        loc = ctl.locations.get(device_addr)
        if loc is None:
            raise UnknownEntity(f"device {device_addr} has no known location")
        if loc.switch_id != old_gw:
            log.warning("%s was last seen on %s, not %s", device_addr, loc.switch_id, old_gw)
        if not topo.has_switch(new_gw) or new_port not in topo.ports[new_gw]:
            raise UnknownEntity(f"{new_gw}:{new_port}")
        requests = []
        targets = {new_gw}
        deleted = 0
        stale_matches = {}
        for sid in sorted(ctl.installed):
            for (prio, match), (actions, _app) in ctl.installed[sid].items():
                forwards = any(isinstance(a, (Output, Group)) for a in actions)
                if match.dst_addr == device_addr and forwards:
                    stale_matches.setdefault(sid, set()).add(match)
                    deleted += 1
        for sid in sorted(stale_matches):
            targets.update(topo.path(sid, new_gw))
            for match in sorted(stale_matches[sid], key=repr):
                requests.append(ctl.program_flow(self.app_id, sid, FlowMod(DELETE, 0, match)))
        new_loc = (new_gw, new_port)
        match = FlowMatch(dst_addr=device_addr)
        for sid in sorted(targets):
            port = topo.out_port(sid, new_loc)
            requests.append(ctl.program_flow(
                self.app_id, sid, FlowMod(ADD, self.priority, match, (Output(port),))))
        ctl.locations.learn(device_addr, new_gw, new_port, ctl.sim.now)
        ho = Handover(device_addr, (loc.switch_id, loc.port), new_loc, ctl.sim.now,
                      deleted, len(targets), requests)
        for req in requests:
            req.callbacks.append(lambda _r, ho=ho: self._check_done(ho))
        self.handovers.append(ho)
        return ho

    @staticmethod
    def _check_done(ho: Handover) -> None:
        if all(r.done for r in ho.requests):
            ho.completed_at = max(r.completed_at for r in ho.requests)


class DiscoveryProxy(App):
    """Turns multicast discovery into flooding rules on switches without multicast."""

    app_id = "discovery-proxy"

    def __init__(self, priority: int = DISCOVERY_PRIORITY):
        self.priority = priority
        self.rules: list = []

    def on_packet_in(self, switch_id, in_port, packet: Packet) -> bool:
        if packet.protocol != DISCOVERY or not is_multicast(packet.dst_addr):
            return False
        ctl = self.controller
        ports = [p for p in ctl.topology.ports[switch_id] if p != in_port]
        if ports:
            ctl.send_packet_out(switch_id, (Group(tuple(ports)),), packet, in_port)
        # in_port is part of the match so a frame never echoes back to its sender
        match = FlowMatch(in_port=in_port, dst_addr=packet.dst_addr, protocol=DISCOVERY)
        if not ctl.has_rule(switch_id, self.priority, match):
            mod = FlowMod(ADD, self.priority, match, flood_actions(ports))
            ctl.program_flow(self.app_id, switch_id, mod)
            self.rules.append((switch_id, mod))
        return True


class FloodMonitor(App):
    """Polls per-entry packet counters and drops flows that exceed a rate."""

    app_id = "flood-monitor"

    def __init__(self, window: int, rate_threshold: int,
                 mitigation_priority: int = DEFAULT_MITIGATION_PRIORITY):
        if window <= 0 or rate_threshold <= 0:
            raise ValueError("window and rate_threshold must be positive")
        self.window = window
        self.rate_threshold = rate_threshold
        self.mitigation_priority = mitigation_priority
        self._last: dict = {}
        self.mitigated: dict = {}  # (switch, match) -> install time
        self.alerts: list[dict] = []
        self.polls = 0

    def start(self, first_tick: Optional[int] = None) -> None:
        self.controller.every(self.window, self.poll, first_tick)

    def poll(self) -> None:
        self.polls += 1
        for sid in sorted(self.controller.topology.ports):
            self.controller.request_stats(sid, on_reply=self.on_stats_reply)

    def on_stats_reply(self, req) -> None:
        self.on_stats_tick(req.switch_id, req.value)

    def on_stats_tick(self, switch_id: str, stats) -> list:
        ctl = self.controller
        raised = []
        for st in stats:
            key = (switch_id, st["priority"], st["match"])
            delta = st["packet_count"] - self._last.get(key, 0)
            self._last[key] = st["packet_count"]
            if st["priority"] >= self.mitigation_priority:
                continue
            if (switch_id, st["match"]) in self.mitigated or delta <= self.rate_threshold:
                continue
            mod = FlowMod(ADD, self.mitigation_priority, st["match"], (Drop(),))
            req = ctl.program_flow(self.app_id, switch_id, mod)
            self.mitigated[(switch_id, st["match"])] = None
            req.callbacks.append(
                lambda r, k=(switch_id, st["match"]): self.mitigated.__setitem__(k, r.completed_at))
            alert = {
                "time": ctl.sim.now, "switch_id": switch_id, "match": st["match"].to_dict(),
                "delta": delta, "action_taken": f"drop@{self.mitigation_priority}",
            }
            self.alerts.append(alert)
            raised.append(alert)
        return raised


class StaticApp(App):
    """Placeholder for apps that only program flows proactively."""

    def __init__(self, app_id: str):
        self.app_id = app_id


def multicast_group_mods(ports, group: str, priority: int = MULTICAST_PRIORITY) -> list:
    """Per-in-port flooding rules for one multicast group on a loop-free topology."""
    mods = []
    for p in ports:
        others = [q for q in ports if q != p]
        mods.append(FlowMod(ADD, priority, FlowMatch(in_port=p, dst_addr=group),
                            flood_actions(others)))
    return mods


def discovery_flood_mods(ports, priority: int = DISCOVERY_PRIORITY - 1) -> list:
    """Rules a multicast-capable switch uses to spread every discovery frame."""
    return [FlowMod(ADD, priority, FlowMatch(in_port=p, protocol=DISCOVERY),
                    flood_actions([q for q in ports if q != p])) for p in ports]
