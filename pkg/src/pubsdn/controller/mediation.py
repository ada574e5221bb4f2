"""Mediation topics and the switch-side agent that serves them.

Every interaction between the controller and a switch is a sample on one of
these control-domain topics. Switch agents subscribe through content filters
on ``switch_id`` so each only sees its own traffic.
"""
from __future__ import annotations

from typing import Optional

import networkx as nx

from ..dataplane import FlowMatch, FlowMod, Network, Packet, Switch
from ..errors import DuplicateEntry, NoSuchEntry, UnknownEntity
from ..pubsub import INTEGER, OBJECT, STRING, BusTransport, ControlBus, PubSub, Topic

CONTROL_DOMAIN = 100

PACKET_IN = Topic("PacketIn", "sdn::PacketIn",
                  {"switch_id": STRING, "in_port": INTEGER, "packet": OBJECT})
PACKET_OUT = Topic("PacketOut", "sdn::PacketOut",
                   {"switch_id": STRING, "in_port": INTEGER, "actions": OBJECT,
                    "packet": OBJECT})
FLOW_MOD = Topic("FlowMod", "sdn::FlowMod",
                 {"switch_id": STRING, "app_id": STRING, "correlation_id": INTEGER,
                  "command": STRING, "priority": INTEGER, "match": OBJECT,
                  "actions": OBJECT, "idle_timeout": INTEGER})
FLOW_MOD_REPLY = Topic("FlowModReply", "sdn::FlowModReply",
                       {"switch_id": STRING, "correlation_id": INTEGER, "status": STRING,
                        "error": STRING, "applied_at": INTEGER})
STATS_REQUEST = Topic("StatsRequest", "sdn::StatsRequest",
                      {"switch_id": STRING, "correlation_id": INTEGER, "match": OBJECT})
STATS_REPLY = Topic("StatsReply", "sdn::StatsReply",
                    {"switch_id": STRING, "correlation_id": INTEGER, "stats": OBJECT,
                     "time": INTEGER})

MEDIATION_TOPICS = (PACKET_IN, PACKET_OUT, FLOW_MOD, FLOW_MOD_REPLY, STATS_REQUEST,
                    STATS_REPLY)

NO_PORT = -1


def register_mediation_topics(pubsub: PubSub, domain_id: int = CONTROL_DOMAIN) -> None:
    for t in MEDIATION_TOPICS:
        pubsub.register_topic(domain_id, t)


def _quote(text: str) -> str:
    return "'" + text.replace("'", "''") + "'"


class SwitchAgent:
    """Connects one switch to the mediation layer."""

    def __init__(self, pubsub: PubSub, bus: ControlBus, network: Network, switch: Switch,
                 domain_id: int = CONTROL_DOMAIN):
        self.network = network
        self.switch = switch
        self.sim = pubsub.sim
        sid = switch.switch_id
        self.participant = pubsub.create_participant(domain_id, BusTransport(bus),
                                                     f"agent-{sid}")
        mine = f"switch_id = {_quote(sid)}"
        p = self.participant
        self.packet_in_writer = p.create_writer(PACKET_IN.name)
        self.reply_writer = p.create_writer(FLOW_MOD_REPLY.name)
        self.stats_writer = p.create_writer(STATS_REPLY.name)
        p.create_reader(PACKET_OUT.name, mine, listener=self._on_packet_out)
        p.create_reader(FLOW_MOD.name, mine, listener=self._on_flow_mod)
        p.create_reader(STATS_REQUEST.name, mine, listener=self._on_stats_request)
        switch.locked = True

    def packet_in(self, in_port: Optional[int], packet: Packet) -> None:
        self.packet_in_writer.write({
            "switch_id": self.switch.switch_id,
            "in_port": NO_PORT if in_port is None else in_port,
            "packet": packet,
        })

    def _on_packet_out(self, reader, sample) -> None:
        f = sample.fields
        in_port = None if f["in_port"] == NO_PORT else f["in_port"]
        self.network.packet_out(self.switch.switch_id, f["actions"], f["packet"], in_port)

    def _on_flow_mod(self, reader, sample) -> None:
        f = sample.fields
        mod = FlowMod(f["command"], f["priority"], f["match"], f["actions"],
                      None if f["idle_timeout"] < 0 else f["idle_timeout"])
        status, error = "ok", ""
        try:
            with self.switch.mediated():
                self.switch.apply_flow_mod(mod, self.sim.now, f["app_id"])
        except (NoSuchEntry, DuplicateEntry) as exc:
            status, error = type(exc).__name__, str(exc)
        self.reply_writer.write({
            "switch_id": self.switch.switch_id, "correlation_id": f["correlation_id"],
            "status": status, "error": error, "applied_at": self.sim.now,
        })

    def _on_stats_request(self, reader, sample) -> None:
        f = sample.fields
        with self.switch.mediated():
            self.switch.expire_idle(self.sim.now)
        self.stats_writer.write({
            "switch_id": self.switch.switch_id, "correlation_id": f["correlation_id"],
            "stats": self.switch.query_stats(f["match"]), "time": self.sim.now,
        })


class TopologyView:
    """The controller's map of switches, their ports, and inter-switch links."""

    def __init__(self):
        self.graph = nx.Graph()
        self.ports: dict[str, list] = {}
        self.multicast_capable: dict[str, bool] = {}
        self._trunk: dict[tuple, int] = {}  # (switch, neighbour) -> local port

    @classmethod
    def from_network(cls, network: Network) -> "TopologyView":
        view = cls()
        for sid in sorted(network.switches):
            sw = network.switches[sid]
            view.graph.add_node(sid)
            view.ports[sid] = sorted(sw.ports)
            view.multicast_capable[sid] = sw.multicast_capable
        for link in network.links.values():
            (na, pa), (nb, pb) = link.a, link.b
            if na in network.switches and nb in network.switches:
                view.graph.add_edge(na, nb)
                view._trunk[(na, nb)] = pa
                view._trunk[(nb, na)] = pb
        return view

    def has_switch(self, sid: str) -> bool:
        return sid in self.ports

    def trunk_ports(self, sid: str) -> set:
        return {p for (s, _), p in self._trunk.items() if s == sid}

    def is_edge_port(self, sid: str, port: Optional[int]) -> bool:
        return port is not None and port not in self.trunk_ports(sid)

    def path(self, src: str, dst: str) -> list:
        try:
            return nx.shortest_path(self.graph, src, dst)
        except (nx.NetworkXNoPath, nx.NodeNotFound):
            raise UnknownEntity(f"no path {src} -> {dst}") from None

    def next_hop_port(self, src: str, dst: str) -> int:
        path = self.path(src, dst)
        return self._trunk[(src, path[1])]

    def out_port(self, sid: str, location: tuple) -> int:
        """Port on ``sid`` leading toward the attachment point ``location``."""
        target, port = location
        return port if sid == target else self.next_hop_port(sid, target)
