"""Build a simulation from documents, run a scenario, collect metrics."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, TextIO

from ..controller import (
    Controller, DiscoveryProxy, FloodMonitor, LearningForwarder, MobilityManager, Slice,
    StaticApp, SwitchAgent, TopologyView, discovery_flood_mods, multicast_group_mods,
    register_mediation_topics,
)
from ..dataplane import (
    DATA, Device, FlowMatch, FlowMod, Gateway, Network, Switch, action_from_dict,
)
from ..errors import BudgetExceeded, SliceViolation
from ..pubsub import Batching, ControlBus, DeviceTransport, PubSub, QosProfile, Topic
from ..simkernel import SCENARIO_ACTION, Simulator
from . import audit
from .docs import (
    FlushAction, LinkSetAction, MobilityAction, ProbeAction, PublishAction, ScenarioDoc,
    StreamAction, TopologyDoc,
)

log = logging.getLogger(__name__)

HARNESS = "harness"
PROACTIVE_APP = "proactive"
DRAIN_US = 50_000
DEFAULT_MAX_EVENTS = 5_000_000


@dataclass
class Probe:
    packet_id: int
    src: str
    dst: str
    sent_at: int


@dataclass
class RunResult:
    sim: "Simulation"
    report: dict
    failed: Optional[str] = None


class Simulation:
    """Everything one run needs, wired from a topology document."""

    def __init__(self, topo: TopologyDoc, seed: int = 0, trace: Optional[TextIO] = None,
                 keep_log: bool = True):
        self.topo = topo
        self.sim = Simulator(seed, trace)
        self.network = Network(self.sim, keep_log=keep_log)
        self.pubsub = PubSub(self.sim, discovery_period=topo.discovery_period_us)
        self.bus = ControlBus(self.sim, topo.control.latency_us)
        self.participants = {}
        self.writers = {}
        self.readers = {}
        self.probes: list[Probe] = []
        self.streams = 0
        self.sim.register(HARNESS, self._on_action)
        self._build_dataplane()
        self._build_control()
        lat = topo.control.latency_us
        self.sim.call_later(HARNESS, 2 * lat, self._install_proactive)
        self.sim.call_later(HARNESS, 4 * lat, self._create_endpoints)

    # construction --------------------------------------------------------
    def _build_dataplane(self) -> None:
        t = self.topo
        for s in t.switches:
            cls = Gateway if s.kind == "gateway" else Switch
            sw = cls(s.id, s.ports, s.miss_behavior, s.multicast_capable)
            sw.journal = []
            self.network.add_switch(sw)
        for l in t.links:
            a, b = _ref(l.a), _ref(l.b)
            self.network.connect(l.id, a, b, l.latency_us, l.jitter_us, l.drop, l.up)
        for d in t.devices:
            dev = self.network.add_device(Device(d.id, d.address, d.groups))
            gw, port = _ref(d.attachment)
            self.network.attach_device(dev, gw, port, d.latency_us, d.location, d.description)

    def _build_control(self) -> None:
        t = self.topo
        dom = t.control.domain_id
        register_mediation_topics(self.pubsub, dom)
        self.controller = ctl = Controller(self.pubsub, self.bus,
                                           TopologyView.from_network(self.network), dom)
        self.agents = {sid: SwitchAgent(self.pubsub, self.bus, self.network, sw, dom)
                       for sid, sw in sorted(self.network.switches.items())}
        self.network.packet_in_sink = lambda sid, port, pkt: self.agents[sid].packet_in(port, pkt)
        self.discovery_proxy = ctl.register_app(DiscoveryProxy())
        self.mobility = ctl.register_app(MobilityManager())
        self.flood_monitor = None
        if t.flood_policy is not None:
            fp = t.flood_policy
            self.flood_monitor = ctl.register_app(
                FloodMonitor(fp.window_us, fp.rate_threshold, fp.mitigation_priority))
        self.learning = ctl.register_app(LearningForwarder())
        slices = {s.app: Slice(s.app, [FlowMatch.from_dict(m) for m in s.templates])
                  for s in t.slices}
        names = [PROACTIVE_APP] + [f.app for f in t.flows] + sorted(slices)
        for name in dict.fromkeys(names):
            ctl.register_app(StaticApp(name), slices.get(name))
        if self.flood_monitor is not None:
            self.flood_monitor.start()

    def _install_proactive(self) -> None:
        ctl = self.controller
        groups = sorted({g for d in self.topo.devices for g in d.groups}
                        | {c.address for e in self.topo.endpoints for c in (e.channels or ())})
        for s in self.topo.switches:
            for g in groups:
                for mod in multicast_group_mods(s.ports, g):
                    ctl.program_flow(PROACTIVE_APP, s.id, mod)
            if s.multicast_capable:
                for mod in discovery_flood_mods(s.ports):
                    ctl.program_flow(PROACTIVE_APP, s.id, mod)
        for f in self.topo.flows:
            mod = FlowMod("add", f.priority, FlowMatch.from_dict(f.match),
                          tuple(action_from_dict(a) for a in f.actions), f.idle_timeout_us)
            try:
                ctl.program_flow(f.app, f.switch, mod)
            except SliceViolation as exc:
                log.info("rejected proactive flow: %s", exc)

    def _create_endpoints(self) -> None:
        t = self.topo
        for d in t.topics:
            self.pubsub.register_topic(d.domain_id, Topic(d.name, d.type_name, dict(d.schema_)))
        for d in t.devices:
            if d.participant:
                dev = self.network.devices[d.id]
                self.participants[d.id] = self.pubsub.create_participant(
                    d.domain_id, DeviceTransport(self.network, dev), d.id)
        for e in t.endpoints:
            p = self.participants[e.device]
            q = e.qos
            qos = QosProfile(
                frozenset(q.partitions), q.reliability, q.history_depth,
                None if q.batching is None else Batching(q.batching.max_samples,
                                                         q.batching.max_delay_us),
                q.dscp,
            )
            if e.kind == "reader":
                self.readers[e.id] = p.create_reader(e.topic, e.filter, qos, endpoint_id=e.id)
            elif e.channels:
                self.writers[e.id] = p.create_multichannel_writer(
                    e.topic, [(c.filter, c.address) for c in e.channels], qos, endpoint_id=e.id)
            else:
                self.writers[e.id] = p.create_writer(e.topic, qos, endpoint_id=e.id)

    # scenario ------------------------------------------------------------
    def schedule(self, scenario: ScenarioDoc) -> None:
        for a in scenario.actions:
            self.sim.schedule(HARNESS, a.at - self.sim.now, SCENARIO_ACTION, a)

    def _writer_for(self, a):
        if a.writer is not None:
            return self.writers[a.writer]
        return next(self.writers[e.id] for e in self.topo.endpoints
                    if e.kind == "writer" and e.device == a.device and e.topic == a.topic)

    def _address(self, ref: str) -> str:
        dev = self.network.devices.get(ref)
        return dev.address if dev is not None else ref

    def _on_action(self, ev) -> None:
        a = ev.payload
        if isinstance(a, PublishAction):
            self._writer_for(a).write(a.fields)
        elif isinstance(a, FlushAction):
            self._writer_for(a).flush()
        elif isinstance(a, MobilityAction):
            dev = self.network.devices[a.device]
            old_gw, _ = self.network.rebind(a.device, a.new_gw, a.new_port)
            self.controller.trigger_mobility(0, dev.address, old_gw, a.new_gw, a.new_port)
        elif isinstance(a, LinkSetAction):
            link = self.network.links[a.link]
            if a.state in ("up", "down"):
                link.up = a.state == "up"
            else:
                link.lossy = a.state == "drop"
        elif isinstance(a, ProbeAction):
            self.probe(a.src, self._address(a.dst), a.dscp)
        elif isinstance(a, StreamAction):
            dst = self._address(a.dst)
            for k in range(a.count):
                self.sim.call_later(HARNESS, k * a.interval_us,
                                    lambda a=a, dst=dst: self._stream_one(a.src, dst))

    def probe(self, src_device: str, dst_addr: str, dscp: int = 0) -> Probe:
        dev = self.network.devices[src_device]
        pkt = self.network.new_packet(dev.address, dst_addr, DATA, b"probe", dscp)
        pr = Probe(pkt.packet_id, dev.address, dst_addr, self.sim.now)
        self.probes.append(pr)
        self.network.send_from_device(src_device, pkt)
        return pr

    def _stream_one(self, src_device: str, dst_addr: str) -> None:
        dev = self.network.devices[src_device]
        self.streams += 1
        self.network.send_from_device(
            src_device, self.network.new_packet(dev.address, dst_addr, DATA, b"stream"))


def _ref(text: str) -> tuple:
    node, _, port = text.rpartition(":")
    return node, int(port)


def run(topo: TopologyDoc, scenario: ScenarioDoc, seed: int = 0,
        trace: Optional[TextIO] = None, max_events: int = DEFAULT_MAX_EVENTS,
        drain_us: int = DRAIN_US) -> RunResult:
    """Run a scenario to completion. Never raises on budget exhaustion;
    the partial report carries ``failed`` instead."""
    s = Simulation(topo, seed, trace)
    s.schedule(scenario)
    explicit = any(a.action == "run_until" for a in scenario.actions)
    end = max(scenario.end_time + (0 if explicit else drain_us), topo.ready_us)
    failed = None
    try:
        s.sim.run_until(end, max_events=max_events)
    except BudgetExceeded as exc:
        failed = f"BudgetExceeded: {exc}"
    report = build_report(s, scenario.name or topo.name, seed)
    if failed:
        report["failed"] = failed
    return RunResult(s, report, failed)


def build_report(s: Simulation, name: str, seed: int) -> dict:
    net = s.network
    ctl = s.controller
    switches = {}
    for sid, sw in sorted(net.switches.items()):
        entries = sorted(sw.flow_table, key=lambda e: (-e.priority, e.install_seq))
        switches[sid] = {
            "received": sw.received, "forwarded": sw.forwarded,
            "to_controller": sw.to_controller, "dropped": sw.dropped,
            "packet_outs": sw.packet_outs,
            "packets": sum(e.packet_count for e in entries),
            "bytes": sum(e.byte_count for e in entries),
            "entries": [{"priority": e.priority, "match": e.match.to_dict(),
                         "packet_count": e.packet_count, "byte_count": e.byte_count}
                        for e in entries],
        }
        if isinstance(sw, Gateway):
            switches[sid]["objects"] = sw.objects_text()
    links = {}
    for lid, l in sorted(net.links.items()):
        links[lid] = {"drops": l.drops,
                      "tx": {f"{n}/{p}": c for (n, p), c in sorted(l.tx.items())}}
    readers = {rid: {"delivered": len(r.received),
                     "sequence": [[x.source_writer, x.publication_seq] for x in r.received],
                     "overflow_drops": r.overflow_drops}
               for rid, r in sorted(s.readers.items())}
    writers = {}
    for wid, w in sorted(s.writers.items()):
        writers[wid] = {"samples_written": w.samples_written, "network_packets": w.packets_sent}
        if hasattr(w, "channel_packets"):
            writers[wid]["channel_packets"] = dict(sorted(w.channel_packets.items()))
    deliveries = audit.deliveries_by_packet(net)
    probes = [{"id": p.packet_id, "src": p.src, "dst": p.dst, "sent_at": p.sent_at,
               "deliveries": [[sw, port, t] for t, sw, port in deliveries.get(p.packet_id, [])]}
              for p in s.probes]
    handovers = []
    stale = 0
    for ho in s.mobility.handovers:
        au = audit.handover_audit(net, ho)
        stale += au["stale"]
        handovers.append({**ho.to_dict(), "stale": au["stale"],
                          "violations": au["violations"]})
    cons = audit.conservation(net)
    return {
        "scenario": name,
        "seed": seed,
        "end_time": s.sim.now,
        "events_dispatched": s.sim.dispatched,
        "trace_hash": s.sim.trace_hash(),
        "readers": readers,
        "writers": writers,
        "switches": switches,
        "links": links,
        "devices": {d: {"received": len(dev.received), "ignored": dev.ignored}
                    for d, dev in sorted(net.devices.items())},
        "packet_in": dict(sorted(ctl.packet_in_by_protocol.items())),
        "unclaimed": ctl.unclaimed,
        "malformed": ctl.malformed,
        "orphan_replies": ctl.orphan_replies,
        "claims": dict(sorted(ctl.claims.items())),
        "probes": probes,
        "streamed": s.streams,
        "handovers": handovers,
        "stale_deliveries": stale,
        "alerts": [] if s.flood_monitor is None else list(s.flood_monitor.alerts),
        "slice_violations": len(ctl.slice_violations),
        "network_packets": sum(w.packets_sent for w in s.writers.values()),
        "hops": cons["hops"],
        "conservation": {"switches": cons["switches_ok"], "hops": cons["hops_ok"]},
    }
