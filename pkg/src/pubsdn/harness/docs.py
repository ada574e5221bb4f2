"""Topology and scenario documents (JSON) and their validation."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import networkx as nx
from pydantic import BaseModel, ConfigDict, Field
from pydantic import ValidationError as PydanticValidationError

from ..dataplane import FlowMatch, action_from_dict
from ..errors import ValidationError
from ..filter_expr import ParseError, parse, referenced_fields


class _Doc(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ControlDoc(_Doc):
    domain_id: int = Field(100, ge=0)
    latency_us: int = Field(100, ge=1)


class SwitchDoc(_Doc):
    id: str
    kind: Literal["switch", "gateway"] = "switch"
    ports: list[int]
    miss_behavior: Literal["to_controller", "drop"] = "to_controller"
    multicast_capable: bool = False


class LinkDoc(_Doc):
    id: str
    a: str  # "<switch>:<port>"
    b: str
    latency_us: int = Field(100, ge=0)
    jitter_us: int = Field(0, ge=0)
    drop: bool = False
    up: bool = True


class DeviceDoc(_Doc):
    id: str
    address: str
    attachment: str  # "<switch>:<port>"
    domain_id: int = Field(0, ge=0)
    latency_us: int = Field(100, ge=0)
    groups: list[str] = []
    participant: bool = True
    location: str = ""
    description: str = ""


class TopicDoc(_Doc):
    domain_id: int = Field(0, ge=0)
    name: str
    type_name: str
    schema_: dict[str, Literal["integer", "decimal", "string"]] = Field(alias="schema")

    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class BatchingDoc(_Doc):
    max_samples: int = Field(ge=1)
    max_delay_us: int = Field(1_000_000, ge=0)


class QosDoc(_Doc):
    partitions: list[str] = []
    reliability: Literal["reliable", "best-effort"] = "reliable"
    history_depth: int = Field(16, ge=1)
    batching: Optional[BatchingDoc] = None
    dscp: Optional[int] = Field(None, ge=0, le=63)


class ChannelDoc(_Doc):
    filter: str
    address: str


class EndpointDoc(_Doc):
    id: str
    device: str
    kind: Literal["writer", "reader"]
    topic: str
    qos: QosDoc = QosDoc()
    filter: Optional[str] = None
    channels: Optional[list[ChannelDoc]] = None


class FlowDoc(_Doc):
    switch: str
    app: str = "proactive"
    priority: int
    match: dict = {}
    actions: list[dict]
    idle_timeout_us: Optional[int] = Field(None, ge=1)


class SliceDoc(_Doc):
    app: str
    templates: list[dict] = Field(min_length=1)


class FloodPolicyDoc(_Doc):
    window_us: int = Field(gt=0)
    rate_threshold: int = Field(gt=0)
    mitigation_priority: int = 1000


class TopologyDoc(_Doc):
    name: str = ""
    description: str = ""
    control: ControlDoc = ControlDoc()
    discovery_period_us: Optional[int] = Field(None, ge=1)
    switches: list[SwitchDoc] = []
    links: list[LinkDoc] = []
    devices: list[DeviceDoc] = []
    topics: list[TopicDoc] = []
    endpoints: list[EndpointDoc] = []
    flows: list[FlowDoc] = []
    slices: list[SliceDoc] = []
    flood_policy: Optional[FloodPolicyDoc] = None

    def to_dict(self) -> dict:
        return self.model_dump(mode="json", by_alias=True)

    @property
    def ready_us(self) -> int:
        """Time at which device participants exist and proactive rules are in."""
        return 4 * self.control.latency_us

    def switch(self, sid: str) -> SwitchDoc:
        return next(s for s in self.switches if s.id == sid)

    def device(self, did: str) -> DeviceDoc:
        return next(d for d in self.devices if d.id == did)


class _At(_Doc):
    at: int = Field(ge=0)


class PublishAction(_At):
    action: Literal["publish"]
    device: str
    topic: str
    fields: dict
    writer: Optional[str] = None


class FlushAction(_At):
    action: Literal["flush"]
    device: str
    topic: str
    writer: Optional[str] = None


class MobilityAction(_At):
    action: Literal["mobility"]
    device: str
    new_gw: str
    new_port: int


class LinkSetAction(_At):
    action: Literal["link_set"]
    link: str
    state: Literal["up", "down", "drop", "nodrop"]


class ProbeAction(_At):
    action: Literal["probe"]
    src: str
    dst: str  # device id or address
    dscp: int = Field(0, ge=0, le=63)


class StreamAction(_At):
    action: Literal["stream"]
    src: str
    dst: str
    count: int = Field(ge=1)
    interval_us: int = Field(ge=1)


class RunUntilAction(_At):
    action: Literal["run_until"]


ScenarioAction = Annotated[
    Union[PublishAction, FlushAction, MobilityAction, LinkSetAction, ProbeAction,
          StreamAction, RunUntilAction],
    Field(discriminator="action"),
]


class ScenarioDoc(_Doc):
    name: str = ""
    description: str = ""
    actions: list[ScenarioAction] = []

    def to_dict(self) -> dict:
        return self.model_dump(mode="json")

    @property
    def end_time(self) -> int:
        if not self.actions:
            return 0
        explicit = [a.at for a in self.actions if isinstance(a, RunUntilAction)]
        return max(explicit) if explicit else self.actions[-1].at


# -- loading -------------------------------------------------------------------

def _loc(loc) -> str:
    out = ""
    for part in loc:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out


def _read(source) -> dict:
    if isinstance(source, dict):
        return source
    try:
        return json.loads(Path(source).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError("", f"invalid JSON: {exc}") from exc
    except OSError as exc:
        raise ValidationError("", f"cannot read {source}: {exc}") from exc


def _model(cls, data):
    try:
        return cls.model_validate(data)
    except PydanticValidationError as exc:
        err = exc.errors()[0]
        raise ValidationError(_loc(err["loc"]), err["msg"]) from None


def _port_ref(text: str, path: str) -> tuple:
    node, sep, port = text.rpartition(":")
    if not sep or not node:
        raise ValidationError(path, f"expected '<switch>:<port>', got {text!r}")
    try:
        return node, int(port)
    except ValueError:
        raise ValidationError(path, f"bad port in {text!r}") from None


def _dupes(items, path: str, what: str) -> None:
    seen = set()
    for i, key in enumerate(items):
        if key in seen:
            raise ValidationError(f"{path}[{i}]", f"duplicate {what} {key!r}")
        seen.add(key)


def load_topology(source) -> TopologyDoc:
    doc = _model(TopologyDoc, _read(source))
    validate_topology(doc)
    return doc


def validate_topology(doc: TopologyDoc) -> None:
    _dupes([s.id for s in doc.switches], "switches", "switch id")
    _dupes([s.id for s in doc.switches] + [d.id for d in doc.devices],
           "devices", "node id")
    _dupes([d.address for d in doc.devices], "devices", "address")
    _dupes([l.id for l in doc.links], "links", "link id")
    _dupes([e.id for e in doc.endpoints], "endpoints", "endpoint id")
    _dupes([(t.domain_id, t.name) for t in doc.topics], "topics", "topic")
    ports = {s.id: set(s.ports) for s in doc.switches}
    for i, s in enumerate(doc.switches):
        _dupes(s.ports, f"switches[{i}].ports", "port")
    used = {}

    def claim(ref: str, path: str) -> tuple:
        node, port = _port_ref(ref, path)
        if node not in ports:
            raise ValidationError(path, f"unknown switch {node!r}")
        if port not in ports[node]:
            raise ValidationError(path, f"switch {node!r} has no port {port}")
        if (node, port) in used:
            raise ValidationError(path, f"port {ref} already used by {used[(node, port)]}")
        used[(node, port)] = path
        return node, port

    graph = nx.MultiGraph()
    graph.add_nodes_from(ports)
    for i, l in enumerate(doc.links):
        a = claim(l.a, f"links[{i}].a")
        b = claim(l.b, f"links[{i}].b")
        if a[0] == b[0]:
            raise ValidationError(f"links[{i}]", f"link {l.id} loops on {a[0]}")
        graph.add_edge(a[0], b[0], key=l.id)
    try:
        cycle = nx.find_cycle(graph)
    except nx.NetworkXNoCycle:
        cycle = None
    if cycle:
        names = sorted({e[2] for e in cycle})
        raise ValidationError("links", f"loop detected through {', '.join(names)}")

    for i, d in enumerate(doc.devices):
        claim(d.attachment, f"devices[{i}].attachment")
        if d.domain_id == doc.control.domain_id:
            raise ValidationError(f"devices[{i}].domain_id", "collides with control domain")

    devices = {d.id: d for d in doc.devices}
    topics = {(t.domain_id, t.name): t for t in doc.topics}
    for i, e in enumerate(doc.endpoints):
        path = f"endpoints[{i}]"
        dev = devices.get(e.device)
        if dev is None:
            raise ValidationError(f"{path}.device", f"unknown device {e.device!r}")
        if not dev.participant:
            raise ValidationError(f"{path}.device", f"{e.device} has no participant")
        topic = topics.get((dev.domain_id, e.topic))
        if topic is None:
            raise ValidationError(f"{path}.topic", f"unknown topic {e.topic!r}")
        if e.filter is not None and e.kind != "reader":
            raise ValidationError(f"{path}.filter", "only readers take a filter")
        if e.channels is not None and e.kind != "writer":
            raise ValidationError(f"{path}.channels", "only writers take channels")
        if e.channels is not None and not e.channels:
            raise ValidationError(f"{path}.channels", "channel list is empty")
        exprs = []
        if e.filter is not None:
            exprs.append((f"{path}.filter", e.filter))
        for j, ch in enumerate(e.channels or ()):
            exprs.append((f"{path}.channels[{j}].filter", ch.filter))
            if not ch.address.startswith("mc:"):
                raise ValidationError(f"{path}.channels[{j}].address",
                                      "multicast addresses start with 'mc:'")
        if e.channels:
            _dupes([c.address for c in e.channels], f"{path}.channels", "address")
        for fpath, text in exprs:
            try:
                expr = parse(text)
            except ParseError as exc:
                raise ValidationError(fpath, str(exc)) from None
            unknown = {str(f) for f in referenced_fields(expr)} - topic.schema_.keys()
            if unknown:
                raise ValidationError(fpath, f"unknown fields {sorted(unknown)}")

    for i, f in enumerate(doc.flows):
        path = f"flows[{i}]"
        if f.switch not in ports:
            raise ValidationError(f"{path}.switch", f"unknown switch {f.switch!r}")
        try:
            FlowMatch.from_dict(f.match)
        except TypeError as exc:
            raise ValidationError(f"{path}.match", str(exc)) from None
        if not f.actions:
            raise ValidationError(f"{path}.actions", "empty action list")
        for j, a in enumerate(f.actions):
            try:
                action_from_dict(a)
            except (ValueError, TypeError) as exc:
                raise ValidationError(f"{path}.actions[{j}]", str(exc)) from None
    for i, s in enumerate(doc.slices):
        for j, t in enumerate(s.templates):
            try:
                FlowMatch.from_dict(t)
            except TypeError as exc:
                raise ValidationError(f"slices[{i}].templates[{j}]", str(exc)) from None
    _dupes([s.app for s in doc.slices], "slices", "app")


def load_scenario(source, topology: TopologyDoc) -> ScenarioDoc:
    doc = _model(ScenarioDoc, _read(source))
    validate_scenario(doc, topology)
    return doc


def validate_scenario(doc: ScenarioDoc, topo: TopologyDoc) -> None:
    devices = {d.id: d for d in topo.devices}
    addresses = {d.address for d in topo.devices}
    switches = {s.id: s for s in topo.switches}
    links = {l.id for l in topo.links} | {f"acc-{d}" for d in devices}
    writers = {e.id: e for e in topo.endpoints if e.kind == "writer"}
    last = 0
    for i, a in enumerate(doc.actions):
        path = f"actions[{i}]"
        if a.at < last:
            raise ValidationError(f"{path}.at", f"time {a.at} is before {last}")
        last = a.at
        if isinstance(a, RunUntilAction):
            continue
        if a.at < topo.ready_us:
            raise ValidationError(f"{path}.at", f"before boot completes at {topo.ready_us}")
        for attr in ("device", "src"):
            did = getattr(a, attr, None)
            if did is not None and did not in devices:
                raise ValidationError(f"{path}.{attr}", f"unknown device {did!r}")
        if isinstance(a, (PublishAction, FlushAction)):
            cands = [e for e in writers.values() if e.device == a.device and e.topic == a.topic]
            if a.writer is not None:
                cands = [e for e in cands if e.id == a.writer]
            if not cands:
                raise ValidationError(path, f"no writer for {a.topic!r} on {a.device!r}")
            if isinstance(a, FlushAction) and cands[0].qos.batching is None:
                raise ValidationError(path, f"writer {cands[0].id} does not batch")
        if isinstance(a, (ProbeAction, StreamAction)):
            if a.dst not in devices and a.dst not in addresses and not a.dst.startswith("mc:"):
                raise ValidationError(f"{path}.dst", f"unknown destination {a.dst!r}")
        if isinstance(a, MobilityAction):
            sw = switches.get(a.new_gw)
            if sw is None:
                raise ValidationError(f"{path}.new_gw", f"unknown gateway {a.new_gw!r}")
            if a.new_port not in sw.ports:
                raise ValidationError(f"{path}.new_port", f"{a.new_gw} has no port {a.new_port}")
        if isinstance(a, LinkSetAction) and a.link not in links:
            raise ValidationError(f"{path}.link", f"unknown link {a.link!r}")
