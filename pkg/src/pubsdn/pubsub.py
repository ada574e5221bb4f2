"""A miniature data-centric publish/subscribe middleware.

Entity model: domain participants own data writers and data readers bound to
typed topics. Participants learn about remote endpoints through discovery
announcements and match writers to readers by domain, topic, type and
partition. Readers may carry a content filter; writers may batch samples or
split their stream over filtered multicast channels.

Transport is pluggable: ``DeviceTransport`` sends through the simulated data
plane, ``BusTransport`` over an out-of-band bus (used by the control plane).
"""
from __future__ import annotations

import json
import logging
from collections import defaultdict, deque
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Callable, Optional, Union

from .dataplane.packet import DATA, DISCOVERY, MULTICAST_PREFIX
from .errors import (
    DuplicateEntity, InvalidOperation, SchemaMismatch, UnknownEntity, UnknownTopic,
)
from .filter_expr import (
    FilterExpression, MissingField, TypeMismatch, evaluate, parse, referenced_fields,
)
from .simkernel import PACKET_ARRIVAL, Simulator

log = logging.getLogger(__name__)

INTEGER, DECIMAL, STRING, OBJECT = "integer", "decimal", "string", "object"
FIELD_KINDS = (INTEGER, DECIMAL, STRING, OBJECT)
BEST_EFFORT, RELIABLE = "best-effort", "reliable"
DEFAULT_PARTITION = ""
DISCOVERY_PERIOD_US = 1_000_000


def discovery_group(domain_id: int) -> str:
    return f"{MULTICAST_PREFIX}dds-discovery-{domain_id}"


def _json_default(obj):
    if isinstance(obj, Decimal):
        return str(obj)
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    return repr(obj)


def _wire(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      default=_json_default).encode()


# -- domain types --------------------------------------------------------------

@dataclass
class Topic:
    name: str
    type_name: str
    schema: dict  # field path -> kind

    def __post_init__(self):
        if not self.schema:
            raise ValueError(f"topic {self.name} has an empty schema")
        for path, kind in self.schema.items():
            if kind not in FIELD_KINDS:
                raise ValueError(f"{self.name}.{path}: unknown field kind {kind!r}")

    def check(self, fields: dict) -> None:
        missing = self.schema.keys() - fields.keys()
        extra = fields.keys() - self.schema.keys()
        if missing or extra:
            raise SchemaMismatch(
                f"{self.name}: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for path, kind in self.schema.items():
            if not _kind_ok(kind, fields[path]):
                raise SchemaMismatch(f"{self.name}.{path}: {fields[path]!r} is not {kind}")


def _kind_ok(kind: str, value) -> bool:
    if kind == OBJECT:
        return True
    if isinstance(value, bool):
        return False
    if kind == INTEGER:
        return isinstance(value, int)
    if kind == DECIMAL:
        return isinstance(value, (int, float, Decimal))
    return isinstance(value, str)


@dataclass(frozen=True)
class Batching:
    max_samples: int
    max_delay: int  # microseconds

    def __post_init__(self):
        if self.max_samples < 1:
            raise ValueError("batching max_samples must be >= 1")
        if self.max_delay < 0:
            raise ValueError("batching max_delay must be >= 0")


@dataclass(frozen=True)
class QosProfile:
    partitions: frozenset = frozenset()
    reliability: str = RELIABLE
    history_depth: int = 16
    batching: Optional[Batching] = None
    dscp: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "partitions", frozenset(self.partitions))
        if self.history_depth < 1:
            raise ValueError("history_depth must be >= 1")
        if self.reliability not in (BEST_EFFORT, RELIABLE):
            raise ValueError(f"unknown reliability {self.reliability!r}")
        if self.dscp is not None and not 0 <= self.dscp <= 63:
            raise ValueError(f"dscp {self.dscp} out of range")


@dataclass(frozen=True)
class DataSample:
    topic_name: str
    fields: dict = field(hash=False)
    publication_seq: int = 0
    source_writer: str = ""

    def to_wire_dict(self) -> dict:
        return {"fields": self.fields, "seq": self.publication_seq,
                "topic": self.topic_name, "writer": self.source_writer}


WRITER, READER = "writer", "reader"


@dataclass(frozen=True)
class EndpointRecord:
    endpoint_id: str
    participant_id: str
    domain_id: int
    kind: str
    topic_name: str
    type_name: str
    partitions: frozenset = frozenset()
    filter: Optional[FilterExpression] = None
    location: str = ""

    def __post_init__(self):
        if self.filter is not None and self.kind != READER:
            raise ValueError("only readers carry a content filter")

    def to_dict(self) -> dict:
        return {
            "endpoint_id": self.endpoint_id, "participant_id": self.participant_id,
            "domain_id": self.domain_id, "kind": self.kind, "topic": self.topic_name,
            "type": self.type_name, "partitions": sorted(self.partitions),
            "filter": None if self.filter is None else str(self.filter),
            "location": self.location,
        }


def effective_partitions(parts) -> frozenset:
    return frozenset(parts) if parts else frozenset({DEFAULT_PARTITION})


def match_endpoints(writer: EndpointRecord, reader: EndpointRecord) -> bool:
    """Writer/reader compatibility. An empty partition set means the default one."""
    return (
        writer.domain_id == reader.domain_id
        and writer.topic_name == reader.topic_name
        and writer.type_name == reader.type_name
        and bool(effective_partitions(writer.partitions)
                 & effective_partitions(reader.partitions))
    )


@dataclass(frozen=True)
class SampleBatch:
    """Data payload: the sending writer's record plus one or more samples."""

    writer: EndpointRecord
    samples: tuple

    def to_wire(self) -> bytes:
        return _wire({"samples": [s.to_wire_dict() for s in self.samples],
                      "writer": self.writer.endpoint_id})


@dataclass(frozen=True)
class DiscoveryFrame:
    participant_id: str
    domain_id: int
    records: tuple
    disposed: bool = False

    def to_wire(self) -> bytes:
        return _wire({"disposed": self.disposed, "domain": self.domain_id,
                      "participant": self.participant_id,
                      "records": [r.to_dict() for r in self.records]})


@dataclass
class DbDelta:
    added: list = field(default_factory=list)
    removed: list = field(default_factory=list)

    def __bool__(self):
        return bool(self.added or self.removed)

    def extend(self, other: "DbDelta") -> None:
        self.added.extend(other.added)
        self.removed.extend(other.removed)


@dataclass(frozen=True)
class WriteStatus:
    publication_seq: int
    buffered: bool = False
    packets: int = 0
    deliveries: int = 0
    channels: tuple = ()


@dataclass(frozen=True)
class Channel:
    filter: FilterExpression
    multicast_address: str


# -- transports ----------------------------------------------------------------

class DeviceTransport:
    """Carries pub/sub traffic as packets from an attached device."""

    def __init__(self, network, device):
        self.network = network
        self.device = device
        self.participants: list = []
        device.listeners.append(self._on_packet)

    @property
    def location(self) -> str:
        return self.device.address

    def attach(self, participant) -> None:
        self.participants.append(participant)
        self.device.groups.add(discovery_group(participant.domain_id))

    def detach(self, participant) -> None:
        if participant in self.participants:
            self.participants.remove(participant)

    def send_data(self, sender, dest: str, batch: SampleBatch, dscp: int,
                  reliable: bool) -> None:
        if dest == self.location:
            for p in list(self.participants):
                p.sim.call_later(p.entity_id, 0, lambda p=p: p.on_data(batch))
            return
        pkt = self.network.new_packet(self.location, dest, DATA, batch, dscp, reliable)
        self.network.send_from_device(self.device.device_id, pkt)

    def send_discovery(self, sender, frame: DiscoveryFrame) -> None:
        pkt = self.network.new_packet(self.location, discovery_group(frame.domain_id),
                                      DISCOVERY, frame)
        self.network.send_from_device(self.device.device_id, pkt)

    def _on_packet(self, packet) -> None:
        payload = packet.payload
        for p in list(self.participants):
            if isinstance(payload, DiscoveryFrame):
                p.on_discovery(payload)
            elif isinstance(payload, SampleBatch):
                p.on_data(payload)


class ControlBus:
    """Out-of-band message bus with a fixed one-way latency."""

    def __init__(self, sim: Simulator, latency_us: int = 100):
        self.sim = sim
        self.latency_us = latency_us
        self.members: dict[str, object] = {}
        self.messages = 0

    def deliver(self, dest: str, kind: str, payload) -> None:
        participant = self.members.get(dest)
        if participant is None:
            return
        self.messages += 1
        self.sim.schedule(participant.entity_id, self.latency_us, PACKET_ARRIVAL,
                          (kind, payload))

    def broadcast(self, sender: str, kind: str, payload) -> None:
        for loc in sorted(self.members):
            if loc != sender:
                self.deliver(loc, kind, payload)


class BusTransport:
    def __init__(self, bus: ControlBus):
        self.bus = bus
        self._location = None

    @property
    def location(self) -> str:
        return self._location

    def attach(self, participant) -> None:
        self._location = participant.participant_id
        self.bus.members[self._location] = participant

    def detach(self, participant) -> None:
        self.bus.members.pop(self._location, None)

    def send_data(self, sender, dest, batch, dscp, reliable) -> None:
        self.bus.deliver(dest, DATA, batch)

    def send_discovery(self, sender, frame) -> None:
        self.bus.broadcast(self._location, DISCOVERY, frame)


# -- entities ------------------------------------------------------------------

class PubSub:
    """Registry of topics and participants for one simulation."""

    def __init__(self, sim: Simulator, discovery_period: Optional[int] = None):
        self.sim = sim
        self.discovery_period = discovery_period
        self.topics: dict[tuple, Topic] = {}
        self.participants: dict[str, "DomainParticipant"] = {}
        self._auto = 0

    def register_topic(self, domain_id: int, topic: Topic) -> Topic:
        key = (domain_id, topic.name)
        if key in self.topics:
            raise DuplicateEntity(f"topic {topic.name} in domain {domain_id}")
        self.topics[key] = topic
        return topic

    def topic(self, domain_id: int, name: str) -> Topic:
        try:
            return self.topics[(domain_id, name)]
        except KeyError:
            raise UnknownTopic(f"{name} in domain {domain_id}") from None

    def create_participant(self, domain_id: int, transport,
                           participant_id: Optional[str] = None,
                           discovery_period: Optional[int] = -1) -> "DomainParticipant":
        if domain_id < 0:
            raise ValueError("domain_id must be >= 0")
        if participant_id is None:
            self._auto += 1
            participant_id = f"p{self._auto}"
        if participant_id in self.participants:
            raise DuplicateEntity(participant_id)
        period = self.discovery_period if discovery_period == -1 else discovery_period
        p = DomainParticipant(self, participant_id, domain_id, transport, period)
        self.participants[participant_id] = p
        return p

    def endpoints(self, domain_id: int) -> dict:
        """Omniscient view of every live endpoint in a domain."""
        out = {}
        for p in self.participants.values():
            if p.domain_id == domain_id and not p.deleted:
                for rec in p.local_records():
                    out[rec.endpoint_id] = rec
        return out


class DomainParticipant:
    def __init__(self, pubsub: PubSub, participant_id: str, domain_id: int, transport,
                 discovery_period: Optional[int]):
        self.pubsub = pubsub
        self.sim = pubsub.sim
        self.participant_id = participant_id
        self.domain_id = domain_id
        self.transport = transport
        self.discovery_period = discovery_period
        self.entity_id = f"participant:{participant_id}"
        self.discovery_db: dict[str, EndpointRecord] = {}
        self._remote: dict[str, set] = {}  # participant -> endpoint ids
        self.writers: dict[str, DataWriter] = {}
        self.readers: dict[str, DataReader] = {}
        self.deleted = False
        self._pending_delta = DbDelta()
        self._announce_queued = False
        self._eid = 0
        self.announcements = 0
        self.sim.register(self.entity_id, self._on_event)
        transport.attach(self)
        self._queue_announce()
        if discovery_period:
            self.sim.call_later(self.entity_id, discovery_period, self._periodic)

    def __repr__(self):
        return f"<DomainParticipant {self.participant_id} domain={self.domain_id}>"

    @property
    def location(self) -> str:
        return self.transport.location

    def _next_id(self, prefix: str) -> str:
        self._eid += 1
        return f"{self.participant_id}.{prefix}{self._eid}"

    def _claim_id(self, endpoint_id: Optional[str], prefix: str) -> str:
        eid = endpoint_id or self._next_id(prefix)
        for p in self.pubsub.participants.values():
            if eid in p.writers or eid in p.readers:
                raise DuplicateEntity(eid)
        return eid

    # endpoints -----------------------------------------------------------
    def create_writer(self, topic_name: str, qos: Optional[QosProfile] = None,
                      endpoint_id: Optional[str] = None) -> "DataWriter":
        self._alive()
        topic = self.pubsub.topic(self.domain_id, topic_name)
        w = DataWriter(self, self._claim_id(endpoint_id, "w"), topic, qos or QosProfile())
        self.writers[w.endpoint_id] = w
        self._queue_announce()
        return w

    def create_multichannel_writer(self, topic_name: str, channels,
                                   qos: Optional[QosProfile] = None,
                                   endpoint_id: Optional[str] = None) -> "MultichannelWriter":
        self._alive()
        topic = self.pubsub.topic(self.domain_id, topic_name)
        chans = []
        for ch in channels:
            if not isinstance(ch, Channel):
                flt, addr = ch
                ch = Channel(parse(flt) if isinstance(flt, str) else flt, addr)
            _check_filter_fields(topic, ch.filter)
            chans.append(ch)
        w = MultichannelWriter(self, self._claim_id(endpoint_id, "w"), topic,
                               qos or QosProfile(), chans)
        self.writers[w.endpoint_id] = w
        self._queue_announce()
        return w

    def create_reader(self, topic_name: str,
                      filter: Union[None, str, FilterExpression] = None,
                      qos: Optional[QosProfile] = None,
                      listener: Optional[Callable] = None,
                      endpoint_id: Optional[str] = None) -> "DataReader":
        self._alive()
        topic = self.pubsub.topic(self.domain_id, topic_name)
        if isinstance(filter, str):
            filter = parse(filter)
        if filter is not None:
            _check_filter_fields(topic, filter)
        r = DataReader(self, self._claim_id(endpoint_id, "r"), topic, filter,
                       qos or QosProfile(), listener)
        self.readers[r.endpoint_id] = r
        self._queue_announce()
        return r

    def delete_endpoint(self, endpoint_id: str) -> None:
        ep = self.writers.pop(endpoint_id, None) or self.readers.pop(endpoint_id, None)
        if ep is None:
            raise UnknownEntity(endpoint_id)
        ep.deleted = True
        self._queue_announce()

    def delete(self) -> None:
        """Dispose the participant; peers drop its endpoints on the announcement."""
        if self.deleted:
            return
        for ep in [*self.writers.values(), *self.readers.values()]:
            ep.deleted = True
        self.writers.clear()
        self.readers.clear()
        self.deleted = True
        self.transport.send_discovery(self, DiscoveryFrame(
            self.participant_id, self.domain_id, (), disposed=True))
        self.transport.detach(self)

    def _alive(self):
        if self.deleted:
            raise UnknownEntity(self.participant_id)

    def local_records(self) -> list:
        return [ep.record for ep in (*self.writers.values(), *self.readers.values())]

    # discovery -----------------------------------------------------------
    def _queue_announce(self) -> None:
        if not self._announce_queued and not self.deleted:
            self._announce_queued = True
            self.sim.call_later(self.entity_id, 0, self.announce)

    def announce(self) -> None:
        self._announce_queued = False
        if self.deleted:
            return
        self.announcements += 1
        self.transport.send_discovery(self, DiscoveryFrame(
            self.participant_id, self.domain_id,
            tuple(sorted(self.local_records(), key=lambda r: r.endpoint_id))))

    def _periodic(self) -> None:
        if self.deleted:
            return
        self.announce()
        self.sim.call_later(self.entity_id, self.discovery_period, self._periodic)

    def discovery_step(self) -> DbDelta:
        """Announce now and hand back the db changes merged since the last step."""
        self.announce()
        delta, self._pending_delta = self._pending_delta, DbDelta()
        return delta

    def on_discovery(self, frame: DiscoveryFrame) -> DbDelta:
        delta = DbDelta()
        if (self.deleted or frame.domain_id != self.domain_id
                or frame.participant_id == self.participant_id):
            return delta
        newcomer = frame.participant_id not in self._remote and not frame.disposed
        old_ids = self._remote.get(frame.participant_id, set())
        new = {} if frame.disposed else {
            r.endpoint_id: r for r in frame.records if r.domain_id == self.domain_id
        }
        for eid in sorted(old_ids - new.keys()):
            delta.removed.append(self.discovery_db.pop(eid))
        for eid, rec in sorted(new.items()):
            if self.discovery_db.get(eid) != rec:
                if eid in self.discovery_db:
                    delta.removed.append(self.discovery_db[eid])
                self.discovery_db[eid] = rec
                delta.added.append(rec)
        if frame.disposed:
            self._remote.pop(frame.participant_id, None)
        else:
            self._remote[frame.participant_id] = set(new)
        self._pending_delta.extend(delta)
        if newcomer:
            # let the newcomer learn about us without waiting for the period
            self._queue_announce()
        return delta

    def matched_readers(self, writer: EndpointRecord) -> list:
        local = [r.record for r in self.readers.values()]
        remote = [r for r in self.discovery_db.values() if r.kind == READER]
        found = [r for r in local + remote if match_endpoints(writer, r)]
        return sorted(found, key=lambda r: r.endpoint_id)

    # data ----------------------------------------------------------------
    def on_data(self, batch: SampleBatch) -> int:
        if self.deleted:
            return 0
        n = 0
        for reader in list(self.readers.values()):
            if match_endpoints(batch.writer, reader.record):
                n += reader._accept(batch.samples)
        return n

    def _on_event(self, ev) -> None:
        if ev.kind == PACKET_ARRIVAL:
            kind, payload = ev.payload
            if kind == DISCOVERY:
                self.on_discovery(payload)
            else:
                self.on_data(payload)


def _check_filter_fields(topic: Topic, flt: FilterExpression) -> None:
    unknown = {str(f) for f in referenced_fields(flt)} - topic.schema.keys()
    if unknown:
        raise SchemaMismatch(f"filter references unknown fields {sorted(unknown)}")


class DataWriter:
    def __init__(self, participant: DomainParticipant, endpoint_id: str, topic: Topic,
                 qos: QosProfile):
        self.participant = participant
        self.endpoint_id = endpoint_id
        self.topic = topic
        self.qos = qos
        self.deleted = False
        self._seq = 0
        self.buffer: list[DataSample] = []
        self._batch_gen = 0
        self.packets_sent = 0
        self.samples_written = 0

    def __repr__(self):
        return f"<{type(self).__name__} {self.endpoint_id} topic={self.topic.name}>"

    @property
    def record(self) -> EndpointRecord:
        p = self.participant
        return EndpointRecord(self.endpoint_id, p.participant_id, p.domain_id, WRITER,
                              self.topic.name, self.topic.type_name, self.qos.partitions,
                              None, p.location)

    def _make_sample(self, sample) -> DataSample:
        if self.deleted:
            raise UnknownEntity(self.endpoint_id)
        fields = sample.fields if isinstance(sample, DataSample) else dict(sample)
        self.topic.check(fields)
        self._seq += 1
        self.samples_written += 1
        return DataSample(self.topic.name, fields, self._seq, self.endpoint_id)

    def write(self, sample) -> WriteStatus:
        s = self._make_sample(sample)
        batching = self.qos.batching
        if batching is None:
            packets, deliveries = self._emit([s])
            return WriteStatus(s.publication_seq, packets=packets, deliveries=deliveries)
        self.buffer.append(s)
        if len(self.buffer) == 1:
            gen = self._batch_gen
            self.participant.sim.call_later(
                self.participant.entity_id, batching.max_delay,
                lambda: self._on_batch_timer(gen))
        if len(self.buffer) >= batching.max_samples:
            packets, deliveries = self._flush_buffer()
            return WriteStatus(s.publication_seq, packets=packets, deliveries=deliveries)
        return WriteStatus(s.publication_seq, buffered=True)

    def flush(self) -> int:
        if self.qos.batching is None:
            raise InvalidOperation(f"{self.endpoint_id}: batching is disabled")
        n = len(self.buffer)
        self._flush_buffer()
        return n

    def _flush_buffer(self) -> tuple:
        samples, self.buffer = self.buffer, []
        self._batch_gen += 1
        if not samples:
            return 0, 0
        return self._emit(samples)

    def _on_batch_timer(self, gen: int) -> None:
        if gen == self._batch_gen and self.buffer:
            self._flush_buffer()

    def _emit(self, samples: list) -> tuple:
        """Send to every matched reader location; returns (packets, deliveries)."""
        rec = self.record
        by_loc = defaultdict(list)
        for r in self.participant.matched_readers(rec):
            by_loc[r.location].append(r)
        packets = deliveries = 0
        for loc in sorted(by_loc):
            readers = by_loc[loc]
            chosen = tuple(s for s in samples
                           if any(r.filter is None or evaluate(r.filter, s) for r in readers))
            if not chosen:
                continue
            self._send(loc, SampleBatch(rec, chosen))
            packets += loc != self.participant.location
            deliveries += len(chosen)
        return packets, deliveries

    def _send(self, dest: str, batch: SampleBatch) -> None:
        if dest != self.participant.location:
            self.packets_sent += 1
        self.participant.transport.send_data(
            self.participant, dest, batch, self.qos.dscp or 0,
            self.qos.reliability == RELIABLE)


def route_multichannel(writer: "MultichannelWriter", sample) -> list:
    """Addresses of the channels whose filter accepts ``sample``, in channel order."""
    out = []
    for ch in writer.channels:
        try:
            if evaluate(ch.filter, sample):
                out.append(ch.multicast_address)
        except (MissingField, TypeMismatch) as exc:
            raise SchemaMismatch(str(exc)) from exc
    return out


class MultichannelWriter(DataWriter):
    def __init__(self, participant, endpoint_id, topic, qos, channels):
        if not channels:
            raise ValueError("a multichannel writer needs at least one channel")
        addrs = [c.multicast_address for c in channels]
        if len(set(addrs)) != len(addrs):
            raise ValueError("multicast addresses must be distinct within a writer")
        if qos.batching is not None:
            raise InvalidOperation("batching is not supported on multichannel writers")
        super().__init__(participant, endpoint_id, topic, qos)
        self.channels = list(channels)
        self.channel_packets = {a: 0 for a in addrs}

    def route(self, sample) -> list:
        return route_multichannel(self, sample)

    def write(self, sample) -> WriteStatus:
        s = self._make_sample(sample)
        addrs = self.route(s)
        rec = self.record
        for addr in addrs:
            self.channel_packets[addr] += 1
            self._send(addr, SampleBatch(rec, (s,)))
        return WriteStatus(s.publication_seq, packets=len(addrs), channels=tuple(addrs))


class DataReader:
    def __init__(self, participant: DomainParticipant, endpoint_id: str, topic: Topic,
                 filter: Optional[FilterExpression], qos: QosProfile,
                 listener: Optional[Callable] = None):
        self.participant = participant
        self.endpoint_id = endpoint_id
        self.topic = topic
        self.filter = filter
        self.qos = qos
        self.listener = listener
        self.deleted = False
        self.queue: deque = deque()
        self.received: list[DataSample] = []
        self.overflow_drops = 0
        self._seen: set = set()

    def __repr__(self):
        return f"<DataReader {self.endpoint_id} topic={self.topic.name}>"

    @property
    def record(self) -> EndpointRecord:
        p = self.participant
        return EndpointRecord(self.endpoint_id, p.participant_id, p.domain_id, READER,
                              self.topic.name, self.topic.type_name, self.qos.partitions,
                              self.filter, p.location)

    def _accept(self, samples) -> int:
        n = 0
        for s in samples:
            key = (s.source_writer, s.publication_seq)
            if key in self._seen:
                continue
            if self.filter is not None and not evaluate(self.filter, s):
                continue
            self._seen.add(key)
            self.received.append(s)
            if len(self.queue) >= self.qos.history_depth:
                self.queue.popleft()
                self.overflow_drops += 1
            self.queue.append(s)
            n += 1
            if self.listener is not None:
                self.listener(self, s)
        return n

    def take(self) -> list:
        out = list(self.queue)
        self.queue.clear()
        return out
