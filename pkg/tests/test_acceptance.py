"""Acceptance criteria AC1..AC12.

Each test runs inside ``criterion`` which times it against its runtime budget
and records a one-line verdict. The verdicts are printed as they happen and
again in the terminal summary (see conftest.py).
"""
import itertools
import json
import random
from collections import Counter
from contextlib import contextmanager
from time import perf_counter

import pytest

from builders import booted, settle, topology
from oracles import brute_force_lookup, expected_filtered, replay_counters
from pubsdn.controller import Slice, StaticApp, subsumes
from pubsdn.dataplane import ADD, DATA, DISCOVERY, Drop, FlowMatch, FlowMod, Output, Packet
from pubsdn.dataplane.switch import Switch
from pubsdn.errors import SliceViolation
from pubsdn.harness import CANNED, canned, emit_report, load_scenario, load_topology, run
from pubsdn.harness.scenarios import canned_paths
from pubsdn.pubsub import BusTransport, ControlBus, PubSub, QosProfile, Topic, match_endpoints
from pubsdn.simkernel import Simulator

RESULTS: list[str] = []


@contextmanager
def criterion(n: int, title: str, budget_s: float):
    t0 = perf_counter()
    try:
        yield
    except BaseException as exc:
        line = f"[FAIL] AC{n:<2} {title} ({perf_counter() - t0:.2f}s): {type(exc).__name__}"
        RESULTS.append(line)
        print(line)
        raise
    elapsed = perf_counter() - t0
    ok = elapsed < budget_s
    line = (f"[{'PASS' if ok else 'FAIL'}] AC{n:<2} {title} "
            f"({elapsed:.2f}s, budget {budget_s:g}s)")
    RESULTS.append(line)
    print(line)
    assert ok, f"runtime {elapsed:.2f}s exceeds {budget_s}s"


def received(res, reader_id):
    return [(s.publication_seq, s.fields) for s in res.sim.readers[reader_id].received]


def published(scenario, writer=None):
    """(seq, fields) for each publish action of one writer, in order."""
    acts = [a for a in scenario.actions if a.action == "publish"
            and (writer is None or a.writer == writer)]
    return [(i + 1, a.fields) for i, a in enumerate(acts)]


def raw_docs(name):
    tp, sp = canned_paths(name)
    return json.loads(tp.read_text()), json.loads(sp.read_text())


# -- AC1 -----------------------------------------------------------------------

def test_ac1_content_filter():
    with criterion(1, "content filter matches oracle for T in {0, 50, 99}", 1.0):
        topo, sc = canned("content-filter")
        pub = published(sc)
        assert len(pub) == 200
        temps = [f["temperature"] for _, f in pub]
        assert min(temps) == 0 and max(temps) == 100
        res = run(topo, sc)
        for t, rid in ((0, "r0"), (50, "r50"), (99, "r99")):
            want = expected_filtered(pub, lambda s, t=t: s[1]["temperature"] > t)
            assert received(res, rid) == want
        assert received(res, "rall") == pub


# -- AC2 -----------------------------------------------------------------------

def access_data_packets(res, device):
    net = res.sim.network
    return net.links[f"acc-{device}"].tx[(device, DATA)]


def test_ac2_batching_ratio():
    with criterion(2, "batching sends 3 packets for 10 samples", 1.0):
        topo, sc = canned("batching")
        assert sum(a.action == "publish" for a in sc.actions) == 10
        batched = run(topo, sc)
        assert access_data_packets(batched, "sensor") == 3
        got = received(batched, "r1")
        assert len(got) == 10

        tdoc, sdoc = raw_docs("batching")
        for ep in tdoc["endpoints"]:
            ep.get("qos", {}).pop("batching", None)
        sdoc["actions"] = [a for a in sdoc["actions"] if a["action"] != "flush"]
        t2 = load_topology(tdoc)
        plain = run(t2, load_scenario(sdoc, t2))
        assert access_data_packets(plain, "sensor") == 10
        key = lambda s: (s[0], json.dumps(s[1], sort_keys=True))  # noqa: E731
        assert Counter(map(key, received(plain, "r1"))) == Counter(map(key, got))


# -- AC3 -----------------------------------------------------------------------

def test_ac3_multichannel_routing():
    with criterion(3, "multichannel partition and baseline union", 1.0):
        topo, sc = canned("multichannel")
        mc = published(sc, "mcw")
        assert len(mc) == 100
        res = run(topo, sc)
        low = expected_filtered(mc, lambda s: s[1]["temp"] < 50)
        high = expected_filtered(mc, lambda s: s[1]["temp"] >= 50)
        assert low and high
        assert received(res, "rA") == low
        assert received(res, "rB") == high
        union = sorted(received(res, "rA") + received(res, "rB"), key=lambda s: s[0])
        assert received(res, "rAll") == union
        base = [f for _, f in received(res, "rBase")]
        assert [f for _, f in union] == base == [f for _, f in published(sc, "base")]


# -- AC4 -----------------------------------------------------------------------

def random_match(rng):
    return FlowMatch(
        in_port=rng.choice([None, None, 1, 2]),
        src_addr=rng.choice([None, None, "a", "b"]),
        dst_addr=rng.choice([None, "a", "b", "c"]),
        protocol=rng.choice([None, None, DATA, DISCOVERY]),
        dscp=rng.choice([None, None, 0, 46]),
    )


def test_ac4_lookup_oracle():
    with criterion(4, "1000 random lookups equal brute-force scan", 5.0):
        rng = random.Random(4)
        sim = Simulator()
        for _ in range(1000):
            sw = Switch("s", [1, 2, 3])
            entries = []
            for seq in range(rng.randint(0, 32)):
                prio, match = rng.randint(0, 5), random_match(rng)
                if any(p == prio and m == match for p, _, m in entries):
                    continue
                with sw.mediated():
                    sw.apply_flow_mod(FlowMod(ADD, prio, match, (Output(1),)), sim.now)
                entries.append((prio, len(entries), match))
            pkt = Packet(rng.choice("abc"), rng.choice("abc"),
                         rng.choice([DATA, DISCOVERY]), dscp=rng.choice([0, 46]))
            port = rng.randint(1, 3)
            want = brute_force_lookup(entries, pkt, port)
            got = sw.lookup(pkt, port)
            if want is None:
                assert got is None
            else:
                assert (got.priority, got.match) == (want[0], want[2])


# -- AC5 -----------------------------------------------------------------------

def test_ac5_counter_replay():
    with criterion(5, "entry counters equal journal replay for every canned run", 5.0):
        for name in CANNED:
            res = run(*canned(name))
            for sw in res.sim.network.switches.values():
                actual = {(e.priority, e.match): (e.packet_count, e.byte_count)
                          for e in sw.flow_table}
                assert actual == replay_counters(sw.journal), (name, sw.switch_id)


# -- AC6 -----------------------------------------------------------------------

def exchange(s, a, b, rounds=10):
    """Alternate a->b and b->a; return data PACKET_INs after each packet."""
    net, ctl = s.network, s.controller
    counts, mods, outs = [], [], []
    for i in range(2 * rounds):
        src, dst = (a, b) if i % 2 == 0 else (b, a)
        pkt = net.new_packet(net.devices[src].address, net.devices[dst].address, DATA)
        net.send_from_device(src, pkt)
        settle(s, 2_000)
        counts.append(ctl.packet_in_by_protocol[DATA])
        mods.append(len(ctl.completed))
        outs.append(sum(sw.packet_outs for sw in net.switches.values()))
    return counts, mods, outs


def delivered_pairs(net):
    return [(r.packet.src_addr, r.node) for r in net.log if r.kind == "rx_device"
            and r.packet.protocol == DATA]


def test_ac6_reactive_learning():
    with criterion(6, "learning converges within 2 PACKET_INs", 1.0):
        topo = topology({"gw1": {"ports": [1, 2, 3], "kind": "gateway"}},
                        {"A": ("10.0.0.1", "gw1:1"), "B": ("10.0.0.2", "gw1:2"),
                         "C": ("10.0.0.3", "gw1:3")})
        s = booted(topo)
        counts, mods, outs = exchange(s, "A", "B")
        assert counts[-1] <= 2
        # after the second packet, the controller sees nothing more
        assert counts[1:] == [counts[1]] * 19
        assert mods[1:] == [mods[1]] * 19
        assert outs[1:] == [outs[1]] * 19
        got = [d for d in delivered_pairs(s.network) if d[1] in ("A", "B")]
        assert got == [("10.0.0.1", "B"), ("10.0.0.2", "A")] * 10

        # across a trunk the bound holds per direction
        two = topology({"s1": [1, 2], "s2": [1, 2]},
                       {"A": ("10.0.0.1", "s1:1"), "B": ("10.0.0.2", "s2:1")},
                       [("trunk", "s1:2", "s2:2")])
        s2 = booted(two)
        exchange(s2, "A", "B")
        per_dir = Counter(r.packet.src_addr for r in s2.network.log
                          if r.kind == "packet_in" and r.packet.protocol == DATA)
        assert max(per_dir.values()) <= 2


# -- AC7 -----------------------------------------------------------------------

def test_ac7_handover():
    with criterion(7, "handover: no post-completion delivery at GW1", 1.0):
        res = run(*canned("handover"))
        ho = res.sim.mobility.handovers[0]
        done = ho.completed_at
        assert done is not None
        net = res.sim.network
        mobile = net.devices["mobile"].address
        old, new = ("gw1", 2), ("gw2", 2)

        to_mobile = [r for r in net.log if r.packet.dst_addr == mobile]
        at_old_after = [r for r in to_mobile if r.packet.origin_time > done and (
            (r.kind in ("rx_device", "stale") and r.via and tuple(r.via) == old)
            or (r.kind == "dead_egress" and (r.node, r.port) == old))]
        assert at_old_after == []

        sent_after = {r.packet.packet_id for r in to_mobile
                      if r.kind == "inject" and r.packet.origin_time > done}
        assert sent_after
        arrived_new = Counter(r.packet.packet_id for r in to_mobile
                              if r.kind == "rx_device" and tuple(r.via) == new)
        assert all(arrived_new[p] == 1 for p in sent_after)

        post = [p for p in res.report["probes"] if p["dst"] == mobile and p["sent_at"] > done]
        assert post and all(p["deliveries"] and all(d[:2] == list(new) for d in p["deliveries"])
                            for p in post)

        stale = sum(1 for r in to_mobile if r.packet.origin_time <= done
                    and r.time >= ho.event_time and r.kind in ("stale", "dead_egress"))
        assert res.report["handovers"][0]["stale"] == stale
        assert res.report["handovers"][0]["violations"] == 0


# -- AC8 -----------------------------------------------------------------------

def test_ac8_discovery_redirect():
    with criterion(8, "discovery redirect: 1 PACKET_IN, frames on all other ports", 1.0):
        res = run(*canned("discovery-redirect"))
        net = res.sim.network
        assert not net.switches["gw1"].multicast_capable
        frames = [r.packet for r in net.log if r.kind == "inject"
                  and r.packet.protocol == DISCOVERY]
        assert len(frames) == 2 and frames[0].payload == frames[1].payload
        assert res.sim.controller.packet_in_by_protocol[DISCOVERY] == 1
        assert sum(1 for r in net.log if r.kind == "packet_in") == 1
        src_port = net.devices["d1"].attachment[1]
        for port in net.switches["gw1"].ports:
            if port == src_port:
                continue
            sent = sorted(r.packet.packet_id for r in net.log if r.kind == "tx"
                          and r.node == "gw1" and r.port == port
                          and r.packet.protocol == DISCOVERY)
            assert sent == sorted(f.packet_id for f in frames), port


# -- AC9 -----------------------------------------------------------------------

def subsets(items):
    return [frozenset(c) for k in range(len(items) + 1)
            for c in itertools.combinations(items, k)]


def test_ac9_partition_isolation():
    with criterion(9, "partition delivery iff match_endpoints, all 64 pairs", 1.0):
        checked = 0
        for wp, rp in itertools.product(subsets(["", "siteA", "siteB"]), repeat=2):
            sim = Simulator()
            ps = PubSub(sim)
            ps.register_topic(0, Topic("Temp", "T", {"temperature": "integer"}))
            bus = ControlBus(sim, latency_us=10)
            a = ps.create_participant(0, BusTransport(bus))
            b = ps.create_participant(0, BusTransport(bus))
            wr = a.create_writer("Temp", QosProfile(partitions=wp))
            rd = b.create_reader("Temp", qos=QosProfile(partitions=rp))
            sim.run_to_quiescence(100_000)
            wr.write({"temperature": 1})
            sim.run_to_quiescence(100_000)
            assert bool(rd.received) is match_endpoints(wr.record, rd.record), (wp, rp)
            checked += 1
        assert checked == 64


# -- AC10 ----------------------------------------------------------------------

def test_ac10_slice_soundness():
    with criterion(10, "out-of-slice mods rejected with no table mutation", 1.0):
        topo = topology({"s1": {"ports": [1, 2, 3], "kind": "gateway"}},
                        {f"d{p}": (f"10.0.0.{p}", f"s1:{p}") for p in (1, 2, 3)})
        s = booted(topo)
        template = FlowMatch(dst_addr="10.0.0.2")
        ctl = s.controller
        ctl.register_app(StaticApp("tenant"), Slice("tenant", [template]))
        sw = s.network.switches["s1"]
        rng = random.Random(10)
        plan = [True] * 25 + [False] * 25
        rng.shuffle(plan)
        accepted = rejected = 0
        for i, inside in enumerate(plan):
            extra = {"src_addr": rng.choice([None, "10.0.0.1", "10.0.0.3"]),
                     "dscp": rng.choice([None, 0, 46])}
            dst = "10.0.0.2" if inside else rng.choice([None, "10.0.0.1", "10.0.0.3"])
            mod = FlowMod(ADD, 100 + i, FlowMatch(dst_addr=dst, **extra),
                          (rng.choice([Drop(), Output(2)]),))
            before = list(sw.flow_table)
            if inside:
                assert ctl.program_flow("tenant", "s1", mod).done is False
                accepted += 1
            else:
                with pytest.raises(SliceViolation):
                    ctl.program_flow("tenant", "s1", mod)
                settle(s, 1_000)
                assert sw.flow_table == before
                rejected += 1
            settle(s, 1_000)
        assert (accepted, rejected) == (25, 25)
        assert len(ctl.slice_violations) == 25
        tenant_mods = [rec[2] for rec in sw.journal
                       if rec[0] == "mod" and rec[3] == "tenant"]
        assert len(tenant_mods) == 25
        assert all(subsumes(template, m.match) for m in tenant_mods)


# -- AC11 ----------------------------------------------------------------------

def test_ac11_flood_mitigation():
    with criterion(11, "flood alert within a window, bounded leakage", 2.0):
        topo, sc = canned("flood")
        policy = topo.flood_policy
        stream = next(a for a in sc.actions if a.action == "stream")
        # 10x the threshold per window
        assert stream.interval_us * policy.rate_threshold * 10 == policy.window_us
        res = run(topo, sc)
        fm, net = res.sim.flood_monitor, res.sim.network
        attacker = net.devices[stream.src].address
        victim = net.devices[stream.dst].address
        assert fm.alerts
        first = min(a["time"] for a in fm.alerts)
        assert first <= stream.at + policy.window_us + 2 * topo.control.latency_us
        keys = [(a["switch_id"], json.dumps(a["match"], sort_keys=True)) for a in fm.alerts]
        assert len(keys) == len(set(keys))

        for (switch_id, _), installed_at in fm.mitigated.items():
            assert installed_at is not None
            offending = [r for r in net.log
                         if r.packet.src_addr == attacker and r.packet.dst_addr == victim]
            passed = {r.packet.packet_id for r in offending
                      if r.kind == "tx" and r.node == switch_id and r.time <= installed_at}
            landed = {r.packet.packet_id for r in offending
                      if r.kind == "rx_device" and r.time <= installed_at}
            in_flight = len(passed - landed)
            forwarded_after = sum(1 for r in offending if r.kind == "tx"
                                  and r.node == switch_id and r.time > installed_at)
            delivered_after = sum(1 for r in offending
                                  if r.kind == "rx_device" and r.time > installed_at)
            assert forwarded_after <= in_flight
            assert delivered_after <= in_flight


# -- AC12 ----------------------------------------------------------------------

def test_ac12_determinism(tmp_path):
    with criterion(12, "identical reports and trace hashes across reruns", 10.0):
        for name in CANNED:
            outs = []
            for k in range(2):
                with open(tmp_path / f"{name}-{k}.ndjson", "w") as trace:
                    res = run(*canned(name), seed=0, trace=trace)
                outs.append((emit_report(res.report), res.sim.sim.trace_hash()))
            assert outs[0] == outs[1], name
            assert (tmp_path / f"{name}-0.ndjson").read_bytes() == \
                (tmp_path / f"{name}-1.ndjson").read_bytes()
