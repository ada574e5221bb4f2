"""Post-run audits over the packet log."""
from __future__ import annotations

from collections import defaultdict

from ..dataplane import Network


def deliveries_by_packet(net: Network) -> dict:
    """packet_id -> [(time, switch, port)] for every accepted device delivery."""
    out = defaultdict(list)
    for r in net.log:
        if r.kind == "rx_device" and r.via is not None:
            out[r.packet.packet_id].append((r.time, r.via[0], r.via[1]))
    return out


def conservation(net: Network) -> dict:
    sw_ok = all(s.received == s.forwarded + s.to_controller + s.dropped
                for s in net.switches.values())
    hops = net.hop_balance()
    return {
        "switches_ok": sw_ok,
        "hops_ok": hops["in_flight"] == net.in_flight_now(),
        "hops": hops,
    }


def handover_audit(net: Network, ho) -> dict:
    """Classify packets for the moved device that reached its old port.

    Stale: sent no later than completion. Violation: sent after completion.
    """
    old = tuple(ho.old)
    stale = violations = 0
    done = ho.completed_at
    for r in net.log:
        if r.packet.dst_addr != ho.device or r.time < ho.event_time:
            continue
        at_old = (
            (r.kind == "dead_egress" and (r.node, r.port) == old)
            or (r.kind in ("stale", "rx_device") and r.via is not None and tuple(r.via) == old)
        )
        if not at_old:
            continue
        if done is not None and r.packet.origin_time > done:
            violations += 1
        else:
            stale += 1
    return {"stale": stale, "violations": violations}


def flood_audit(net: Network, switch_id: str, install_time: int, attacker: str,
                victim: str) -> dict:
    """Offending packets forwarded past ``switch_id`` after the drop rule went in."""
    def offending(p):
        return p.src_addr == attacker and p.dst_addr == victim

    forwarded_after = sum(1 for r in net.log if r.kind == "tx" and r.node == switch_id
                          and r.time > install_time and offending(r.packet))
    passed_before = {r.packet.packet_id for r in net.log if r.kind == "tx"
                     and r.node == switch_id and r.time <= install_time
                     and offending(r.packet)}
    delivered_before = {r.packet.packet_id for r in net.log if r.kind == "rx_device"
                        and r.time <= install_time and offending(r.packet)}
    delivered_after = sum(1 for r in net.log if r.kind == "rx_device"
                          and r.time > install_time and offending(r.packet))
    return {
        "forwarded_after_install": forwarded_after,
        "in_flight_at_install": len(passed_before - delivered_before),
        "delivered_after_install": delivered_after,
    }
