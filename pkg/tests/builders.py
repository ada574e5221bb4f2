"""Small topology builders shared by the controller, harness and acceptance tests."""
from pubsdn.harness import Simulation, load_topology


def topology(switches, devices, links=(), **extra):
    """Compact topology builder.

    switches: {id: ports or dict of SwitchDoc fields}
    devices:  {id: (address, "sw:port")} or dicts of DeviceDoc fields
    links:    [(id, "sw:port", "sw:port")]
    """
    doc = {"name": extra.pop("name", "test"), "switches": [], "devices": [], "links": []}
    for sid, spec in switches.items():
        d = {"id": sid, "ports": spec} if isinstance(spec, list) else {"id": sid, **spec}
        doc["switches"].append(d)
    for did, spec in devices.items():
        if isinstance(spec, tuple):
            spec = {"address": spec[0], "attachment": spec[1], "participant": False}
        doc["devices"].append({"id": did, **spec})
    for lid, a, b in links:
        doc["links"].append({"id": lid, "a": a, "b": b})
    doc.update(extra)
    return load_topology(doc)


def booted(topo, **kw):
    s = Simulation(topo, **kw)
    s.sim.run_until(topo.ready_us)
    return s


def settle(s, extra_us=10_000):
    s.sim.run_until(s.sim.now + extra_us)
