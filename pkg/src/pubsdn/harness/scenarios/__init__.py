"""Bundled scenarios: ``<name>.topology.json`` + ``<name>.scenario.json``."""
from __future__ import annotations

from importlib import resources

from ..docs import load_scenario, load_topology

CANNED = ("handover", "discovery-redirect", "batching", "content-filter", "multichannel",
          "keyword-slice", "flood")


def canned_names() -> list:
    return list(CANNED)


def canned_paths(name: str) -> tuple:
    if name not in CANNED:
        raise KeyError(name)
    base = resources.files(__name__)
    return base / f"{name}.topology.json", base / f"{name}.scenario.json"


def canned(name: str) -> tuple:
    topo_path, scen_path = canned_paths(name)
    topo = load_topology(str(topo_path))
    return topo, load_scenario(str(scen_path), topo)
