from .apps import (
    DEFAULT_MITIGATION_PRIORITY, DISCOVERY_PRIORITY, FORWARD_PRIORITY, MULTICAST_PRIORITY,
    DiscoveryProxy, FloodMonitor, Handover, LearningForwarder, MobilityManager, StaticApp,
    discovery_flood_mods, multicast_group_mods,
)
from .core import (
    App, Controller, LearnedLocations, Location, PendingRequest, Slice, subsumes,
)
from .mediation import (
    CONTROL_DOMAIN, MEDIATION_TOPICS, SwitchAgent, TopologyView, register_mediation_topics,
)
