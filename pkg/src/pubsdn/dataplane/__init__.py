from .network import Device, Link, LogRecord, Network
from .packet import (
    ADD, CONTROL, DATA, DELETE, DISCOVERY, MODIFY, WILDCARD, Drop, FlowMatch, FlowMod,
    Group, Output, Packet, SetDscp, ToController, action_from_dict, action_to_dict,
    is_multicast,
)
from .switch import (
    DROP, TO_CONTROLLER, Dropped, FlowEntry, Gateway, ModResult, ObjectRecord, PacketIn,
    Switch, Transmit,
)
