"""Registry of well-known ICS ports, loaded from packaged data files."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources


def load_packaged_json(name: str):
    return json.loads(resources.files("ics_scope.data").joinpath(name).read_text())


class PortRegistry:
    """Maps (port, transport) pairs to the protocol registered on them.

    The table format allows single ports or inclusive [low, high] ranges,
    keyed per transport, e.g. {"bacnet": {"udp": [[47808, 47823]]}}.
    """

    def __init__(self, table: dict):
        self._by_transport: dict[str, dict[int, str]] = {"tcp": {}, "udp": {}}
        for protocol, transports in table.items():
            for transport, entries in transports.items():
                ports = self._by_transport[transport]
                for entry in entries:
                    if isinstance(entry, list):
                        lo, hi = entry
                        for port in range(lo, hi + 1):
                            ports[port] = protocol
                    else:
                        ports[int(entry)] = protocol
        self._all_ports = frozenset(self._by_transport["tcp"]) | frozenset(
            self._by_transport["udp"]
        )

    def protocol_for(self, port: int, transport: str) -> str | None:
        return self._by_transport.get(transport, {}).get(port)

    def is_ics_port(self, port: int) -> bool:
        """Port registered for any protocol on any transport (naive view)."""
        return port in self._all_ports

    def ports_for(self, protocol: str) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {}
        for transport, ports in self._by_transport.items():
            matching = sorted(p for p, proto in ports.items() if proto == protocol)
            if matching:
                out[transport] = matching
        return out

    def registered_pairs(self) -> list[tuple[int, str, str]]:
        """All (port, transport, protocol) triples, for exhaustive checks."""
        out = []
        for transport, ports in sorted(self._by_transport.items()):
            for port, proto in sorted(ports.items()):
                out.append((port, transport, proto))
        return out


@lru_cache(maxsize=1)
def default_registry() -> PortRegistry:
    return PortRegistry(load_packaged_json("ports.json"))
