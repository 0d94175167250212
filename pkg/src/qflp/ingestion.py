"""Topology readers and all-pairs round-trip times."""
from __future__ import annotations

import logging
import math
import re
import warnings
from dataclasses import dataclass
from xml.etree.ElementTree import ParseError

import networkx as nx
import numpy as np

from .model import Instance, ScenarioConfig, budget_from_factor, build_instance, distribute_resources, gen_demand

log = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0
MS_PER_KM = 0.01  # one-way propagation


def _node_key(node):
    text = str(node)
    return (0, int(text), text) if text.lstrip("-").isdigit() else (1, 0, text)


@dataclass
class Topology:
    graph: nx.Graph  # node attrs: latitude/longitude (optional); edge attr: latency_ms (optional)
    name: str = ""

    @property
    def nodes(self) -> list:
        return sorted(self.graph.nodes, key=_node_key)

    def degrees(self) -> np.ndarray:
        return np.array([self.graph.degree(n) for n in self.nodes])


def _largest_component(graph: nx.Graph) -> nx.Graph:
    parts = sorted(nx.connected_components(graph), key=lambda c: (-len(c), min(_node_key(n) for n in c)))
    if len(parts) > 1:
        log.info("keeping largest of %d components (%d of %d nodes)", len(parts), len(parts[0]), graph.number_of_nodes())
    return graph.subgraph(parts[0]).copy()


def _coordinate(attrs: dict, *names):
    for name in names:
        for key, value in attrs.items():
            if key.lower() == name:
                try:
                    return float(value)
                except (TypeError, ValueError):
                    return None
    return None


def parse_graphml_topology(text: str, name: str = "") -> Topology:
    """Topology-zoo style graph; nodes without coordinates are bridged out."""
    try:
        raw = nx.parse_graphml(text)
    except (ParseError, nx.NetworkXError) as exc:
        raise ValueError(f"malformed graph document: {exc}") from exc
    graph = nx.Graph()
    for node, attrs in raw.nodes(data=True):
        graph.add_node(str(node), latitude=_coordinate(attrs, "latitude", "lat"),
                       longitude=_coordinate(attrs, "longitude", "lon", "long"))
    graph.add_edges_from((str(u), str(v)) for u, v in raw.edges() if u != v)
    for node in sorted(graph.nodes, key=_node_key):
        attrs = graph.nodes[node]
        if attrs["latitude"] is not None and attrs["longitude"] is not None:
            continue
        near = sorted(graph.neighbors(node), key=_node_key)
        graph.remove_node(node)
        graph.add_edges_from((a, b) for i, a in enumerate(near) for b in near[i + 1:])
    if graph.number_of_nodes() == 0:
        raise ValueError("no located nodes left after preprocessing")
    return Topology(_largest_component(graph), name or raw.graph.get("label", ""))


def parse_sndlib(text: str, name: str = "") -> Topology:
    """SNDlib native format: NODES and LINKS sections with coordinates."""

    def section(title):
        match = re.search(rf"^\s*{title}\s*\((.*?)^\s*\)", text, re.S | re.M)
        if match is None:
            raise ValueError(f"SNDlib document lacks a {title} section")
        return match.group(1)

    graph = nx.Graph()
    for node, lon, lat in re.findall(r"(\S+)\s*\(\s*([-\d.eE+]+)\s+([-\d.eE+]+)\s*\)", section("NODES")):
        graph.add_node(node, latitude=float(lat), longitude=float(lon))
    for _, u, v in re.findall(r"^\s*(\S+)\s*\(\s*(\S+)\s+(\S+)\s*\)", section("LINKS"), re.M):
        if u not in graph or v not in graph:
            raise ValueError(f"link between unknown nodes {u} and {v}")
        if u != v:
            graph.add_edge(u, v)
    if graph.number_of_nodes() == 0:
        raise ValueError("SNDlib document has no nodes")
    return Topology(_largest_component(graph), name)


def parse_latency_matrix(text: str, name: str = "") -> Topology:
    """Whitespace triples ``i j latency_ms``; the missing direction is mirrored."""
    seen: dict[tuple, list[float]] = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 3:
            raise ValueError(f"expected 'i j latency', got {line!r}")
        u, v, value = parts[0], parts[1], float(parts[2])
        if u == v or value < 0:
            continue
        seen.setdefault((u, v), []).append(value)
    if not seen:
        raise ValueError("latency matrix has no measurements")
    graph = nx.Graph()
    for (u, v), values in seen.items():
        if graph.has_edge(u, v):
            continue
        both = values + seen.get((v, u), [])
        if len(set(both)) > 1:
            warnings.warn(f"asymmetric latency between {u} and {v}: {both}, using the mean", stacklevel=2)
        graph.add_edge(u, v, latency_ms=float(np.mean(both)))
    return Topology(_largest_component(graph), name)


def haversine_km(lat1, lon1, lat2, lon2) -> float:
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dphi, dlmb = phi2 - phi1, math.radians(lon2 - lon1)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(math.sqrt(min(1.0, h)))


def edge_rtt(topology: Topology, u, v, ms_per_km: float = MS_PER_KM) -> float:
    attrs = topology.graph.edges[u, v]
    if attrs.get("latency_ms") is not None:
        return float(attrs["latency_ms"])
    a, b = topology.graph.nodes[u], topology.graph.nodes[v]
    if a.get("latitude") is None or b.get("latitude") is None:
        raise ValueError(f"edge {u}-{v} has neither latency nor coordinates")
    return 2 * ms_per_km * haversine_km(a["latitude"], a["longitude"], b["latitude"], b["longitude"])


def all_pairs_rtt(topology: Topology, ms_per_km: float = MS_PER_KM) -> np.ndarray:
    """Shortest-path round-trip times (ms) in canonical node order."""
    graph = topology.graph
    if graph.number_of_nodes() == 0 or not nx.is_connected(graph):
        raise ValueError("topology must be connected")
    weighted = nx.Graph()
    weighted.add_nodes_from(graph.nodes)
    weighted.add_weighted_edges_from((u, v, edge_rtt(topology, u, v, ms_per_km)) for u, v in graph.edges)
    nodes = topology.nodes
    index = {n: i for i, n in enumerate(nodes)}
    out = np.zeros((len(nodes), len(nodes)))
    for source, lengths in nx.all_pairs_dijkstra_path_length(weighted):
        for target, dist in lengths.items():
            out[index[source], index[target]] = dist
    return out


def instance_from_topology(topology: Topology, config: ScenarioConfig, mu: float = 100.0,
                           ms_per_km: float = MS_PER_KM) -> Instance:
    """Scenario instance: every node a client, resources placed per the scheme."""
    nodes = topology.nodes
    rtt = all_pairs_rtt(topology, ms_per_km)
    k = distribute_resources(topology.degrees(), config.resource_scheme, latency=rtt)
    demand = gen_demand(len(nodes), config, k, np.full(len(k), mu))
    p = budget_from_factor(k[k > 0], config.budget_factor)
    name = f"{topology.name or 'topology'}-{config.resource_scheme}-{config.demand_dist}-{config.budget_factor:g}-{config.seed}"
    return build_instance([str(n) for n in nodes], rtt, k, demand, mu, p, name)
