"""Typed heterogeneous graph: schema, canonical TSV ingestion, time slicing."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

log = logging.getLogger(__name__)

NODES_HEADER = ["id", "type", "year", "topics", "name"]
EDGES_HEADER = ["src", "label", "dst"]


class GraphError(ValueError):
    """Raised for malformed input files or invariant violations."""


@dataclass(frozen=True)
class TimeWindow:
    start_year: int
    end_year: int

    def __post_init__(self):
        if self.start_year > self.end_year:
            raise ValueError(f"empty window [{self.start_year}, {self.end_year}]")

    def __contains__(self, year) -> bool:
        return year is not None and self.start_year <= year <= self.end_year

    def covers(self, other: "TimeWindow") -> bool:
        return self.start_year <= other.start_year and other.end_year <= self.end_year

    def __str__(self):
        return f"[{self.start_year},{self.end_year}]"


# Letter aliases used by compact meta-path strings. "C" reads as conference,
# except between two papers where it means a citation hop (PCP).
DEFAULT_LETTERS = {"A": "author", "P": "paper", "V": "venue", "C": "venue", "T": "term"}


@dataclass(frozen=True)
class Schema:
    node_types: frozenset
    edge_types: tuple  # of (src_type, label, dst_type)
    timed_type: str = "paper"
    directed_labels: frozenset = frozenset({"cites"})
    letters: Mapping[str, str] = field(default_factory=lambda: MappingProxyType(dict(DEFAULT_LETTERS)))

    def __post_init__(self):
        object.__setattr__(self, "node_types", frozenset(self.node_types))
        object.__setattr__(self, "edge_types", tuple(tuple(e) for e in self.edge_types))
        object.__setattr__(self, "directed_labels", frozenset(self.directed_labels))
        for t in self.node_types:
            if not t or any(c.isspace() for c in t):
                raise GraphError(f"node type label must be a nonempty single token: {t!r}")
        for src, label, dst in self.edge_types:
            if src not in self.node_types or dst not in self.node_types:
                raise GraphError(f"edge type ({src}, {label}, {dst}) references undeclared node type")
        if self.timed_type not in self.node_types:
            raise GraphError(f"timed type {self.timed_type!r} is not a declared node type")

    def edge_signature(self, label: str) -> tuple[str, str]:
        for src, lab, dst in self.edge_types:
            if lab == label:
                return src, dst
        raise GraphError(f"unknown edge label {label!r}")

    def labels_between(self, a: str, b: str) -> list[tuple[str, bool]]:
        """Edge labels that connect type ``a`` to type ``b``.

        Returns (label, reversed) pairs; ``reversed`` means the stored edge runs
        b -> a and is traversed backwards (only allowed for undirected labels).
        """
        out = []
        for src, label, dst in self.edge_types:
            if src == a and dst == b:
                out.append((label, False))
            elif src == b and dst == a and label not in self.directed_labels:
                out.append((label, True))
        return out


def bibliographic_schema() -> Schema:
    """Author/paper/venue/term schema covering APA, ACA, APAPA, PCP, PVP."""
    return Schema(
        node_types={"author", "paper", "venue", "term"},
        edge_types=[
            ("author", "writes", "paper"),
            ("paper", "published_in", "venue"),
            ("author", "publishes_at", "venue"),
            ("paper", "cites", "paper"),
            ("paper", "has_term", "term"),
        ],
    )


@dataclass(frozen=True)
class Node:
    type: str
    year: int | None = None
    topics: tuple = ()
    name: str = ""


class HeteroGraph:
    """Immutable typed multigraph. Node ids are strings; parallel edges allowed."""

    def __init__(self, schema: Schema, nodes: Mapping[str, Node], edges: Iterable[tuple]):
        self.schema = schema
        self.nodes = MappingProxyType(dict(nodes))
        self.edges = tuple(tuple(e) for e in edges)
        self._validate()

    def _validate(self):
        s = self.schema
        for nid, node in self.nodes.items():
            if node.type not in s.node_types:
                raise GraphError(f"node {nid!r}: unknown node type {node.type!r}")
            if node.type == s.timed_type and node.year is None:
                raise GraphError(f"node {nid!r}: missing year on {s.timed_type} node")
            if node.type != s.timed_type and node.year is not None:
                raise GraphError(f"node {nid!r}: only {s.timed_type} nodes carry a year")
        sigs = {(a, lab, b) for a, lab, b in s.edge_types}
        for src, label, dst in self.edges:
            for end in (src, dst):
                if end not in self.nodes:
                    raise GraphError(f"dangling edge endpoint {end!r} in ({src}, {label}, {dst})")
            key = (self.nodes[src].type, label, self.nodes[dst].type)
            if key not in sigs:
                raise GraphError(f"edge ({src}, {label}, {dst}) has signature {key} not in schema")

    def ids_of_type(self, node_type: str) -> list[str]:
        return sorted(nid for nid, n in self.nodes.items() if n.type == node_type)

    def years(self) -> list[int]:
        return sorted({n.year for n in self.nodes.values() if n.year is not None})

    def year_span(self) -> TimeWindow | None:
        ys = self.years()
        return TimeWindow(ys[0], ys[-1]) if ys else None

    def __len__(self):
        return len(self.nodes)

    def __eq__(self, other):
        if not isinstance(other, HeteroGraph):
            return NotImplemented
        return (
            self.schema == other.schema
            and dict(self.nodes) == dict(other.nodes)
            and sorted(self.edges) == sorted(other.edges)
        )

    def __repr__(self):
        return f"HeteroGraph(nodes={len(self.nodes)}, edges={len(self.edges)})"


def _parse_topics(field_: str) -> tuple:
    return tuple(t.strip().lower() for t in field_.split("|") if t.strip())


def load_graph(nodes_path, edges_path, schema: Schema | None = None) -> HeteroGraph:
    schema = schema or bibliographic_schema()
    nodes: dict[str, Node] = {}
    with open(nodes_path, encoding="utf-8", newline="") as fh:
        rows = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        header = next(rows, None)
        if header != NODES_HEADER:
            raise GraphError(f"{nodes_path}:1: expected header {NODES_HEADER}, got {header}")
        for lineno, row in enumerate(rows, start=2):
            if len(row) != len(NODES_HEADER):
                raise GraphError(f"{nodes_path}:{lineno}: expected 5 fields, got {len(row)}")
            nid, ntype, year, topics, name = row
            if not nid:
                raise GraphError(f"{nodes_path}:{lineno}: empty node id")
            if nid in nodes:
                raise GraphError(f"{nodes_path}:{lineno}: duplicate node id {nid!r}")
            if ntype not in schema.node_types:
                raise GraphError(f"{nodes_path}:{lineno}: unknown node type {ntype!r}")
            if year:
                try:
                    y = int(year)
                except ValueError:
                    raise GraphError(f"{nodes_path}:{lineno}: bad year {year!r}") from None
            else:
                y = None
            if ntype == schema.timed_type and y is None:
                raise GraphError(f"{nodes_path}:{lineno}: missing year on {ntype} node {nid!r}")
            if ntype != schema.timed_type and y is not None:
                raise GraphError(f"{nodes_path}:{lineno}: year given on {ntype} node {nid!r}")
            nodes[nid] = Node(ntype, y, _parse_topics(topics), name)

    edges = []
    with open(edges_path, encoding="utf-8", newline="") as fh:
        rows = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        header = next(rows, None)
        if header != EDGES_HEADER:
            raise GraphError(f"{edges_path}:1: expected header {EDGES_HEADER}, got {header}")
        for lineno, row in enumerate(rows, start=2):
            if len(row) != 3:
                raise GraphError(f"{edges_path}:{lineno}: expected 3 fields, got {len(row)}")
            src, label, dst = row
            for end in (src, dst):
                if end not in nodes:
                    raise GraphError(f"{edges_path}:{lineno}: dangling edge endpoint {end!r}")
            edges.append((src, label, dst))
    g = HeteroGraph(schema, nodes, edges)
    log.info("loaded %r from %s", g, nodes_path)
    return g


def save_graph(graph: HeteroGraph, nodes_path, edges_path) -> None:
    for p in (nodes_path, edges_path):
        Path(p).parent.mkdir(parents=True, exist_ok=True)
    with open(nodes_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(NODES_HEADER) + "\n")
        for nid in sorted(graph.nodes):
            n = graph.nodes[nid]
            for value in (nid, n.name, *n.topics):
                if any(c in value for c in "\t\n\r") or (value in n.topics and "|" in value):
                    raise GraphError(f"node {nid!r}: field {value!r} cannot be written as TSV")
            year = "" if n.year is None else str(n.year)
            fh.write("\t".join([nid, n.type, year, "|".join(n.topics), n.name]) + "\n")
    with open(edges_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(EDGES_HEADER) + "\n")
        for src, label, dst in graph.edges:
            fh.write(f"{src}\t{label}\t{dst}\n")


def slice_window(graph: HeteroGraph, window: TimeWindow) -> HeteroGraph:
    """Keep non-timed nodes, timed nodes dated inside ``window``, and surviving edges."""
    timed = graph.schema.timed_type
    keep = {
        nid: n for nid, n in graph.nodes.items() if n.type != timed or n.year in window
    }
    edges = [e for e in graph.edges if e[0] in keep and e[2] in keep]
    return HeteroGraph(graph.schema, keep, edges)
