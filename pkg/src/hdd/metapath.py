"""Meta-path parsing and time-windowed projection graphs.

A projection entry (u, v) counts path instances u ~> v conforming to the
meta-path: walks through typed edges, parallel edges counted separately,
every timed node on the walk dated inside the window. Self-paths are dropped.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .hetnet import GraphError, HeteroGraph, Schema, TimeWindow


class MetaPathError(ValueError):
    pass


@dataclass(frozen=True)
class MetaPathSpec:
    node_seq: tuple
    edge_seq: tuple  # of (label, reversed)
    name: str

    @property
    def length(self) -> int:
        return len(self.edge_seq)

    @property
    def endpoint_type(self) -> str:
        return self.node_seq[0]

    def is_symmetric(self, schema: Schema) -> bool:
        """Palindromic over undirected labels, so the projection is symmetric."""
        labels = [lab for lab, _ in self.edge_seq]
        return (
            tuple(self.node_seq) == tuple(reversed(self.node_seq))
            and labels == labels[::-1]
            and not any(lab in schema.directed_labels for lab in labels)
        )

    def __str__(self):
        return self.name


def _resolve_types(text: str, schema: Schema) -> list[str]:
    if "-" in text:
        types = [t.strip() for t in text.split("-")]
        for t in types:
            if t not in schema.node_types:
                raise MetaPathError(f"unknown node type {t!r} in meta-path {text!r}")
        return types
    types = []
    for i, ch in enumerate(text):
        if ch not in schema.letters:
            raise MetaPathError(f"unknown type letter {ch!r} in meta-path {text!r}")
        t = schema.letters[ch]
        # C between papers is a citation hop, not a conference
        if ch == "C" and 0 < i < len(text) - 1 and text[i - 1] == text[i + 1] == "P":
            t = "paper"
        types.append(t)
    return types


def parse_metapath(text: str, schema: Schema) -> MetaPathSpec:
    text = text.strip()
    if not text:
        raise MetaPathError("empty meta-path")
    types = _resolve_types(text, schema)
    if len(types) % 2 == 0:
        raise MetaPathError(f"meta-path {text!r} has even length {len(types)}")
    if len(types) < 3:
        raise MetaPathError(f"meta-path {text!r} needs at least 3 node types")
    edges = []
    for a, b in zip(types, types[1:]):
        options = schema.labels_between(a, b)
        if not options:
            raise MetaPathError(f"no edge type connects {a} -> {b} in meta-path {text!r}")
        if len(options) > 1:
            labels = ", ".join(lab for lab, _ in options)
            raise MetaPathError(f"ambiguous edge {a} -> {b} in meta-path {text!r}: {labels}")
        edges.append(options[0])
    name = text if "-" not in text else "".join(
        next((k for k, v in schema.letters.items() if v == t), t[0].upper()) for t in types
    )
    return MetaPathSpec(tuple(types), tuple(edges), name)


def _index(graph: HeteroGraph, node_type: str) -> dict[str, int]:
    return {nid: i for i, nid in enumerate(graph.ids_of_type(node_type))}


def typed_incidence(graph: HeteroGraph, src_type: str, edge_label: str, dst_type: str,
                    window: TimeWindow | None = None) -> sp.csr_matrix:
    """Count matrix of ``edge_label`` edges from ``src_type`` rows to ``dst_type`` columns.

    An undirected label stored in the opposite direction is transposed in;
    an undirected label between nodes of one type counts both ways.
    Edges touching a timed node outside ``window`` are dropped.
    """
    schema = graph.schema
    rows_ix = _index(graph, src_type)
    cols_ix = _index(graph, dst_type)
    directed = edge_label in schema.directed_labels
    timed = schema.timed_type

    def in_window(nid):
        n = graph.nodes[nid]
        return window is None or n.type != timed or n.year in window

    r, c = [], []
    for s, lab, d in graph.edges:
        if lab != edge_label:
            continue
        st, dt = graph.nodes[s].type, graph.nodes[d].type
        if st == src_type and dt == dst_type:
            i, j = rows_ix[s], cols_ix[d]
        elif not directed and st == dst_type and dt == src_type:
            i, j = rows_ix[d], cols_ix[s]
        else:
            continue
        if in_window(s) and in_window(d):
            r.append(i)
            c.append(j)
            if not directed and src_type == dst_type and i != j:
                r.append(j)
                c.append(i)
    data = np.ones(len(r), dtype=np.int64)
    m = sp.coo_matrix((data, (r, c)), shape=(len(rows_ix), len(cols_ix)), dtype=np.int64)
    m = m.tocsr()
    m.sum_duplicates()
    return m


@dataclass
class MetaPathGraph:
    spec: MetaPathSpec
    window: TimeWindow | None
    vertex_ids: list  # row -> node id
    adjacency: sp.csr_matrix

    @property
    def vertex_index(self) -> dict[str, int]:
        return {nid: i for i, nid in enumerate(self.vertex_ids)}

    def weight(self, u: str, v: str) -> int:
        ix = self.vertex_index
        return int(self.adjacency[ix[u], ix[v]])

    def triplets(self):
        coo = self.adjacency.tocoo()
        order = np.lexsort((coo.col, coo.row))
        for k in order:
            yield self.vertex_ids[coo.row[k]], self.vertex_ids[coo.col[k]], int(coo.data[k])

    def degree(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel()

    def save(self, path, index_path=None) -> None:
        path = Path(path)
        index_path = Path(index_path) if index_path else path.with_suffix(".index.tsv")
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("src\tdst\tweight\n")
            for u, v, w in self.triplets():
                fh.write(f"{u}\t{v}\t{w}\n")
        with open(index_path, "w", encoding="utf-8", newline="") as fh:
            fh.write("row\tnode_id\n")
            for i, nid in enumerate(self.vertex_ids):
                fh.write(f"{i}\t{nid}\n")


def load_metapath_graph(path, index_path, spec: MetaPathSpec, window=None) -> MetaPathGraph:
    path, index_path = Path(path), Path(index_path)
    with open(index_path, encoding="utf-8") as fh:
        next(fh)
        ids = [line.rstrip("\n").split("\t")[1] for line in fh]
    ix = {nid: i for i, nid in enumerate(ids)}
    r, c, w = [], [], []
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            u, v, weight = line.rstrip("\n").split("\t")
            r.append(ix[u])
            c.append(ix[v])
            w.append(int(weight))
    adj = sp.csr_matrix((np.array(w, dtype=np.int64), (r, c)), shape=(len(ids), len(ids)))
    return MetaPathGraph(spec, window, ids, adj)


def metapath_adjacency(graph: HeteroGraph, spec: MetaPathSpec,
                       window: TimeWindow | None = None) -> MetaPathGraph:
    product = None
    for (a, b), (label, _) in zip(zip(spec.node_seq, spec.node_seq[1:]), spec.edge_seq):
        step = typed_incidence(graph, a, label, b, window)
        product = step if product is None else (product @ step).tocsr()
    endpoints = graph.ids_of_type(spec.endpoint_type)
    if spec.node_seq[-1] != spec.endpoint_type:
        raise GraphError(f"meta-path {spec.name} does not return to {spec.endpoint_type}")
    product = (product - sp.diags(product.diagonal(), format="csr", dtype=np.int64)).tocsr()
    product.eliminate_zeros()
    product.sort_indices()
    return MetaPathGraph(spec, window, endpoints, product)


def snapshot_series(graph: HeteroGraph, spec: MetaPathSpec, windows) -> list[MetaPathGraph]:
    windows = list(windows)
    if not windows:
        raise ValueError("snapshot_series needs at least one window")
    return [metapath_adjacency(graph, spec, w) for w in windows]


def step_windows(step_years, origin: int, mode: str = "cumulative") -> list[TimeWindow]:
    """Snapshot windows ending at each step year: [origin, y] or [y, y]."""
    if mode == "cumulative":
        return [TimeWindow(origin, y) for y in step_years]
    if mode == "sliding":
        return [TimeWindow(y, y) for y in step_years]
    raise ValueError(f"unknown window mode {mode!r}")
