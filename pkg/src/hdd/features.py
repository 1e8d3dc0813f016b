"""Activation labels, temporal splits, anchor columns, and sample tensors.

A diffusion sample for node u is a (W, K*F) count array: for each of the W
snapshot steps, the concatenation over K meta-paths of u's projection row
restricted to the F anchor columns.
"""
from __future__ import annotations

import re
import struct
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .hetnet import HeteroGraph, TimeWindow
from .metapath import MetaPathGraph

FEATURES_MAGIC = b"HDDF"
_HEADER = struct.Struct("<4sIIII")
_TOKEN = re.compile(r"[^\W_]+")


def _tokens(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def topic_matches(topic: str, paper_topics) -> bool:
    """Case-insensitive whole-word containment of ``topic`` in any topic string."""
    want = _tokens(topic)
    if not want:
        return False
    n = len(want)
    for t in paper_topics:
        toks = _tokens(t)
        if any(toks[i:i + n] == want for i in range(len(toks) - n + 1)):
            return True
    return False


@dataclass(frozen=True)
class ActivationTable:
    topic: str
    first_active_year: Mapping[str, int]

    def active(self, node: str, year: int) -> bool:
        y = self.first_active_year.get(node)
        return y is not None and y <= year

    def active_by(self, year: int) -> set:
        return {a for a, y in self.first_active_year.items() if y <= year}

    def activated_in(self, window: TimeWindow) -> set:
        return {a for a, y in self.first_active_year.items() if y in window}


def activation_table(graph: HeteroGraph, topic: str, node_type: str = "author") -> ActivationTable:
    if not topic.strip():
        raise ValueError("topic must be nonempty")
    timed = graph.schema.timed_type
    first: dict[str, int] = {}
    if node_type == timed:
        # a paper is active from its own year when it carries the topic
        for nid, n in graph.nodes.items():
            if n.type == timed and topic_matches(topic, n.topics):
                first[nid] = n.year
        return ActivationTable(topic.lower(), first)
    labels = {lab for lab, _ in graph.schema.labels_between(node_type, timed)}
    for s, lab, d in graph.edges:
        if lab not in labels:
            continue
        a, p = (s, d) if graph.nodes[s].type == node_type else (d, s)
        paper = graph.nodes[p]
        if graph.nodes[a].type != node_type or paper.type != timed:
            continue
        if topic_matches(topic, paper.topics):
            first[a] = min(first.get(a, paper.year), paper.year)
    return ActivationTable(topic.lower(), first)


@dataclass(frozen=True)
class Fold:
    """Feature window plus the one-year label interval right after it.

    Nodes active by ``boundary`` (the last feature year) are seeds and carry
    no label.
    """

    features: TimeWindow

    @property
    def boundary(self) -> int:
        return self.features.end_year

    @property
    def label_window(self) -> TimeWindow:
        return TimeWindow(self.boundary + 1, self.boundary + 1)

    @property
    def steps(self) -> list[int]:
        return list(range(self.features.start_year, self.features.end_year + 1))


def make_split(t: int, window_len: int = 4, task: str = "diffusion") -> tuple[Fold, Fold]:
    """Train/test folds for prediction year ``t``.

    diffusion: train on [t-W, t-1] with labels from (t-1, t]; test on
    [t-W+1, t] with labels from (t, t+1].
    cascade: W+1 steps; test on [t-W, t], train on the same span shifted back a year.
    """
    if window_len < 1:
        raise ValueError("window_len must be >= 1")
    if t <= window_len:
        raise ValueError(f"split year {t} must exceed window_len {window_len}")
    if task == "diffusion":
        return Fold(TimeWindow(t - window_len, t - 1)), Fold(TimeWindow(t - window_len + 1, t))
    if task == "cascade":
        return Fold(TimeWindow(t - window_len - 1, t - 1)), Fold(TimeWindow(t - window_len, t))
    raise ValueError(f"unknown task {task!r}")


@dataclass(frozen=True)
class AnchorSet:
    ids: tuple

    @property
    def rank(self) -> dict[str, int]:
        return {nid: i for i, nid in enumerate(self.ids)}

    def __len__(self):
        return len(self.ids)


def _flatten(series) -> list[MetaPathGraph]:
    out = []
    for s in series:
        if isinstance(s, MetaPathGraph):
            out.append(s)
        else:
            out.extend(_flatten(s))
    return out


def _check_universe(snapshots: Sequence[MetaPathGraph]) -> list:
    ids = list(snapshots[0].vertex_ids)
    for s in snapshots[1:]:
        if list(s.vertex_ids) != ids:
            raise ValueError(f"inconsistent vertex_index across series ({s.spec.name} {s.window})")
    return ids


def build_anchor_set(activation: ActivationTable, snapshots, cap: int = 1024,
                     as_of: int | None = None) -> AnchorSet:
    """Active nodes first, then by total meta-path degree (descending), then id.

    ``as_of`` limits "active" to activations up to that year; None means ever.
    """
    snaps = _flatten(snapshots)
    if not snaps:
        raise ValueError("need at least one snapshot")
    ids = _check_universe(snaps)
    degree = np.zeros(len(ids), dtype=np.int64)
    for s in snaps:
        degree += s.degree()

    def is_active(nid):
        y = activation.first_active_year.get(nid)
        return y is not None and (as_of is None or y <= as_of)

    order = sorted(range(len(ids)), key=lambda i: (not is_active(ids[i]), -degree[i], ids[i]))
    return AnchorSet(tuple(ids[i] for i in order[:cap]))


@dataclass
class SampleSet:
    node_ids: list
    features: np.ndarray  # (n, W, K*F) nonnegative counts
    labels: np.ndarray  # (n,) float
    n_metapaths: int
    n_anchors: int

    @property
    def n_steps(self) -> int:
        return self.features.shape[1]

    def __len__(self):
        return len(self.node_ids)

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx, dtype=np.int64)
        return SampleSet([self.node_ids[i] for i in idx], self.features[idx], self.labels[idx],
                         self.n_metapaths, self.n_anchors)

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        n, w, _ = self.features.shape if self.features.ndim == 3 else (0, 0, 0)
        with open(d / "features.bin", "wb") as fh:
            fh.write(_HEADER.pack(FEATURES_MAGIC, w, self.n_metapaths, self.n_anchors, len(self)))
            fh.write(np.ascontiguousarray(self.features, dtype="<f4").tobytes())
        with open(d / "labels.tsv", "w", encoding="utf-8", newline="") as fh:
            fh.write("node_id\tlabel\n")
            for nid, y in zip(self.node_ids, self.labels):
                fh.write(f"{nid}\t{_fmt_label(y)}\n")

    @classmethod
    def load(cls, directory) -> "SampleSet":
        d = Path(directory)
        raw = (d / "features.bin").read_bytes()
        magic, w, k, f, n = _HEADER.unpack_from(raw)
        if magic != FEATURES_MAGIC:
            raise ValueError(f"{d / 'features.bin'}: bad magic {magic!r}")
        feats = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).astype(np.float64)
        feats = feats.reshape(n, w, k * f)
        ids, labels = [], []
        with open(d / "labels.tsv", encoding="utf-8") as fh:
            next(fh)
            for line in fh:
                nid, y = line.rstrip("\n").split("\t")
                ids.append(nid)
                labels.append(float(y))
        if len(ids) != n:
            raise ValueError(f"{d}: {len(ids)} labels for {n} feature rows")
        return cls(ids, feats, np.asarray(labels, dtype=np.float64), k, f)


def _fmt_label(y) -> str:
    y = float(y)
    return str(int(y)) if y.is_integer() else repr(y)


def _anchor_columns(ids: list, anchors: AnchorSet) -> np.ndarray:
    ix = {nid: i for i, nid in enumerate(ids)}
    missing = [a for a in anchors.ids if a not in ix]
    if missing:
        raise ValueError(f"anchors outside the projection universe: {missing[:3]}")
    return np.array([ix[a] for a in anchors.ids], dtype=np.int64)


def build_diffusion_samples(series: Sequence[Sequence[MetaPathGraph]], activation: ActivationTable,
                            fold: Fold, anchors: AnchorSet) -> SampleSet:
    """One sample per node not yet active at ``fold.boundary``, in id order.

    ``series[k][tau]`` is the projection of meta-path k at step tau of the fold.
    """
    if not series:
        raise ValueError("need at least one meta-path series")
    steps = len(series[0])
    if any(len(s) != steps for s in series):
        raise ValueError("meta-path series have different numbers of steps")
    if steps != len(fold.steps):
        raise ValueError(f"series has {steps} steps but the fold spans {len(fold.steps)}")
    ids = _check_universe(_flatten(series))
    cols = _anchor_columns(ids, anchors)
    rows = np.array([i for i, nid in enumerate(ids) if not activation.active(nid, fold.boundary)],
                    dtype=np.int64)
    k, f = len(series), len(anchors)
    feats = np.zeros((len(rows), steps, k * f), dtype=np.float64)
    for kk, snaps in enumerate(series):
        for tau, snap in enumerate(snaps):
            block = snap.adjacency[rows][:, cols].toarray()
            feats[:, tau, kk * f:(kk + 1) * f] = block
    label_win = fold.label_window
    labels = np.array(
        [1.0 if activation.first_active_year.get(ids[r]) in label_win else 0.0 for r in rows]
    )
    return SampleSet([ids[r] for r in rows], feats, labels, k, f)


class Hop(NamedTuple):
    cited: str
    citing: str | None
    elapsed: int

    def as_tuple(self) -> tuple:
        if self.citing is None:
            return (self.cited, self.elapsed)
        return (self.cited, self.citing, self.elapsed)


@dataclass
class Cascade:
    topic: str
    root: str
    hops: list
    years: dict = field(default_factory=dict)  # member id -> publication year

    @property
    def members(self) -> list:
        seen = [self.root]
        for h in self.hops[1:]:
            if h.citing not in seen:
                seen.append(h.citing)
        return seen

    def members_by(self, year: int) -> list:
        return [m for m in self.members if self.years[m] <= year]

    def as_tuples(self) -> list:
        return [h.as_tuple() for h in self.hops]


def _citations(graph: HeteroGraph, papers: set, label: str = "cites") -> dict:
    """citers[cited] -> citing papers, restricted to ``papers`` and forward in time."""
    citers: dict[str, set] = {}
    for s, lab, d in graph.edges:
        if lab == label and s in papers and d in papers and s != d:
            if graph.nodes[s].year >= graph.nodes[d].year:
                citers.setdefault(d, set()).add(s)
    return citers


def extract_cascades(graph: HeteroGraph, topic: str) -> list[Cascade]:
    """One cascade per topic paper that cites no other topic paper.

    Hops come out in BFS order from the root, citers visited by (year, id).
    Every topic-paper citation edge inside the reachable set becomes a hop;
    each paper is expanded once, so citation cycles terminate.
    """
    timed = graph.schema.timed_type
    topical = {nid for nid, n in graph.nodes.items()
               if n.type == timed and topic_matches(topic, n.topics)}
    citers = _citations(graph, topical)
    cites_topic = {c for cs in citers.values() for c in cs}
    key = lambda nid: (graph.nodes[nid].year, nid)  # noqa: E731
    roots = sorted((p for p in topical if p not in cites_topic), key=key)

    def bfs(root):
        hops = [Hop(root, None, 0)]
        seen = {root}
        queue = deque([root])
        while queue:
            u = queue.popleft()
            for v in sorted(citers.get(u, ()), key=key):
                hops.append(Hop(u, v, graph.nodes[v].year - graph.nodes[u].year))
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return Cascade(topic.lower(), root, hops, {m: graph.nodes[m].year for m in seen})

    cascades = [bfs(r) for r in roots]
    covered = {m for c in cascades for m in c.years}
    # components made only of citation cycles have no natural root
    for p in sorted(topical - covered, key=key):
        if p not in covered:
            c = bfs(p)
            cascades.append(c)
            covered.update(c.years)
    return cascades


@dataclass
class CascadeSampleSet:
    cascade_ids: list
    features: np.ndarray  # (n, steps, K*F)
    targets: np.ndarray  # next-window membership increment
    adopter_labels: list  # per cascade: {candidate id: 0/1}
    n_metapaths: int
    n_anchors: int

    def __len__(self):
        return len(self.cascade_ids)

    def as_sample_set(self) -> SampleSet:
        return SampleSet(list(self.cascade_ids), self.features, self.targets,
                         self.n_metapaths, self.n_anchors)


def adopter_candidates(graph: HeteroGraph, cascade: Cascade, fold: Fold,
                       label: str = "cites") -> dict[str, int]:
    """Papers from the label window that cite a current member.

    Label 1 when the candidate joins the cascade in that window.
    """
    current = set(cascade.members_by(fold.boundary))
    window = fold.label_window
    out = {}
    for s, lab, d in graph.edges:
        if lab == label and d in current and s not in current and graph.nodes[s].year in window:
            out[s] = int(s in cascade.years and cascade.years[s] in window)
    return dict(sorted(out.items()))


def build_cascade_samples(cascades: Sequence[Cascade], series: Sequence[Sequence[MetaPathGraph]],
                          fold: Fold, anchors: AnchorSet,
                          graph: HeteroGraph | None = None) -> CascadeSampleSet:
    """Per cascade, sum member rows per step; target = members joining next window.

    Only cascades rooted by ``fold.boundary`` are sampled. Adopter labels need
    ``graph`` for the citation neighbourhood and are left empty without it.
    """
    if not cascades:
        raise ValueError("no cascades")
    steps = len(series[0])
    if steps != len(fold.steps) or any(len(s) != steps for s in series):
        raise ValueError("series steps do not match the fold")
    ids = _check_universe(_flatten(series))
    ix = {nid: i for i, nid in enumerate(ids)}
    cols = _anchor_columns(ids, anchors)
    k, f = len(series), len(anchors)
    live = [c for c in cascades if c.years[c.root] <= fold.boundary]
    feats = np.zeros((len(live), steps, k * f), dtype=np.float64)
    for kk, snaps in enumerate(series):
        for tau, (year, snap) in enumerate(zip(fold.steps, snaps)):
            dense = snap.adjacency[:, cols]
            for n, c in enumerate(live):
                rows = [ix[m] for m in c.members_by(year)]
                if rows:
                    feats[n, tau, kk * f:(kk + 1) * f] = np.asarray(dense[rows].sum(axis=0)).ravel()
    window = fold.label_window
    targets = np.array([sum(1 for y in c.years.values() if y in window) for c in live],
                       dtype=np.float64)
    adopters = [adopter_candidates(graph, c, fold) if graph is not None else {} for c in live]
    return CascadeSampleSet([c.root for c in live], feats, targets, adopters, k, f)
