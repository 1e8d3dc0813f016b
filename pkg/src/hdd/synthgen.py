"""Synthetic bibliographic networks with planted topic diffusion.

Every random draw comes from a Philox generator keyed by ``(rng_seed, entity)``
so the output does not depend on generation order.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .hetnet import HeteroGraph, Node, TimeWindow, bibliographic_schema


def entity_rng(seed: int, *entity) -> np.random.Generator:
    digest = hashlib.blake2b(repr(entity).encode(), digest_size=8).digest()
    key = [seed & 0xFFFFFFFFFFFFFFFF, int.from_bytes(digest, "little")]
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class SynthConfig:
    n_authors: int = 500
    years: TimeWindow = field(default_factory=lambda: TimeWindow(2000, 2007))
    papers_per_year: int = 40
    authors_per_paper: tuple = (4, 6)
    n_venues: int = 10
    topic: str = "diffusion"
    seed_fraction: float = 0.05
    threshold: int = 2
    rng_seed: int = 0
    # probability that an author slot is filled from the paper venue's home
    # community instead of uniformly; 0 gives uniform mixing
    community_bias: float = 0.5

    def __post_init__(self):
        lo, hi = self.authors_per_paper
        if self.n_authors < 1 or self.n_venues < 1 or self.papers_per_year < 0:
            raise ValueError("counts must be positive")
        if not 1 <= lo <= hi:
            raise ValueError(f"bad authors_per_paper range {self.authors_per_paper}")
        if not 0.0 <= self.seed_fraction <= 1.0:
            raise ValueError("seed_fraction must lie in [0, 1]")
        if self.threshold < 1:
            raise ValueError("threshold must be >= 1")
        if not 0.0 <= self.community_bias <= 1.0:
            raise ValueError("community_bias must lie in [0, 1]")

    @property
    def n_seeds(self) -> int:
        return int(round(self.seed_fraction * self.n_authors))


def author_id(i: int) -> str:
    return f"a{i:05d}"


def venue_id(i: int) -> str:
    return f"v{i:03d}"


def paper_id(year: int, k: int) -> str:
    return f"p{year}_{k:05d}"


def topic_paper_id(year: int, author: str) -> str:
    return f"t{year}_{author}"


def generate_hetnet(config: SynthConfig) -> HeteroGraph:
    lo, hi = config.authors_per_paper
    if hi > config.n_authors:
        raise ValueError(
            f"authors_per_paper upper bound {hi} exceeds n_authors {config.n_authors}"
        )
    nodes = {author_id(i): Node("author", name=f"Author {i}") for i in range(config.n_authors)}
    nodes.update({venue_id(i): Node("venue", name=f"Venue {i}") for i in range(config.n_venues)})
    home = np.array([int(entity_rng(config.rng_seed, "home", i).integers(config.n_venues))
                     for i in range(config.n_authors)])
    community = [np.flatnonzero(home == v) for v in range(config.n_venues)]
    edges = []
    for year in range(config.years.start_year, config.years.end_year + 1):
        for k in range(config.papers_per_year):
            rng = entity_rng(config.rng_seed, "paper", year, k)
            n = int(rng.integers(lo, hi + 1))
            v = int(rng.integers(config.n_venues))
            authors = _draw_authors(rng, n, config.n_authors, community[v], config.community_bias)
            venue = venue_id(v)
            pid = paper_id(year, k)
            nodes[pid] = Node("paper", year=year)
            edges.extend((author_id(a), "writes", pid) for a in authors)
            edges.append((pid, "published_in", venue))
            edges.extend((author_id(a), "publishes_at", venue) for a in authors)
    return HeteroGraph(bibliographic_schema(), nodes, edges)


def _draw_authors(rng, n, n_authors, local, bias) -> list[int]:
    chosen: list[int] = []
    while len(chosen) < n:
        pool = local if len(local) and rng.random() < bias else None
        a = int(rng.choice(pool)) if pool is not None else int(rng.integers(n_authors))
        if a not in chosen:
            chosen.append(a)
    return sorted(chosen)


def seed_authors(graph: HeteroGraph, config: SynthConfig) -> list[str]:
    authors = graph.ids_of_type("author")
    rng = entity_rng(config.rng_seed, "seeds")
    picks = rng.choice(len(authors), size=min(config.n_seeds, len(authors)), replace=False)
    return [authors[i] for i in sorted(picks.tolist())]


def planted_activation(graph: HeteroGraph, config: SynthConfig, seeds=None) -> dict[str, int]:
    """Year each author turns active under the threshold rule.

    Seeds (drawn from the config unless given) are active in the first year.
    An inactive author turns active in year y+1 once at least ``threshold``
    distinct co-authors (shared papers dated <= y) are active by y.
    """
    y0, y1 = config.years.start_year, config.years.end_year
    authors = graph.ids_of_type("author")
    seeds = seed_authors(graph, config) if seeds is None else sorted(seeds)
    active = {a: y0 for a in seeds}

    paper_authors: dict[str, list[str]] = {}
    for src, label, dst in graph.edges:
        if label == "writes":
            paper_authors.setdefault(dst, []).append(src)
    by_year: dict[int, list[list[str]]] = {}
    for pid, auths in paper_authors.items():
        by_year.setdefault(graph.nodes[pid].year, []).append(auths)

    coauthors: dict[str, set] = {a: set() for a in authors}
    for y in range(y0, y1):
        for auths in by_year.get(y, []):
            for a in auths:
                coauthors[a].update(b for b in auths if b != a)
        newly = [
            a for a in authors
            if a not in active
            and sum(1 for b in coauthors[a] if active.get(b, y + 1) <= y) >= config.threshold
        ]
        for a in newly:
            active[a] = y + 1
    return active


def plant_diffusion(graph: HeteroGraph, config: SynthConfig, seeds=None) -> HeteroGraph:
    """Tag the topic onto the network according to :func:`planted_activation`.

    Each activation is materialised as a single-author topic paper in the
    activation year, so tags never leak onto co-authors of shared papers.
    """
    active = planted_activation(graph, config, seeds)
    nodes = dict(graph.nodes)
    edges = list(graph.edges)
    for a in sorted(active):
        year = active[a]
        pid = topic_paper_id(year, a)
        nodes[pid] = Node("paper", year=year, topics=(config.topic.lower(),))
        edges.append((a, "writes", pid))
    return HeteroGraph(graph.schema, nodes, edges)


def planted_network(config: SynthConfig) -> HeteroGraph:
    return plant_diffusion(generate_hetnet(config), config)


@dataclass(frozen=True)
class CascadeSynthConfig:
    """Citation forest where each cascade grows at its own fixed rate."""

    n_cascades: int = 120
    years: TimeWindow = field(default_factory=lambda: TimeWindow(2000, 2009))
    max_rate: int = 4
    n_venues: int = 6
    noise_papers_per_year: int = 120
    topic: str = "cascade"
    rng_seed: int = 0


def cascade_growth(config: CascadeSynthConfig, cascade: int, year: int) -> int:
    """Scheduled number of new members of ``cascade`` in ``year`` (root year -> 1)."""
    rng = entity_rng(config.rng_seed, "rate", cascade)
    rate = int(rng.integers(0, config.max_rate + 1))
    start = config.years.start_year + int(rng.integers(0, 3))
    if year < start:
        return 0
    if year == start:
        return 1
    return rate


def generate_citation_forest(config: CascadeSynthConfig) -> HeteroGraph:
    """Topic cascades that grow on schedule plus untagged background papers.

    New members cite one uniformly drawn earlier member of their cascade.
    Background papers cite random earlier papers of any kind, so they show up
    as non-adopting citation neighbours.
    """
    topic = config.topic.lower()
    nodes = {venue_id(i): Node("venue") for i in range(config.n_venues)}
    edges = []
    members: dict[int, list[str]] = {c: [] for c in range(config.n_cascades)}
    all_papers: list[str] = []
    for year in range(config.years.start_year, config.years.end_year + 1):
        fresh = []
        for c in range(config.n_cascades):
            for k in range(cascade_growth(config, c, year)):
                rng = entity_rng(config.rng_seed, "member", c, year, k)
                pid = f"c{c:03d}_{year}_{k:02d}"
                earlier = members[c]
                if earlier:
                    target = earlier[int(rng.integers(len(earlier)))]
                    edges.append((pid, "cites", target))
                venue = venue_id(int(rng.integers(config.n_venues)))
                nodes[pid] = Node("paper", year=year, topics=(topic,))
                edges.append((pid, "published_in", venue))
                fresh.append((c, pid))
        for k in range(config.noise_papers_per_year):
            rng = entity_rng(config.rng_seed, "noise", year, k)
            pid = f"n{year}_{k:03d}"
            nodes[pid] = Node("paper", year=year)
            if all_papers:
                target = all_papers[int(rng.integers(len(all_papers)))]
                edges.append((pid, "cites", target))
            edges.append((pid, "published_in", venue_id(int(rng.integers(config.n_venues)))))
            fresh.append((None, pid))
        for c, pid in fresh:
            if c is not None:
                members[c].append(pid)
            all_papers.append(pid)
    return HeteroGraph(bibliographic_schema(), nodes, edges)
