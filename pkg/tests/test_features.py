import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdd.features import (
    ActivationTable,
    AnchorSet,
    Fold,
    SampleSet,
    activation_table,
    adopter_candidates,
    build_anchor_set,
    build_cascade_samples,
    build_diffusion_samples,
    extract_cascades,
    make_split,
    topic_matches,
)
from hdd.hetnet import HeteroGraph, Node, TimeWindow, bibliographic_schema
from hdd.metapath import parse_metapath, snapshot_series, step_windows
from hdd.synthgen import CascadeSynthConfig, SynthConfig, cascade_growth, generate_citation_forest, planted_network

SCHEMA = bibliographic_schema()


def citation_graph(papers, cites, topic="t"):
    """papers: id -> year (all on ``topic``); cites: (citing, cited) pairs."""
    nodes = {p: Node("paper", y, (topic,)) for p, y in papers.items()}
    return HeteroGraph(SCHEMA, nodes, [(a, "cites", b) for a, b in cites])


def series_for(graph, names, fold, origin):
    specs = [parse_metapath(n, SCHEMA) for n in names]
    return [snapshot_series(graph, s, step_windows(fold.steps, origin)) for s in specs]


# -- activation ---------------------------------------------------------------------
@pytest.mark.parametrize("topic, topics, hit", [
    ("diffusion", ("Diffusion",), True),
    ("diffusion", ("topic diffusion models",), True),
    ("diffusion", ("diffusions",), False),
    ("deep learning", ("deep reinforcement learning",), False),
    ("deep learning", ("on Deep-Learning",), True),
    ("réseaux", ("Les Réseaux",), True),
    ("x", (), False),
])
def test_topic_matching(topic, topics, hit):
    assert topic_matches(topic, topics) is hit


def test_activation_is_min_topic_year():
    nodes = {"a": Node("author"), "b": Node("author"),
             "p1": Node("paper", 2001, ("t",)), "p2": Node("paper", 2003, ("t",)), "p3": Node("paper", 2000)}
    g = HeteroGraph(SCHEMA, nodes, [("a", "writes", "p2"), ("a", "writes", "p1"), ("b", "writes", "p3")])
    table = activation_table(g, "T")
    assert table.first_active_year == {"a": 2001}
    assert table.active("a", 2001) and not table.active("a", 2000) and not table.active("b", 2010)
    with pytest.raises(ValueError):
        activation_table(g, "  ")


def test_paper_activation_uses_own_year():
    g = citation_graph({"p1": 2000, "p2": 2002}, [("p2", "p1")])
    assert activation_table(g, "t", node_type="paper").first_active_year == {"p1": 2000, "p2": 2002}


# -- splits -----------------------------------------------------------------------
def test_split_windows():
    train, test = make_split(2003, 4)
    assert train.features == TimeWindow(1999, 2002) and train.label_window == TimeWindow(2003, 2003)
    assert test.features == TimeWindow(2000, 2003) and test.label_window == TimeWindow(2004, 2004)
    assert train.boundary == 2002 and len(test.steps) == 4


def test_split_single_step():
    train, test = make_split(2003, 1)
    assert train.steps == [2002] and test.steps == [2003]


def test_split_precondition():
    with pytest.raises(ValueError):
        make_split(4, 4)
    with pytest.raises(ValueError):
        make_split(2003, 4, task="ranking")


def test_cascade_split_has_extra_step():
    train, test = make_split(2006, 4, task="cascade")
    assert test.features == TimeWindow(2002, 2006) and train.features == TimeWindow(2001, 2005)


# -- anchors --------------------------------------------------------------------------
def star_graph(order):
    """a0 co-writes with everyone; only a0 is active."""
    nodes = {}
    for i in order:
        nodes[f"a{i}"] = Node("author")
    edges = []
    for i in range(1, 5):
        nodes[f"p{i}"] = Node("paper", 2000, ("t",) if i == 1 else ())
        edges += [("a0", "writes", f"p{i}"), (f"a{i}", "writes", f"p{i}")]
    edges.append(("a1", "writes", "p2"))
    edges.append(("a0", "writes", "p4"))
    return HeteroGraph(SCHEMA, nodes, edges)


def test_anchor_cap_keeps_active_hub_first():
    g = star_graph(range(5))
    table = ActivationTable("t", {"a0": 2000})
    snaps = snapshot_series(g, parse_metapath("APA", SCHEMA), [TimeWindow(2000, 2000)])
    assert build_anchor_set(table, [snaps], cap=2).ids == ("a0", "a1")
    assert build_anchor_set(table, [snaps], cap=100).ids == ("a0", "a1", "a2", "a4", "a3")


def test_anchor_order_independent_of_insertion():
    t = ActivationTable("t", {"a0": 2000})
    spec = parse_metapath("APA", SCHEMA)
    a = build_anchor_set(t, snapshot_series(star_graph(range(5)), spec, [TimeWindow(2000, 2000)]))
    b = build_anchor_set(t, snapshot_series(star_graph([3, 1, 4, 0, 2]), spec, [TimeWindow(2000, 2000)]))
    assert a == b


def test_anchor_as_of_hides_later_activations():
    g = star_graph(range(5))
    snaps = snapshot_series(g, parse_metapath("APA", SCHEMA), [TimeWindow(2000, 2000)])
    t = ActivationTable("t", {"a3": 2005})
    assert build_anchor_set(t, snaps, cap=1).ids == ("a3",)
    assert build_anchor_set(t, snaps, cap=1, as_of=2004).ids == ("a0",)


# -- diffusion samples ------------------------------------------------------------------
@pytest.fixture(scope="module")
def planted():
    cfg = SynthConfig(n_authors=200, papers_per_year=25)
    g = planted_network(cfg)
    return cfg, g, activation_table(g, cfg.topic)


def fold_samples(g, table, fold, names=("APA", "APAPA"), cap=1024):
    series = series_for(g, names, fold, 2000)
    anchors = build_anchor_set(table, series, cap, as_of=fold.boundary)
    return series, anchors, build_diffusion_samples(series, table, fold, anchors)


def test_samples_shape_and_seed_exclusion(planted):
    _, g, table = planted
    train, _ = make_split(2005, 4)
    _, anchors, s = fold_samples(g, table, train)
    assert s.features.shape == (len(s), 4, 2 * len(anchors))
    assert not any(table.active(n, train.boundary) for n in s.node_ids)
    assert s.node_ids == sorted(s.node_ids)
    assert (s.features >= 0).all() and (s.features == np.round(s.features)).all()


def test_label_count_matches_table(planted):
    _, g, table = planted
    for t in (2004, 2005, 2006):
        _, test = make_split(t, 4)
        _, _, s = fold_samples(g, table, test)
        expect = {a for a, y in table.first_active_year.items() if t < y <= t + 1}
        assert s.labels.sum() == len(expect & set(s.node_ids))


def test_positive_samples_see_two_active_coauthors(planted):
    cfg, g, table = planted
    for t in (2004, 2005, 2006):
        train, _ = make_split(t, 4)
        _, anchors, s = fold_samples(g, table, train, names=("APA",))
        active_cols = [i for i, a in enumerate(anchors.ids) if table.active(a, train.boundary)]
        last = s.features[:, -1, :]
        for row, y in zip(last, s.labels):
            if y == 1:
                assert (row[active_cols] > 0).sum() >= cfg.threshold


def test_duplicate_series_repeat_blocks(planted):
    _, g, table = planted
    train, _ = make_split(2005, 4)
    series = series_for(g, ["APA"], train, 2000)
    anchors = build_anchor_set(table, series)
    one = build_diffusion_samples(series, table, train, anchors)
    two = build_diffusion_samples(series + series, table, train, anchors)
    assert (two.features == np.concatenate([one.features, one.features], axis=2)).all()


def test_isolated_node_has_zero_features():
    nodes = {"a0": Node("author"), "a1": Node("author"), "a2": Node("author"), "p": Node("paper", 2000)}
    g = HeteroGraph(SCHEMA, nodes, [("a0", "writes", "p"), ("a1", "writes", "p")])
    fold = Fold(TimeWindow(2000, 2001))
    series = series_for(g, ["APA"], fold, 2000)
    s = build_diffusion_samples(series, ActivationTable("t", {}), fold, build_anchor_set(ActivationTable("t", {}), series))
    assert not s.features[s.node_ids.index("a2")].any()
    assert s.features[s.node_ids.index("a0")].any()


def test_inconsistent_universe_rejected(tiny_graph, planted):
    _, g, table = planted
    fold = Fold(TimeWindow(2000, 2000))
    a = series_for(tiny_graph, ["APA"], fold, 2000)
    b = series_for(g, ["APA"], fold, 2000)
    with pytest.raises(ValueError, match="inconsistent"):
        build_diffusion_samples(a + b, table, fold, AnchorSet(("a1",)))


def test_serialization_roundtrip_and_bytes(planted, tmp_path):
    _, g, table = planted
    train, _ = make_split(2005, 4)
    s = fold_samples(g, table, train)[2]
    s.save(tmp_path / "a")
    fold_samples(g, table, train)[2].save(tmp_path / "b")
    for f in ("features.bin", "labels.tsv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    raw = (tmp_path / "a" / "features.bin").read_bytes()
    assert raw[:4] == b"HDDF"
    back = SampleSet.load(tmp_path / "a")
    assert back.node_ids == s.node_ids and (back.features == s.features).all() and (back.labels == s.labels).all()
    assert "label" not in raw.decode("latin-1")


# -- cascades ---------------------------------------------------------------------------
CHAIN_YEARS = {"P1": 2000, "P2": 2001, "P3": 2001, "P4": 2002, "P5": 2004}
CHAIN_CITES = [("P2", "P1"), ("P3", "P1"), ("P4", "P3"), ("P5", "P4")]


def test_five_paper_chain_hops():
    (c,) = extract_cascades(citation_graph(CHAIN_YEARS, CHAIN_CITES), "t")
    assert c.root == "P1"
    assert c.as_tuples() == [("P1", 0), ("P1", "P2", 1), ("P1", "P3", 1), ("P3", "P4", 1), ("P4", "P5", 2)]


def test_no_citations_gives_singletons():
    cs = extract_cascades(citation_graph({"a": 2000, "b": 2001}, []), "t")
    assert [c.as_tuples() for c in cs] == [[("a", 0)], [("b", 0)]]


def test_cycle_terminates():
    g = citation_graph({"a": 2000, "b": 2000, "c": 2000}, [("a", "b"), ("b", "c"), ("c", "a")])
    (c,) = extract_cascades(g, "t")
    assert sorted(c.members) == ["a", "b", "c"] and len(c.hops) == 4


def test_untagged_papers_are_ignored():
    g = citation_graph(CHAIN_YEARS, CHAIN_CITES)
    nodes = dict(g.nodes)
    nodes["N"] = Node("paper", 2002)
    g = HeteroGraph(SCHEMA, nodes, list(g.edges) + [("N", "cites", "P1"), ("P5", "cites", "N")])
    (c,) = extract_cascades(g, "t")
    assert "N" not in c.members


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_hop_count_equals_reachable_citation_edges(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 25))
    papers = {f"p{i}": int(rng.integers(2000, 2004)) for i in range(n)}
    cites = [(f"p{int(rng.integers(n))}", f"p{int(rng.integers(n))}") for _ in range(int(rng.integers(0, 2 * n)))]
    g = citation_graph(papers, cites)
    # forward-in-time, non-self citations form the cascade relation
    rel = {(a, b) for a, b in cites if a != b and papers[a] >= papers[b]}
    covered = set()
    for c in extract_cascades(g, "t"):
        reach, frontier = {c.root}, [c.root]
        while frontier:
            u = frontier.pop()
            for a, b in rel:
                if b == u and a not in reach:
                    reach.add(a)
                    frontier.append(a)
        assert set(c.members) == reach
        assert len(c.hops) - 1 == sum(1 for a, b in rel if b in reach)
        assert all(h.elapsed >= 0 for h in c.hops)
        covered |= reach
    assert covered == set(papers)


def cascade_fold(g, fold, anchors_cap=1024):
    table = activation_table(g, "t", node_type="paper")
    series = series_for(g, ["PCP", "PVP"], fold, 2000)
    return series, build_anchor_set(table, series, anchors_cap, as_of=fold.boundary)


def test_stagnant_cascade():
    g = citation_graph({"r": 2000, "m": 2001}, [("m", "r")])
    fold = Fold(TimeWindow(2000, 2002))
    series, anchors = cascade_fold(g, fold)
    s = build_cascade_samples(extract_cascades(g, "t"), series, fold, anchors, g)
    assert s.targets.tolist() == [0.0] and s.adopter_labels == [{}]


def test_root_with_three_next_year_citers():
    papers = {"r": 2000, "x1": 2003, "x2": 2003, "x3": 2003}
    g = citation_graph(papers, [("x1", "r"), ("x2", "r"), ("x3", "r")])
    nodes = dict(g.nodes)
    nodes["n"] = Node("paper", 2003)
    g = HeteroGraph(SCHEMA, nodes, list(g.edges) + [("n", "cites", "r")])
    fold = Fold(TimeWindow(2000, 2002))
    series, anchors = cascade_fold(g, fold)
    s = build_cascade_samples(extract_cascades(g, "t"), series, fold, anchors, g)
    assert s.cascade_ids == ["r"] and s.targets.tolist() == [3.0]
    assert s.adopter_labels == [{"n": 0, "x1": 1, "x2": 1, "x3": 1}]


def test_synthetic_targets_follow_schedule():
    cfg = CascadeSynthConfig(n_cascades=15, noise_papers_per_year=10)
    g = generate_citation_forest(cfg)
    cascades = extract_cascades(g, cfg.topic)
    table = activation_table(g, cfg.topic, node_type="paper")
    for t in (2005, 2007):
        _, test = make_split(t, 4, task="cascade")
        series = series_for(g, ["PCP", "PVP"], test, 2000)
        s = build_cascade_samples(cascades, series, test, build_anchor_set(table, series, as_of=test.boundary), g)
        for root, target in zip(s.cascade_ids, s.targets):
            c = int(root[1:4])
            assert target == cascade_growth(cfg, c, t + 1)
        for adopters in s.adopter_labels:
            assert all(cand not in s.cascade_ids for cand in adopters)
    assert adopter_candidates(g, cascades[0], test) == s.adopter_labels[0]
