import pytest

from hdd.hetnet import HeteroGraph, Node, bibliographic_schema


def write_tsv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(header) + "\n")
        for r in rows:
            fh.write("\t".join(str(x) for x in r) + "\n")
    return path


@pytest.fixture
def tiny_graph():
    """a1,a2 write p1 (2000); a2,a3 write p2 (2001)."""
    nodes = {
        "a1": Node("author", name="Ada"),
        "a2": Node("author", name="Bo"),
        "a3": Node("author", name="Cy"),
        "p1": Node("paper", 2000, ("graphs",)),
        "p2": Node("paper", 2001, ("graphs", "diffusion")),
    }
    edges = [("a1", "writes", "p1"), ("a2", "writes", "p1"),
             ("a2", "writes", "p2"), ("a3", "writes", "p2")]
    return HeteroGraph(bibliographic_schema(), nodes, edges)


@pytest.fixture
def tiny_files(tmp_path):
    nodes = write_tsv(tmp_path / "nodes.tsv", ["id", "type", "year", "topics", "name"], [
        ("a1", "author", "", "", "Ada"),
        ("a2", "author", "", "", "Bo"),
        ("a3", "author", "", "", "Cy"),
        ("p1", "paper", 2000, "graphs", ""),
        ("p2", "paper", 2001, "graphs|diffusion", ""),
    ])
    edges = write_tsv(tmp_path / "edges.tsv", ["src", "label", "dst"], [
        ("a1", "writes", "p1"), ("a2", "writes", "p1"),
        ("a2", "writes", "p2"), ("a3", "writes", "p2"),
    ])
    return nodes, edges


# one verdict line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
