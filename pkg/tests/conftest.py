from __future__ import annotations

import numpy as np
import pytest

from rumex.graph import ModalitySchema, MsgGraph

SCHEMA2 = ModalitySchema(["user", "tweet"], {"user": 2, "tweet": 3})


def build(schema, nodes, edges, edge_feat=None):
    """``nodes``: (id, modality, features); ``edges``: (u, v) pairs."""
    g = MsgGraph(schema)
    for nid, mod, feat in nodes:
        g.add_node(nid, mod, feat)
    for u, v in edges:
        a, b = g.modality(u), g.modality(v)
        dim = schema.edge_dim(a, b)
        g.add_edge(u, v, edge_feat(u, v) if edge_feat else np.zeros(dim))
    return g


def random_graph(schema, n, p, seed, connected=False):
    rng = np.random.default_rng(seed)
    mods = schema.node_modalities
    g = MsgGraph(schema)
    for i in range(n):
        m = mods[int(rng.integers(len(mods)))]
        g.add_node(f"v{i}", m, rng.normal(size=schema.node_dim(m)))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p or (connected and j == i + 1):
                a, b = g.modality(f"v{i}"), g.modality(f"v{j}")
                g.add_edge(f"v{i}", f"v{j}", rng.normal(size=schema.edge_dim(a, b)))
    return g


@pytest.fixture
def schema2():
    return SCHEMA2


@pytest.fixture
def path3(schema2):
    return build(
        schema2,
        [("a", "user", [1, 0]), ("b", "tweet", [0, 1, 0]), ("c", "user", [0, 1])],
        [("a", "b"), ("b", "c")],
    )


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
