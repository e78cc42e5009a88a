"""Disease-graph construction and symmetric normalization tests."""

import json
import math
import pathlib

import numpy as np
import pytest

from kgreport.kgraph import (
    DEFAULT_REGION_TABLE, ENTITY_NAMES, GraphFileError, KnowledgeGraph,
    build_chexpert_graph, load_graph_file, normalize_adjacency,
)

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


def normalize_oracle(a):
    """Independent dense-loop D^{-1/2} A D^{-1/2}."""
    n = a.shape[0]
    deg = [sum(a[i]) for i in range(n)]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            out[i, j] = a[i, j] / math.sqrt(deg[i] * deg[j])
    return out


class TestBuildGraph:
    def test_fourteen_nodes(self):
        g = build_chexpert_graph()
        assert len(g.entities) == 14
        assert g.adjacency.shape == (14, 14)
        assert sorted(e.index for e in g.entities) == list(range(14))
        assert len({e.name for e in g.entities}) == 14

    def test_edges_follow_region_table(self):
        g = build_chexpert_graph()
        regions = dict(DEFAULT_REGION_TABLE)
        for u in g.entities:
            for v in g.entities:
                expected = (u.index == v.index
                            or u.region == v.region
                            or "global" in (u.region, v.region))
                assert g.adjacency[u.index, v.index] == (1.0 if expected else 0.0), \
                    (u.name, v.name)
        # spot checks from the region assignment
        edema = g.entity_index("Edema")
        consolidation = g.entity_index("Consolidation")
        cardiomegaly = g.entity_index("Cardiomegaly")
        pneumothorax = g.entity_index("Pneumothorax")
        assert regions["Edema"] == regions["Consolidation"] == "lung"
        assert g.adjacency[edema, consolidation] == 1.0
        assert g.adjacency[cardiomegaly, pneumothorax] == 0.0

    def test_symmetric_with_self_loops(self):
        g = build_chexpert_graph()
        assert np.array_equal(g.adjacency, g.adjacency.T)
        assert np.all(np.diag(g.adjacency) == 1.0)
        assert np.all(g.adjacency.sum(axis=1) >= 1.0)

    def test_spectral_radius(self):
        g = build_chexpert_graph()
        eigs = np.linalg.eigvalsh(g.adjacency_norm)
        assert np.max(np.abs(eigs)) <= 1.0 + 1e-9

    def test_matches_golden_fixture(self):
        with open(FIXTURES / "golden_adjacency.json", encoding="utf-8") as fh:
            golden = json.load(fh)
        g = build_chexpert_graph()
        assert [e.name for e in g.entities] == golden["names"]
        assert [e.region for e in g.entities] == golden["regions"]
        assert g.adjacency.astype(int).tolist() == golden["adjacency"]

    def test_deterministic(self):
        a = build_chexpert_graph()
        b = build_chexpert_graph()
        assert np.array_equal(a.adjacency, b.adjacency)
        assert np.array_equal(a.adjacency_norm, b.adjacency_norm)


class TestNormalizeAdjacency:
    def test_identity(self):
        assert np.array_equal(normalize_adjacency(np.eye(4)), np.eye(4))

    def test_three_node_path(self):
        a = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 1.0], [0.0, 1.0, 1.0]])
        s6 = 1.0 / math.sqrt(6.0)
        expected = np.array([[0.5, s6, 0.0], [s6, 1.0 / 3.0, s6], [0.0, s6, 0.5]])
        assert np.allclose(normalize_adjacency(a), expected, atol=1e-12)

    def test_asymmetric_rejected(self):
        a = np.array([[1.0, 1.0], [0.0, 1.0]])
        with pytest.raises(ValueError, match="symmetric"):
            normalize_adjacency(a)

    def test_zero_degree_mentions_self_loops(self):
        a = np.zeros((3, 3))
        with pytest.raises(ValueError, match="self-loop"):
            normalize_adjacency(a)

    def test_hundred_random_graphs_match_oracle(self):
        rng = np.random.default_rng(1234)
        for _ in range(100):
            n = int(rng.integers(2, 21))
            upper = rng.random((n, n)) < 0.35
            a = np.triu(upper, 1)
            a = (a + a.T).astype(float) + np.eye(n)
            assert np.max(np.abs(normalize_adjacency(a) - normalize_oracle(a))) < 1e-12

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(99)
        for _ in range(20):
            n = int(rng.integers(3, 12))
            a = np.triu(rng.random((n, n)) < 0.4, 1)
            a = (a + a.T).astype(float) + np.eye(n)
            perm = rng.permutation(n)
            p = np.eye(n)[perm]
            lhs = normalize_adjacency(p @ a @ p.T)
            rhs = p @ normalize_adjacency(a) @ p.T
            assert np.max(np.abs(lhs - rhs)) < 1e-12


class TestGraphFile:
    def _write(self, tmp_path, text):
        path = tmp_path / "graph.txt"
        path.write_text(text, encoding="utf-8")
        return str(path)

    def _all_nodes(self):
        return "\n".join(f"node {name.replace(' ', '_')} {region}"
                         for name, region in DEFAULT_REGION_TABLE)

    def test_override_round_trip(self, tmp_path):
        text = self._all_nodes() + "\nedge Edema Pneumonia\nedge Cardiomegaly Edema\n"
        g = load_graph_file(self._write(tmp_path, text))
        assert isinstance(g, KnowledgeGraph)
        e, p, c = (g.entity_index(n) for n in ("Edema", "Pneumonia", "Cardiomegaly"))
        assert g.adjacency[e, p] == 1.0 and g.adjacency[p, e] == 1.0
        assert g.adjacency[c, e] == 1.0
        nf = g.entity_index("No Finding")
        assert g.adjacency[nf, e] == 0.0  # only explicit edges, plus self-loops
        assert np.all(np.diag(g.adjacency) == 1.0)

    def test_unknown_name_rejected(self, tmp_path):
        with pytest.raises(GraphFileError, match="unknown"):
            load_graph_file(self._write(tmp_path, "node Bogus_Label lung\n"))

    def test_duplicate_edge_rejected_either_orientation(self, tmp_path):
        text = self._all_nodes() + "\nedge Edema Pneumonia\nedge Pneumonia Edema\n"
        with pytest.raises(GraphFileError, match="already declared"):
            load_graph_file(self._write(tmp_path, text))

    def test_missing_nodes_rejected(self, tmp_path):
        with pytest.raises(GraphFileError, match="missing"):
            load_graph_file(self._write(tmp_path, "node Edema lung\n"))

    def test_unknown_region_rejected(self, tmp_path):
        with pytest.raises(GraphFileError, match="region"):
            load_graph_file(self._write(tmp_path, "node Edema belly\n"))

    def test_comments_and_blanks_ignored(self, tmp_path):
        text = "# default regions\n\n" + self._all_nodes() + "\n# no extra edges\n"
        g = load_graph_file(self._write(tmp_path, text))
        assert np.array_equal(g.adjacency, np.eye(14))


def test_entity_names_cover_canonical_set():
    assert ENTITY_NAMES == (
        "No Finding", "Enlarged Cardiomediastinum", "Cardiomegaly", "Lung Opacity",
        "Lung Lesion", "Edema", "Consolidation", "Pneumonia", "Atelectasis",
        "Pneumothorax", "Pleural Effusion", "Pleural Other", "Fracture",
        "Support Devices")
