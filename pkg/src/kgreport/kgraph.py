"""Fixed 14-node chest-disease graph and its symmetric normalization.

The entity list is the standard CheXpert-14 label set.  Edges connect every
pair of labels within the same anatomical region; the three "global" labels
connect to everything.  Self-loops are always present so no node loses its
own features during propagation.  An override file can replace the default
region table and edge set without code changes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

REGIONS = ("lung", "heart", "pleura", "global")

# Canonical label -> region table.  Order fixes the node indices.
DEFAULT_REGION_TABLE: tuple[tuple[str, str], ...] = (
    ("No Finding", "global"),
    ("Enlarged Cardiomediastinum", "heart"),
    ("Cardiomegaly", "heart"),
    ("Lung Opacity", "lung"),
    ("Lung Lesion", "lung"),
    ("Edema", "lung"),
    ("Consolidation", "lung"),
    ("Pneumonia", "lung"),
    ("Atelectasis", "lung"),
    ("Pneumothorax", "lung"),
    ("Pleural Effusion", "pleura"),
    ("Pleural Other", "pleura"),
    ("Fracture", "global"),
    ("Support Devices", "global"),
)

ENTITY_NAMES = tuple(name for name, _ in DEFAULT_REGION_TABLE)
N_ENTITIES = len(ENTITY_NAMES)


@dataclass(frozen=True)
class DiseaseEntity:
    name: str
    region: str
    index: int


@dataclass(frozen=True)
class KnowledgeGraph:
    """Immutable graph: entities, binary adjacency A, normalized A_norm."""

    entities: tuple[DiseaseEntity, ...]
    adjacency: np.ndarray
    adjacency_norm: np.ndarray

    def entity_index(self, name: str) -> int:
        for e in self.entities:
            if e.name == name:
                return e.index
        raise KeyError(f"unknown disease entity: {name!r}")


def normalize_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """Exact D^{-1/2} A D^{-1/2} with D the diagonal of row sums."""
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {a.shape}")
    if not np.array_equal(a, a.T):
        raise ValueError("adjacency must be symmetric")
    if np.any(a < 0):
        raise ValueError("adjacency must be nonnegative")
    degrees = a.sum(axis=1)
    if np.any(degrees <= 0):
        raise ValueError(
            "adjacency has a zero-degree row; add self-loops before normalizing")
    d_inv_sqrt = 1.0 / np.sqrt(degrees)
    return a * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]


def _graph_from_table(region_of: dict[str, str],
                      edges: set[frozenset[str]] | None) -> KnowledgeGraph:
    entities = tuple(DiseaseEntity(name, region_of[name], i)
                     for i, name in enumerate(ENTITY_NAMES))
    idx = {e.name: e.index for e in entities}
    a = np.eye(N_ENTITIES)
    if edges is None:
        # default rule: intra-region cliques, global nodes attach to all
        for u in entities:
            for v in entities:
                if u.index >= v.index:
                    continue
                if u.region == v.region or "global" in (u.region, v.region):
                    a[u.index, v.index] = a[v.index, u.index] = 1.0
    else:
        for pair in edges:
            u, v = sorted(pair)
            a[idx[u], idx[v]] = a[idx[v], idx[u]] = 1.0
    return KnowledgeGraph(entities, a, normalize_adjacency(a))


def build_chexpert_graph() -> KnowledgeGraph:
    """Deterministic default graph over the CheXpert-14 labels."""
    return _graph_from_table(dict(DEFAULT_REGION_TABLE), edges=None)


class GraphFileError(ValueError):
    """Malformed graph override file."""


def _decode_name(token: str) -> str:
    return token.replace("_", " ")


def load_graph_file(path: str) -> KnowledgeGraph:
    """Build a graph from an override file.

    Format: one directive per line, ``#`` comments allowed.
      node <Name_With_Underscores> <region>
      edge <Name> <Name>
    All 14 canonical labels must be declared exactly once; edges may only
    reference declared labels, are undirected, and may not repeat in either
    orientation.  Self-loops are implicit.
    """
    region_of: dict[str, str] = {}
    edges: set[frozenset[str]] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] == "node" and len(parts) == 3:
                name, region = _decode_name(parts[1]), parts[2]
                if name not in ENTITY_NAMES:
                    raise GraphFileError(f"line {lineno}: unknown node name {name!r}")
                if region not in REGIONS:
                    raise GraphFileError(f"line {lineno}: unknown region {region!r}")
                if name in region_of:
                    raise GraphFileError(f"line {lineno}: duplicate node {name!r}")
                region_of[name] = region
            elif parts[0] == "edge" and len(parts) == 3:
                u, v = _decode_name(parts[1]), _decode_name(parts[2])
                for name in (u, v):
                    if name not in ENTITY_NAMES:
                        raise GraphFileError(f"line {lineno}: unknown edge endpoint {name!r}")
                if u == v:
                    raise GraphFileError(f"line {lineno}: explicit self-loop {u!r}")
                pair = frozenset((u, v))
                if pair in edges:
                    raise GraphFileError(
                        f"line {lineno}: edge {u!r} -- {v!r} already declared")
                edges.add(pair)
            else:
                raise GraphFileError(f"line {lineno}: cannot parse {line!r}")
    missing = [n for n in ENTITY_NAMES if n not in region_of]
    if missing:
        raise GraphFileError(f"missing node declarations: {missing}")
    return _graph_from_table(region_of, edges)
