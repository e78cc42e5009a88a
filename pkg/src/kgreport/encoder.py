"""Regional feature extraction and graph-guided disease feature distillation.

A toy trainable patch encoder stands in for a pretrained vision backbone:
patch vectors are linearly projected and given learned position embeddings.
Disease node features are seeded by cross-attending entity-name embeddings
over the regional features, then refined by a stack of residual graph
convolution layers driven by the normalized disease-graph adjacency.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .kgraph import KnowledgeGraph


class MhaBlock:
    """Multi-head attention with per-head projections and no biases.

    Queries come from ``q_dim`` inputs, keys/values from ``kv_dim`` inputs;
    the concatenated heads are mixed by an output projection into ``out_dim``.
    """

    def __init__(self, rng: np.random.Generator, heads: int, model_dim: int,
                 q_dim: int | None = None, kv_dim: int | None = None,
                 out_dim: int | None = None, dtype=np.float64):
        if model_dim % heads != 0:
            raise ValueError(f"heads {heads} must divide model dim {model_dim}")
        self.heads = heads
        self.head_dim = model_dim // heads
        q_dim = q_dim or model_dim
        kv_dim = kv_dim or model_dim
        out_dim = out_dim or model_dim
        self.w_q = [ad.init_uniform(rng, (q_dim, self.head_dim), q_dim, dtype)
                    for _ in range(heads)]
        self.w_k = [ad.init_uniform(rng, (kv_dim, self.head_dim), kv_dim, dtype)
                    for _ in range(heads)]
        self.w_v = [ad.init_uniform(rng, (kv_dim, self.head_dim), kv_dim, dtype)
                    for _ in range(heads)]
        self.w_o = ad.init_uniform(rng, (heads * self.head_dim, out_dim),
                                   heads * self.head_dim, dtype)

    def attend(self, queries: Tensor, keys_values: Tensor,
               mask: Tensor | None = None) -> tuple[Tensor, list[Tensor]]:
        """Return (output, per-head attention weights)."""
        scale = 1.0 / math.sqrt(self.head_dim)
        outs, weights = [], []
        for h in range(self.heads):
            q = ad.matmul(queries, self.w_q[h])
            k = ad.matmul(keys_values, self.w_k[h])
            v = ad.matmul(keys_values, self.w_v[h])
            scores = ad.scale(ad.matmul(q, k.T), scale)
            if mask is not None:
                scores = ad.add(scores, mask)
            attn = ad.softmax(scores, axis=1)
            weights.append(attn)
            outs.append(ad.matmul(attn, v))
        return ad.matmul(ad.concat_all(outs, axis=1), self.w_o), weights

    def __call__(self, queries: Tensor, keys_values: Tensor,
                 mask: Tensor | None = None) -> Tensor:
        out, _ = self.attend(queries, keys_values, mask)
        return out

    def named_parameters(self, prefix: str = ""):
        for h in range(self.heads):
            yield f"{prefix}wq.{h}", self.w_q[h]
            yield f"{prefix}wk.{h}", self.w_k[h]
            yield f"{prefix}wv.{h}", self.w_v[h]
        yield f"{prefix}wo", self.w_o


class VisualEncoder:
    """Patch projection plus learned position embeddings (toy backbone)."""

    def __init__(self, rng: np.random.Generator, n_patches: int, patch_dim: int,
                 feature_dim: int, dtype=np.float64):
        self.n_patches = n_patches
        self.patch_dim = patch_dim
        self.feature_dim = feature_dim
        self.w_patch = ad.init_uniform(rng, (patch_dim, feature_dim), patch_dim, dtype)
        self.positions = ad.init_uniform(rng, (n_patches, feature_dim), feature_dim, dtype)

    def __call__(self, patches: Tensor) -> Tensor:
        if patches.shape != (self.n_patches, self.patch_dim):
            raise ad.ShapeError(
                f"expected image of {self.n_patches}x{self.patch_dim} patches, "
                f"got {patches.shape}")
        return ad.add(ad.matmul(patches, self.w_patch), self.positions)

    def named_parameters(self, prefix: str = ""):
        yield f"{prefix}w_patch", self.w_patch
        yield f"{prefix}positions", self.positions


class GcnLayer:
    """One residual graph convolution layer with two LN+GELU phases."""

    def __init__(self, rng: np.random.Generator, dim: int, dtype=np.float64):
        self.dim = dim
        self.w = ad.init_uniform(rng, (dim, dim), dim, dtype)
        self.w_update = ad.init_uniform(rng, (dim, dim), dim, dtype)
        one = np.ones(dim, dtype=dtype)
        zero = np.zeros(dim, dtype=dtype)
        self.ln1_gamma = Tensor(one.copy(), requires_grad=True)
        self.ln1_beta = Tensor(zero.copy(), requires_grad=True)
        self.ln2_gamma = Tensor(one.copy(), requires_grad=True)
        self.ln2_beta = Tensor(zero.copy(), requires_grad=True)

    def phase1(self, nodes: Tensor, a_norm: Tensor) -> Tensor:
        """Propagation phase: aggregate transformed features over the graph."""
        propagated = ad.matmul(a_norm, ad.matmul(nodes, self.w))
        return ad.gelu(ad.layer_norm(propagated, self.ln1_gamma, self.ln1_beta))

    def __call__(self, nodes: Tensor, a_norm: Tensor) -> Tensor:
        if nodes.shape[1] != self.dim:
            raise ad.ShapeError(f"node features {nodes.shape} do not match layer dim {self.dim}")
        mixed = ad.add(nodes, self.phase1(nodes, a_norm))
        updated = ad.add(ad.matmul(mixed, self.w_update), nodes)
        return ad.gelu(ad.layer_norm(updated, self.ln2_gamma, self.ln2_beta))

    def named_parameters(self, prefix: str = ""):
        yield f"{prefix}w", self.w
        yield f"{prefix}w_update", self.w_update
        yield f"{prefix}ln1_gamma", self.ln1_gamma
        yield f"{prefix}ln1_beta", self.ln1_beta
        yield f"{prefix}ln2_gamma", self.ln2_gamma
        yield f"{prefix}ln2_beta", self.ln2_beta


class EntityEmbeddings:
    """Entity name embeddings tied to the decoder word-embedding table.

    Each entity vector is the mean of the embedding rows of its name's
    tokens, recomputed from the live table on every call.
    """

    def __init__(self, name_token_ids: Sequence[Sequence[int]], dtype=np.float64):
        if any(len(ids) == 0 for ids in name_token_ids):
            raise ValueError("every entity name must tokenize to at least one id")
        self.n_entities = len(name_token_ids)
        flat: list[int] = []
        avg = np.zeros((self.n_entities, sum(len(ids) for ids in name_token_ids)),
                       dtype=dtype)
        col = 0
        for row, ids in enumerate(name_token_ids):
            for tok in ids:
                flat.append(tok)
                avg[row, col] = 1.0 / len(ids)
                col += 1
        self.token_ids = flat
        self.averager = Tensor(avg)

    def __call__(self, embedding_table: Tensor) -> Tensor:
        rows = ad.gather_rows(embedding_table, self.token_ids)
        return ad.matmul(self.averager, rows)


# --- spec-level operations -------------------------------------------------

def visual_encode(encoder: VisualEncoder, patches: Tensor) -> Tensor:
    return encoder(patches)


def node_init(entity_emb: Tensor, regional: Tensor, mha: MhaBlock) -> Tensor:
    """Seed graph nodes by querying regional features with entity embeddings."""
    return mha(entity_emb, regional)


def gcn_layer(nodes: Tensor, a_norm: Tensor, layer: GcnLayer) -> Tensor:
    return layer(nodes, a_norm)


def distill(regional: Tensor, entity_emb: Tensor, graph: KnowledgeGraph,
            layers: Sequence[GcnLayer], mha: MhaBlock,
            allow_nonstandard_depth: bool = False,
            a_norm: Tensor | None = None) -> Tensor:
    """Full disease-feature path: node init followed by the GCN stack."""
    if len(layers) != 3 and not allow_nonstandard_depth:
        raise ValueError(
            f"distill expects exactly 3 graph layers, got {len(layers)}; "
            "pass allow_nonstandard_depth=True to override")
    if a_norm is None:
        a_norm = Tensor(graph.adjacency_norm.astype(regional.dtype))
    nodes = node_init(entity_emb, regional, mha)
    for layer in layers:
        nodes = gcn_layer(nodes, a_norm, layer)
    return nodes
