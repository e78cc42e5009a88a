"""Feature fusion: alignment attention plus three combination strategies.

Disease features are first re-expressed on the regional-feature grid by a
multi-head attention block (regional features query the disease features).
The two aligned streams are then combined by one of

* ``element``  -- per-coordinate convex blend under a learned sigmoid gate,
* ``modality`` -- two expert networks weighted by a softmax router that
                  treats each stream as a single unit,
* ``average``  -- plain mean (ablation arm),
* ``none``     -- pass the regional stream through unchanged (baseline arm).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import MhaBlock

FUSION_STRATEGIES = ("element", "modality", "average", "none")


def align(regional: Tensor, disease: Tensor, mha: MhaBlock) -> Tensor:
    """Attend disease features onto the regional grid (queries = regional)."""
    return mha(regional, disease)


class GateFusion:
    """Learned elementwise gate over the concatenated streams."""

    def __init__(self, rng: np.random.Generator, feature_dim: int, dtype=np.float64):
        self.feature_dim = feature_dim
        self.w_gate = ad.init_uniform(rng, (2 * feature_dim, feature_dim),
                                      2 * feature_dim, dtype)

    def gate(self, regional: Tensor, aligned: Tensor) -> Tensor:
        joined = ad.concat(regional, aligned, axis=1)
        return ad.sigmoid(ad.matmul(joined, self.w_gate))

    def named_parameters(self, prefix: str = ""):
        yield f"{prefix}w_gate", self.w_gate


def element_fuse(regional: Tensor, aligned: Tensor, gf: GateFusion) -> Tensor:
    """gate (.) regional + (1 - gate) (.) aligned, gate in (0,1) elementwise."""
    if regional.shape != aligned.shape:
        raise ad.ShapeError(
            f"element_fuse: streams {regional.shape} and {aligned.shape} differ")
    g = gf.gate(regional, aligned)
    ones = Tensor(np.ones(g.shape, dtype=g.dtype.type))
    return ad.add(ad.mul(g, regional), ad.mul(ad.sub(ones, g), aligned))


class _Expert:
    """Linear map followed by layer normalization."""

    def __init__(self, rng: np.random.Generator, dim: int, dtype=np.float64):
        self.w = ad.init_uniform(rng, (dim, dim), dim, dtype)
        self.ln_gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.ln_beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(ad.matmul(x, self.w), self.ln_gamma, self.ln_beta)

    def named_parameters(self, prefix: str = ""):
        yield f"{prefix}w", self.w
        yield f"{prefix}ln_gamma", self.ln_gamma
        yield f"{prefix}ln_beta", self.ln_beta


class MoeFusion:
    """Two experts plus a soft router producing one weight pair per image.

    The router mean-pools each stream over positions, concatenates the two
    pooled vectors and runs a small MLP; softmax turns the two logits into
    probabilities g1 + g2 = 1.
    """

    def __init__(self, rng: np.random.Generator, feature_dim: int, dtype=np.float64):
        self.feature_dim = feature_dim
        self.expert_regional = _Expert(rng, feature_dim, dtype)
        self.expert_disease = _Expert(rng, feature_dim, dtype)
        self.router_w1 = ad.init_uniform(rng, (2 * feature_dim, feature_dim),
                                         2 * feature_dim, dtype)
        self.router_b1 = Tensor(np.zeros(feature_dim, dtype=dtype), requires_grad=True)
        self.router_w2 = ad.init_uniform(rng, (feature_dim, 2), feature_dim, dtype)
        self.router_b2 = Tensor(np.zeros(2, dtype=dtype), requires_grad=True)

    def router(self, regional: Tensor, aligned: Tensor) -> Tensor:
        pooled = ad.concat(ad.mean_rows(regional), ad.mean_rows(aligned), axis=1)
        hidden = ad.gelu(ad.add_bias(ad.matmul(pooled, self.router_w1), self.router_b1))
        logits = ad.add_bias(ad.matmul(hidden, self.router_w2), self.router_b2)
        return ad.softmax(logits, axis=1)

    def named_parameters(self, prefix: str = ""):
        yield from self.expert_regional.named_parameters(f"{prefix}expert1.")
        yield from self.expert_disease.named_parameters(f"{prefix}expert2.")
        yield f"{prefix}router_w1", self.router_w1
        yield f"{prefix}router_b1", self.router_b1
        yield f"{prefix}router_w2", self.router_w2
        yield f"{prefix}router_b2", self.router_b2


def modality_fuse(regional: Tensor, aligned: Tensor, mf: MoeFusion,
                  gates: tuple[float, float] | None = None) -> Tensor:
    """g1 * E1(regional) + g2 * E2(aligned); router weights sum to one.

    ``gates`` overrides the router with fixed weights (expert-isolation
    checks and probing).
    """
    if regional.shape != aligned.shape:
        raise ad.ShapeError(
            f"modality_fuse: streams {regional.shape} and {aligned.shape} differ")
    out1 = mf.expert_regional(regional)
    out2 = mf.expert_disease(aligned)
    if gates is not None:
        g1, g2 = gates
        return ad.add(ad.scale(out1, g1), ad.scale(out2, g2))
    weights = mf.router(regional, aligned)
    g1 = ad.index(weights, 0, 0)
    g2 = ad.index(weights, 0, 1)
    return ad.add(ad.scale_by(out1, g1), ad.scale_by(out2, g2))


def average_fuse(regional: Tensor, aligned: Tensor) -> Tensor:
    if regional.shape != aligned.shape:
        raise ad.ShapeError(
            f"average_fuse: streams {regional.shape} and {aligned.shape} differ")
    return ad.scale(ad.add(regional, aligned), 0.5)
