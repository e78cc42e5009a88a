"""Gradient verification suite: every op, then the fully composed model.

All checks run in float64.  The composed check wires the real components
(patch encoder -> node init -> three graph layers -> alignment -> expert
fusion -> prompted decoder -> report loss) at tiny dimensions and probes
every parameter coordinate with central differences.
"""

from __future__ import annotations

import time

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor, grad_check, sum_all
from ..encoder import EntityEmbeddings, GcnLayer, MhaBlock, VisualEncoder
from ..fusion import MoeFusion, align, modality_fuse
from ..generator import PromptSequence, ToyDecoder, decoder_forward, report_loss
from ..kgraph import build_chexpert_graph

TOLERANCE = 1e-4


def _rand(seed, *shape, grad=True):
    data = np.random.default_rng(seed).uniform(-2, 2, size=shape)
    return Tensor(data, requires_grad=grad)


def _readout(seed, *shape):
    return Tensor(np.random.default_rng(seed).normal(size=shape))


def op_checks() -> dict[str, float]:
    """Max relative finite-difference error per primitive op."""
    w = _readout(1000, 3, 4)
    w64 = _readout(1001, 4, 6)
    checks = {
        "add": (lambda a, b: sum_all(ad.mul(ad.add(a, b), w)),
                [_rand(1, 3, 4), _rand(2, 3, 4)]),
        "sub": (lambda a, b: sum_all(ad.mul(ad.sub(a, b), w)),
                [_rand(3, 3, 4), _rand(4, 3, 4)]),
        "mul": (lambda a, b: sum_all(ad.mul(ad.mul(a, b), w)),
                [_rand(5, 3, 4), _rand(6, 3, 4)]),
        "neg": (lambda a: sum_all(ad.mul(ad.neg(a), w)), [_rand(7, 3, 4)]),
        "scale": (lambda a: sum_all(ad.mul(ad.scale(a, 1.37), w)), [_rand(8, 3, 4)]),
        "scale_by": (lambda a, s: sum_all(ad.mul(ad.scale_by(a, s), w)),
                     [_rand(9, 3, 4), _rand(10, 1, 1)]),
        "add_bias": (lambda a, b: sum_all(ad.mul(ad.add_bias(a, b), w)),
                     [_rand(11, 3, 4), _rand(12, 4)]),
        "matmul": (lambda a, b: sum_all(ad.mul(ad.matmul(a, b), w64)),
                   [_rand(13, 4, 3), _rand(14, 3, 6)]),
        "transpose": (lambda a: sum_all(ad.mul(ad.transpose(a), w)),
                      [_rand(15, 4, 3)]),
        "softmax": (lambda a: sum_all(ad.mul(ad.softmax(a, axis=1), w)),
                    [_rand(16, 3, 4)]),
        "sigmoid": (lambda a: sum_all(ad.mul(ad.sigmoid(a), w)), [_rand(17, 3, 4)]),
        "gelu": (lambda a: sum_all(ad.mul(ad.gelu(a), w)), [_rand(18, 3, 4)]),
        "layer_norm": (lambda a, g, b: sum_all(ad.mul(ad.layer_norm(a, g, b), w)),
                       [_rand(19, 3, 4), _rand(20, 4), _rand(21, 4)]),
        "concat": (lambda a, b: sum_all(ad.mul(ad.concat(a, b, axis=0),
                                               _readout(1002, 5, 4))),
                   [_rand(22, 2, 4), _rand(23, 3, 4)]),
        "gather_rows": (lambda t: sum_all(ad.mul(ad.gather_rows(t, [0, 2, 2, 1]),
                                                 _readout(1003, 4, 3))),
                        [_rand(24, 4, 3)]),
        "mean_rows": (lambda a: sum_all(ad.mul(ad.mean_rows(a), _readout(1004, 1, 4))),
                      [_rand(25, 3, 4)]),
        "index": (lambda a: sum_all(ad.scale_by(a, ad.index(a, 1, 2))),
                  [_rand(26, 3, 4)]),
        "sum_all": (lambda a: sum_all(ad.mul(a, a)), [_rand(27, 3, 4)]),
        "cross_entropy": (lambda lg: ad.cross_entropy(lg, [1, 3, 0], [True, True, True]),
                          [_rand(28, 3, 5)]),
    }
    return {name: grad_check(f, inputs) for name, (f, inputs) in checks.items()}


def composed_model_check(seed: int = 7) -> float:
    """Finite-difference check of the whole pipeline at tiny dims.

    S=4 patches, feature dim 8, the full 14-node graph, vocabulary 16.
    """
    rng = np.random.default_rng(seed)
    s, patch_dim, d, vocab = 4, 6, 8, 16
    graph = build_chexpert_graph()

    visual = VisualEncoder(rng, s, patch_dim, d)
    init_mha = MhaBlock(rng, heads=2, model_dim=d)
    layers = [GcnLayer(rng, d) for _ in range(3)]
    align_mha = MhaBlock(rng, heads=2, model_dim=d)
    moe = MoeFusion(rng, d)
    decoder = ToyDecoder(rng, vocab, d_model=d, n_layers=1, heads=2,
                         mlp_hidden=16, context_len=16)
    # entity names stand-in: two token ids per node within the tiny vocabulary
    entity_emb = EntityEmbeddings([[8 + (i % 8), 8 + ((3 * i) % 8)]
                                   for i in range(14)])
    a_norm = Tensor(graph.adjacency_norm)
    patches = Tensor(rng.uniform(-1, 1, size=(s, patch_dim)), requires_grad=True)
    target = [10, 11, 12, 2]

    def f(*_params):
        regional = visual(patches)
        entity = entity_emb(decoder.embedding)
        nodes = init_mha(entity, regional)
        for layer in layers:
            nodes = layer(nodes, a_norm)
        aligned = align(regional, nodes, align_mha)
        fused = modality_fuse(regional, aligned, moe)
        head = decoder.embed_ids([1, 4, 8, 9, 6])
        tail = decoder.embed_ids([7, 5])
        vectors = ad.concat_all([head, fused, tail], axis=0)
        prompt = PromptSequence(vectors=vectors, feature_start=5, n_features=s,
                                token_ids=[1, 4, 8, 9, 6] + [None] * s + [7, 5])
        logits = decoder_forward(decoder, prompt, target)
        return report_loss(logits, target, prompt.scoring_mask(len(target)))

    params = [patches]
    for component in (visual, init_mha, *layers, align_mha, moe, decoder):
        params.extend(p for _, p in component.named_parameters())
    # richardson: near-uniform attention leaves some query/key grads ~1e-10,
    # below what plain central differences can resolve against the 1e-8 floor
    return grad_check(f, params, eps=2e-3, richardson=True)


def run_gradient_suite() -> dict:
    """Run everything; returns per-check errors, runtime, and overall verdict."""
    started = time.perf_counter()
    ops = op_checks()
    composed = composed_model_check()
    runtime = time.perf_counter() - started
    worst = max(max(ops.values()), composed)
    return {
        "schema_version": 1,
        "ops": ops,
        "composed_model": composed,
        "tolerance": TOLERANCE,
        "runtime_seconds": runtime,
        "passed": bool(worst < TOLERANCE),
    }
