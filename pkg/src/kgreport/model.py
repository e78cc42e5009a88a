"""The composed pipeline: patches -> regional features -> graph distillation
-> alignment -> fusion -> prompted decoding.

All fusion variants and the graph path are always instantiated so that runs
differing only in configuration share identical initial weights for the
components they have in common (paired ablation comparisons).  Disabled
paths are simply never invoked.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .encoder import (EntityEmbeddings, GcnLayer, MhaBlock, VisualEncoder,
                      gcn_layer, node_init)
from .fusion import GateFusion, MoeFusion, align, average_fuse, element_fuse, modality_fuse
from .generator import (DEFAULT_INSTRUCTION, BeamConfig, BeamHypothesis, EOS_ID,
                        PromptSequence, Tokenizer, ToyDecoder, UNK_ID,
                        assemble_prompt, beam_search, decoder_forward,
                        prompt_logits_fn, report_loss)
from .harness.config import TrainConfig
from .harness.rng import substream
from .kgraph import ENTITY_NAMES, KnowledgeGraph, build_chexpert_graph


class ReportModel:
    """Trainable end-to-end report generator at desk scale."""

    def __init__(self, cfg: TrainConfig, tokenizer: Tokenizer,
                 graph: KnowledgeGraph | None = None):
        self.cfg = cfg
        self.tokenizer = tokenizer
        self.graph = graph or build_chexpert_graph()
        self.dtype = np.float32 if cfg.dtype == "float32" else np.float64
        rng = substream(cfg.seed, "init")

        self.visual = VisualEncoder(rng, cfg.n_patches, cfg.patch_dim,
                                    cfg.d_model, self.dtype)
        self.init_mha = MhaBlock(rng, cfg.heads, cfg.d_model, dtype=self.dtype)
        self.gcn = [GcnLayer(rng, cfg.d_model, self.dtype)
                    for _ in range(cfg.gcn_layers)]
        self.align_mha = MhaBlock(rng, cfg.heads, cfg.d_model, dtype=self.dtype)
        self.gate = GateFusion(rng, cfg.d_model, self.dtype)
        self.moe = MoeFusion(rng, cfg.d_model, self.dtype)
        self.decoder = ToyDecoder(rng, tokenizer.vocab_size, d_model=cfg.d_model,
                                  n_layers=cfg.decoder_layers, heads=cfg.heads,
                                  mlp_hidden=cfg.mlp_hidden,
                                  context_len=cfg.context_len, dtype=self.dtype)

        name_ids = [tokenizer.tokenize(name) for name in ENTITY_NAMES]
        for name, ids in zip(ENTITY_NAMES, name_ids):
            if UNK_ID in ids:
                raise ValueError(f"entity name {name!r} is not fully in vocabulary")
        self.entity_emb = EntityEmbeddings(name_ids, self.dtype)
        self.a_norm = Tensor(self.graph.adjacency_norm.astype(self.dtype))
        self.gcn_call_count = 0

    # -- parameters ----------------------------------------------------------

    def named_parameters(self):
        yield from self.visual.named_parameters("visual.")
        yield from self.init_mha.named_parameters("init_mha.")
        for i, layer in enumerate(self.gcn):
            yield from layer.named_parameters(f"gcn.{i}.")
        yield from self.align_mha.named_parameters("align_mha.")
        yield from self.gate.named_parameters("gate.")
        yield from self.moe.named_parameters("moe.")
        yield from self.decoder.named_parameters("decoder.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    # -- forward paths ---------------------------------------------------------

    def fused_features(self, patches: Tensor) -> Tensor:
        """Run the feature pipeline selected by the config."""
        cfg = self.cfg
        regional = self.visual(patches)
        if cfg.fusion == "none" and not cfg.disease_features_only:
            return regional
        entity = self.entity_emb(self.decoder.embedding)
        nodes = node_init(entity, regional, self.init_mha)
        if cfg.use_gcn:
            for layer in self.gcn:
                nodes = gcn_layer(nodes, self.a_norm, layer)
                self.gcn_call_count += 1
        aligned = align(regional, nodes, self.align_mha)
        if cfg.disease_features_only:
            return aligned
        if cfg.fusion == "element":
            return element_fuse(regional, aligned, self.gate)
        if cfg.fusion == "modality":
            return modality_fuse(regional, aligned, self.moe)
        if cfg.fusion == "average":
            return average_fuse(regional, aligned)
        return regional

    def prompt_for(self, patches: np.ndarray) -> PromptSequence:
        fused = self.fused_features(Tensor(patches.astype(self.dtype)))
        return assemble_prompt(self.decoder, fused, DEFAULT_INSTRUCTION,
                               self.tokenizer)

    def loss(self, patches: np.ndarray, report: str,
             reduction: str = "mean") -> Tensor:
        prompt = self.prompt_for(patches)
        target = self.tokenizer.tokenize(report) + [EOS_ID]
        logits = decoder_forward(self.decoder, prompt, target)
        return report_loss(logits, target, prompt.scoring_mask(len(target)),
                           reduction=reduction)

    def generate(self, patches: np.ndarray,
                 beam: BeamConfig | None = None) -> tuple[str, BeamHypothesis, int]:
        """Beam-decode a report; returns (text, best hypothesis, pool size)."""
        cfg = beam or BeamConfig(width=self.cfg.beam_width,
                                 max_len=self.cfg.gen_max_len)
        prompt = self.prompt_for(patches)
        hypotheses = beam_search(prompt_logits_fn(self.decoder, prompt), cfg)
        best = hypotheses[0]
        ids = [t for t in best.token_ids if t != EOS_ID]
        return self.tokenizer.detokenize(ids), best, len(hypotheses)
