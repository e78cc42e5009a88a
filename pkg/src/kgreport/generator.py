"""Prompted report generation: tokenizer, toy causal decoder, beam search.

The decoder is a small trainable pre-norm transformer standing in for a
frozen multi-billion-parameter LLM; that substitution is the largest
divergence of this desk-scale build and is documented in the README.  The
prompt layout it consumes is unchanged: an instruction wrapped in [INST]
markers with the fused image features spliced between <feats> markers.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

DEFAULT_INSTRUCTION = (
    "Generate a comprehensive and detailed diagnosis report for this radiology image.")

SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>",
                  "[INST]", "[/INST]", "<feats>", "</feats>")
PAD_ID, BOS_ID, EOS_ID, UNK_ID, INST_ID, INST_END_ID, FEATS_ID, FEATS_END_ID = range(8)

_WORD_RE = re.compile(r"[a-z0-9]+|[^a-z0-9\s]")


class Tokenizer:
    """Lowercasing whitespace+punctuation tokenizer with a fixed vocabulary."""

    def __init__(self, words: Iterable[str]):
        ordered = sorted(set(words))
        for w in ordered:
            if w in SPECIAL_TOKENS:
                raise ValueError(f"corpus word collides with special token: {w!r}")
        self.id_to_token = list(SPECIAL_TOKENS) + ordered
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Tokenizer":
        words: set[str] = set()
        for text in texts:
            words.update(split_words(text))
        return cls(words)

    @property
    def vocab_size(self) -> int:
        return len(self.id_to_token)

    def tokenize(self, text: str) -> list[int]:
        return [self.token_to_id.get(w, UNK_ID) for w in split_words(text)]

    def detokenize(self, ids: Sequence[int]) -> str:
        return " ".join(self.id_to_token[i] for i in ids)

    def normalize(self, text: str) -> str:
        return " ".join(split_words(text))

    @staticmethod
    def count_unks(ids: Sequence[int]) -> int:
        return sum(1 for i in ids if i == UNK_ID)


def split_words(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


@dataclass
class PromptSequence:
    """Embedded prompt: specials + instruction tokens + fused feature rows."""

    vectors: Tensor            # (prompt_len, d_model)
    feature_start: int         # index of the first fused-feature row
    n_features: int
    token_ids: list            # int per text position, None at feature slots

    @property
    def length(self) -> int:
        return self.vectors.shape[0]

    def scoring_mask(self, n_target: int) -> np.ndarray:
        """Mask over logit rows: the rows that predict the n_target report ids.

        Row p predicts sequence position p+1, so scoring starts at the last
        prompt row.  All prompt rows before it, including every feature
        slot, stay unscored.
        """
        mask = np.zeros(self.length + n_target, dtype=bool)
        mask[self.length - 1:self.length - 1 + n_target] = True
        return mask


@dataclass
class BeamConfig:
    width: int = 3
    max_len: int = 40
    length_normalize: bool = False
    eos_id: int = EOS_ID

    def __post_init__(self):
        if self.width < 1:
            raise ValueError(f"beam width must be >= 1, got {self.width}")
        if self.max_len < 1:
            raise ValueError(f"max_len must be >= 1, got {self.max_len}")


@dataclass
class BeamHypothesis:
    token_ids: tuple[int, ...]
    score: float               # summed log-probability
    finished: bool             # ended with EOS (False = truncated at max_len)


class _DecoderBlock:
    def __init__(self, rng, d_model, heads, mlp_hidden, dtype):
        from .encoder import MhaBlock
        one = np.ones(d_model, dtype=dtype)
        zero = np.zeros(d_model, dtype=dtype)
        self.ln1_gamma = Tensor(one.copy(), requires_grad=True)
        self.ln1_beta = Tensor(zero.copy(), requires_grad=True)
        self.attn = MhaBlock(rng, heads, d_model, dtype=dtype)
        self.ln2_gamma = Tensor(one.copy(), requires_grad=True)
        self.ln2_beta = Tensor(zero.copy(), requires_grad=True)
        self.mlp_w1 = ad.init_uniform(rng, (d_model, mlp_hidden), d_model, dtype)
        self.mlp_b1 = Tensor(np.zeros(mlp_hidden, dtype=dtype), requires_grad=True)
        self.mlp_w2 = ad.init_uniform(rng, (mlp_hidden, d_model), mlp_hidden, dtype)
        self.mlp_b2 = Tensor(np.zeros(d_model, dtype=dtype), requires_grad=True)

    def __call__(self, h: Tensor, causal_mask: Tensor) -> Tensor:
        normed = ad.layer_norm(h, self.ln1_gamma, self.ln1_beta)
        h = ad.add(h, self.attn(normed, normed, causal_mask))
        normed = ad.layer_norm(h, self.ln2_gamma, self.ln2_beta)
        hidden = ad.gelu(ad.add_bias(ad.matmul(normed, self.mlp_w1), self.mlp_b1))
        return ad.add(h, ad.add_bias(ad.matmul(hidden, self.mlp_w2), self.mlp_b2))

    def named_parameters(self, prefix=""):
        yield f"{prefix}ln1_gamma", self.ln1_gamma
        yield f"{prefix}ln1_beta", self.ln1_beta
        yield from self.attn.named_parameters(f"{prefix}attn.")
        yield f"{prefix}ln2_gamma", self.ln2_gamma
        yield f"{prefix}ln2_beta", self.ln2_beta
        yield f"{prefix}mlp_w1", self.mlp_w1
        yield f"{prefix}mlp_b1", self.mlp_b1
        yield f"{prefix}mlp_w2", self.mlp_w2
        yield f"{prefix}mlp_b2", self.mlp_b2


class ToyDecoder:
    """Pre-norm causal transformer with a tied embedding/output matrix."""

    def __init__(self, rng: np.random.Generator, vocab_size: int, d_model: int = 128,
                 n_layers: int = 2, heads: int = 4, mlp_hidden: int | None = None,
                 context_len: int = 192, dtype=np.float64):
        self.vocab_size = vocab_size
        self.d_model = d_model
        self.context_len = context_len
        self.dtype = dtype
        mlp_hidden = mlp_hidden or 2 * d_model
        self.embedding = ad.init_uniform(rng, (vocab_size, d_model), d_model, dtype)
        self.positions = ad.init_uniform(rng, (context_len, d_model), d_model, dtype)
        self.blocks = [_DecoderBlock(rng, d_model, heads, mlp_hidden, dtype)
                       for _ in range(n_layers)]
        self.lnf_gamma = Tensor(np.ones(d_model, dtype=dtype), requires_grad=True)
        self.lnf_beta = Tensor(np.zeros(d_model, dtype=dtype), requires_grad=True)

    def named_parameters(self, prefix=""):
        yield f"{prefix}embedding", self.embedding
        yield f"{prefix}positions", self.positions
        for i, block in enumerate(self.blocks):
            yield from block.named_parameters(f"{prefix}block{i}.")
        yield f"{prefix}lnf_gamma", self.lnf_gamma
        yield f"{prefix}lnf_beta", self.lnf_beta

    def _causal_mask(self, t: int) -> Tensor:
        mask = np.triu(np.full((t, t), -1e9, dtype=self.dtype), k=1)
        return Tensor(mask)

    def forward_embedded(self, seq: Tensor) -> Tensor:
        """Causal logits over the vocabulary for an already-embedded sequence."""
        t = seq.shape[0]
        if t > self.context_len:
            raise ValueError(f"sequence of {t} exceeds context of {self.context_len}")
        h = ad.add(seq, ad.gather_rows(self.positions, list(range(t))))
        mask = self._causal_mask(t)
        for block in self.blocks:
            h = block(h, mask)
        h = ad.layer_norm(h, self.lnf_gamma, self.lnf_beta)
        return ad.matmul(h, self.embedding.T)

    def embed_ids(self, ids: Sequence[int]) -> Tensor:
        return ad.gather_rows(self.embedding, list(ids))


def assemble_prompt(decoder: ToyDecoder, fused: Tensor,
                    instruction: str, tokenizer: Tokenizer) -> PromptSequence:
    """Embed ``[BOS] [INST] instruction <feats> fused </feats> [/INST]``."""
    if fused.shape[0] == 0:
        raise ValueError("assemble_prompt: fused features are empty")
    if fused.shape[1] != decoder.d_model:
        raise ad.ShapeError(
            f"fused feature dim {fused.shape[1]} != decoder dim {decoder.d_model}")
    instr_ids = tokenizer.tokenize(instruction)
    head_ids = [BOS_ID, INST_ID] + instr_ids + [FEATS_ID]
    tail_ids = [FEATS_END_ID, INST_END_ID]
    vectors = ad.concat_all(
        [decoder.embed_ids(head_ids), fused, decoder.embed_ids(tail_ids)], axis=0)
    token_ids = head_ids + [None] * fused.shape[0] + tail_ids
    return PromptSequence(vectors=vectors, feature_start=len(head_ids),
                          n_features=fused.shape[0], token_ids=token_ids)


def decoder_forward(decoder: ToyDecoder, prompt: PromptSequence,
                    target_ids: Sequence[int]) -> Tensor:
    """Logits for the full prompt+target sequence, shape (T, vocab)."""
    seq = prompt.vectors
    if target_ids:
        seq = ad.concat(seq, decoder.embed_ids(target_ids), axis=0)
    return decoder.forward_embedded(seq)


def report_loss(logits: Tensor, target_ids: Sequence[int], mask: Sequence[bool],
                reduction: str = "mean") -> Tensor:
    """Cross-entropy over the report positions selected by ``mask``.

    ``target_ids`` are the report token ids in order; they are placed at the
    mask's True rows.  ``mean`` divides by the report length, ``sum`` gives
    the raw summed negative log-likelihood.
    """
    msk = np.asarray(mask, dtype=bool)
    positions = np.flatnonzero(msk)
    if len(positions) != len(target_ids):
        raise ValueError(
            f"mask selects {len(positions)} rows but {len(target_ids)} targets given")
    full = np.zeros(len(msk), dtype=np.int64)
    full[positions] = np.asarray(target_ids, dtype=np.int64)
    return ad.cross_entropy(logits, full, msk, reduction=reduction)


def log_softmax_row(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - math.log(np.exp(shifted).sum())


def beam_search(logits_fn: Callable[[list[int]], np.ndarray],
                cfg: BeamConfig) -> list[BeamHypothesis]:
    """Breadth-limited best-first decoding over summed log-probabilities.

    ``logits_fn`` maps the tokens generated so far to next-token logits.
    Hypotheses reaching EOS retire to a pool; at ``max_len`` the surviving
    beams join the pool flagged unfinished.  The pool is returned sorted by
    score descending with lexicographic token-id tie-breaks.
    """
    live: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    pool: list[BeamHypothesis] = []
    for _ in range(cfg.max_len):
        if not live:
            break
        candidates: list[tuple[tuple[int, ...], float]] = []
        for ids, score in live:
            logp = log_softmax_row(np.asarray(logits_fn(list(ids)), dtype=np.float64))
            for tok, lp in enumerate(logp):
                candidates.append((ids + (tok,), score + float(lp)))
        candidates.sort(key=lambda c: (-c[1], c[0]))
        live = []
        for ids, score in candidates[:cfg.width]:
            if ids[-1] == cfg.eos_id:
                pool.append(BeamHypothesis(ids, score, finished=True))
            else:
                live.append((ids, score))
    pool.extend(BeamHypothesis(ids, score, finished=False) for ids, score in live)

    def rank(h: BeamHypothesis):
        eff = h.score / len(h.token_ids) if cfg.length_normalize else h.score
        return (-eff, h.token_ids)

    pool.sort(key=rank)
    return pool


def greedy_decode(logits_fn: Callable[[list[int]], np.ndarray],
                  cfg: BeamConfig) -> BeamHypothesis:
    """Plain argmax decoding (reference implementation for width-1 checks)."""
    ids: list[int] = []
    score = 0.0
    for _ in range(cfg.max_len):
        logp = log_softmax_row(np.asarray(logits_fn(ids), dtype=np.float64))
        tok = int(np.argmax(logp))
        score += float(logp[tok])
        ids.append(tok)
        if tok == cfg.eos_id:
            return BeamHypothesis(tuple(ids), score, finished=True)
    return BeamHypothesis(tuple(ids), score, finished=False)


def prompt_logits_fn(decoder: ToyDecoder,
                     prompt: PromptSequence) -> Callable[[list[int]], np.ndarray]:
    """Next-token logits for beam search, conditioned on the prompt."""
    def fn(generated: list[int]) -> np.ndarray:
        logits = decoder_forward(decoder, prompt, generated)
        return logits.data[-1]
    return fn
