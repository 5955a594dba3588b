"""Hierarchical attention over previous source sentences.

Two levels: per context sentence k, summaries cs_{i,k} are attention of
f_s(h_i) over that sentence's encoder states H_k; then cd_i attends
f_d(h_i) over the token's own K summaries and passes through a
position-wise FFN. A sigmoid gate mixes cd_i back into h_i. A sentence
with no preceding context bypasses the whole block: h~ = h.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .nnet import (AttentionParams, FeedForwardParams, Trace, feed_forward,
                   init_matrix, multi_head_attention)
from .tensor import Tensor

__all__ = ["HanParams", "ContextSet", "sentence_context", "document_context",
           "gate_integrate", "apply_context"]


@dataclass
class HanParams:
    """Projections, two attention levels, FFN, and the output gate."""

    fs: Tensor
    fd: Tensor
    sent_attn: AttentionParams
    doc_attn: AttentionParams
    ffn: FeedForwardParams
    gate_h: Tensor
    gate_cd: Tensor
    gate_bias: Tensor
    model_dim: int

    @classmethod
    def init(cls, model_dim: int, head_count: int, inner_dim: int,
             rng: np.random.Generator, gate_bias_init: float = 2.0) -> "HanParams":
        # positive gate bias starts lambda near 1 so untrained context
        # barely perturbs the sentence model
        bias = np.full(model_dim, gate_bias_init, dtype=tt.get_default_dtype())
        return cls(
            fs=init_matrix(rng, model_dim, model_dim),
            fd=init_matrix(rng, model_dim, model_dim),
            sent_attn=AttentionParams.init(model_dim, head_count, rng),
            doc_attn=AttentionParams.init(model_dim, head_count, rng),
            ffn=FeedForwardParams.init(model_dim, inner_dim, rng),
            gate_h=init_matrix(rng, model_dim, model_dim),
            gate_cd=init_matrix(rng, model_dim, model_dim),
            gate_bias=Tensor(bias, requires_grad=True),
            model_dim=model_dim,
        )

    def named(self, prefix: str = "han"):
        yield f"{prefix}.fs", self.fs
        yield f"{prefix}.fd", self.fd
        yield from self.sent_attn.named(f"{prefix}.sent")
        yield from self.doc_attn.named(f"{prefix}.doc")
        yield from self.ffn.named(f"{prefix}.ffn")
        yield f"{prefix}.gate_h", self.gate_h
        yield f"{prefix}.gate_cd", self.gate_cd
        yield f"{prefix}.gate_bias", self.gate_bias


@dataclass
class ContextSet:
    """Encoded previous sentences, oldest first; empty sentences are dropped."""

    sentences: list = field(default_factory=list)
    masks: list = field(default_factory=list)

    @classmethod
    def build(cls, encoded, masks=None) -> "ContextSet":
        encoded = list(encoded)
        masks = list(masks) if masks is not None else [None] * len(encoded)
        if len(masks) != len(encoded):
            raise ValueError("one mask per context sentence required")
        kept = [(e, m) for e, m in zip(encoded, masks) if e.shape[0] > 0]
        return cls(sentences=[e for e, _ in kept], masks=[m for _, m in kept])

    def __len__(self) -> int:
        return len(self.sentences)

    @property
    def empty(self) -> bool:
        return not self.sentences


def sentence_context(h: Tensor, context_states: Tensor, params: HanParams,
                     mask=None, trace: Trace | None = None) -> Tensor:
    """Summaries cs_{.,k}: attention of f_s(h) over one context sentence."""
    if context_states.shape[0] == 0:
        raise tt.EmptyInputError("sentence_context needs a nonempty context sentence")
    query = tt.matmul(h, params.fs)
    return multi_head_attention(query, context_states, params.sent_attn,
                                mask=mask, trace=trace)


def document_context(h: Tensor, summaries, params: HanParams,
                     trace: Trace | None = None) -> Tensor:
    """cd_i: each token attends over its own per-sentence summaries, then FFN.

    ``summaries`` is a list of n x d tensors, one per available context
    sentence; row i of entry k is cs_{i,k}. Attention is grouped per
    token: token i's keys are its own K summary rows, nothing else.
    """
    summaries = list(summaries)
    if not summaries:
        raise tt.EmptyInputError("document_context needs at least one summary")
    query_base = tt.matmul(h, params.fd)
    attn = params.doc_attn
    head_dim = attn.model_dim // attn.head_count
    scale = 1.0 / math.sqrt(head_dim)
    heads = []
    for hd in range(attn.head_count):
        q = tt.matmul(query_base, attn.wq[hd])
        ks = [tt.matmul(cs, attn.wk[hd]) for cs in summaries]
        vs = [tt.matmul(cs, attn.wv[hd]) for cs in summaries]
        # scores[i, k] = q_i . k_{i,k}; one column per context slot
        cols = [tt.sum_axis1(tt.mul(q, k)) for k in ks]
        scores = cols[0] if len(cols) == 1 else tt.concat_cols(cols)
        weights = tt.softmax_rows(tt.mul(scores, scale))
        if trace is not None:
            trace.add_attention(weights.data)
        mixed = None
        for k, v in enumerate(vs):
            term = tt.mul(tt.slice_cols(weights, k, k + 1), v)
            mixed = term if mixed is None else tt.add(mixed, term)
        heads.append(mixed)
    merged = heads[0] if len(heads) == 1 else tt.concat_cols(heads)
    return feed_forward(tt.matmul(merged, attn.wo), params.ffn)


def gate_integrate(h: Tensor, cd: Tensor, params: HanParams,
                   trace: Trace | None = None) -> Tensor:
    """h~ = lambda*h + (1-lambda)*cd with lambda = sigma(W_h h + W_cd cd + b)."""
    if h.shape != cd.shape:
        raise tt.ShapeError(f"gate shapes differ: {h.shape} vs {cd.shape}")
    pre = tt.add(tt.add(tt.matmul(h, params.gate_h), tt.matmul(cd, params.gate_cd)),
                 params.gate_bias)
    lam = tt.sigmoid(pre)
    if trace is not None:
        trace.gates.append({"lam": lam.data.copy(), "h": h.data.copy(), "cd": cd.data.copy()})
    return tt.add(tt.mul(lam, h), tt.mul(tt.sub(1.0, lam), cd))


def apply_context(h: Tensor, ctx: ContextSet, params: HanParams,
                  trace: Trace | None = None) -> Tensor:
    """Full block: summaries, document attention, gate. Empty context: h unchanged."""
    if ctx.empty:
        return h
    summaries = [sentence_context(h, states, params, mask=mask, trace=trace)
                 for states, mask in zip(ctx.sentences, ctx.masks)]
    cd = document_context(h, summaries, params, trace=trace)
    return gate_integrate(h, cd, params, trace=trace)
