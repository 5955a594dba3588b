"""Discourse-path embeddings.

Each token carries a root-to-leaf label path from the document's discourse
tree. The path labels are embedded, run through a small Transformer
encoder, and mean-pooled into a single vector d_i that is added to the
token's word embedding. Tokens in the same EDU share one path, so paths
are encoded once per unique sequence and broadcast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .nnet import EncoderStack, Trace, positional_encoding, transformer_encode
from .tensor import Tensor

__all__ = ["PathEncoderParams", "encode_path", "encode_token_paths", "enrich_embeddings"]


@dataclass
class PathEncoderParams:
    """Label embedding table plus the encoder run over label sequences.

    The output dimension equals the word-embedding dimension; the sum
    x_i + d_i forces them to match.
    """

    label_embed: Tensor
    stack: EncoderStack
    model_dim: int

    @classmethod
    def init(cls, label_count: int, model_dim: int, head_count: int, inner_dim: int,
             layer_count: int, dropout: float, rng: np.random.Generator) -> "PathEncoderParams":
        bound = math.sqrt(1.0 / model_dim)
        table = rng.uniform(-bound, bound, size=(label_count, model_dim))
        return cls(
            label_embed=Tensor(table.astype(tt.get_default_dtype()), requires_grad=True),
            stack=EncoderStack.init(layer_count, model_dim, head_count, inner_dim, dropout, rng),
            model_dim=model_dim,
        )

    def named(self, prefix: str = "path"):
        yield f"{prefix}.embed", self.label_embed
        yield from self.stack.named(f"{prefix}.enc")


def encode_path(label_ids, params: PathEncoderParams, padded_len: int | None = None,
                pad_id: int = 0, rng: np.random.Generator | None = None,
                trace: Trace | None = None) -> Tensor:
    """Encode one label-id sequence into a d-vector.

    Embeds the labels (scaled by sqrt(d), plus positional encoding), runs
    the encoder stack, and mean-pools the hidden states. When
    ``padded_len`` exceeds the real length, PAD ids are appended; padded
    positions are masked out of attention and excluded from the pool, so
    the result does not depend on the padding amount.
    """
    ids = list(label_ids)
    if not ids:
        raise tt.EmptyInputError("encode_path needs at least one label id")
    real_len = len(ids)
    if padded_len is not None:
        if padded_len < real_len:
            raise ValueError(f"padded_len {padded_len} shorter than path length {real_len}")
        ids = ids + [pad_id] * (padded_len - real_len)
    x = tt.mul(tt.take_rows(params.label_embed, ids), math.sqrt(params.model_dim))
    x = tt.add(x, positional_encoding(len(ids), params.model_dim, dtype=x.dtype))
    mask = None
    if len(ids) > real_len:
        mask = np.arange(len(ids)) < real_len
    hidden = transformer_encode(x, params.stack, pad_mask=mask, rng=rng, trace=trace)
    if len(ids) > real_len:
        hidden = tt.take_rows(hidden, list(range(real_len)))
    return tt.mean_rows(hidden)


def encode_token_paths(token_path_ids, params: PathEncoderParams,
                       rng: np.random.Generator | None = None) -> Tensor:
    """Encode per-token paths into an n x d matrix.

    ``token_path_ids`` is one id sequence per token. Unique sequences are
    encoded once and shared, so tokens of the same EDU get bitwise-equal
    rows.
    """
    keys = [tuple(p) for p in token_path_ids]
    if not keys:
        raise tt.EmptyInputError("encode_token_paths needs at least one token")
    cache: dict[tuple, Tensor] = {}
    for key in keys:
        if key not in cache:
            cache[key] = encode_path(key, params, rng=rng)
    return tt.stack_rows([cache[key] for key in keys])


def enrich_embeddings(word_embeds: Tensor, path_embeds: Tensor) -> Tensor:
    """x~_i = x_i + d_i, elementwise over matching n x d shapes."""
    if word_embeds.shape != path_embeds.shape:
        raise tt.ShapeError(
            f"enrich_embeddings shape mismatch: {word_embeds.shape} vs {path_embeds.shape}")
    return tt.add(word_embeds, path_embeds)
