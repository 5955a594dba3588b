"""Transformer building blocks: attention, feed-forward, encoder/decoder stacks.

Residual blocks are pre-norm (normalize, transform, add back), with one
final normalization after the last layer. A stack configured with zero
layers is the identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .tensor import Tensor

__all__ = [
    "AttentionParams",
    "FeedForwardParams",
    "LayerNormParams",
    "EncoderStack",
    "DecoderStack",
    "Trace",
    "init_matrix",
    "multi_head_attention",
    "feed_forward",
    "positional_encoding",
    "transformer_encode",
    "transformer_decode",
    "transformer_decode_step",
]


class Trace:
    """Optional collector of forward internals, for inspection and tests."""

    def __init__(self):
        self.attention_rows: list[np.ndarray] = []
        self.gates: list[dict] = []
        self.context_windows: list[tuple] = []

    def add_attention(self, weights: np.ndarray) -> None:
        self.attention_rows.append(weights)


def init_matrix(rng: np.random.Generator, rows: int, cols: int,
                requires_grad: bool = True) -> Tensor:
    """Fan-in scaled uniform initialization."""
    bound = math.sqrt(1.0 / rows)
    data = rng.uniform(-bound, bound, size=(rows, cols)).astype(tt.get_default_dtype())
    return Tensor(data, requires_grad=requires_grad)


def _init_vector(rng: np.random.Generator, size: int, value: float | None = None) -> Tensor:
    if value is None:
        data = np.zeros(size, dtype=tt.get_default_dtype())
    else:
        data = np.full(size, value, dtype=tt.get_default_dtype())
    return Tensor(data, requires_grad=True)


@dataclass
class AttentionParams:
    """Per-head query/key/value projections plus an output projection."""

    wq: list
    wk: list
    wv: list
    wo: Tensor
    head_count: int
    model_dim: int

    @classmethod
    def init(cls, model_dim: int, head_count: int, rng: np.random.Generator) -> "AttentionParams":
        if model_dim % head_count != 0:
            raise ValueError(f"model_dim {model_dim} not divisible by head_count {head_count}")
        head_dim = model_dim // head_count
        return cls(
            wq=[init_matrix(rng, model_dim, head_dim) for _ in range(head_count)],
            wk=[init_matrix(rng, model_dim, head_dim) for _ in range(head_count)],
            wv=[init_matrix(rng, model_dim, head_dim) for _ in range(head_count)],
            wo=init_matrix(rng, model_dim, model_dim),
            head_count=head_count,
            model_dim=model_dim,
        )

    def named(self, prefix: str):
        for h in range(self.head_count):
            yield f"{prefix}.q{h}", self.wq[h]
            yield f"{prefix}.k{h}", self.wk[h]
            yield f"{prefix}.v{h}", self.wv[h]
        yield f"{prefix}.out", self.wo


@dataclass
class FeedForwardParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, model_dim: int, inner_dim: int, rng: np.random.Generator) -> "FeedForwardParams":
        return cls(
            w1=init_matrix(rng, model_dim, inner_dim),
            b1=_init_vector(rng, inner_dim),
            w2=init_matrix(rng, inner_dim, model_dim),
            b2=_init_vector(rng, model_dim),
        )

    def named(self, prefix: str):
        yield f"{prefix}.w1", self.w1
        yield f"{prefix}.b1", self.b1
        yield f"{prefix}.w2", self.w2
        yield f"{prefix}.b2", self.b2


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor
    eps: float = 1e-5

    @classmethod
    def init(cls, dim: int) -> "LayerNormParams":
        return cls(gain=Tensor(np.ones(dim, dtype=tt.get_default_dtype()), requires_grad=True),
                   bias=Tensor(np.zeros(dim, dtype=tt.get_default_dtype()), requires_grad=True))

    def named(self, prefix: str):
        yield f"{prefix}.gain", self.gain
        yield f"{prefix}.bias", self.bias

    def apply(self, x: Tensor) -> Tensor:
        return tt.layer_norm(x, self.gain, self.bias, self.eps)


@dataclass
class _EncoderLayer:
    self_attn: AttentionParams
    ffn: FeedForwardParams
    ln_attn: LayerNormParams
    ln_ffn: LayerNormParams

    def named(self, prefix: str):
        yield from self.self_attn.named(f"{prefix}.self")
        yield from self.ffn.named(f"{prefix}.ffn")
        yield from self.ln_attn.named(f"{prefix}.ln_attn")
        yield from self.ln_ffn.named(f"{prefix}.ln_ffn")


@dataclass
class _DecoderLayer:
    self_attn: AttentionParams
    cross_attn: AttentionParams
    ffn: FeedForwardParams
    ln_self: LayerNormParams
    ln_cross: LayerNormParams
    ln_ffn: LayerNormParams

    def named(self, prefix: str):
        yield from self.self_attn.named(f"{prefix}.self")
        yield from self.cross_attn.named(f"{prefix}.cross")
        yield from self.ffn.named(f"{prefix}.ffn")
        yield from self.ln_self.named(f"{prefix}.ln_self")
        yield from self.ln_cross.named(f"{prefix}.ln_cross")
        yield from self.ln_ffn.named(f"{prefix}.ln_ffn")


@dataclass
class EncoderStack:
    layers: list = field(default_factory=list)
    final_ln: LayerNormParams | None = None
    dropout: float = 0.0

    @classmethod
    def init(cls, layer_count: int, model_dim: int, head_count: int, inner_dim: int,
             dropout: float, rng: np.random.Generator) -> "EncoderStack":
        layers = [
            _EncoderLayer(
                self_attn=AttentionParams.init(model_dim, head_count, rng),
                ffn=FeedForwardParams.init(model_dim, inner_dim, rng),
                ln_attn=LayerNormParams.init(model_dim),
                ln_ffn=LayerNormParams.init(model_dim),
            )
            for _ in range(layer_count)
        ]
        final = LayerNormParams.init(model_dim) if layer_count > 0 else None
        return cls(layers=layers, final_ln=final, dropout=dropout)

    def named(self, prefix: str):
        for i, layer in enumerate(self.layers):
            yield from layer.named(f"{prefix}.l{i}")
        if self.final_ln is not None:
            yield from self.final_ln.named(f"{prefix}.ln_final")


@dataclass
class DecoderStack:
    layers: list = field(default_factory=list)
    final_ln: LayerNormParams | None = None
    dropout: float = 0.0

    @classmethod
    def init(cls, layer_count: int, model_dim: int, head_count: int, inner_dim: int,
             dropout: float, rng: np.random.Generator) -> "DecoderStack":
        layers = [
            _DecoderLayer(
                self_attn=AttentionParams.init(model_dim, head_count, rng),
                cross_attn=AttentionParams.init(model_dim, head_count, rng),
                ffn=FeedForwardParams.init(model_dim, inner_dim, rng),
                ln_self=LayerNormParams.init(model_dim),
                ln_cross=LayerNormParams.init(model_dim),
                ln_ffn=LayerNormParams.init(model_dim),
            )
            for _ in range(layer_count)
        ]
        final = LayerNormParams.init(model_dim) if layer_count > 0 else None
        return cls(layers=layers, final_ln=final, dropout=dropout)

    def named(self, prefix: str):
        for i, layer in enumerate(self.layers):
            yield from layer.named(f"{prefix}.l{i}")
        if self.final_ln is not None:
            yield from self.final_ln.named(f"{prefix}.ln_final")


def multi_head_attention(query: Tensor, keys_values: Tensor, params: AttentionParams,
                         mask=None, trace: Trace | None = None) -> Tensor:
    """Scaled dot-product attention per head, concatenated and projected.

    ``mask`` is boolean over key positions: either one row of length m or a
    full q x m matrix; True marks keys that may be attended. An empty key
    set yields a zero output.
    """
    q_len = query.shape[0]
    m_len = keys_values.shape[0]
    if query.shape[1] != params.model_dim or keys_values.shape[1] != params.model_dim:
        raise tt.ShapeError(
            f"attention inputs must have width {params.model_dim}, "
            f"got {query.shape} and {keys_values.shape}")
    if m_len == 0:
        return tt.zeros((q_len, params.model_dim), dtype=query.dtype)
    head_dim = params.model_dim // params.head_count
    scale = 1.0 / math.sqrt(head_dim)
    heads = []
    for h in range(params.head_count):
        q = tt.matmul(query, params.wq[h])
        k = tt.matmul(keys_values, params.wk[h])
        v = tt.matmul(keys_values, params.wv[h])
        scores = tt.mul(tt.matmul(q, tt.transpose(k)), scale)
        weights = tt.softmax_rows(scores, mask=mask)
        if trace is not None:
            trace.add_attention(weights.data)
        heads.append(tt.matmul(weights, v))
    merged = heads[0] if len(heads) == 1 else tt.concat_cols(heads)
    return tt.matmul(merged, params.wo)


def feed_forward(x: Tensor, params: FeedForwardParams) -> Tensor:
    """Position-wise two-layer network with ReLU inner activation."""
    inner = tt.relu(tt.add(tt.matmul(x, params.w1), params.b1))
    return tt.add(tt.matmul(inner, params.w2), params.b2)


def positional_encoding(length: int, dim: int, dtype=None) -> Tensor:
    """Sinusoidal position encoding; even columns sine, odd columns cosine."""
    if dim % 2 != 0:
        raise ValueError(f"positional encoding dim must be even, got {dim}")
    dtype = dtype if dtype is not None else tt.get_default_dtype()
    pos = np.arange(length, dtype=np.float64)[:, None]
    idx = np.arange(0, dim, 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, idx / dim)
    pe = np.empty((length, dim), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return Tensor(pe.astype(dtype))


def _sublayer(x: Tensor, out: Tensor, rate: float, rng) -> Tensor:
    return tt.add(x, tt.dropout(out, rate, rng))


def transformer_encode(x: Tensor, stack: EncoderStack, pad_mask=None,
                       rng: np.random.Generator | None = None,
                       trace: Trace | None = None) -> Tensor:
    """Run the self-attention stack; pad_mask marks real (attendable) positions."""
    for layer in stack.layers:
        normed = layer.ln_attn.apply(x)
        attended = multi_head_attention(normed, normed, layer.self_attn,
                                        mask=pad_mask, trace=trace)
        x = _sublayer(x, attended, stack.dropout, rng)
        x = _sublayer(x, feed_forward(layer.ln_ffn.apply(x), layer.ffn), stack.dropout, rng)
    if stack.layers:
        x = stack.final_ln.apply(x)
    return x


def _causal_mask(length: int) -> np.ndarray:
    return np.tril(np.ones((length, length), dtype=bool))


def transformer_decode(prefix: Tensor, encoder_out: Tensor, stack: DecoderStack,
                       enc_mask=None, rng: np.random.Generator | None = None,
                       trace: Trace | None = None) -> Tensor:
    """Hidden states for every prefix position under causal self-attention."""
    causal = _causal_mask(prefix.shape[0])
    x = prefix
    for layer in stack.layers:
        normed = layer.ln_self.apply(x)
        x = _sublayer(x, multi_head_attention(normed, normed, layer.self_attn,
                                              mask=causal, trace=trace),
                      stack.dropout, rng)
        normed = layer.ln_cross.apply(x)
        x = _sublayer(x, multi_head_attention(normed, encoder_out, layer.cross_attn,
                                              mask=enc_mask, trace=trace),
                      stack.dropout, rng)
        x = _sublayer(x, feed_forward(layer.ln_ffn.apply(x), layer.ffn), stack.dropout, rng)
    if stack.layers:
        x = stack.final_ln.apply(x)
    return x


def transformer_decode_step(prefix: Tensor, encoder_out: Tensor, stack: DecoderStack,
                            out_proj: Tensor, enc_mask=None,
                            trace: Trace | None = None) -> Tensor:
    """Vocabulary logits for the position following the given prefix.

    ``out_proj`` is the V x d projection table (typically the target
    embedding matrix); returns a 1 x V tensor.
    """
    hidden = transformer_decode(prefix, encoder_out, stack, enc_mask=enc_mask, trace=trace)
    last = tt.take_rows(hidden, [hidden.shape[0] - 1])
    return tt.matmul(last, tt.transpose(out_proj))
