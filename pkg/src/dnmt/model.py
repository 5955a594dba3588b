"""The document translation model.

Source tokens are embedded, optionally enriched with discourse-path
vectors, encoded by the sentence encoder, and optionally mixed with
hierarchical attention over the previous source sentences of the same
document. A standard causal decoder with cross-attention produces target
token probabilities; the output projection is tied to the target
embedding table.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as tt
from .data import BOS, EOS, SentenceTranslationInput, make_examples
from .han import ContextSet, HanParams, apply_context
from .nnet import (DecoderStack, EncoderStack, Trace, positional_encoding,
                   transformer_decode, transformer_encode)
from .path_encoder import PathEncoderParams, encode_token_paths, enrich_embeddings
from .tensor import Tensor

__all__ = [
    "ModelConfig", "ModelParams", "TranslationResult", "encode",
    "decoder_logits", "sentence_log_prob", "document_log_prob",
    "translate_sentence", "translate_document",
]


@dataclass
class ModelConfig:
    src_vocab_size: int
    tgt_vocab_size: int
    label_count: int
    model_dim: int = 512
    head_count: int = 8
    ffn_dim: int = 2048
    enc_layers: int = 6
    dec_layers: int = 6
    path_layers: int = 2
    context_window: int = 3
    max_depth: int = 16
    dropout: float = 0.1
    use_ds: bool = True
    use_han: bool = True
    seed: int = 1

    def validate(self) -> "ModelConfig":
        if self.model_dim < 2 or self.model_dim % 2 != 0:
            raise ValueError(f"model_dim must be even and >= 2, got {self.model_dim}")
        if self.model_dim % self.head_count != 0:
            raise ValueError(
                f"model_dim {self.model_dim} not divisible by head_count {self.head_count}")
        for name in ("enc_layers", "dec_layers", "path_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.src_vocab_size < 5 or self.tgt_vocab_size < 5:
            raise ValueError("vocab sizes must cover the 4 reserved tokens plus content")
        if self.label_count < 3:
            raise ValueError("label_count must cover the reserved path labels")
        if not 0 <= self.dropout < 1:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.context_window < 0:
            raise ValueError("context_window must be nonnegative")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d).validate()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ModelConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _init_embedding(rng: np.random.Generator, rows: int, dim: int) -> Tensor:
    bound = math.sqrt(1.0 / dim)
    data = rng.uniform(-bound, bound, size=(rows, dim)).astype(tt.get_default_dtype())
    return Tensor(data, requires_grad=True)


@dataclass
class ModelParams:
    config: ModelConfig
    src_embed: Tensor
    tgt_embed: Tensor
    encoder: EncoderStack
    decoder: DecoderStack
    path: PathEncoderParams | None = None
    han: HanParams | None = None

    @classmethod
    def init(cls, config: ModelConfig) -> "ModelParams":
        config.validate()
        # each component draws from its own stream so shared components
        # are initialized identically across flag variants of one seed
        def stream(k: int) -> np.random.Generator:
            return np.random.default_rng([config.seed, k])

        d, heads, ffn = config.model_dim, config.head_count, config.ffn_dim
        path = None
        if config.use_ds:
            path = PathEncoderParams.init(config.label_count, d, heads, ffn,
                                          config.path_layers, config.dropout, stream(4))
        han = None
        if config.use_han:
            han = HanParams.init(d, heads, ffn, stream(5))
        return cls(
            config=config,
            src_embed=_init_embedding(stream(0), config.src_vocab_size, d),
            tgt_embed=_init_embedding(stream(1), config.tgt_vocab_size, d),
            encoder=EncoderStack.init(config.enc_layers, d, heads, ffn,
                                      config.dropout, stream(2)),
            decoder=DecoderStack.init(config.dec_layers, d, heads, ffn,
                                      config.dropout, stream(3)),
            path=path,
            han=han,
        )

    def named(self):
        yield "src_embed", self.src_embed
        yield "tgt_embed", self.tgt_embed
        yield from self.encoder.named("enc")
        yield from self.decoder.named("dec")
        if self.path is not None:
            yield from self.path.named("path")
        if self.han is not None:
            yield from self.han.named("han")

    def tensors(self) -> dict:
        return dict(self.named())

    def context_param_names(self) -> list:
        return [n for n, _ in self.named() if n.startswith("han.")]

    def sentence_param_names(self) -> list:
        return [n for n, _ in self.named() if not n.startswith("han.")]

    def load_arrays(self, arrays: dict) -> tuple:
        """Assign stored arrays by name; returns (missing, unexpected) names."""
        own = self.tensors()
        missing = [n for n in own if n not in arrays]
        unexpected = [n for n in arrays if n not in own]
        for name, tensor in own.items():
            if name in arrays:
                value = np.asarray(arrays[name])
                if value.shape != tensor.data.shape:
                    raise tt.ShapeError(
                        f"checkpoint array {name!r} has shape {value.shape}, "
                        f"model expects {tensor.data.shape}")
                tensor.data = value.copy()
        return missing, unexpected


def _embed(table: Tensor, ids, dim: int) -> Tensor:
    x = tt.mul(tt.take_rows(table, list(ids)), math.sqrt(dim))
    pe = positional_encoding(len(ids), dim, dtype=x.dtype)
    return x, pe


def embed_source(ids, path_ids, params: ModelParams,
                 rng: np.random.Generator | None = None) -> Tensor:
    """Word embedding, discourse enrichment when enabled, then positions."""
    d = params.config.model_dim
    x, pe = _embed(params.src_embed, ids, d)
    if params.config.use_ds and params.path is not None and len(ids) > 0:
        x = enrich_embeddings(x, encode_token_paths(path_ids, params.path, rng=rng))
    return tt.add(x, pe)


def embed_target(ids, params: ModelParams) -> Tensor:
    x, pe = _embed(params.tgt_embed, ids, params.config.model_dim)
    return tt.add(x, pe)


def encode(inp: SentenceTranslationInput, params: ModelParams,
           rng: np.random.Generator | None = None, trace: Trace | None = None,
           context_grad: bool = False) -> Tensor:
    """Encoder output h~ for one sentence with its document context."""
    x = embed_source(inp.src_ids, inp.src_paths, params, rng)
    h = transformer_encode(x, params.encoder, rng=rng, trace=trace)
    if not params.config.use_han or params.han is None or not inp.context_ids:
        return h

    def encode_contexts():
        states = []
        for ids, paths in zip(inp.context_ids, inp.context_paths):
            if not ids:
                continue
            cx = embed_source(ids, paths, params, rng)
            states.append(transformer_encode(cx, params.encoder, rng=rng, trace=trace))
        return states

    if context_grad:
        states = encode_contexts()
    else:
        # context encodings are treated as constants: cheap and stable
        with tt.no_grad():
            states = encode_contexts()
    if trace is not None:
        trace.context_windows.append(inp.context_range)
    ctx = ContextSet.build(states)
    return apply_context(h, ctx, params.han, trace=trace)


def decoder_logits(prefix_ids, encoder_out: Tensor, params: ModelParams,
                   rng: np.random.Generator | None = None,
                   trace: Trace | None = None) -> Tensor:
    """Vocabulary logits at every prefix position (teacher forcing)."""
    y = embed_target(prefix_ids, params)
    hidden = transformer_decode(y, encoder_out, params.decoder, rng=rng, trace=trace)
    return tt.matmul(hidden, tt.transpose(params.tgt_embed))


def _check_target(tgt_ids) -> None:
    if len(tgt_ids) < 2 or tgt_ids[0] != BOS or tgt_ids[-1] != EOS:
        raise ValueError("target must start with BOS and end with EOS")


def sentence_log_prob(inp: SentenceTranslationInput, tgt_ids, params: ModelParams,
                      rng: np.random.Generator | None = None,
                      trace: Trace | None = None, context_grad: bool = False) -> Tensor:
    """Teacher-forced log P(target | source, context) as a scalar tensor."""
    _check_target(tgt_ids)
    h = encode(inp, params, rng=rng, trace=trace, context_grad=context_grad)
    logits = decoder_logits(tgt_ids[:-1], h, params, rng=rng, trace=trace)
    logp = tt.log_softmax_rows(logits)
    return tt.sum_all(tt.pick(logp, tgt_ids[1:]))


def document_log_prob(doc, params: ModelParams, src_vocab, tgt_vocab,
                      label_vocab) -> float:
    """Sum of per-sentence log probabilities over the whole document."""
    cfg = params.config
    examples = make_examples(doc, cfg.context_window, cfg.max_depth,
                             src_vocab, tgt_vocab, label_vocab)
    total = 0.0
    with tt.no_grad():
        for ex in examples:
            total += sentence_log_prob(ex.inp, ex.tgt_ids, params).item()
    return total


@dataclass
class TranslationResult:
    ids: list
    reached_eos: bool
    score: float
    finalists: list = field(default_factory=list)


def _normalized(logprob: float, ids, alpha: float) -> float:
    produced = max(1, len(ids) - 1)
    return logprob / (produced ** alpha)


def translate_sentence(inp: SentenceTranslationInput, params: ModelParams,
                       beam_size: int = 4, max_len: int | None = None,
                       alpha: float = 0.6) -> TranslationResult:
    """Beam search over target prefixes with length-normalized selection.

    Raw cumulative log probability ranks hypotheses inside the beam; the
    final pick maximizes score/length^alpha over the surviving
    hypotheses. Ties always resolve toward lower token ids. The output
    excludes BOS and EOS.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    src_len = len(inp.src_ids)
    if src_len == 0:
        return TranslationResult(ids=[], reached_eos=True, score=0.0,
                                 finalists=[([], 0.0, True)])
    if max_len is None:
        max_len = 2 * src_len + 10
    with tt.no_grad():
        h = encode(inp, params)
        beams = [(0.0, (BOS,), False)]
        for _ in range(max_len):
            if all(done for _, _, done in beams):
                break
            candidates = []
            for bi, (lp, ids, done) in enumerate(beams):
                if done:
                    candidates.append((lp, bi, -1, ids, True))
                    continue
                logits = decoder_logits(list(ids), h, params)
                row = tt.log_softmax_rows(logits).data[-1]
                order = np.lexsort((np.arange(row.shape[0]), -row))
                for tok in order[:beam_size]:
                    tok = int(tok)
                    candidates.append((lp + float(row[tok]), bi, tok,
                                       ids + (tok,), tok == EOS))
            candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
            beams = [(lp, ids, done) for lp, _, _, ids, done in candidates[:beam_size]]
    finalists = [(list(ids[1:]), _normalized(lp, ids, alpha), done)
                 for lp, ids, done in beams]
    best = min(range(len(finalists)),
               key=lambda i: (-finalists[i][1], finalists[i][0]))
    ids, score, done = finalists[best]
    if done:
        ids = ids[:-1]
    return TranslationResult(ids=ids, reached_eos=done, score=score,
                             finalists=finalists)


def translate_document(doc, params: ModelParams, src_vocab, tgt_vocab, label_vocab,
                       beam_size: int = 4, max_len: int | None = None,
                       alpha: float = 0.6) -> list:
    """Translate each sentence in order, with source-side context windows."""
    cfg = params.config
    examples = make_examples(doc, cfg.context_window, cfg.max_depth,
                             src_vocab, tgt_vocab, label_vocab)
    return [translate_sentence(ex.inp, params, beam_size=beam_size,
                               max_len=max_len, alpha=alpha)
            for ex in examples]
