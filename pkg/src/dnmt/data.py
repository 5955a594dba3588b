"""Corpus I/O, vocabularies, context windows, and the synthetic task.

A corpus is JSON lines, one document per line:

    {"doc_id": ..., "src": [[tok, ...], ...], "tgt": [[tok, ...], ...],
     "rst": "<tree s-expression>"}

The tree covers the concatenated source tokens of the document. Context
windows are built from previous source sentences of the same document
only.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import discourse
from .discourse import DiscourseTree, LabelVocab

__all__ = [
    "DocumentPair", "Vocab", "SentenceTranslationInput", "Example",
    "CorpusError", "load_corpus", "save_corpus", "build_vocab",
    "make_examples", "corpus_examples", "generate_synthetic_corpus",
]

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")


class CorpusError(ValueError):
    """Schema or alignment problem in a corpus file."""


@dataclass
class DocumentPair:
    doc_id: str
    src_sentences: list
    tgt_sentences: list
    tree: DiscourseTree

    def source_token_count(self) -> int:
        return sum(len(s) for s in self.src_sentences)


@dataclass
class Vocab:
    """Token/id map with <pad>, <bos>, <eos>, <unk> pinned to ids 0-3."""

    tokens: list

    def __post_init__(self):
        if tuple(self.tokens[:4]) != RESERVED_TOKENS:
            self.tokens = list(RESERVED_TOKENS) + [
                t for t in self.tokens if t not in RESERVED_TOKENS]
        self._ids = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self._ids.get(token, UNK)

    def encode(self, tokens) -> list:
        return [self.id(t) for t in tokens]

    def decode(self, ids) -> list:
        return [self.tokens[i] for i in ids]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.tokens:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.strip()])


@dataclass
class SentenceTranslationInput:
    """One source sentence with its context window and discourse paths."""

    src_ids: list
    src_paths: list
    context_ids: list = field(default_factory=list)
    context_paths: list = field(default_factory=list)
    context_range: tuple = (0, 0)


@dataclass
class Example:
    inp: SentenceTranslationInput
    tgt_ids: list
    doc_id: str = ""
    sent_index: int = 0

    def target_token_count(self) -> int:
        # predicted positions: everything after BOS, including EOS
        return len(self.tgt_ids) - 1


def _check(cond: bool, line_no: int, message: str) -> None:
    if not cond:
        raise CorpusError(f"line {line_no}: {message}")


def parse_document(record: dict, line_no: int = 0) -> DocumentPair:
    for key in ("doc_id", "src", "tgt", "rst"):
        _check(key in record, line_no, f"missing field {key!r}")
    doc_id = record["doc_id"]
    _check(isinstance(doc_id, str) and doc_id != "", line_no, "doc_id must be a nonempty string")
    src, tgt = record["src"], record["tgt"]
    for name, side in (("src", src), ("tgt", tgt)):
        _check(isinstance(side, list) and all(
            isinstance(s, list) and all(isinstance(t, str) for t in s) for s in side),
            line_no, f"{name} must be a list of token lists")
    _check(len(src) == len(tgt), line_no,
           f"doc {doc_id!r}: {len(src)} source vs {len(tgt)} target sentences")
    _check(len(src) >= 1, line_no, f"doc {doc_id!r}: empty document")
    try:
        tree = discourse.parse_tree(record["rst"])
    except ValueError as exc:
        raise CorpusError(f"line {line_no}: doc {doc_id!r}: {exc}") from exc
    total = sum(len(s) for s in src)
    _check(tree.token_count == total, line_no,
           f"doc {doc_id!r}: tree covers {tree.token_count} tokens, document has {total}")
    return DocumentPair(doc_id=doc_id, src_sentences=src, tgt_sentences=tgt, tree=tree)


def load_corpus(path) -> list:
    """Read and validate a JSON-lines corpus; errors carry line numbers."""
    docs = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {line_no}: invalid JSON: {exc}") from exc
            _check(isinstance(record, dict), line_no, "record must be a JSON object")
            docs.append(parse_document(record, line_no))
    return docs


def document_record(doc: DocumentPair) -> str:
    return json.dumps({
        "doc_id": doc.doc_id,
        "src": doc.src_sentences,
        "tgt": doc.tgt_sentences,
        "rst": discourse.serialize_tree(doc.tree),
    }, ensure_ascii=False)


def save_corpus(docs, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(document_record(doc) + "\n")


def build_vocab(corpus, side: str, max_size: int) -> Vocab:
    """Most frequent tokens from one side, ties broken lexicographically."""
    if side not in ("src", "tgt"):
        raise ValueError(f"side must be 'src' or 'tgt', got {side!r}")
    if max_size <= 4:
        raise ValueError("max_size must exceed the 4 reserved tokens")
    counts = Counter()
    for doc in corpus:
        sentences = doc.src_sentences if side == "src" else doc.tgt_sentences
        for sentence in sentences:
            counts.update(sentence)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, _ in ranked[:max_size - 4]]
    return Vocab(list(RESERVED_TOKENS) + kept)


def sentence_offsets(doc: DocumentPair) -> list:
    """Half-open token ranges of each source sentence in document order."""
    offsets = []
    pos = 0
    for sentence in doc.src_sentences:
        offsets.append((pos, pos + len(sentence)))
        pos += len(sentence)
    return offsets


def make_examples(doc: DocumentPair, window: int, max_depth: int,
                  src_vocab: Vocab, tgt_vocab: Vocab,
                  label_vocab: LabelVocab) -> list:
    """One example per sentence, with up to ``window`` preceding sentences."""
    if window < 0:
        raise ValueError("window must be nonnegative")
    token_paths = discourse.token_paths(doc.tree, doc.source_token_count(), max_depth)
    path_ids = [tuple(label_vocab.id(lbl) for lbl in p) for p in token_paths]
    offsets = sentence_offsets(doc)
    per_sentence_ids = [src_vocab.encode(s) for s in doc.src_sentences]
    per_sentence_paths = [path_ids[a:b] for a, b in offsets]
    examples = []
    for j, (src, tgt) in enumerate(zip(doc.src_sentences, doc.tgt_sentences)):
        lo = max(0, j - window)
        inp = SentenceTranslationInput(
            src_ids=per_sentence_ids[j],
            src_paths=per_sentence_paths[j],
            context_ids=per_sentence_ids[lo:j],
            context_paths=per_sentence_paths[lo:j],
            context_range=(lo, j),
        )
        tgt_ids = [BOS] + tgt_vocab.encode(tgt) + [EOS]
        examples.append(Example(inp=inp, tgt_ids=tgt_ids, doc_id=doc.doc_id, sent_index=j))
    return examples


def corpus_examples(corpus, window: int, max_depth: int, src_vocab: Vocab,
                    tgt_vocab: Vocab, label_vocab: LabelVocab) -> list:
    out = []
    for doc in corpus:
        out.extend(make_examples(doc, window, max_depth, src_vocab, tgt_vocab, label_vocab))
    return out


def _random_tree(rng: np.random.Generator, spans, relations) -> "discourse.DiscourseTree":
    """Random valid binary tree whose leaves are the given (start, end) spans."""

    def build(lo: int, hi: int):
        if hi - lo == 1:
            edu_id, (start, end) = lo + 1, spans[lo]
            return f"(EDU {edu_id} {start} {end})"
        split = int(rng.integers(lo + 1, hi))
        relation = relations[int(rng.integers(len(relations)))]
        left, right = build(lo, split), build(split, hi)
        tags = [("N", "S"), ("S", "N"), ("N", "N")][int(rng.integers(3))]
        return f"({relation} ({tags[0]} {left}) ({tags[1]} {right}))"

    # leaf numbering above assumes build order == span order, which holds
    # because splits never reorder
    text = build(0, len(spans))
    return discourse.parse_tree(text)


DEFAULT_RELATIONS = ("ELABORATION", "CONTRAST", "BACKGROUND")


def generate_synthetic_corpus(seed: int, n_docs: int, sentences_per_doc: int,
                              vocab_size: int, relation_set=DEFAULT_RELATIONS,
                              min_len: int = 3, max_len: int = 6,
                              max_depth: int = 16) -> list:
    """Deterministic toy documents where discourse structure carries signal.

    Target sentences are the reversed source with every token substituted
    by a vocabulary rotation. The rotation offset is keyed to the first
    path label of the sentence's first token (invisible without the tree)
    plus a parity feature of the previous sentence's last token
    (invisible without context).
    """
    if min(n_docs, sentences_per_doc, vocab_size) < 1:
        raise ValueError("n_docs, sentences_per_doc and vocab_size must be >= 1")
    if not relation_set:
        raise ValueError("relation_set must be nonempty")
    relations = sorted(relation_set)
    label_ranks = {f"{imp}_{rel}": i for i, (rel, imp) in enumerate(
        (rel, imp) for rel in relations for imp in ("NUCLEUS", "SATELLITE"))}
    docs = []
    for d in range(n_docs):
        rng = np.random.default_rng([seed, d])
        sentences = []
        spans = []
        offsets = []
        pos = 0
        for _ in range(sentences_per_doc):
            length = int(rng.integers(min_len, max_len + 1))
            sentence = [f"w{int(rng.integers(vocab_size))}" for _ in range(length)]
            sentences.append(sentence)
            offsets.append((pos, pos + length))
            # one or two EDUs per sentence
            if length >= 4 and rng.random() < 0.5:
                cut = int(rng.integers(2, length - 1))
                spans.append((pos, pos + cut))
                spans.append((pos + cut, pos + length))
            else:
                spans.append((pos, pos + length))
            pos += length
        tree = _random_tree(rng, spans, relations)
        paths = discourse.token_paths(tree, pos, max_depth)
        tgt_sentences = []
        for j, sentence in enumerate(sentences):
            first_label = paths[offsets[j][0]][0]
            offset = label_ranks.get(first_label, -1) + 1
            if j > 0:
                prev_last = sentences[j - 1][-1]
                offset += int(prev_last[1:]) % 2
            tgt = [f"w{(int(tok[1:]) + offset) % vocab_size}"
                   for tok in reversed(sentence)]
            tgt_sentences.append(tgt)
        docs.append(DocumentPair(doc_id=f"doc{d:04d}", src_sentences=sentences,
                                 tgt_sentences=tgt_sentences, tree=tree))
    return docs
