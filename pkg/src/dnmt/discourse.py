"""Discourse trees over tokenized documents and per-token structure paths.

A tree is a binary hierarchy whose leaves are elementary discourse units
(EDUs), each covering a contiguous token span. Every internal node carries
a relation label and tags each child as NUCLEUS or SATELLITE. A token's
structure path is the label sequence collected on the walk from the root
down to its EDU: one CHILDIMPORTANCE_PARENTRELATION label per edge.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

__all__ = [
    "NUCLEUS",
    "SATELLITE",
    "NOPATH_LABEL",
    "PAD_LABEL",
    "UNK_LABEL",
    "Leaf",
    "Internal",
    "DiscourseTree",
    "TreeSyntaxError",
    "TreeValidationError",
    "parse_tree",
    "serialize_tree",
    "extract_path",
    "token_paths",
    "label_vocabulary",
    "LabelVocab",
]

NUCLEUS = "NUCLEUS"
SATELLITE = "SATELLITE"

NOPATH_LABEL = "NOPATH"
PAD_LABEL = "PAD"
UNK_LABEL = "UNK_LABEL"
RESERVED_LABELS = (PAD_LABEL, NOPATH_LABEL, UNK_LABEL)

_RELATION_RE = re.compile(r"[A-Z][A-Z_-]*$")


class TreeSyntaxError(ValueError):
    """Malformed tree text; message carries line and column."""


class TreeValidationError(ValueError):
    """Structurally parsed but invalid tree; message carries the node path."""


@dataclass(frozen=True)
class Leaf:
    edu_id: int
    start: int
    end: int


@dataclass(frozen=True)
class Internal:
    relation: str
    left: tuple  # (importance, node)
    right: tuple  # (importance, node)


@dataclass(frozen=True)
class DiscourseTree:
    root: object
    edu_spans: tuple  # ((edu_id, start, end), ...) in leaf order

    @property
    def token_count(self) -> int:
        return self.edu_spans[-1][2] if self.edu_spans else 0


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.line = 1
        self.col = 1

    def error(self, message: str) -> TreeSyntaxError:
        return TreeSyntaxError(f"line {self.line}, column {self.col}: {message}")

    def _advance(self, n: int) -> None:
        for ch in self.text[self.pos:self.pos + n]:
            if ch == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
        self.pos += n

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self._advance(1)

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str) -> None:
        self.skip_ws()
        if self.peek() != ch:
            got = self.peek() or "end of input"
            raise self.error(f"expected '{ch}', found {got!r}")
        self._advance(1)

    def word(self) -> str:
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and not self.text[self.pos].isspace() \
                and self.text[self.pos] not in "()":
            self._advance(1)
        if self.pos == start:
            got = self.peek() or "end of input"
            raise self.error(f"expected a token, found {got!r}")
        return self.text[start:self.pos]

    def integer(self, what: str) -> int:
        w = self.word()
        try:
            return int(w)
        except ValueError:
            raise self.error(f"expected {what} (integer), found {w!r}") from None

    def at_end(self) -> bool:
        self.skip_ws()
        return self.pos >= len(self.text)


def _parse_node(sc: _Scanner):
    sc.expect("(")
    head = sc.word()
    if head == "EDU":
        edu_id = sc.integer("edu id")
        start = sc.integer("start token")
        end = sc.integer("end token")
        sc.expect(")")
        return Leaf(edu_id, start, end)
    if not _RELATION_RE.match(head):
        raise sc.error(f"invalid relation label {head!r}")
    children = []
    for _ in range(2):
        sc.expect("(")
        tag = sc.word()
        if tag == "N":
            importance = NUCLEUS
        elif tag == "S":
            importance = SATELLITE
        else:
            raise sc.error(f"expected child tag 'N' or 'S', found {tag!r}")
        node = _parse_node(sc)
        sc.expect(")")
        children.append((importance, node))
    sc.expect(")")
    return Internal(head, children[0], children[1])


def _collect_leaves(node, path: str, out: list) -> None:
    if isinstance(node, Leaf):
        out.append((node, path))
        return
    for side, (_imp, child) in (("L", node.left), ("R", node.right)):
        _collect_leaves(child, path + side, out)


def _validate(root) -> DiscourseTree:
    def walk(node, path):
        if isinstance(node, Leaf):
            if node.edu_id < 1:
                raise TreeValidationError(f"node {path or 'root'}: edu id must be positive")
            if node.start < 0 or node.end <= node.start:
                raise TreeValidationError(
                    f"node {path or 'root'}: empty or negative span [{node.start}, {node.end})")
            return
        if node.left[0] != NUCLEUS and node.right[0] != NUCLEUS:
            raise TreeValidationError(f"node {path or 'root'}: no NUCLEUS child")
        walk(node.left[1], path + "L")
        walk(node.right[1], path + "R")

    walk(root, "")
    leaves: list = []
    _collect_leaves(root, "", leaves)
    prev_end = 0
    prev_id = 0
    spans = []
    for leaf, path in leaves:
        if leaf.edu_id <= prev_id:
            raise TreeValidationError(
                f"node {path or 'root'}: edu ids out of order ({leaf.edu_id} after {prev_id})")
        if leaf.start != prev_end:
            raise TreeValidationError(
                f"node {path or 'root'}: span starts at {leaf.start}, expected {prev_end} "
                "(spans must be contiguous from 0)")
        prev_end = leaf.end
        prev_id = leaf.edu_id
        spans.append((leaf.edu_id, leaf.start, leaf.end))
    return DiscourseTree(root=root, edu_spans=tuple(spans))


def parse_tree(text: str) -> DiscourseTree:
    """Parse and validate the s-expression form of a discourse tree."""
    sc = _Scanner(text)
    root = _parse_node(sc)
    if not sc.at_end():
        raise sc.error("trailing content after the tree")
    return _validate(root)


def serialize_tree(tree: DiscourseTree) -> str:
    """Canonical single-line s-expression; reparses to an identical tree."""
    def fmt(node) -> str:
        if isinstance(node, Leaf):
            return f"(EDU {node.edu_id} {node.start} {node.end})"
        tags = {NUCLEUS: "N", SATELLITE: "S"}
        left = f"({tags[node.left[0]]} {fmt(node.left[1])})"
        right = f"({tags[node.right[0]]} {fmt(node.right[1])})"
        return f"({node.relation} {left} {right})"

    return fmt(tree.root)


def extract_path(tree: DiscourseTree, edu_id: int) -> list:
    """Labels on the root-to-leaf walk for one EDU, root end first.

    Each edge contributes the child's importance tag joined with the
    parent's relation; a tree whose root is the leaf yields no labels.
    """
    def walk(node, acc):
        if isinstance(node, Leaf):
            return acc if node.edu_id == edu_id else None
        for importance, child in (node.left, node.right):
            found = walk(child, acc + [f"{importance}_{node.relation}"])
            if found is not None:
                return found
        return None

    path = walk(tree.root, [])
    if path is None:
        raise KeyError(f"edu id {edu_id} not present in tree")
    return path


def token_paths(tree: DiscourseTree, doc_token_count: int, max_depth: int) -> list:
    """Per-token path label sequences for a document the tree covers.

    Tokens inherit their EDU's path. Paths longer than ``max_depth`` keep
    the leaf-nearest labels; an empty path becomes the reserved NOPATH.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be at least 1")
    if tree.token_count != doc_token_count:
        raise ValueError(
            f"tree covers {tree.token_count} tokens but document has {doc_token_count}")
    paths = []
    for edu_id, start, end in tree.edu_spans:
        labels = extract_path(tree, edu_id)
        if len(labels) > max_depth:
            labels = labels[-max_depth:]
        if not labels:
            labels = [NOPATH_LABEL]
        labels = tuple(labels)
        paths.extend([labels] * (end - start))
    return paths


def label_vocabulary(trees) -> list:
    """Sorted labels observed across trees, with the reserved ones in front."""
    seen = set()
    for tree in trees:
        def visit(node):
            if isinstance(node, Leaf):
                return
            for importance, child in (node.left, node.right):
                seen.add(f"{importance}_{node.relation}")
                visit(child)
        visit(tree.root)
    seen.difference_update(RESERVED_LABELS)
    return list(RESERVED_LABELS) + sorted(seen)


class LabelVocab:
    """Bidirectional label/id map with PAD, NOPATH and UNK_LABEL reserved."""

    PAD_ID = 0
    NOPATH_ID = 1
    UNK_ID = 2

    def __init__(self, labels):
        labels = list(labels)
        if labels[:3] != list(RESERVED_LABELS):
            labels = list(RESERVED_LABELS) + [l for l in labels if l not in RESERVED_LABELS]
        self.labels = labels
        self._ids = {label: i for i, label in enumerate(labels)}

    def __len__(self) -> int:
        return len(self.labels)

    def id(self, label: str) -> int:
        return self._ids.get(label, self.UNK_ID)

    @classmethod
    def from_trees(cls, trees) -> "LabelVocab":
        return cls(label_vocabulary(trees))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for label in self.labels:
                fh.write(label + "\n")

    @classmethod
    def load(cls, path) -> "LabelVocab":
        with open(path, encoding="utf-8") as fh:
            labels = [line.rstrip("\n") for line in fh if line.strip()]
        return cls(labels)
