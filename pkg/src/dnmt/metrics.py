"""Case-sensitive corpus BLEU and TER over single references.

BLEU is the geometric mean of corpus-level clipped n-gram precisions
(n = 1..4) times the brevity penalty; any zero precision zeroes the
score unless add-one smoothing is requested. TER counts insertions,
deletions, substitutions, and block shifts (one edit each), with shifts
chosen greedily while they keep reducing the remaining edit distance.
Both scores are on a 0-100 scale.
"""

from __future__ import annotations

import math
from collections import Counter

__all__ = ["corpus_bleu", "corpus_ter", "brevity_penalty", "sentence_edits"]

MAX_SHIFT_LEN = 10


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def brevity_penalty(hyp_len: int, ref_len: int) -> float:
    if hyp_len == 0:
        return 0.0
    if hyp_len > ref_len:
        return 1.0
    return math.exp(1.0 - ref_len / hyp_len)


def corpus_bleu(pairs, max_n: int = 4, smooth: bool = False) -> float:
    """Corpus-level BLEU in [0, 100].

    ``pairs`` is a sequence of (hypothesis tokens, reference tokens).
    With ``smooth``, every order's precision becomes (matches + 1) /
    (total + 1); otherwise a zero precision (or an order with no n-grams
    at all) gives BLEU 0.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("corpus_bleu needs at least one pair")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in pairs:
        hyp, ref = list(hyp), list(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            hyp_counts = _ngrams(hyp, n)
            if not hyp_counts:
                continue
            ref_counts = _ngrams(ref, n)
            totals[n - 1] += sum(hyp_counts.values())
            matches[n - 1] += sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
    if hyp_len == 0:
        return 0.0
    log_sum = 0.0
    for m, t in zip(matches, totals):
        if smooth:
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            return 0.0
        log_sum += math.log(m / t)
    score = brevity_penalty(hyp_len, ref_len) * math.exp(log_sum / max_n)
    return 100.0 * score


def _edit_distance(a, b) -> int:
    if not a:
        return len(b)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def _ref_substrings(ref, max_len: int) -> set:
    out = set()
    for n in range(1, min(max_len, len(ref)) + 1):
        for i in range(len(ref) - n + 1):
            out.add(tuple(ref[i:i + n]))
    return out


def _best_shift(hyp, ref, base: int, allowed: set):
    """Most edit-distance-reducing single block move, leftmost-shortest ties."""
    best = None  # (reduction, i, length, j, shifted)
    n = len(hyp)
    for i in range(n):
        for length in range(1, min(MAX_SHIFT_LEN, n - i) + 1):
            block = tuple(hyp[i:i + length])
            if block not in allowed:
                continue
            rest = hyp[:i] + hyp[i + length:]
            for j in range(len(rest) + 1):
                if j == i:
                    continue
                shifted = rest[:j] + list(block) + rest[j:]
                reduction = base - _edit_distance(shifted, ref)
                if reduction < 1:
                    continue
                key = (-reduction, i, length, j)
                if best is None or key < best[0]:
                    best = (key, shifted)
    return None if best is None else best[1]


def sentence_edits(hyp, ref) -> int:
    """TER edits for one pair: greedy shifts plus remaining edit distance."""
    current = list(hyp)
    ref = list(ref)
    allowed = _ref_substrings(ref, MAX_SHIFT_LEN)
    shifts = 0
    base = _edit_distance(current, ref)
    while base > 0:
        shifted = _best_shift(current, ref, base, allowed)
        if shifted is None:
            break
        shifts += 1
        current = shifted
        base = _edit_distance(current, ref)
    return shifts + base


def corpus_ter(pairs) -> float:
    """Corpus TER: total edits over total reference tokens, times 100."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("corpus_ter needs at least one pair")
    edits = 0
    ref_tokens = 0
    for hyp, ref in pairs:
        ref = list(ref)
        if not ref:
            raise ValueError("corpus_ter references must be nonempty")
        edits += sentence_edits(hyp, ref)
        ref_tokens += len(ref)
    return 100.0 * edits / ref_tokens
