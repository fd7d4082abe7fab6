"""GEC scoring: edit extraction, M2-style F0.5, GLEU and paired bootstrap.

The M2 scorer's edit-lattice search is replaced by exact matching against a
single deterministic Levenshtein edit extraction. Every system in this
package is scored the same way, so comparisons between them are consistent,
but absolute numbers are not comparable with the reference M2 scorer.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import AnnotatedSentence, Edit

BETA = 0.5
SIMPLIFICATION_NOTE = ("edits extracted by deterministic Levenshtein alignment and matched "
                       "exactly; no M2 edit-lattice search")

# alignment operations, listed in tie-break priority order
MATCH, SUB, DEL, INS = "M", "S", "D", "I"


def align(source: Sequence[str], hypothesis: Sequence[str]) -> List[Tuple[str, int, int]]:
    """Levenshtein alignment as a list of ``(op, i, j)`` steps.

    ``i``/``j`` index the source/hypothesis token consumed by the step.
    Ties prefer match, then substitution, deletion, insertion.
    """
    n, m = len(source), len(hypothesis)
    cost = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        cost[i][0] = i
    for j in range(m + 1):
        cost[0][j] = j
    for i in range(1, n + 1):
        si, prev, row = source[i - 1], cost[i - 1], cost[i]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (0 if si == hypothesis[j - 1] else 1)
            row[j] = min(diag, prev[j] + 1, row[j - 1] + 1)
    ops = []
    i, j = n, m
    while i > 0 or j > 0:
        c = cost[i][j]
        if i > 0 and j > 0 and source[i - 1] == hypothesis[j - 1] and c == cost[i - 1][j - 1]:
            ops.append((MATCH, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and c == cost[i - 1][j - 1] + 1:
            ops.append((SUB, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and c == cost[i - 1][j] + 1:
            ops.append((DEL, i - 1, j))
            i -= 1
        else:
            ops.append((INS, i, j - 1))
            j -= 1
    ops.reverse()
    return ops


def extract_edits(source: Sequence[str], hypothesis: Sequence[str]) -> List[Edit]:
    """Edits turning ``source`` into ``hypothesis``; adjacent changes are merged."""
    edits: List[Edit] = []
    run_start: Optional[int] = None
    run_end = 0
    repl: List[str] = []

    def close():
        nonlocal run_start, repl
        if run_start is not None:
            edits.append(Edit(run_start, run_end, tuple(repl)))
        run_start, repl = None, []

    for op, i, j in align(source, hypothesis):
        if op == MATCH:
            close()
            continue
        if run_start is None:
            run_start = i
            run_end = i
        if op in (SUB, DEL):
            run_end = i + 1
        if op in (SUB, INS):
            repl.append(hypothesis[j])
    close()
    return edits


def f_beta(tp: float, fp: float, fn: float, beta: float = BETA) -> Tuple[float, float, float]:
    """Precision, recall and F-beta with every 0/0 taken as 0."""
    p = tp / (tp + fp) if tp + fp > 0 else 0.0
    r = tp / (tp + fn) if tp + fn > 0 else 0.0
    b2 = beta * beta
    denom = b2 * p + r
    f = (1 + b2) * p * r / denom if denom > 0 else 0.0
    return p, r, f


def _sentence_f(tp: int, fp: int, fn: int) -> float:
    if tp + fp + fn == 0:
        return 1.0
    return f_beta(tp, fp, fn)[2]


@dataclass
class EvalReport:
    precision: float
    recall: float
    f_beta: float
    tp: int
    fp: int
    fn: int
    per_sentence: List[Tuple[int, int, int, int]] = field(default_factory=list)
    metadata: Dict[str, object] = field(default_factory=dict)

    def counts(self) -> np.ndarray:
        """Per-sentence ``(tp, fp, fn)`` as an ``(N, 3)`` array."""
        return np.array([row[:3] for row in self.per_sentence], dtype=np.int64).reshape(-1, 3)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_sentence"] = [list(r) for r in self.per_sentence]
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def m2_score(hypotheses: Sequence[Sequence[str]], gold: Sequence[AnnotatedSentence],
             metadata: Optional[dict] = None) -> EvalReport:
    if len(hypotheses) != len(gold):
        raise ValueError(f"{len(hypotheses)} hypotheses for {len(gold)} gold sentences")
    per_sentence = []
    TP = FP = FN = 0
    for hyp, sent in zip(hypotheses, gold):
        sys_keys = {e.key for e in extract_edits(sent.source, hyp)}
        best = None
        for ann in sorted(sent.annotations):
            gold_keys = {e.key for e in sent.annotations[ann]}
            tp = len(sys_keys & gold_keys)
            row = (tp, len(sys_keys) - tp, len(gold_keys) - tp, ann)
            score = _sentence_f(*row[:3])
            if best is None or score > best[0]:
                best = (score, row)
        row = best[1]
        per_sentence.append(row)
        TP, FP, FN = TP + row[0], FP + row[1], FN + row[2]
    p, r, f = f_beta(TP, FP, FN)
    meta = {"scorer": "m2-levenshtein", "simplified": True, "note": SIMPLIFICATION_NOTE, "beta": BETA}
    meta.update(metadata or {})
    return EvalReport(p, r, f, TP, FP, FN, per_sentence, meta)


# --------------------------------------------------------------------- GLEU

@dataclass(frozen=True)
class GleuConfig:
    max_n: int = 4
    penalty_weight: float = 1.0

    def __post_init__(self):
        if self.max_n < 1:
            raise ValueError("max_n must be >= 1")


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def gleu_stats(source: Sequence, hypothesis: Sequence, reference: Sequence,
               config: GleuConfig = GleuConfig()) -> np.ndarray:
    """``[num_1, den_1, ref_has_1, ..., num_N, den_N, ref_has_N, hyp_len, ref_len]``.

    ``num_n`` is the n-gram match count minus the weighted source-overlap
    penalty, floored at 0 per sentence before any corpus pooling.
    """
    row = []
    for n in range(1, config.max_n + 1):
        h, r, s = _ngrams(hypothesis, n), _ngrams(reference, n), _ngrams(source, n)
        matches = sum(min(c, r[g]) for g, c in h.items())
        penalty = sum(max(0, min(c, s[g]) - r[g]) for g, c in h.items())
        row += [max(0.0, matches - config.penalty_weight * penalty), sum(h.values()), int(sum(r.values()) > 0)]
    row += [len(hypothesis), len(reference)]
    return np.array(row, dtype=np.float64)


def gleu_from_stats(stats: np.ndarray, max_n: int) -> float:
    hyp_len, ref_len = stats[-2], stats[-1]
    if hyp_len <= 0:
        return 0.0
    logs = []
    for n in range(max_n):
        num, den, ref_has = stats[3 * n], stats[3 * n + 1], stats[3 * n + 2]
        if den > 0:
            p = num / den
        else:
            # hypothesis too short for this order: perfect only if the reference is too
            p = 0.0 if ref_has else 1.0
        logs.append(np.log(max(p, 1e-9)))
    bp = min(1.0, float(np.exp(1.0 - ref_len / hyp_len)))
    return float(bp * np.exp(np.mean(logs)))


def gleu_sentence(source: Sequence, hypothesis: Sequence, references: Sequence[Sequence],
                  config: GleuConfig = GleuConfig()) -> float:
    if not references:
        raise ValueError("need at least one reference")
    if len(hypothesis) == 0:
        return 0.0
    scores = [gleu_from_stats(gleu_stats(source, hypothesis, ref, config), config.max_n)
              for ref in references]
    return float(np.mean(scores))


def gleu_corpus(sources: Sequence[Sequence], hypotheses: Sequence[Sequence],
                references: Sequence[Sequence[Sequence]], config: GleuConfig = GleuConfig()) -> float:
    """Pooled-count corpus GLEU, averaged over reference index when several exist.

    Sentences with fewer references than the maximum cycle through theirs.
    """
    if not len(sources) == len(hypotheses) == len(references):
        raise ValueError("sources, hypotheses and references must align")
    if not hypotheses:
        return 0.0
    n_refs = max(len(r) for r in references)
    scores = []
    for k in range(n_refs):
        total = np.zeros(3 * config.max_n + 2)
        for src, hyp, refs in zip(sources, hypotheses, references):
            stats = gleu_stats(src, hyp, refs[k % len(refs)], config)
            # the "reference has n-grams" flags are or-ed, not summed
            flags = slice(2, 3 * config.max_n, 3)
            total[flags] = np.maximum(total[flags], stats[flags])
            stats[flags] = 0
            total += stats
        scores.append(gleu_from_stats(total, config.max_n))
    return float(np.mean(scores))


# ---------------------------------------------------------------- bootstrap

def corpus_f05(counts: np.ndarray) -> float:
    tp, fp, fn = (float(x) for x in np.asarray(counts).sum(axis=0))
    return f_beta(tp, fp, fn)[2]


def _f_from_sums(tp, fp, fn, beta=BETA):
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1e-300), 0.0)
        r = np.where(tp + fn > 0, tp / np.maximum(tp + fn, 1e-300), 0.0)
        b2 = beta * beta
        denom = b2 * p + r
        return np.where(denom > 0, (1 + b2) * p * r / np.where(denom > 0, denom, 1.0), 0.0)


def bootstrap_compare(counts_a, counts_b, resamples: int = 1000, seed: int = 0,
                      chunk: int = 2000) -> float:
    """Paired bootstrap p-value for "system a has higher F0.5 than b".

    Returns the fraction of resampled test sets on which F0.5(a) <= F0.5(b).
    """
    a = np.asarray(counts_a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(counts_b, dtype=np.float64).reshape(-1, 3)
    if a.shape != b.shape:
        raise ValueError(f"count arrays differ in shape: {a.shape} vs {b.shape}")
    if resamples < 1000:
        raise ValueError("resamples must be >= 1000")
    n = len(a)
    if n == 0:
        raise ValueError("no sentences to resample")
    rng = np.random.default_rng(seed)
    probs = np.full(n, 1.0 / n)
    worse = 0
    done = 0
    while done < resamples:
        k = min(chunk, resamples - done)
        weights = rng.multinomial(n, probs, size=k).astype(np.float64)
        sa, sb = weights @ a, weights @ b
        fa = _f_from_sums(sa[:, 0], sa[:, 1], sa[:, 2])
        fb = _f_from_sums(sb[:, 0], sb[:, 1], sb[:, 2])
        worse += int(np.count_nonzero(fa <= fb))
        done += k
    return worse / resamples
