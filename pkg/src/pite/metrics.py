"""Temporal grounding and dense captioning metrics.

Caption metrics use a fixed preprocessing: lowercase, punctuation stripped
to spaces, whitespace tokenization.  METEOR here is the exact-match-only
variant (no stemming or synonym tables), so scores are deterministic and
dependency-free; it is named meteor_lite to flag the deviation.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence


@dataclass(frozen=True)
class TimeSegment:
    start: float
    end: float

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"segment start {self.start} > end {self.end}")

    def length(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class CaptionedEvent:
    segment: TimeSegment
    caption: str

    def __post_init__(self):
        if not self.caption:
            raise ValueError("caption must be nonempty")


_PUNCT = re.compile(r"[^\w\s]", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation to spaces, whitespace split."""
    return _PUNCT.sub(" ", text.lower()).split()


def temporal_iou(a: TimeSegment, b: TimeSegment) -> float:
    """Intersection over union of two segments; 0 when the union has no length."""
    inter = max(0.0, min(a.end, b.end) - max(a.start, b.start))
    union = a.length() + b.length() - inter
    if union <= 0:
        return 0.0
    return inter / union


def grounding_scores(
    preds: Sequence[TimeSegment],
    gts: Sequence[TimeSegment],
    thresholds: Sequence[float] = (0.3, 0.5, 0.7),
) -> dict:
    """Recall@1 at each IoU threshold plus mean IoU over index-aligned pairs."""
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    if not gts:
        return {"r_at": {m: 0.0 for m in thresholds}, "miou": 0.0}
    ious = [temporal_iou(p, g) for p, g in zip(preds, gts)]
    return {
        "r_at": {m: sum(v >= m for v in ious) / len(ious) for m in thresholds},
        "miou": sum(ious) / len(ious),
    }


# --- CIDEr -------------------------------------------------------------------


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _tfidf_vector(tokens: Sequence[str], n: int, idf: Mapping[tuple, float]) -> Counter:
    counts = _ngram_counts(tokens, n)
    return Counter({g: tf * idf.get(g, 0.0) for g, tf in counts.items()})


def _cosine(a: Counter, b: Counter) -> float:
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0 or nb == 0:
        return 0.0
    dot = sum(v * b[g] for g, v in a.items() if g in b)
    return dot / (na * nb)


def build_idf(corpus: Sequence[Sequence[str]], max_n: int = 4) -> dict[int, dict]:
    """Per-n IDF over reference sets: idf(g) = log(|corpus| / df(g)), df clipped to 1."""
    n_docs = len(corpus)
    if n_docs == 0:
        raise ValueError("corpus must be nonempty")
    idf: dict[int, dict] = {n: {} for n in range(1, max_n + 1)}
    for n in range(1, max_n + 1):
        df: Counter = Counter()
        for refs in corpus:
            seen = set()
            for ref in refs:
                seen.update(_ngram_counts(tokenize(ref), n))
            df.update(seen)
        idf[n] = {g: math.log(n_docs / max(1.0, c)) for g, c in df.items()}
    return idf


def cider(
    candidate: str,
    refs: Sequence[str],
    corpus: Sequence[Sequence[str]],
    max_n: int = 4,
    idf: dict[int, dict] | None = None,
) -> float:
    """TF-IDF n-gram consensus (n=1..max_n), averaged over refs and n, scaled by 10.

    ``corpus`` is the list of reference sets supplying document frequencies;
    pass a precomputed ``idf`` (from build_idf) to amortize it across calls.
    """
    cand_tokens = tokenize(candidate)
    if not cand_tokens or not refs:
        return 0.0
    if idf is None:
        idf = build_idf(corpus, max_n)
    total = 0.0
    for n in range(1, max_n + 1):
        cand_vec = _tfidf_vector(cand_tokens, n, idf[n])
        sims = [
            _cosine(cand_vec, _tfidf_vector(tokenize(ref), n, idf[n])) for ref in refs
        ]
        total += sum(sims) / len(sims)
    return 10.0 * total / max_n


# --- METEOR (exact-match variant) ---------------------------------------------


def meteor_lite(candidate: str, ref: str) -> float:
    """Unigram exact-match METEOR: F_mean = 10PR/(R+9P) with a chunk penalty.

    Alignment is greedy fewest-chunks: candidate tokens match unmatched
    reference occurrences, preferring the continuation of the current chunk.
    """
    cand = tokenize(candidate)
    rtok = tokenize(ref)
    if not cand or not rtok:
        return 0.0
    positions: dict[str, list[int]] = {}
    for i, tok in enumerate(rtok):
        positions.setdefault(tok, []).append(i)
    used = set()
    pairs: list[tuple[int, int]] = []  # (candidate index, reference index)
    prev_ref = None
    for ci, tok in enumerate(cand):
        open_slots = [i for i in positions.get(tok, ()) if i not in used]
        if not open_slots:
            prev_ref = None
            continue
        if prev_ref is not None and prev_ref + 1 in open_slots:
            ri = prev_ref + 1
        else:
            ri = open_slots[0]
        used.add(ri)
        pairs.append((ci, ri))
        prev_ref = ri
    matches = len(pairs)
    if matches == 0:
        return 0.0
    chunks = 1
    for (c0, r0), (c1, r1) in zip(pairs, pairs[1:]):
        if c1 != c0 + 1 or r1 != r0 + 1:
            chunks += 1
    precision = matches / len(cand)
    recall = matches / len(rtok)
    f_mean = 10 * precision * recall / (recall + 9 * precision)
    penalty = 0.5 * (chunks / matches) ** 3
    return f_mean * (1.0 - penalty)


# --- SODA ----------------------------------------------------------------------


def soda_c(
    preds: Sequence[CaptionedEvent],
    gts: Sequence[CaptionedEvent],
    scorer: Callable[[str, str], float] = meteor_lite,
) -> float:
    """Story-oriented dense-captioning score.

    Dynamic programming finds the temporally order-preserving one-to-one
    matching maximizing the sum of IoU(pred, gt) * scorer(captions); the
    result is the harmonic mean of sum/|preds| and sum/|gts|.
    """
    if not preds or not gts:
        return 0.0
    preds = sorted(preds, key=lambda e: (e.segment.start, e.segment.end))
    gts = sorted(gts, key=lambda e: (e.segment.start, e.segment.end))
    n, m = len(preds), len(gts)
    score = [
        [
            temporal_iou(p.segment, g.segment) * scorer(p.caption, g.caption)
            for g in gts
        ]
        for p in preds
    ]
    # dp[i][j]: best total over preds[:i] x gts[:j]
    dp = [[0.0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            dp[i][j] = max(
                dp[i - 1][j],
                dp[i][j - 1],
                dp[i - 1][j - 1] + score[i - 1][j - 1],
            )
    best = dp[n][m]
    precision = best / n
    recall = best / m
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def iou_bucketed_caption_scores(
    preds: Sequence[CaptionedEvent],
    gts: Sequence[CaptionedEvent],
    metric: Callable[[str, str], float],
    thresholds: Sequence[float] = (0.3, 0.5, 0.7, 0.9),
) -> float:
    """Average caption score over IoU-thresholded greedy matchings.

    Per threshold, each ground truth (in order) is matched to the unmatched
    prediction with the highest IoU >= threshold (prediction ties by lowest
    index); unmatched ground truths score 0.  The per-threshold means are
    averaged.
    """
    if not gts:
        return 0.0
    per_threshold = []
    for threshold in thresholds:
        used: set[int] = set()
        total = 0.0
        for gt in gts:
            best_iou = -1.0
            best_idx = None
            for idx, pred in enumerate(preds):
                if idx in used:
                    continue
                iou = temporal_iou(pred.segment, gt.segment)
                if iou >= threshold and iou > best_iou:
                    best_iou = iou
                    best_idx = idx
            if best_idx is not None:
                used.add(best_idx)
                total += metric(preds[best_idx].caption, gt.caption)
        per_threshold.append(total / len(gts))
    return sum(per_threshold) / len(per_threshold)
