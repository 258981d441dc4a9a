"""Corpus-level caption metrics: BLEU@1, BLEU@4, and CIDEr-D.

Both metrics run on a shared tokenizer: lowercase, remove the 32 ASCII
punctuation characters

    !"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~

then split on whitespace. This is a documented stand-in for the PTB-style
tokenizer used by the reference captioning toolkits; scores computed here are
internally consistent but not interchangeable with other packages' numbers.

BLEU is corpus-level: clipped n-gram precision against the union of
references, geometric mean with uniform weights over n = 1..max_n, and a
multiplicative brevity penalty exp(1 - r/c) applied when the total candidate
length c does not exceed the total reference length r (r uses each
instance's closest reference length, ties resolved to the shorter one).
There is no smoothing: a zero clipped count at any order gives score 0.

CIDEr-D: per-sentence TF-IDF n-gram vectors for n = 1..4 with
IDF = log(N / df) over the corpus's reference sets (df clamped to >= 1),
clipped cosine per n, a Gaussian length penalty exp(-(len_c - len_r)^2 /
(2 * 6^2)), averaged over n and references and scaled by 10. The corpus
score is the mean over instances. Sums are accumulated with math.fsum so
scores are independent of corpus and reference ordering.
"""

from __future__ import annotations

import math
import string
from collections import Counter
from dataclasses import dataclass, field

CIDER_MAX_N = 4
CIDER_SIGMA = 6.0
CIDER_SCALE = 10.0

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


@dataclass
class EvalInstance:
    """One evaluation item: candidate caption plus its reference set."""

    image_id: int | str
    candidate: str
    references: list[str]

    def __post_init__(self):
        if not self.references:
            raise ValueError(f"instance {self.image_id!r} has no references")


@dataclass
class MetricReport:
    """Corpus scores; BLEU values are in [0, 1], CIDEr-D in [0, 10]."""

    bleu1: float
    bleu4: float
    cider: float
    instance_count: int
    warnings: list[str] = field(default_factory=list)
    per_instance_cider: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "bleu1": self.bleu1,
            "bleu4": self.bleu4,
            "cider": self.cider,
            "instance_count": self.instance_count,
            "warnings": list(self.warnings),
            "per_instance_cider": list(self.per_instance_cider),
        }


def tokenize(s: str) -> list[str]:
    """Lowercase, strip ASCII punctuation, split on whitespace."""
    return s.lower().translate(_PUNCT_TABLE).split()


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_len(cand_len: int, ref_lens: list[int]) -> int:
    return min(ref_lens, key=lambda r: (abs(r - cand_len), r))


def bleu(corpus: list[EvalInstance], max_n: int) -> float:
    """Corpus BLEU at order ``max_n`` (1 for BLEU@1, 4 for BLEU@4)."""
    if not corpus:
        raise ValueError("corpus must be non-empty")
    if max_n < 1:
        raise ValueError(f"max_n must be >= 1, got {max_n}")
    clipped = [0] * max_n
    totals = [0] * max_n
    cand_len_total = 0
    ref_len_total = 0
    for inst in corpus:
        cand = tokenize(inst.candidate)
        refs = [tokenize(r) for r in inst.references]
        cand_len_total += len(cand)
        ref_len_total += _closest_ref_len(len(cand), [len(r) for r in refs])
        for n in range(1, max_n + 1):
            cand_counts = _ngram_counts(cand, n)
            max_ref: dict = {}
            for ref in refs:
                for gram, count in _ngram_counts(ref, n).items():
                    if count > max_ref.get(gram, 0):
                        max_ref[gram] = count
            clipped[n - 1] += sum(min(c, max_ref.get(g, 0)) for g, c in cand_counts.items())
            totals[n - 1] += max(len(cand) - n + 1, 0)
    if cand_len_total == 0:
        return 0.0
    if any(c == 0 or t == 0 for c, t in zip(clipped, totals)):
        return 0.0
    log_precision = math.fsum(
        math.log(c / t) for c, t in zip(clipped, totals)) / max_n
    brevity = 1.0 if cand_len_total > ref_len_total else math.exp(
        1.0 - ref_len_total / cand_len_total)
    return brevity * math.exp(log_precision)


def _tfidf_vec(tokens: list[str], df: dict, log_corpus_size: float):
    """TF-IDF n-gram vectors for one sentence: ([dict]*4, [norm]*4, length)."""
    vecs = [dict() for _ in range(CIDER_MAX_N)]
    norms = [0.0] * CIDER_MAX_N
    for n in range(1, CIDER_MAX_N + 1):
        sq = []
        for gram, tf in _ngram_counts(tokens, n).items():
            w = tf * (log_corpus_size - math.log(max(df.get(gram, 0), 1)))
            vecs[n - 1][gram] = w
            sq.append(w * w)
        norms[n - 1] = math.sqrt(math.fsum(sq))
    return vecs, norms, len(tokens)


def cider_scores(corpus: list[EvalInstance]) -> list[float]:
    """Per-instance CIDEr-D scores (document frequencies over this corpus)."""
    if not corpus:
        raise ValueError("corpus must be non-empty")
    ref_tokens = [[tokenize(r) for r in inst.references] for inst in corpus]
    df: dict = {}
    for refs in ref_tokens:
        grams = set()
        for ref in refs:
            for n in range(1, CIDER_MAX_N + 1):
                grams.update(_ngram_counts(ref, n))
        for gram in grams:
            df[gram] = df.get(gram, 0) + 1
    log_corpus_size = math.log(len(corpus))

    scores = []
    for inst, refs in zip(corpus, ref_tokens):
        cand_vec, cand_norm, cand_len = _tfidf_vec(tokenize(inst.candidate), df, log_corpus_size)
        vals = []
        for ref in refs:
            ref_vec, ref_norm, ref_len = _tfidf_vec(ref, df, log_corpus_size)
            penalty = math.exp(-((cand_len - ref_len) ** 2) / (2.0 * CIDER_SIGMA ** 2))
            for n in range(CIDER_MAX_N):
                if cand_norm[n] > 0.0 and ref_norm[n] > 0.0:
                    num = math.fsum(
                        min(w, ref_vec[n].get(g, 0.0)) * ref_vec[n].get(g, 0.0)
                        for g, w in cand_vec[n].items())
                    vals.append(penalty * num / (cand_norm[n] * ref_norm[n]))
                else:
                    vals.append(0.0)
        scores.append(CIDER_SCALE * math.fsum(vals) / (CIDER_MAX_N * len(refs)))
    return scores


def cider(corpus: list[EvalInstance]) -> float:
    """Corpus CIDEr-D: mean of the per-instance scores."""
    scores = cider_scores(corpus)
    return math.fsum(scores) / len(scores)


def evaluate(corpus: list[EvalInstance]) -> MetricReport:
    """Run all metrics over a corpus and assemble the report."""
    warnings = []
    if len(corpus) == 1:
        warnings.append(
            "singleton corpus: CIDEr-D document frequencies are degenerate (IDF = 0)")
    per_instance = cider_scores(corpus)
    return MetricReport(
        bleu1=bleu(corpus, 1),
        bleu4=bleu(corpus, 4),
        cider=math.fsum(per_instance) / len(per_instance),
        instance_count=len(corpus),
        warnings=warnings,
        per_instance_cider=per_instance,
    )
