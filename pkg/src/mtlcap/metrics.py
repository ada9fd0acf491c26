"""Corpus-level BLEU-N and METEOR for caption evaluation.

BLEU uses the canonical corpus formulation: clipped n-gram precisions
aggregated over the corpus, geometric mean up to order N, brevity penalty
from the per-sentence closest reference length (ties to the shorter
reference). No smoothing at corpus level; a smoothed sentence-level BLEU is
exposed for per-sentence diagnostics only.

METEOR is the original exact-match variant (no stemming or synonymy):
unigram alignment maximizing matches then minimizing chunks, harmonic mean
F = 10PR/(R+9P), fragmentation penalty 0.5*(chunks/m)^3. The alignment is
found by exact branch-and-bound, not the usual greedy heuristic, so (m,
chunks) is provably optimal for every pair.
"""

import math
from collections import Counter
from dataclasses import dataclass, field

from .errors import EmptyInput, EmptyReferenceSet, LengthMismatch, MissingHypothesis
from .text import tokenize


def ngram_counts(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def clipped_matches(hyp_tokens, ref_token_lists, n: int) -> tuple[int, int]:
    """Clipped n-gram match count and total hypothesis n-gram count."""
    hyp_counts = ngram_counts(hyp_tokens, n)
    total = sum(hyp_counts.values())
    if not hyp_counts:
        return 0, 0
    max_ref = Counter()
    for ref in ref_token_lists:
        for gram, cnt in ngram_counts(ref, n).items():
            if cnt > max_ref[gram]:
                max_ref[gram] = cnt
    matched = sum(min(cnt, max_ref[gram]) for gram, cnt in hyp_counts.items())
    return matched, total


def closest_ref_length(hyp_len: int, ref_lengths) -> int:
    """Reference length closest to the hypothesis length; ties go to the shorter."""
    return min(ref_lengths, key=lambda rl: (abs(rl - hyp_len), rl))


def corpus_bleu(hypotheses, references, N: int = 4) -> float:
    """Corpus BLEU-N over tokenized hypotheses and per-image reference sets.

    Returns 0.0 whenever any corpus-level n-gram precision is zero.
    """
    if not 2 <= N <= 4:
        raise ValueError("N must be in 2..4")
    if len(hypotheses) != len(references):
        raise LengthMismatch(f"{len(hypotheses)} hypotheses vs {len(references)} reference sets")
    if not hypotheses:
        raise EmptyInput("no hypotheses")
    for refs in references:
        if not refs:
            raise EmptyReferenceSet("a reference set is empty")

    matched = [0] * N
    total = [0] * N
    c = 0
    r = 0
    for hyp, refs in zip(hypotheses, references):
        c += len(hyp)
        r += closest_ref_length(len(hyp), [len(ref) for ref in refs])
        for n in range(1, N + 1):
            m, t = clipped_matches(hyp, refs, n)
            matched[n - 1] += m
            total[n - 1] += t

    if c == 0:
        return 0.0
    log_p = 0.0
    for n in range(N):
        if matched[n] == 0 or total[n] == 0:
            return 0.0
        log_p += math.log(matched[n] / total[n]) / N
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_p)


def sentence_bleu(hyp_tokens, ref_token_lists, N: int = 4) -> float:
    """Diagnostic sentence-level BLEU with add-one smoothing on orders >= 2.

    Never used for corpus reporting.
    """
    if not ref_token_lists:
        raise EmptyReferenceSet("no references")
    if not hyp_tokens:
        return 0.0
    log_p = 0.0
    for n in range(1, N + 1):
        m, t = clipped_matches(hyp_tokens, ref_token_lists, n)
        if n == 1:
            if m == 0 or t == 0:
                return 0.0
            p = m / t
        else:
            p = (m + 1) / (t + 1)
        log_p += math.log(p) / N
    c = len(hyp_tokens)
    r = closest_ref_length(c, [len(ref) for ref in ref_token_lists])
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_p)


@dataclass
class MeteorAlignment:
    """Optimal exact-match unigram alignment between hypothesis and one reference."""

    matches: int
    chunks: int
    precision: float
    recall: float
    pairs: list[tuple[int, int]] = field(default_factory=list)  # (hyp_pos, ref_pos)


def _max_matches(hyp_tokens, ref_tokens) -> int:
    hc = Counter(hyp_tokens)
    rc = Counter(ref_tokens)
    return sum(min(c, rc[t]) for t, c in hc.items())


def align_unigrams(hyp_tokens, ref_tokens) -> MeteorAlignment:
    """Exact-match alignment maximizing matches then minimizing chunks.

    Branch-and-bound over hypothesis positions in order; chunk-extension
    moves are explored first, so among optimal alignments the one aligning
    the earliest hypothesis positions wins.
    """
    m_target = _max_matches(hyp_tokens, ref_tokens)
    if m_target == 0:
        return MeteorAlignment(0, 0, 0.0, 0.0, [])

    nh, nr = len(hyp_tokens), len(ref_tokens)
    cand = [[j for j in range(nr) if ref_tokens[j] == h] for h in hyp_tokens]
    # suffix potentials for pruning: hyp token counts at positions >= i
    suffix_counts = [Counter() for _ in range(nh + 1)]
    for i in range(nh - 1, -1, -1):
        suffix_counts[i] = suffix_counts[i + 1].copy()
        suffix_counts[i][hyp_tokens[i]] += 1

    ref_avail = Counter(ref_tokens)
    used = [False] * nr
    best = {"chunks": nh + 1, "pairs": None}

    def potential(i):
        return sum(min(c, ref_avail[t]) for t, c in suffix_counts[i].items())

    def search(i, matched, chunks, prev_j, pairs):
        if chunks >= best["chunks"]:
            return
        if matched + potential(i) < m_target:
            return
        if i == nh:
            if matched == m_target and chunks < best["chunks"]:
                best["chunks"] = chunks
                best["pairs"] = list(pairs)
            return
        tok = hyp_tokens[i]
        options = [j for j in cand[i] if not used[j]]
        # extending the current chunk first makes low-chunk solutions appear early
        options.sort(key=lambda j: (j != prev_j + 1, j))
        for j in options:
            used[j] = True
            ref_avail[tok] -= 1
            pairs.append((i, j))
            search(i + 1, matched + 1, chunks + (0 if j == prev_j + 1 else 1), j, pairs)
            pairs.pop()
            ref_avail[tok] += 1
            used[j] = False
        # leave position i unaligned; breaks any running chunk
        search(i + 1, matched, chunks, -2, pairs)

    search(0, 0, 0, -2, [])
    pairs = best["pairs"] or []
    return MeteorAlignment(
        matches=m_target,
        chunks=best["chunks"],
        precision=m_target / nh if nh else 0.0,
        recall=m_target / nr if nr else 0.0,
        pairs=pairs,
    )


def meteor_single(hyp_tokens, ref_tokens) -> float:
    ali = align_unigrams(hyp_tokens, ref_tokens)
    if ali.matches == 0:
        return 0.0
    p, r = ali.precision, ali.recall
    f_mean = 10.0 * p * r / (r + 9.0 * p)
    penalty = 0.5 * (ali.chunks / ali.matches) ** 3
    return f_mean * (1.0 - penalty)


def meteor_score(hyp_tokens, ref_token_lists) -> float:
    """METEOR of a hypothesis against multiple references: per-reference
    scores computed independently, maximum returned."""
    if not ref_token_lists:
        raise EmptyReferenceSet("no references")
    return max(meteor_single(hyp_tokens, ref) for ref in ref_token_lists)


@dataclass
class SentenceScores:
    image_id: str
    bleu2: float
    bleu3: float
    bleu4: float
    meteor: float


@dataclass
class EvalReport:
    """Corpus scores x100 (two decimals) plus per-sentence diagnostics."""

    bleu2: float
    bleu3: float
    bleu4: float
    meteor: float
    sentences: list[SentenceScores]
    n_images: int

    def rows(self):
        return [("B-2", self.bleu2), ("B-3", self.bleu3), ("B-4", self.bleu4),
                ("METEOR", self.meteor)]

    def table(self) -> str:
        lines = [f"{'Metric':<8}{'Score':>8}", "-" * 16]
        lines += [f"{name:<8}{value:>8.2f}" for name, value in self.rows()]
        lines.append(f"images  {self.n_images:>8d}")
        return "\n".join(lines)

    def tsv(self) -> str:
        return "".join(f"{name}\t{value:.2f}\n" for name, value in self.rows())

    def sentences_tsv(self) -> str:
        out = ["image_id\tB-2\tB-3\tB-4\tMETEOR\n"]
        for s in self.sentences:
            out.append(f"{s.image_id}\t{s.bleu2:.2f}\t{s.bleu3:.2f}\t{s.bleu4:.2f}\t{s.meteor:.2f}\n")
        return "".join(out)


def evaluate_corpus(records, hypotheses: dict, tokenizer=tokenize) -> EvalReport:
    """Score hypothesis captions for the given records (usually the test split).

    `hypotheses` maps image_id -> caption string; every record must be
    covered. References are all caption variants of each record.
    """
    missing = [r.image_id for r in records if r.image_id not in hypotheses]
    if missing:
        raise MissingHypothesis(missing)
    if not records:
        raise EmptyInput("no records to evaluate")

    hyp_tok = [tokenizer(hypotheses[r.image_id]) for r in records]
    ref_tok = [[tokenizer(c) for c in r.captions] for r in records]

    corpus = {n: corpus_bleu(hyp_tok, ref_tok, n) for n in (2, 3, 4)}
    sentences = []
    meteor_sum = 0.0
    for rec, hyp, refs in zip(records, hyp_tok, ref_tok):
        met = meteor_score(hyp, refs)
        meteor_sum += met
        sentences.append(SentenceScores(
            rec.image_id,
            round(100.0 * sentence_bleu(hyp, refs, 2), 2),
            round(100.0 * sentence_bleu(hyp, refs, 3), 2),
            round(100.0 * sentence_bleu(hyp, refs, 4), 2),
            round(100.0 * met, 2),
        ))
    return EvalReport(
        bleu2=round(100.0 * corpus[2], 2),
        bleu3=round(100.0 * corpus[3], 2),
        bleu4=round(100.0 * corpus[4], 2),
        meteor=round(100.0 * meteor_sum / len(records), 2),
        sentences=sentences,
        n_images=len(records),
    )
