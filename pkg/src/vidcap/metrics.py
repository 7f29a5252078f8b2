"""Corpus-level caption metrics: BLEU-1..4, ROUGE-L, CIDEr, METEOR-lite.

All metrics run on one shared tokenization (lowercase, punctuation
stripped except within-word apostrophes) and are deterministic and
order-invariant. METEOR-lite uses exact unigram matching only, so
scores are comparable within this codebase, not to numbers produced
with stem/synonym-aware METEOR releases.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .exceptions import DomainError, FormatError

ROUGE_BETA = 1.2
METEOR_SEARCH_BUDGET = 500_000


def tokenize(text: str) -> list[str]:
    """Lowercase, replace punctuation with spaces, keep apostrophes only
    between alphanumerics ("don't" survives, quoting marks do not).
    Idempotent: tokenizing joined output returns the same tokens."""
    lowered = text.lower()
    cleaned = []
    for ch in lowered:
        if ch.isalnum() or ch == "'" or ch.isspace():
            cleaned.append(ch)
        else:
            cleaned.append(" ")
    tokens = []
    for raw in "".join(cleaned).split():
        kept = []
        for k, ch in enumerate(raw):
            if ch == "'":
                if 0 < k < len(raw) - 1 and raw[k - 1].isalnum() and raw[k + 1].isalnum():
                    kept.append(ch)
            else:
                kept.append(ch)
        if kept:
            tokens.append("".join(kept))
    return tokens


@dataclass
class CorpusEntry:
    candidate: list[str]
    references: list[list[str]]


class EvalCorpus:
    """One tokenized candidate plus >=1 tokenized references per video."""

    def __init__(self, entries: Mapping[str, CorpusEntry]):
        if not entries:
            raise DomainError("corpus must contain at least one video")
        for vid, entry in entries.items():
            if not entry.references:
                raise DomainError(f"video {vid!r} has no references")
        self.entries = dict(entries)

    @classmethod
    def from_strings(cls, raw: Mapping[str, tuple[str, Sequence[str]]]) -> "EvalCorpus":
        return cls(
            {
                vid: CorpusEntry(tokenize(cand), [tokenize(r) for r in refs])
                for vid, (cand, refs) in raw.items()
            }
        )

    def __len__(self) -> int:
        return len(self.entries)

    def items(self):
        # fixed iteration order so reductions are deterministic
        return sorted(self.entries.items())


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(corpus: EvalCorpus, n: int) -> float:
    """Corpus BLEU-n: geometric mean of clipped k-gram precisions for
    k <= n, times the brevity penalty exp(min(0, 1 - r/c)) where r sums
    the per-video reference length closest to the candidate's."""
    if n not in (1, 2, 3, 4):
        raise DomainError(f"bleu order must be 1..4, got {n}")
    clipped = [0] * n
    total = [0] * n
    cand_len = 0
    ref_len = 0
    for _, entry in corpus.items():
        c = entry.candidate
        cand_len += len(c)
        # closest reference length; ties go to the shorter reference
        ref_len += min((abs(len(r) - len(c)), len(r)) for r in entry.references)[1]
        for k in range(1, n + 1):
            counts = _ngrams(c, k)
            if not counts:
                continue
            max_ref = Counter()
            for r in entry.references:
                for gram, cnt in _ngrams(r, k).items():
                    if cnt > max_ref[gram]:
                        max_ref[gram] = cnt
            clipped[k - 1] += sum(min(cnt, max_ref[g]) for g, cnt in counts.items())
            total[k - 1] += sum(counts.values())
    if cand_len == 0:
        return 0.0
    log_sum = 0.0
    for k in range(n):
        if total[k] == 0 or clipped[k] == 0:
            return 0.0
        log_sum += math.log(clipped[k] / total[k])
    bp = math.exp(min(0.0, 1.0 - ref_len / cand_len))
    return bp * math.exp(log_sum / n)


def _lcs_len(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def _rouge_pair(cand: Sequence[str], ref: Sequence[str]) -> float:
    lcs = _lcs_len(cand, ref)
    if lcs == 0:
        return 0.0
    p = lcs / len(cand)
    r = lcs / len(ref)
    beta2 = ROUGE_BETA * ROUGE_BETA
    return (1 + beta2) * p * r / (r + beta2 * p)


def rouge_l(corpus: EvalCorpus) -> float:
    """LCS F-measure (beta=1.2), max over references, mean over videos."""
    total = 0.0
    for _, entry in corpus.items():
        if entry.candidate:
            total += max(_rouge_pair(entry.candidate, r) for r in entry.references)
    return total / len(corpus)


def cider(corpus: EvalCorpus) -> float:
    """Plain CIDEr: tf-idf n-gram vectors (n=1..4), idf over the
    reference sets (one document per video), cosine similarity averaged
    over references and n, scaled by 10, averaged over videos.

    Grams absent from every reference set get idf log(N/1); no length
    penalty (this is CIDEr, not CIDEr-D).
    """
    n_videos = len(corpus)
    if n_videos < 2:
        raise DomainError("cider needs >= 2 videos: idf requires a document population")
    df = [defaultdict(int) for _ in range(4)]
    for _, entry in corpus.items():
        for k in range(4):
            grams = set()
            for r in entry.references:
                grams.update(_ngrams(r, k + 1).keys())
            for g in grams:
                df[k][g] += 1

    def tfidf(tokens: Sequence[str], k: int) -> dict:
        return {
            g: cnt * (math.log(n_videos) - math.log(max(df[k][g], 1)))
            for g, cnt in _ngrams(tokens, k + 1).items()
        }

    def cosine(u: dict, v: dict) -> float:
        nu = math.sqrt(sum(x * x for x in u.values()))
        nv = math.sqrt(sum(x * x for x in v.values()))
        if nu == 0.0 or nv == 0.0:
            return 0.0
        dot = sum(x * v[g] for g, x in u.items() if g in v)
        return dot / (nu * nv)

    total = 0.0
    for _, entry in corpus.items():
        per_n = 0.0
        for k in range(4):
            cvec = tfidf(entry.candidate, k)
            per_n += sum(cosine(cvec, tfidf(r, k)) for r in entry.references) / len(
                entry.references
            )
        total += 10.0 * per_n / 4.0
    return total / n_videos


def _min_chunks(cand: Sequence[str], ref: Sequence[str], matches: int) -> int:
    """Minimum chunk count over all maximum exact-match alignments.

    Branch-and-bound over candidate positions; a matched pair extends
    the current chunk only when both indices advance by one together.
    The search is exact within METEOR_SEARCH_BUDGET nodes and keeps the
    best alignment found beyond it (repeated-word blowups only).
    """
    ref_pos = defaultdict(list)
    for j, w in enumerate(ref):
        ref_pos[w].append(j)
    # suffix word counts for the match upper bound
    suffix = [Counter() for _ in range(len(cand) + 1)]
    for i in range(len(cand) - 1, -1, -1):
        suffix[i] = suffix[i + 1].copy()
        suffix[i][cand[i]] += 1
    remaining = Counter(ref)
    best = [len(cand) + 1]
    budget = [METEOR_SEARCH_BUDGET]

    def bound(i: int) -> int:
        return sum(min(cnt, remaining[w]) for w, cnt in suffix[i].items() if remaining[w] > 0)

    def walk(i: int, used: int, got: int, chunks: int, last_i: int, last_j: int):
        if budget[0] <= 0 or chunks >= best[0]:
            return
        budget[0] -= 1
        if got == matches:
            best[0] = chunks
            return
        if i == len(cand) or got + bound(i) < matches:
            return
        w = cand[i]
        if remaining[w] > 0:
            # chunk-extending occurrence first so good answers come early
            order = sorted(ref_pos[w], key=lambda j: (not (i == last_i + 1 and j == last_j + 1), j))
            for j in order:
                if used >> j & 1:
                    continue
                grow = 0 if (i == last_i + 1 and j == last_j + 1) else 1
                remaining[w] -= 1
                walk(i + 1, used | (1 << j), got + 1, chunks + grow, i, j)
                remaining[w] += 1
        walk(i + 1, used, got, chunks, last_i, last_j)

    walk(0, 0, 0, 0, -2, -2)
    return best[0]


def meteor_pair(cand: Sequence[str], references: Iterable[Sequence[str]]) -> float:
    """METEOR-lite for one candidate: max over references of
    Fmean*(1 - penalty) with Fmean = 10PR/(R+9P) and
    penalty = 0.5*(chunks/matches)^3."""
    best = 0.0
    cand = list(cand)
    cand_counts = Counter(cand)
    for ref in references:
        ref = list(ref)
        matches = sum(min(cnt, Counter(ref)[w]) for w, cnt in cand_counts.items())
        if matches == 0 or not cand or not ref:
            continue
        chunks = _min_chunks(cand, ref, matches)
        p = matches / len(cand)
        r = matches / len(ref)
        fmean = 10.0 * p * r / (r + 9.0 * p)
        penalty = 0.5 * (chunks / matches) ** 3
        best = max(best, fmean * (1.0 - penalty))
    return best


def meteor_lite(corpus: EvalCorpus) -> float:
    return sum(meteor_pair(e.candidate, e.references) for _, e in corpus.items()) / len(corpus)


@dataclass
class ScoreReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    meteor_lite: float
    cider: float
    rouge_l: float

    def to_dict(self) -> dict[str, float]:
        return {
            "bleu1": round(self.bleu1, 6),
            "bleu2": round(self.bleu2, 6),
            "bleu3": round(self.bleu3, 6),
            "bleu4": round(self.bleu4, 6),
            "meteor_lite": round(self.meteor_lite, 6),
            "cider": round(self.cider, 6),
            "rouge_l": round(self.rouge_l, 6),
        }


def evaluate(corpus: EvalCorpus) -> ScoreReport:
    """All metrics on one corpus; raises like its parts (cider needs at
    least two videos)."""
    return ScoreReport(
        bleu1=bleu(corpus, 1),
        bleu2=bleu(corpus, 2),
        bleu3=bleu(corpus, 3),
        bleu4=bleu(corpus, 4),
        meteor_lite=meteor_lite(corpus),
        cider=cider(corpus),
        rouge_l=rouge_l(corpus),
    )


def read_corpus(path) -> EvalCorpus:
    """JSONL corpus: one object per line with video_id, candidate, and a
    nonempty references array."""
    raw: dict[str, tuple[str, list[str]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            try:
                vid, cand, refs = rec["video_id"], rec["candidate"], rec["references"]
            except (KeyError, TypeError) as exc:
                raise FormatError(f"{path}:{lineno}: missing corpus field {exc}") from exc
            if not isinstance(refs, list) or not refs:
                raise FormatError(f"{path}:{lineno}: references must be a nonempty list")
            if vid in raw:
                raise FormatError(f"{path}:{lineno}: duplicate video id {vid!r}")
            raw[vid] = (cand, [str(r) for r in refs])
    if not raw:
        raise FormatError(f"{path}: empty corpus file")
    return EvalCorpus.from_strings(raw)


def write_corpus(path, records: Iterable[tuple[str, str, Sequence[str]]]) -> None:
    """Inverse of read_corpus; records are (video_id, candidate, references)."""
    with open(path, "w", encoding="utf-8") as fh:
        for vid, cand, refs in records:
            fh.write(
                json.dumps(
                    {"video_id": vid, "candidate": cand, "references": list(refs)},
                    sort_keys=True,
                )
                + "\n"
            )


def write_report(report: ScoreReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def format_report(report: ScoreReport) -> str:
    return "\n".join(f"{key} {value:.6f}" for key, value in sorted(report.to_dict().items()))
