"""Beam-search caption generation.

Hypotheses share one immutable parameter set and advance stepwise from
BOS. Scores are raw cumulative log-probabilities; steps reuse the exact
forward-step code so a replayed hypothesis rescored by the model matches
the search score bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DomainError
from .model import (
    BOS_ID,
    EOS_ID,
    ContextBundle,
    FeatureSet,
    ModelConfig,
    ParamSet,
    _init_step,
    _run_step,
)


@dataclass
class DecodedCaption:
    """Search result. tokens excludes BOS/EOS; logprob is the raw
    cumulative log-probability including the EOS step when finished.
    finished=False flags hitting max_len with an empty finished pool."""

    tokens: list[int]
    logprob: float
    finished: bool


@dataclass
class _Hyp:
    tokens: list[int] = field(default_factory=list)
    logp: float = 0.0
    h: np.ndarray = None
    c: np.ndarray = None


def beam_search(
    features: FeatureSet,
    params: ParamSet,
    cfg: ModelConfig,
    beam_width: int = 5,
    max_len: int = 30,
    length_exponent: float = 0.0,
) -> DecodedCaption:
    """Beam search from BOS until beam_width hypotheses finish or
    max_len tokens (counting EOS) have been generated.

    Each step expands every live hypothesis with the full vocabulary and
    keeps the top beam_width candidates by cumulative log-probability;
    kept candidates emitting EOS freeze into the finished pool. Score
    ties break deterministically by lower token id, then by the older
    (earlier-ranked) parent. The best finished hypothesis wins; with no
    finished hypothesis the best live one is returned and flagged.

    length_exponent > 0 divides scores by (len+1)**exponent when picking
    the winner (search order itself is unnormalized).
    """
    if beam_width < 1:
        raise DomainError(f"beam_width must be >= 1, got {beam_width}")
    if max_len < 1:
        raise DomainError(f"max_len must be >= 1, got {max_len}")
    ctx = ContextBundle(features, params, cfg)
    init = _init_step(ctx, params, cfg)
    vocab = params.emb.shape[0]
    live = [_Hyp(h=init.h0, c=init.c0)]
    finished: list[DecodedCaption] = []

    for _ in range(max_len):
        candidates = []  # (score, token, parent_index, step)
        for parent, hyp in enumerate(live):
            token_in = hyp.tokens[-1] if hyp.tokens else BOS_ID
            step = _run_step(params, cfg, ctx, token_in, hyp.h, hyp.c)
            with np.errstate(divide="ignore"):  # zero-probability tokens
                logp = np.log(step.p)
            for tok in range(vocab):
                score = hyp.logp + logp[tok]
                # a probability-0 continuation is not generable and must
                # never occupy a beam slot or freeze as finished
                if score == -np.inf:
                    continue
                candidates.append((score, tok, parent, step))
        candidates.sort(key=lambda cand: (-cand[0], cand[1], cand[2]))
        next_live = []
        for score, tok, parent, step in candidates[:beam_width]:
            if tok == EOS_ID:
                finished.append(
                    DecodedCaption(tokens=list(live[parent].tokens), logprob=float(score), finished=True)
                )
            else:
                next_live.append(
                    _Hyp(tokens=live[parent].tokens + [tok], logp=float(score), h=step.h, c=step.c)
                )
        live = next_live
        if len(finished) >= beam_width or not live:
            break

    def rank(entry: DecodedCaption) -> float:
        if length_exponent == 0.0:
            return entry.logprob
        return entry.logprob / (len(entry.tokens) + 1) ** length_exponent

    if finished:
        return max(finished, key=rank)
    best = max(live, key=lambda hyp: rank(DecodedCaption(hyp.tokens, hyp.logp, False)))
    return DecodedCaption(tokens=list(best.tokens), logprob=float(best.logp), finished=False)


def enumerate_best(
    features: FeatureSet,
    params: ParamSet,
    cfg: ModelConfig,
    max_len: int,
) -> DecodedCaption:
    """Exhaustive search over every generable sequence up to max_len
    tokens: finished sequences (EOS last) of any length, plus unfinished
    sequences of exactly max_len tokens considered only when nothing
    finishes. Brute-force oracle for beam_search; exponential in
    max_len, so keep the vocabulary and length tiny.
    """
    ctx = ContextBundle(features, params, cfg)
    init = _init_step(ctx, params, cfg)
    vocab = params.emb.shape[0]
    finished: list[DecodedCaption] = []
    live: list[DecodedCaption] = []

    def walk(tokens: list[int], logp: float, h, c, depth: int):
        token_in = tokens[-1] if tokens else BOS_ID
        step = _run_step(params, cfg, ctx, token_in, h, c)
        with np.errstate(divide="ignore"):
            logps = np.log(step.p)
        for tok in range(vocab):
            score = logp + float(logps[tok])
            if score == -np.inf:
                continue
            if tok == EOS_ID:
                finished.append(DecodedCaption(list(tokens), score, True))
            elif depth + 1 < max_len:
                walk(tokens + [tok], score, step.h, step.c, depth + 1)
            else:
                live.append(DecodedCaption(tokens + [tok], score, False))

    walk([], 0.0, init.h0, init.c0, 0)
    pool = finished if finished else live
    return max(pool, key=lambda entry: entry.logprob)
