"""Rule-based subject/verb extraction from captions.

No parser dependency: captions in this domain are short declarative
sentences, so a closed-class word list plus two verb patterns
(copula + progressive, finite verb from a small action lexicon)
covers them. Accuracy is traded for determinism and zero model
downloads.
"""

from __future__ import annotations

import logging
import re
from collections import Counter

log = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:'[a-z]+)?")

# words that never head a subject noun phrase
_FUNCTION_WORDS = frozenset(
    """
    a an the this that these those some any no every each
    my your his her its our their
    one two three four five six seven eight nine ten
    several many few both all half
    very really quite just also still
    quickly slowly loudly quietly happily carefully gently
    """.split()
)

_COPULAS = frozenset({"is", "are", "was", "were", "am"})

# action verbs common in video captions; finite-form detection is
# lexicon-gated so plural nouns ("dogs") are not mistaken for verbs
_BASE_VERBS = frozenset(
    """
    run walk play eat drink dance jump swim ride sing talk speak cook
    bake drive sit stand climb throw catch kick hit cut slice chop pour
    mix stir fry peel boil fly fall laugh cry smile wave clap push pull
    lift carry hold open close wash clean brush comb shoot fight box
    wrestle skate ski surf row paddle juggle type read write draw paint
    point feed pet chase bark hop crawl roll spin flip dive shake move
    swing slide kiss hug watch look go do make gallop
    """.split()
)

_IRREGULAR_ING = {
    "lying": "lie",
    "dying": "die",
    "tying": "tie",
    "being": "be",
    "having": "have",
    "using": "use",
}

_VOWELS = set("aeiou")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def lemma_from_ing(token: str) -> str:
    """Base form of a progressive: running -> run, making -> make."""
    if token in _IRREGULAR_ING:
        return _IRREGULAR_ING[token]
    stem = token[:-3]
    if len(stem) >= 2 and stem[-1] == stem[-2] and stem[-1] not in _VOWELS:
        # doubled final consonant (running, hugging), but roll/miss
        # style stems keep their geminate
        if stem[-2:] not in ("ll", "ss", "zz", "ff"):
            return stem[:-1]
        return stem
    if stem.endswith(("c", "u")):
        return stem + "e"  # dancing, arguing
    if (
        len(stem) >= 3
        and stem[-1] not in _VOWELS
        and stem[-1] not in "wxy"
        and stem[-2] in _VOWELS
        and stem[-3] not in _VOWELS
    ):
        return stem + "e"  # silent-e stems: making, riding, smiling
    return stem


def lemma_from_s(token: str) -> str:
    """Base form of a third-person singular: runs -> run, carries -> carry."""
    if token.endswith("ies") and len(token) > 4:
        return token[:-3] + "y"
    if token.endswith(("ches", "shes", "sses", "xes", "zes", "oes")):
        return token[:-2]
    if token.endswith("s") and not token.endswith("ss"):
        return token[:-1]
    return token


def _subject_head(span: list[str]) -> str | None:
    """Head of a subject noun phrase: the last non-function token, so
    determiners and stacked adjectives fall away without a lexicon."""
    for token in reversed(span):
        if token not in _FUNCTION_WORDS:
            return token
    return None


def _is_progressive(token: str) -> bool:
    return token.endswith("ing") and len(token) > 4


def parse_caption(text: str) -> tuple[str | None, str | None]:
    """(subject, verb) for one caption, either side None when not found."""
    tokens = tokenize(text)
    for j, token in enumerate(tokens):
        if j == 0:
            continue
        subject = _subject_head(tokens[:j])
        if subject is None:
            continue
        if token in _COPULAS:
            # allow one adverb between copula and participle
            for k in (j + 1, j + 2):
                if k < len(tokens) and _is_progressive(tokens[k]):
                    return subject, lemma_from_ing(tokens[k])
            continue
        if token in _BASE_VERBS:
            return subject, token
        if token.endswith("s") and lemma_from_s(token) in _BASE_VERBS:
            return subject, lemma_from_s(token)
        if _is_progressive(token):
            # bare participle: "a man playing guitar"
            return subject, lemma_from_ing(token)
    return None, None


def extract_attributes(captions: list[str]) -> list[str]:
    """Modal subject and verb across a video's captions.

    Each field is voted independently; ties break lexicographically
    so the result does not depend on caption order. Videos where no
    caption parses yield an empty list.
    """
    subjects: Counter = Counter()
    verbs: Counter = Counter()
    for caption in captions:
        s, v = parse_caption(caption)
        if s is not None:
            subjects[s] += 1
        if v is not None:
            verbs[v] += 1
    out = []
    for votes in (subjects, verbs):
        if votes:
            out.append(min(votes, key=lambda w: (-votes[w], w)))
    if not out:
        log.warning("no subject/verb found in %d captions", len(captions))
    return out
