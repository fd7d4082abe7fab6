"""A small English grammar for clean sentences and the default error rules.

The grammar enforces subject-verb agreement, article choice and noun number,
so every corruption rule produces an error that is recoverable from context.
"""

from __future__ import annotations

from typing import Dict, List, Tuple

import numpy as np

from .corpus import CorruptionRule

NOUNS = [
    ("cat", "cats"), ("dog", "dogs"), ("student", "students"), ("teacher", "teachers"),
    ("book", "books"), ("car", "cars"), ("child", "children"), ("city", "cities"),
    ("idea", "ideas"), ("house", "houses"), ("friend", "friends"), ("letter", "letters"),
    ("apple", "apples"), ("movie", "movies"), ("song", "songs"), ("bird", "birds"),
    ("river", "rivers"), ("window", "windows"), ("question", "questions"), ("doctor", "doctors"),
    ("garden", "gardens"), ("picture", "pictures"), ("egg", "eggs"), ("umbrella", "umbrellas"),
    ("box", "boxes"), ("girl", "girls"), ("boy", "boys"), ("man", "men"),
    ("woman", "women"), ("table", "tables"),
]

# (base, third person singular, past)
VERBS_TRANSITIVE = [
    ("like", "likes", "liked"), ("see", "sees", "saw"), ("want", "wants", "wanted"),
    ("need", "needs", "needed"), ("love", "loves", "loved"), ("find", "finds", "found"),
    ("have", "has", "had"), ("watch", "watches", "watched"), ("open", "opens", "opened"),
    ("visit", "visits", "visited"), ("make", "makes", "made"), ("read", "reads", "read"),
    ("write", "writes", "wrote"), ("carry", "carries", "carried"),
]
VERBS_INTRANSITIVE = [
    ("sleep", "sleeps", "slept"), ("run", "runs", "ran"), ("go", "goes", "went"),
    ("work", "works", "worked"), ("sing", "sings", "sang"), ("wait", "waits", "waited"),
    ("live", "lives", "lived"), ("play", "plays", "played"),
]

ADJECTIVES = ["big", "small", "old", "new", "red", "happy", "quiet", "young", "long",
              "bright", "angry", "interesting", "early", "empty"]

PRONOUNS_3SG = ["he", "she", "it"]
PRONOUNS_OTHER = ["i", "you", "we", "they"]
POSSESSIVES = ["my", "his", "her", "our", "their"]
NUMBERS = ["two", "three", "four", "many", "some"]
PREPOSITIONS = ["in", "on", "at", "near", "behind", "with"]
TIME_PHRASES = [("every", "day"), ("today",), ("yesterday",), ("at", "night"),
                ("in", "the", "morning")]

VERB_TOGGLE: Dict[str, str] = {}
for _forms in VERBS_TRANSITIVE + VERBS_INTRANSITIVE:
    VERB_TOGGLE[_forms[0]] = _forms[1]
    VERB_TOGGLE[_forms[1]] = _forms[0]
VERB_TOGGLE.update({"is": "are", "are": "is", "was": "were", "were": "was"})

NOUN_TOGGLE: Dict[str, str] = {}
for _sg, _pl in NOUNS:
    NOUN_TOGGLE[_sg] = _pl
    NOUN_TOGGLE[_pl] = _sg

CONFUSION_SETS: Dict[str, List[str]] = {
    "in": ["on", "at"], "on": ["in", "at"], "at": ["in", "on"],
    "a": ["an", "the"], "an": ["a", "the"], "the": ["a"],
    "his": ["her", "he"], "her": ["his", "she"], "their": ["there", "they"],
    "with": ["by", "for"], "near": ["nearby"], "behind": ["after"],
}


def _indefinite(word: str) -> str:
    return "an" if word[0] in "aeiou" else "a"


def _noun_phrase(rng: np.random.Generator, plural: bool) -> List[str]:
    sg, pl = NOUNS[rng.integers(len(NOUNS))]
    noun = pl if plural else sg
    adj = [ADJECTIVES[rng.integers(len(ADJECTIVES))]] if rng.random() < 0.35 else []
    head = (adj or [noun])[0]
    roll = rng.random()
    if plural:
        if roll < 0.4:
            det = ["the"]
        elif roll < 0.7:
            det = [NUMBERS[rng.integers(len(NUMBERS))]]
        else:
            det = [POSSESSIVES[rng.integers(len(POSSESSIVES))]]
    else:
        if roll < 0.45:
            det = ["the"]
        elif roll < 0.75:
            det = [_indefinite(head)]
        else:
            det = [POSSESSIVES[rng.integers(len(POSSESSIVES))]]
    return det + adj + [noun]


def sentence(rng: np.random.Generator) -> List[str]:
    """Draw one clean, tokenized sentence."""
    roll = rng.random()
    if roll < 0.3:
        third_sg = rng.random() < 0.5
        subj = [(PRONOUNS_3SG if third_sg else PRONOUNS_OTHER)[rng.integers(3 if third_sg else 4)]]
    else:
        third_sg = rng.random() < 0.6
        subj = _noun_phrase(rng, plural=not third_sg)
    transitive = rng.random() < 0.6
    pool = VERBS_TRANSITIVE if transitive else VERBS_INTRANSITIVE
    forms = pool[rng.integers(len(pool))]
    tense = rng.random()
    if tense < 0.7:
        verb = [forms[1] if third_sg else forms[0]]
    elif tense < 0.9:
        verb = [forms[2]]
    else:
        verb = ["will", forms[0]]
    words = subj + verb
    if transitive:
        words += _noun_phrase(rng, plural=rng.random() < 0.4)
    if rng.random() < 0.35:
        words += [PREPOSITIONS[rng.integers(len(PREPOSITIONS))]] + _noun_phrase(rng, plural=rng.random() < 0.3)
    if rng.random() < 0.25:
        words += list(TIME_PHRASES[rng.integers(len(TIME_PHRASES))])
    words.append(".")
    words[0] = "I" if words[0] == "i" else words[0].capitalize()
    return words


def clean_sentences(n: int, seed: int) -> List[Tuple[str, ...]]:
    rng = np.random.default_rng(seed)
    return [tuple(sentence(rng)) for _ in range(n)]


def default_rules() -> List[CorruptionRule]:
    return [
        CorruptionRule("articles", "drop-article", 0.15),
        CorruptionRule("agreement", "inflect-verb-suffix", 0.15),
        CorruptionRule("number", "toggle-noun-number", 0.08),
        CorruptionRule("confusion", "substitute-from-confusion-set", 0.12, CONFUSION_SETS),
        CorruptionRule("deletion", "delete-token", 0.02),
        CorruptionRule("order", "swap-adjacent", 0.02),
    ]
