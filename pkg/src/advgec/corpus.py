"""Parallel GEC data: sentence pairs, M2 annotations, corruption and splits."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

Tokens = Tuple[str, ...]

NONE_TOKEN = "-NONE-"
NOOP_TYPE = "noop"
ARTICLES = frozenset({"a", "an", "the"})

RULE_KINDS = (
    "delete-token",
    "substitute-from-confusion-set",
    "inflect-verb-suffix",
    "toggle-noun-number",
    "drop-article",
    "swap-adjacent",
)


class M2ParseError(ValueError):
    """Malformed line in an M2 file."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class EditValidationError(ValueError):
    pass


@dataclass(frozen=True)
class SentencePair:
    source: Tokens
    target: Tokens
    id: str

    def __post_init__(self):
        object.__setattr__(self, "source", tuple(self.source))
        object.__setattr__(self, "target", tuple(self.target))
        if not self.source or not self.target:
            raise ValueError(f"pair {self.id!r} has an empty side")
        for tok in self.source + self.target:
            if not tok or any(c.isspace() for c in tok):
                raise ValueError(f"pair {self.id!r} has an invalid token {tok!r}")


@dataclass(frozen=True)
class Edit:
    """Replace ``source[start:end]`` with ``replacement``."""

    start: int
    end: int
    replacement: Tokens = ()
    type_label: str = ""
    annotator: int = 0

    def __post_init__(self):
        object.__setattr__(self, "replacement", tuple(self.replacement))
        if self.start < 0 or self.end < self.start:
            raise EditValidationError(f"bad span [{self.start}, {self.end})")
        if self.start == self.end and not self.replacement:
            raise EditValidationError(f"empty insertion at {self.start}")
        if self.annotator < 0:
            raise EditValidationError("annotator must be >= 0")

    @property
    def key(self) -> Tuple[int, int, Tokens]:
        """What two edits must share to count as the same correction."""
        return (self.start, self.end, self.replacement)


@dataclass
class AnnotatedSentence:
    source: Tokens
    annotations: Dict[int, List[Edit]] = field(default_factory=lambda: {0: []})

    def __post_init__(self):
        self.source = tuple(self.source)
        if 0 not in self.annotations:
            self.annotations = {0: [], **self.annotations}
        for edits in self.annotations.values():
            check_edits(self.source, edits)

    def corrected(self, annotator: int = 0) -> Tokens:
        return apply_edits(self.source, self.annotations[annotator])


def check_edits(source: Sequence[str], edits: Sequence[Edit]) -> None:
    """Raise unless ``edits`` are in range, sorted and non-overlapping."""
    n = len(source)
    prev: Optional[Edit] = None
    for e in edits:
        if e.end > n:
            raise EditValidationError(f"edit [{e.start}, {e.end}) out of range for length {n}")
        if prev is not None:
            if (e.start, e.end) < (prev.start, prev.end):
                raise EditValidationError("edits are not sorted by start")
            if e.start < prev.end or (prev.start == prev.end == e.start == e.end):
                raise EditValidationError(
                    f"edits [{prev.start}, {prev.end}) and [{e.start}, {e.end}) overlap")
        prev = e


def apply_edits(source: Sequence[str], edits: Sequence[Edit]) -> Tokens:
    check_edits(source, edits)
    tokens = list(source)
    # right to left keeps the original indices valid
    for e in reversed(edits):
        tokens[e.start:e.end] = e.replacement
    return tuple(tokens)


# ---------------------------------------------------------------- M2 format

def parse_m2(text: str) -> List[AnnotatedSentence]:
    sentences: List[AnnotatedSentence] = []
    source: Optional[Tokens] = None
    annotations: Dict[int, List[Edit]] = {}
    a_lines: Dict[int, int] = {}

    def flush():
        nonlocal source, annotations
        if source is None:
            return
        if 0 not in annotations:
            annotations = {0: [], **annotations}
        for ann, edits in annotations.items():
            try:
                check_edits(source, edits)
            except EditValidationError as exc:
                raise EditValidationError(f"line {a_lines.get(ann, 0)}: {exc}") from None
        sentences.append(AnnotatedSentence(source, annotations))
        source, annotations = None, {}
        a_lines.clear()

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            flush()
            continue
        if line.startswith("S"):
            if source is not None:
                raise M2ParseError(line_no, "S line inside a block (missing blank line?)")
            if line != "S" and not line.startswith("S "):
                raise M2ParseError(line_no, "expected 'S <tokens>'")
            source = tuple(line[2:].split())
        elif line.startswith("A "):
            if source is None:
                raise M2ParseError(line_no, "A line before any S line")
            fields = line[2:].split("|||")
            if len(fields) != 6:
                raise M2ParseError(line_no, f"expected 6 '|||' fields, got {len(fields)}")
            span = fields[0].split()
            try:
                start, end = int(span[0]), int(span[1])
                annotator = int(fields[5])
            except (ValueError, IndexError):
                raise M2ParseError(line_no, "non-integer span or annotator") from None
            if len(span) != 2:
                raise M2ParseError(line_no, "span must be two integers")
            type_label = fields[1]
            edits = annotations.setdefault(annotator, [])
            a_lines.setdefault(annotator, line_no)
            if type_label.lower() == NOOP_TYPE or (start, end) == (-1, -1):
                continue
            repl = fields[2].strip()
            replacement = () if repl in (NONE_TOKEN, "") else tuple(repl.split())
            if start < 0 or end < start or end > len(source):
                raise EditValidationError(
                    f"line {line_no}: span [{start}, {end}) out of range for "
                    f"source length {len(source)}")
            try:
                edits.append(Edit(start, end, replacement, type_label, annotator))
            except EditValidationError as exc:
                raise EditValidationError(f"line {line_no}: {exc}") from None
        else:
            raise M2ParseError(line_no, f"unrecognised line {line[:20]!r}")
    flush()
    return sentences


def write_m2(sentences: Iterable[AnnotatedSentence]) -> str:
    blocks = []
    for sent in sentences:
        lines = ["S " + " ".join(sent.source) if sent.source else "S"]
        only_empty_zero = list(sent.annotations) == [0] and not sent.annotations[0]
        for ann in sorted(sent.annotations):
            edits = sent.annotations[ann]
            if not edits:
                if not only_empty_zero:
                    lines.append(f"A -1 -1|||{NOOP_TYPE}|||{NONE_TOKEN}|||REQUIRED|||{NONE_TOKEN}|||{ann}")
                continue
            for e in edits:
                repl = " ".join(e.replacement) if e.replacement else NONE_TOKEN
                lines.append(f"A {e.start} {e.end}|||{e.type_label}|||{repl}|||REQUIRED|||{NONE_TOKEN}|||{ann}")
        blocks.append("\n".join(lines) + "\n")
    return "\n".join(blocks)


def read_m2(path) -> List[AnnotatedSentence]:
    return parse_m2(Path(path).read_text(encoding="utf-8"))


def save_m2(sentences: Iterable[AnnotatedSentence], path) -> None:
    Path(path).write_text(write_m2(sentences), encoding="utf-8")


# ---------------------------------------------------------- parallel format

def read_parallel(source_path, target_path, prefix: str = "") -> List[SentencePair]:
    src_lines = Path(source_path).read_text(encoding="utf-8").splitlines()
    tgt_lines = Path(target_path).read_text(encoding="utf-8").splitlines()
    if len(src_lines) != len(tgt_lines):
        raise ValueError(f"{source_path} has {len(src_lines)} lines but "
                         f"{target_path} has {len(tgt_lines)}")
    return [SentencePair(s.split(), t.split(), f"{prefix}{i}")
            for i, (s, t) in enumerate(zip(src_lines, tgt_lines))]


def write_parallel(pairs: Sequence[SentencePair], source_path, target_path) -> None:
    Path(source_path).write_text("".join(" ".join(p.source) + "\n" for p in pairs), encoding="utf-8")
    Path(target_path).write_text("".join(" ".join(p.target) + "\n" for p in pairs), encoding="utf-8")


def read_lines(path) -> List[Tokens]:
    return [tuple(line.split()) for line in Path(path).read_text(encoding="utf-8").splitlines()]


def write_lines(sentences: Iterable[Sequence[str]], path) -> None:
    Path(path).write_text("".join(" ".join(s) + "\n" for s in sentences), encoding="utf-8")


def filter_by_length(pairs: Iterable[SentencePair], min_len: int = 1, max_len: int = 64) -> List[SentencePair]:
    return [p for p in pairs if min_len <= len(p.source) <= max_len and min_len <= len(p.target) <= max_len]


def gold_from_pairs(pairs: Sequence[SentencePair]) -> List[AnnotatedSentence]:
    """Single-annotator gold edits recovered by aligning each source to its target."""
    from .evaluation import extract_edits

    return [AnnotatedSentence(p.source, {0: extract_edits(p.source, p.target)}) for p in pairs]


# --------------------------------------------------------------- corruption

@dataclass
class CorruptionRule:
    name: str
    kind: str
    probability: float
    confusion_sets: Mapping[str, Sequence[str]] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise ValueError(f"rule {self.name!r}: unknown kind {self.kind!r}")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"rule {self.name!r}: probability {self.probability} not in [0, 1]")
        if self.kind == "substitute-from-confusion-set":
            if not self.confusion_sets or any(not v for v in self.confusion_sets.values()):
                raise ValueError(f"rule {self.name!r}: confusion sets must be non-empty")


def _stream(seed: int, key: str) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFF, zlib.crc32(key.encode("utf-8"))])


def _swap_form(tok: str, table: Mapping[str, str]) -> Optional[str]:
    low = tok.lower()
    if low not in table:
        return None
    out = table[low]
    return out.capitalize() if tok[:1].isupper() else out


def corrupt(sentence: Sequence[str], rules: Sequence[CorruptionRule], seed: int,
            sentence_id: str = "") -> SentencePair:
    """Make an erroneous source for the clean ``sentence``.

    Rules run in order over the current token list; each eligible position
    fires independently with the rule's probability. The RNG stream depends
    only on ``(seed, sentence_id)``.
    """
    from . import synthetic

    target = tuple(sentence)
    if not target:
        raise ValueError("cannot corrupt an empty sentence")
    rng = _stream(seed, sentence_id)
    tokens = list(target)
    for rule in rules:
        p = rule.probability
        kind = rule.kind
        if kind in ("delete-token", "drop-article"):
            kept = []
            for tok in tokens:
                eligible = kind == "delete-token" or tok.lower() in ARTICLES
                if eligible and rng.random() < p:
                    continue
                kept.append(tok)
            tokens = kept or tokens[:1]
        elif kind == "substitute-from-confusion-set":
            for i, tok in enumerate(tokens):
                cands = rule.confusion_sets.get(tok) or rule.confusion_sets.get(tok.lower())
                if cands and rng.random() < p:
                    new = cands[int(rng.integers(len(cands)))]
                    tokens[i] = new.capitalize() if tok[:1].isupper() else new
        elif kind in ("inflect-verb-suffix", "toggle-noun-number"):
            if rule.confusion_sets:
                table = {k: v[0] for k, v in rule.confusion_sets.items()}
            elif kind == "inflect-verb-suffix":
                table = synthetic.VERB_TOGGLE
            else:
                table = synthetic.NOUN_TOGGLE
            for i, tok in enumerate(tokens):
                new = _swap_form(tok, table)
                if new is not None and rng.random() < p:
                    tokens[i] = new
        elif kind == "swap-adjacent":
            i = 0
            while i < len(tokens) - 1:
                if rng.random() < p:
                    tokens[i], tokens[i + 1] = tokens[i + 1], tokens[i]
                    i += 2
                else:
                    i += 1
    return SentencePair(tuple(tokens), target, sentence_id or f"s{zlib.crc32(' '.join(target).encode())}")


def corrupt_corpus(sentences: Sequence[Sequence[str]], rules: Sequence[CorruptionRule],
                   seed: int, prefix: str = "s") -> List[SentencePair]:
    return [corrupt(s, rules, seed, f"{prefix}{i}") for i, s in enumerate(sentences)]


def parse_rule_file(text: str, base_dir=None) -> List[CorruptionRule]:
    """Parse ``rule.<name>.<key> = value`` lines.

    Keys: ``kind``, ``probability``, ``confusion_file``. A confusion file has
    one ``token cand1 cand2 ...`` entry per line.
    """
    specs: Dict[str, Dict[str, str]] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {line_no}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        parts = key.split(".")
        if len(parts) != 3 or parts[0] != "rule":
            raise ValueError(f"line {line_no}: key must look like rule.<name>.<field>")
        specs.setdefault(parts[1], {})[parts[2]] = value
    rules = []
    for name, spec in specs.items():
        unknown = set(spec) - {"kind", "probability", "confusion_file"}
        if unknown:
            raise ValueError(f"rule {name!r}: unknown fields {sorted(unknown)}")
        confusion: Dict[str, List[str]] = {}
        if "confusion_file" in spec:
            path = Path(spec["confusion_file"])
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            confusion = parse_confusion_sets(path.read_text(encoding="utf-8"))
        rules.append(CorruptionRule(name, spec.get("kind", ""), float(spec.get("probability", "nan")),
                                    confusion))
    return rules


def parse_confusion_sets(text: str) -> Dict[str, List[str]]:
    out: Dict[str, List[str]] = {}
    for line in text.splitlines():
        toks = line.split()
        if len(toks) >= 2:
            out[toks[0]] = toks[1:]
    return out


def load_rules(path) -> List[CorruptionRule]:
    path = Path(path)
    return parse_rule_file(path.read_text(encoding="utf-8"), base_dir=path.parent)


# ------------------------------------------------------------------- splits

def split_sizes(n: int, fractions: Sequence[float]) -> Tuple[int, ...]:
    """Largest-remainder rounding; ties go to the earlier part."""
    exact = [f * n for f in fractions]
    sizes = [math.floor(x) for x in exact]
    left = n - sum(sizes)
    order = sorted(range(len(exact)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[:left]:
        sizes[i] += 1
    return tuple(sizes)


def split_corpus(corpus: Sequence[SentencePair], fractions=(0.8, 0.1, 0.1), seed: int = 0):
    if len(corpus) < 3:
        raise ValueError("need at least 3 pairs to split")
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    n_train, n_dev, _ = split_sizes(len(corpus), fractions)
    order = np.random.default_rng(seed).permutation(len(corpus))
    items = [corpus[i] for i in order]
    return items[:n_train], items[n_train:n_train + n_dev], items[n_train + n_dev:]
