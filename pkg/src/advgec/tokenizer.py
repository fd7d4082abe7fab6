"""Byte-pair encoding with one vocabulary shared by source and target."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple, Union

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<s>", "</s>", "<unk>")
END_OF_WORD = "</w>"

Pair = Tuple[str, str]


@dataclass
class BpeModel:
    merges: List[Pair]
    alphabet: frozenset
    end_of_word_marker: str = END_OF_WORD
    _ranks: Dict[Pair, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.alphabet = frozenset(self.alphabet)
        if len(set(self.merges)) != len(self.merges):
            raise ValueError("duplicate merges")
        self._ranks = {m: i for i, m in enumerate(self.merges)}
        self._segment = lru_cache(maxsize=1 << 16)(self._segment_uncached)

    def _segment_uncached(self, word: str) -> Tuple[str, ...]:
        if not word:
            return ()
        symbols = list(word[:-1]) + [word[-1] + self.end_of_word_marker]
        # lowest-rank pair first; equivalent to replaying the merge list in order
        while len(symbols) > 1:
            best = None
            for i in range(len(symbols) - 1):
                r = self._ranks.get((symbols[i], symbols[i + 1]))
                if r is not None and (best is None or r < best):
                    best = r
            if best is None:
                break
            left, right = self.merges[best]
            out = []
            i = 0
            while i < len(symbols):
                if i < len(symbols) - 1 and symbols[i] == left and symbols[i + 1] == right:
                    out.append(left + right)
                    i += 2
                else:
                    out.append(symbols[i])
                    i += 1
            symbols = out
        return tuple(symbols)

    def segment(self, word: str) -> Tuple[str, ...]:
        return self._segment(word)


def _word_symbols(word: str, marker: str) -> Tuple[str, ...]:
    return tuple(word[:-1]) + (word[-1] + marker,)


def _merge_word(symbols: Tuple[str, ...], pair: Pair) -> Tuple[str, ...]:
    out = []
    i = 0
    while i < len(symbols):
        if i < len(symbols) - 1 and (symbols[i], symbols[i + 1]) == pair:
            out.append(symbols[i] + symbols[i + 1])
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def word_counts(sentences: Iterable[Sequence[str]]) -> Counter:
    counts: Counter = Counter()
    for s in sentences:
        counts.update(s)
    return counts


def learn_bpe(corpus: Union[Mapping[str, int], Iterable[Sequence[str]]], num_merges: int,
              marker: str = END_OF_WORD) -> BpeModel:
    """Greedy most-frequent-pair merging over a word-frequency table.

    ``corpus`` is either a word -> count mapping or an iterable of token
    sequences. Equal counts are broken by the lexicographically smallest pair.
    """
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")
    counts = dict(corpus) if isinstance(corpus, Mapping) else dict(word_counts(corpus))
    counts = {w: c for w, c in counts.items() if w and c > 0}
    if not counts:
        raise ValueError("cannot learn BPE from an empty corpus")
    alphabet = frozenset(ch for w in counts for ch in w)
    vocab = {_word_symbols(w, marker): c for w, c in counts.items()}

    pair_counts: Counter = Counter()
    where: Dict[Pair, set] = {}
    for syms, c in vocab.items():
        for a, b in zip(syms, syms[1:]):
            pair_counts[(a, b)] += c
            where.setdefault((a, b), set()).add(syms)

    merges: List[Pair] = []
    while len(merges) < num_merges:
        live = [(c, p) for p, c in pair_counts.items() if c > 0]
        if not live:
            break
        top = max(c for c, _ in live)
        pair = min(p for c, p in live if c == top)
        merges.append(pair)
        for syms in list(where.get(pair, ())):
            if syms not in vocab:
                continue
            c = vocab.pop(syms)
            for a, b in zip(syms, syms[1:]):
                pair_counts[(a, b)] -= c
                where[(a, b)].discard(syms)
            new = _merge_word(syms, pair)
            vocab[new] = vocab.get(new, 0) + c
            for a, b in zip(new, new[1:]):
                pair_counts[(a, b)] += c
                where.setdefault((a, b), set()).add(new)
        pair_counts.pop(pair, None)
    return BpeModel(merges, alphabet, marker)


@dataclass
class Vocab:
    symbols: List[str]
    id_of: Dict[str, int] = field(init=False)

    def __post_init__(self):
        if tuple(self.symbols[:4]) != RESERVED:
            raise ValueError("reserved symbols must occupy ids 0-3")
        self.id_of = {s: i for i, s in enumerate(self.symbols)}
        if len(self.id_of) != len(self.symbols):
            raise ValueError("duplicate symbols in vocabulary")

    def __len__(self):
        return len(self.symbols)

    def __getitem__(self, symbol: str) -> int:
        return self.id_of.get(symbol, UNK)


def build_vocab(model: BpeModel, sentences: Iterable[Sequence[str]], cap: int = 4000) -> Vocab:
    """Reserved ids, then every alphabet character, then the most frequent
    subword symbols of ``sentences`` after segmentation, up to ``cap``.

    Single characters come first so any in-alphabet word stays encodable.
    """
    marker = model.end_of_word_marker
    chars = [s for c in sorted(model.alphabet) for s in (c, c + marker)]
    if cap < len(RESERVED) + len(chars):
        raise ValueError(f"vocabulary cap {cap} cannot hold the {len(chars)} character symbols")
    freq: Counter = Counter()
    for word, c in word_counts(sentences).items():
        for sym in model.segment(word):
            freq[sym] += c
    ranked = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))
    seen = set(RESERVED) | set(chars)
    symbols = list(RESERVED) + chars + [s for s, _ in ranked if s not in seen]
    return Vocab(symbols[:cap])


def encode(model: BpeModel, vocab: Vocab, sentence: Sequence[str]) -> List[int]:
    ids = []
    for word in sentence:
        ids.extend(vocab[sym] for sym in model.segment(word))
    return ids


def decode(model: BpeModel, vocab: Vocab, ids: Iterable[int]) -> List[str]:
    marker = model.end_of_word_marker
    words, current = [], ""
    for i in ids:
        if not 0 <= i < len(vocab.symbols):
            raise KeyError(f"id {i} not in vocabulary")
        if i in (PAD, BOS, EOS):
            continue
        sym = vocab.symbols[i]
        if sym.endswith(marker) and i != UNK:
            words.append(current + sym[: -len(marker)])
            current = ""
        else:
            current += sym
    if current:
        words.append(current)
    return words


class Tokenizer:
    """Bundles a BPE model with its vocabulary."""

    def __init__(self, model: BpeModel, vocab: Vocab):
        self.model = model
        self.vocab = vocab

    def __len__(self):
        return len(self.vocab)

    def encode(self, sentence: Sequence[str]) -> List[int]:
        return encode(self.model, self.vocab, sentence)

    def decode(self, ids: Iterable[int]) -> List[str]:
        return decode(self.model, self.vocab, ids)

    @classmethod
    def train(cls, sentences: Sequence[Sequence[str]], num_merges: int = 2000, cap: int = 4000):
        sentences = list(sentences)
        model = learn_bpe(sentences, num_merges)
        return cls(model, build_vocab(model, sentences, cap))

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_model(self.model, directory / "bpe.model")
        save_vocab(self.vocab, directory / "vocab.tsv")

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        return cls(load_model(directory / "bpe.model"), load_vocab(directory / "vocab.tsv"))


def save_model(model: BpeModel, path) -> None:
    lines = [f"#marker {model.end_of_word_marker}",
             "#alphabet " + " ".join(sorted(c for c in model.alphabet if not c.isspace()))]
    lines += [f"{a} {b}" for a, b in model.merges]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path) -> BpeModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#marker "):
        raise ValueError(f"{path}: missing marker header")
    marker = lines[0][len("#marker "):]
    body = lines[1:]
    alphabet: frozenset = frozenset()
    if body and body[0].startswith("#alphabet"):
        alphabet = frozenset(body[0].split()[1:])
        body = body[1:]
    merges = []
    for n, line in enumerate(body, start=2):
        parts = line.split(" ")
        if len(parts) != 2:
            raise ValueError(f"{path}:{n}: expected 'left right'")
        merges.append((parts[0], parts[1]))
    if not alphabet:
        alphabet = frozenset(ch for a, b in merges for ch in (a + b).replace(marker, ""))
    return BpeModel(merges, alphabet, marker)


def save_vocab(vocab: Vocab, path) -> None:
    Path(path).write_text("".join(f"{s}\t{i}\n" for i, s in enumerate(vocab.symbols)), encoding="utf-8")


def load_vocab(path) -> Vocab:
    entries = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        sym, idx = line.rsplit("\t", 1)
        entries.append((int(idx), sym))
    entries.sort()
    if [i for i, _ in entries] != list(range(len(entries))):
        raise ValueError(f"{path}: ids are not contiguous from 0")
    return Vocab([s for _, s in entries])
