from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advgec import tokenizer as T
from advgec.tokenizer import BOS, EOS, PAD, UNK, Tokenizer


def brute_force_bpe(counts, num_merges, marker="</w>"):
    """Recount every pair from scratch before each merge."""
    vocab = {tuple(w[:-1]) + (w[-1] + marker,): c for w, c in counts.items()}
    merges = []
    for _ in range(num_merges):
        pairs = Counter()
        for syms, c in vocab.items():
            for a, b in zip(syms, syms[1:]):
                pairs[(a, b)] += c
        if not pairs:
            break
        top = max(pairs.values())
        best = min(p for p, c in pairs.items() if c == top)
        merges.append(best)
        new_vocab = {}
        for syms, c in vocab.items():
            out, i = [], 0
            while i < len(syms):
                if i + 1 < len(syms) and (syms[i], syms[i + 1]) == best:
                    out.append(syms[i] + syms[i + 1])
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            new_vocab[tuple(out)] = new_vocab.get(tuple(out), 0) + c
        vocab = new_vocab
    return merges


def replay_merges(word, merges, marker="</w>"):
    syms = list(word[:-1]) + [word[-1] + marker]
    for a, b in merges:
        out, i = [], 0
        while i < len(syms):
            if i + 1 < len(syms) and syms[i] == a and syms[i + 1] == b:
                out.append(a + b)
                i += 2
            else:
                out.append(syms[i])
                i += 1
        syms = out
    return tuple(syms)


def test_zero_merges():
    m = T.learn_bpe({"abc": 3, "bd": 1}, 0)
    assert m.merges == []
    assert m.alphabet == frozenset("abcd")


def test_first_merge_by_frequency():
    assert T.learn_bpe({"ab": 5, "ac": 2}, 1).merges == [("a", "b</w>")]


def test_low_lower_lowest():
    counts = {"low": 2, "lower": 1, "lowest": 1}
    m = T.learn_bpe(counts, 2)
    assert m.merges == brute_force_bpe(counts, 2)
    # (l,o) has count 4; then (lo,w), (lo,w</w>) and (w,e) tie at 2 and (lo,w) is smallest
    assert m.merges == [("l", "o"), ("lo", "w")]
    assert m.segment("lowest") == ("low", "e", "s", "t</w>")
    assert m.segment("lowest") == replay_merges("lowest", m.merges)


def test_empty_corpus_rejected():
    with pytest.raises(ValueError):
        T.learn_bpe({}, 5)
    with pytest.raises(ValueError):
        T.learn_bpe([], 5)


words = st.text(alphabet="abcde", min_size=1, max_size=7)


@settings(max_examples=150, deadline=None)
@given(st.dictionaries(words, st.integers(1, 6), min_size=1, max_size=8), st.integers(0, 25))
def test_learn_bpe_matches_brute_force(counts, n):
    m = T.learn_bpe(counts, n)
    assert m.merges == brute_force_bpe(counts, n)
    for w in counts:
        assert m.segment(w) == replay_merges(w, m.merges)


@settings(max_examples=150, deadline=None)
@given(st.dictionaries(words, st.integers(1, 6), min_size=1, max_size=8), st.integers(0, 25), words)
def test_segment_equals_merge_replay_on_unseen_words(counts, n, w):
    m = T.learn_bpe(counts, n)
    assert m.segment(w) == replay_merges(w, m.merges)


def test_saturated_merges_one_id_per_word():
    sents = [["the", "cat", "sat"]] * 3
    tok = Tokenizer.train(sents, num_merges=100)
    assert len(tok.encode(["the", "cat", "sat"])) == 3


def test_round_trip_and_empty():
    tok = Tokenizer.train([["the", "cat", "sat"], ["a", "dog", "ran"]], num_merges=10)
    assert tok.decode(tok.encode(["the", "cat", "sat"])) == ["the", "cat", "sat"]
    assert tok.encode([]) == []
    assert tok.decode([]) == []
    # an unmerged combination of known characters still round-trips
    assert tok.decode(tok.encode(["act", "toga"])) == ["act", "toga"]


def test_out_of_alphabet_character_becomes_unk():
    tok = Tokenizer.train([["the", "cat", "sat"]], num_merges=0)
    ids = tok.encode(["cät"])
    assert UNK in ids
    assert tok.decode(ids) == ["c<unk>t"]


def test_reserved_ids_and_specials_skipped():
    tok = Tokenizer.train([["ab"]], num_merges=1)
    assert tok.vocab.symbols[:4] == list(T.RESERVED)
    ab = tok.encode(["ab"])
    assert tok.decode([BOS] + ab + [EOS, PAD]) == ["ab"]
    with pytest.raises(KeyError):
        tok.decode([len(tok.vocab) + 5])


def test_vocab_cap():
    sents = [[w] for w in ("alpha", "beta", "gamma", "delta")]
    tok = Tokenizer.train(sents, num_merges=50, cap=40)
    assert len(tok.vocab) <= 40
    with pytest.raises(ValueError):
        Tokenizer.train(sents, num_merges=5, cap=6)


def test_save_load(tmp_path):
    sents = [["the", "cats", "sat", "."], ["a", "dog", "runs", "!"]]
    tok = Tokenizer.train(sents, num_merges=20)
    tok.save(tmp_path)
    back = Tokenizer.load(tmp_path)
    assert back.model.merges == tok.model.merges
    assert back.model.alphabet == tok.model.alphabet
    assert back.vocab.symbols == tok.vocab.symbols
    assert back.encode(sents[0]) == tok.encode(sents[0])
