import math

import numpy as np
import pytest
import torch

from advgec import checkpoint
from advgec import discriminator as disc
from advgec.discriminator import LabeledPair

from conftest import fd_check, tiny_discriminator

SENTINEL = 9
VOCAB = 10
FORMS = [("sentence_pair", "recurrent"), ("sentence_pair", "convolutional"),
         ("single_sentence", "recurrent"), ("single_sentence", "convolutional")]


def sentinel_data(n, seed=0):
    """Positives never contain the sentinel; every negative does."""
    rng = np.random.default_rng(seed)
    pos, neg = [], []
    for _ in range(n):
        x = list(rng.integers(4, 9, size=int(rng.integers(2, 6))))
        y = list(rng.integers(4, 9, size=int(rng.integers(2, 6))))
        pos.append((x, y))
        bad = list(y)
        bad[int(rng.integers(len(bad)))] = SENTINEL
        neg.append((x, bad))
    return pos, neg


@pytest.mark.parametrize("formulation,architecture", FORMS)
def test_untrained_scores_near_half(formulation, architecture):
    m = tiny_discriminator(formulation, architecture, vocab_size=VOCAB, seed=1)
    pos, neg = sentinel_data(50)
    xs = [x for x, _ in pos + neg]
    ys = [y for _, y in pos + neg]
    assert 0.35 <= float(np.mean(disc.score_batch(m, xs, ys))) <= 0.65


def _saturate(m, bias):
    with torch.no_grad():
        m.net.final.weight.zero_()
        m.net.final.bias.fill_(bias)


def test_probability_clamp():
    m = tiny_discriminator(vocab_size=VOCAB)
    _saturate(m, 1e4)
    assert disc.score(m, [4], [5]) == 1.0 - 1e-6
    _saturate(m, -1e4)
    assert disc.score(m, [4], [5]) == 1e-6


def test_bce_closed_forms():
    m = tiny_discriminator(vocab_size=VOCAB)
    batch = [LabeledPair((4, 5), (5,), 1), LabeledPair((4,), (6, 7), 0)]
    _saturate(m, 0.0)
    assert disc.bce_loss(m, batch, training=False).item() == pytest.approx(math.log(2), abs=1e-12)
    _saturate(m, 1e4)
    assert disc.bce_loss(m, batch[:1], training=False).item() == pytest.approx(1e-6, rel=1e-3)
    _saturate(m, -1e4)
    assert disc.bce_loss(m, batch[1:], training=False).item() == pytest.approx(1e-6, rel=1e-3)
    with pytest.raises(ValueError):
        disc.bce_loss(m, [])


@pytest.mark.parametrize("formulation,architecture", FORMS)
def test_bce_gradient_finite_differences(formulation, architecture):
    m = tiny_discriminator(formulation, architecture, vocab_size=VOCAB, seed=2)
    assert sum(p.numel() for p in m.net.parameters()) <= 5000
    batch = [LabeledPair((4, 5, 6), (5, 7), 1), LabeledPair((8, 4), (6, 9, 4), 0)]
    fd_check(lambda: disc.bce_loss(m, batch, training=False), list(m.net.parameters()), picks=8)


@pytest.mark.parametrize("formulation,architecture", FORMS)
def test_padding_invariance(formulation, architecture):
    m = tiny_discriminator(formulation, architecture, vocab_size=VOCAB, seed=5)
    alone = disc.score_batch(m, [[4, 5]], [[6]])
    batched = disc.score_batch(m, [[4, 5], [7, 8, 4, 5, 6, 7]], [[6], [4, 4, 4, 5, 8]])
    assert batched[0] == pytest.approx(alone[0], abs=1e-12)


def test_single_sentence_ignores_source():
    m = tiny_discriminator("single_sentence", vocab_size=VOCAB, seed=3)
    assert disc.score(m, [4, 5], [6, 7]) == disc.score(m, [8, 8, 8], [6, 7])
    sp = tiny_discriminator("sentence_pair", vocab_size=VOCAB, seed=3)
    assert disc.score(sp, [4, 5], [6, 7]) != disc.score(sp, [8, 8, 8], [6, 7])


@pytest.mark.parametrize("epsilon", [0.6, 0.7, 0.8])
def test_pretrain_stops_in_window(epsilon):
    m = tiny_discriminator(vocab_size=VOCAB, seed=0, learning_rate=3e-3)
    pos, neg = sentinel_data(1000)
    assert disc.accuracy(m, disc.labeled_pairs(pos, neg)) < epsilon
    m, acc = disc.pretrain_discriminator(m, pos, neg, epsilon, batch_size=16, eval_every=2, seed=1)
    assert epsilon <= acc <= epsilon + 0.05


def test_pretrained_separates_sentinel():
    m = tiny_discriminator(vocab_size=VOCAB, seed=0, learning_rate=3e-3)
    pos, neg = sentinel_data(1000)
    m, _ = disc.pretrain_discriminator(m, pos, neg, 0.8, batch_size=16, eval_every=2, seed=1)
    test_pos, test_neg = sentinel_data(100, seed=9)
    p = disc.score_batch(m, [x for x, _ in test_pos], [y for _, y in test_pos])
    n = disc.score_batch(m, [x for x, _ in test_neg], [y for _, y in test_neg])
    assert p.mean() > n.mean()


def test_pretrain_preconditions_and_exhaustion():
    m = tiny_discriminator(vocab_size=VOCAB)
    pos, neg = sentinel_data(100)
    with pytest.raises(ValueError):
        disc.pretrain_discriminator(m, pos, neg, 0.5)
    # shuffled labels: nothing to learn, so 0.99 is out of reach
    rng = np.random.default_rng(0)
    mixed = pos + neg
    order = rng.permutation(len(mixed))
    pos_s = [mixed[i] for i in order[:100]]
    neg_s = [mixed[i] for i in order[100:]]
    with pytest.raises(disc.DiscriminatorTargetError) as info:
        disc.pretrain_discriminator(m, pos_s, neg_s, 0.99, max_steps=60, eval_every=5, seed=0)
    assert 0.0 <= info.value.best_accuracy < 0.99
    assert info.value.model is m


def test_labeled_pairs_drop_empty_outputs():
    data = disc.labeled_pairs([([4], [5])], [([4], []), ([4], [6])])
    assert [(d.y, d.label) for d in data] == [((5,), 1), ((6,), 0)]


def test_gleu_reward():
    assert disc.gleu_reward([4, 5], [], [[4, 5]]) == 0.0
    assert disc.gleu_reward([4, 5], [4, 6, 7, 8], [[4, 6, 7, 8]]) == 1.0


def test_checkpoint_round_trip(tmp_path):
    m = tiny_discriminator("sentence_pair", "convolutional", vocab_size=VOCAB, seed=4)
    pos, neg = sentinel_data(20)
    batch = disc.labeled_pairs(pos, neg)
    for _ in range(5):
        disc.d_step(m, batch)
    disc.save_checkpoint(m, tmp_path / "d")
    back = disc.load_checkpoint(tmp_path / "d")
    xs, ys = [b.x for b in batch], [b.y for b in batch]
    assert np.array_equal(disc.score_batch(back, xs, ys), disc.score_batch(m, xs, ys))
    assert back.step_count == 5
    with pytest.raises(checkpoint.CheckpointConfigError):
        disc.load_checkpoint(tmp_path / "d", disc.DiscriminatorConfig(architecture="recurrent"))
