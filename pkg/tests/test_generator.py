import math

import numpy as np
import pytest
import torch
from scipy import stats

from advgec import checkpoint
from advgec import generator as gen
from advgec.tokenizer import BOS, EOS, PAD

from conftest import A, B, all_outputs, fd_check, make_uniform, tiny_generator, tiny_generator_config

X = [A, B, A]


def test_config_validation_lists_every_problem():
    with pytest.raises(ValueError) as info:
        gen.GeneratorConfig(architecture="lstm", num_layers=0, layer_dropout=1.5, optimizer="rmsprop")
    msg = str(info.value)
    for word in ("architecture", "num_layers", "layer_dropout", "optimizer"):
        assert word in msg


def test_eos_cannot_be_banned():
    with pytest.raises(ValueError):
        tiny_generator(banned=(PAD, EOS))


def test_perfect_predictor_has_zero_loss(architecture):
    m = tiny_generator(architecture)
    with torch.no_grad():
        m.net.out.weight.zero_()
        m.net.out.bias.zero_()
        m.net.out.bias[EOS] = 1e4
    assert gen.mle_loss(m, [(X, [])], training=False).item() == pytest.approx(0.0, abs=1e-12)
    # every step puts its mass on EOS: the correction is empty and certain
    r = gen.sample(m, X, seed=0)
    assert r.tokens == [] and r.log_prob == pytest.approx(0.0, abs=1e-12)
    assert gen.beam_decode(m, X, 3).ids == [EOS]


def test_fresh_model_loss_near_log_vocab(architecture):
    V = 40
    m = tiny_generator(architecture, vocab_size=V, banned=(PAD, BOS), embed_dim=16, hidden_dim=16)
    rng = np.random.default_rng(0)
    pairs = [(list(rng.integers(4, V, 5)), list(rng.integers(4, V, 4))) for _ in range(16)]
    loss = gen.mle_loss(m, pairs, training=False).item()
    assert abs(loss - math.log(V)) < 0.2 * math.log(V)


def test_overfits_four_pairs(architecture):
    m = tiny_generator(architecture, embed_dim=16, hidden_dim=16, ffn_dim=32, max_decode_len=5)
    pairs = [([A, B], [B, A]), ([B, B], [A]), ([A, A, A], [B, B, B]), ([B], [A, B, A])]
    for _ in range(500):
        gen.mle_step(m, pairs)
    assert gen.mle_loss(m, pairs, training=False).item() <= 0.01
    assert [r.tokens for r in gen.decode_corpus(m, [x for x, _ in pairs], beam_size=2)] == [y for _, y in pairs]


def test_empty_batch_rejected():
    with pytest.raises(ValueError):
        gen.mle_loss(tiny_generator(), [])


def test_uniform_log_prob_closed_form(architecture):
    m = make_uniform(tiny_generator(architecture))
    assert gen.log_prob(m, X, [A, EOS]) == pytest.approx(2 * math.log(1 / 3), abs=1e-12)
    assert gen.log_prob(m, X, [A, EOS]) == pytest.approx(-2.1972, abs=1e-4)


def test_sample_log_prob_self_consistent(architecture):
    m = tiny_generator(architecture, seed=3, max_decode_len=6)
    for seed in range(10):
        r = gen.sample(m, X, seed)
        assert gen.log_prob(m, X, r.ids) == pytest.approx(r.log_prob, abs=1e-5)
        assert r == gen.sample(m, X, seed)


def _chi2_against_enumeration(m, n=100_000):
    seqs = all_outputs(max_len=2)
    probs = np.array([math.exp(gen.log_prob(m, X, s)) for s in seqs])
    assert probs.sum() == pytest.approx(1.0, abs=1e-9)
    g = torch.Generator().manual_seed(11)
    counts = {tuple(s): 0 for s in seqs}
    for _ in range(n // 10_000):
        for r in gen.sample_batch(m, [X] * 10_000, g):
            counts[tuple(r.ids)] += 1
    observed = np.array([counts[tuple(s)] for s in seqs])
    return stats.chisquare(observed, probs * n).pvalue


def test_uniform_sampling_matches_enumeration():
    assert _chi2_against_enumeration(make_uniform(tiny_generator())) > 0.01


def test_random_model_sampling_matches_enumeration(architecture):
    m = tiny_generator(architecture, seed=5)
    with torch.no_grad():
        m.net.out.weight.mul_(60.0)  # sharpen away from uniform
    assert _chi2_against_enumeration(m) > 0.01


def _naive_greedy(m, x):
    ys = []
    src = gen._src_tensor([x])
    with torch.no_grad():
        for _ in range(m.config.max_decode_len):
            logits = m.logits(src, torch.tensor([[BOS] + ys]))[0, -1]
            t = int(logits.argmax())
            ys.append(t)
            if t == EOS:
                break
    return ys


def test_beam_one_equals_greedy_loop():
    rng = np.random.default_rng(0)
    for i in range(100):
        arch = "transformer" if i % 2 else "rnn"
        m = tiny_generator(arch, seed=i, max_decode_len=4, vocab_size=9, banned=(PAD, BOS))
        with torch.no_grad():
            m.net.out.weight.mul_(80.0)
        x = list(rng.integers(3, 9, size=int(rng.integers(1, 5))))
        expect = _naive_greedy(m, x)
        assert gen.beam_decode(m, x, 1).ids == expect
        assert gen.greedy_decode_batch(m, [x])[0].ids == expect


def test_exhaustive_beam_matches_brute_force(architecture):
    for seed in range(5):
        m = tiny_generator(architecture, seed=seed)
        with torch.no_grad():
            m.net.out.weight.mul_(60.0)
        scored = [(gen.log_prob(m, X, s) / len(s), s) for s in all_outputs(max_len=2)]
        best = max(scored)[1]
        r = gen.beam_decode(m, X, beam_size=9)
        assert r.ids == best
        assert r.log_prob == pytest.approx(gen.log_prob(m, X, best), abs=1e-9)


def test_batched_decoding_matches_single(architecture):
    m = tiny_generator(architecture, seed=2, max_decode_len=5, vocab_size=9, banned=(PAD, BOS))
    with torch.no_grad():
        m.net.out.weight.mul_(50.0)
    xs = [[4, 5], [6, 7, 8, 4], [5], [8, 8, 8]]
    batched = gen.decode_corpus(m, xs, beam_size=3, batch_size=3)
    for x, r in zip(xs, batched):
        single = gen.beam_decode(m, x, 3)
        assert r.ids == single.ids
        assert r.log_prob == pytest.approx(single.log_prob, abs=1e-9)


def test_gradients_match_finite_differences(architecture):
    m = tiny_generator(architecture, seed=1, max_decode_len=4)
    n_params = sum(p.numel() for p in m.net.parameters())
    assert n_params <= 5000
    params = [p for p in m.net.parameters() if p.requires_grad]
    pairs = [([A, B], [B, A]), ([B], [A, A, B])]
    fd_check(lambda: gen.mle_loss(m, pairs, training=False), params)
    fd_check(lambda: gen.sequence_log_probs(m, [[A, B, A]], [[B, A, EOS]]).sum(), params, seed=1)


def test_decoder_is_causal():
    m = tiny_generator(seed=4, max_decode_len=6)
    src = gen._src_tensor([[A, B]])
    with torch.no_grad():
        a = m.logits(src, torch.tensor([[BOS, A, B, A]]))
        b = m.logits(src, torch.tensor([[BOS, A, A, B]]))
    assert torch.equal(a[0, :2], b[0, :2])
    assert not torch.allclose(a[0, 2:], b[0, 2:])


def test_padding_invariance(architecture):
    m = tiny_generator(architecture, seed=6, max_decode_len=4, vocab_size=9, banned=(PAD, BOS))
    with torch.no_grad():
        alone = gen.sequence_log_probs(m, [[4, 5]], [[6, EOS]])
        batched = gen.sequence_log_probs(m, [[4, 5], [7, 8, 4, 5, 6]], [[6, EOS], [4, 4, 4, EOS]])
    assert float(batched[0]) == pytest.approx(float(alone[0]), abs=1e-10)


def test_word_dropout_only_in_training():
    m = tiny_generator(source_word_dropout=0.5, target_word_dropout=0.5, seed=1)
    pairs = [([A, B, A, B], [B, A])]
    assert gen.mle_loss(m, pairs, training=False).item() == gen.mle_loss(m, pairs, training=False).item()
    assert gen.mle_loss(m, pairs, training=True).item() != gen.mle_loss(m, pairs, training=False).item()


def test_clone_is_independent():
    m = tiny_generator(seed=2)
    c = gen.clone(m)
    assert gen.log_prob(c, X, [A, EOS]) == gen.log_prob(m, X, [A, EOS])
    gen.mle_step(c, [(X, [A])])
    assert gen.log_prob(c, X, [A, EOS]) != gen.log_prob(m, X, [A, EOS])


def test_checkpoint_round_trip(tmp_path, architecture):
    m = tiny_generator(architecture, seed=8, max_decode_len=4)
    pairs = [([A, B], [B]), ([B, A], [A, A])]
    for _ in range(20):
        gen.mle_step(m, pairs)
    before = gen.log_prob(m, X, [B, A, EOS])
    dev_loss = gen.eval_loss(m, pairs)
    gen.save_checkpoint(m, tmp_path / "g")
    back = gen.load_checkpoint(tmp_path / "g")
    assert gen.log_prob(back, X, [B, A, EOS]) == before
    assert gen.eval_loss(back, pairs) == dev_loss
    assert back.step_count == 20
    # optimizer state survives too: one more step agrees
    gen.mle_step(m, pairs)
    gen.mle_step(back, pairs)
    assert gen.log_prob(back, X, [B, A, EOS]) == gen.log_prob(m, X, [B, A, EOS])


def test_checkpoint_config_mismatch(tmp_path):
    m = tiny_generator()
    gen.save_checkpoint(m, tmp_path / "g")
    with pytest.raises(checkpoint.CheckpointConfigError):
        gen.load_checkpoint(tmp_path / "g", tiny_generator_config(embed_dim=16))
    (tmp_path / "g" / "MANIFEST").write_text("ADVGEC-CHECKPOINT\nversion=99\nkind=generator\n")
    with pytest.raises(checkpoint.CheckpointVersionError):
        gen.load_checkpoint(tmp_path / "g")
    with pytest.raises(checkpoint.CheckpointError):
        gen.load_checkpoint(tmp_path / "missing")
