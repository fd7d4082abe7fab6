import numpy as np
import pytest
import torch

from advgec import discriminator as disc
from advgec import generator as gen
from advgec.tokenizer import BOS, EOS, PAD, UNK

A, B = 4, 5  # the two content tokens of the toy vocabulary {a, b, EOS}
TOY_VOCAB = 6
TOY_BANNED = (PAD, BOS, UNK)


def tiny_generator_config(architecture="transformer", **kw):
    base = dict(architecture=architecture, num_layers=1, embed_dim=8, hidden_dim=8, num_heads=2, ffn_dim=16,
                layer_dropout=0.0, attention_dropout=0.0, source_word_dropout=0.0, target_word_dropout=0.0,
                max_decode_len=2, learning_rate=0.01, optimizer="adam", dtype="float64")
    base.update(kw)
    return gen.GeneratorConfig(**base)


def tiny_generator(architecture="transformer", seed=0, vocab_size=TOY_VOCAB, banned=TOY_BANNED, **kw):
    return gen.GeneratorModel(tiny_generator_config(architecture, **kw), vocab_size, seed=seed, banned_ids=banned)


def make_uniform(model):
    with torch.no_grad():
        model.net.out.weight.zero_()
        model.net.out.bias.zero_()
    return model


def tiny_discriminator(formulation="sentence_pair", architecture="recurrent", seed=0, vocab_size=TOY_VOCAB, **kw):
    base = dict(formulation=formulation, architecture=architecture, embed_dim=6, hidden_dim=6, num_layers=1,
                dropout=0.0, dense_dim=6, learning_rate=0.01, optimizer="adam", dtype="float64")
    base.update(kw)
    return disc.DiscriminatorModel(disc.DiscriminatorConfig(**base), vocab_size, seed=seed)


def all_outputs(max_len=2, tokens=(EOS, A, B)):
    """Every decoder output of length <= max_len over ``tokens``."""
    out = []

    def rec(prefix):
        for t in tokens:
            seq = prefix + [t]
            if t == EOS or len(seq) == max_len:
                out.append(seq)
            else:
                rec(seq)
    rec([])
    return out


def fd_check(f, params, h=1e-5, tol=1e-3, picks=12, seed=0):
    """Compare autograd with central differences on randomly chosen coordinates.

    ReLU and max-pool make some losses piecewise smooth. A coordinate whose
    two one-sided differences disagree sits on a kink, where the central
    difference means nothing, so it is skipped; most picks must survive.
    """
    loss = f()
    grads = torch.autograd.grad(loss, params)
    base = loss.item()
    rng = np.random.default_rng(seed)
    checked = skipped = 0
    for p, g in zip(params, grads):
        flat, gflat = p.data.view(-1), g.reshape(-1)
        for k in rng.choice(flat.numel(), size=min(picks, flat.numel()), replace=False):
            old = flat[k].item()
            flat[k] = old + h
            up = f().item()
            flat[k] = old - h
            down = f().item()
            flat[k] = old
            right, left = (up - base) / h, (base - down) / h
            if abs(right - left) > 1e-2 * max(abs(right), abs(left), 1e-3) + 1e3 * h:
                skipped += 1
                continue
            fd, an = (up - down) / (2 * h), float(gflat[k])
            assert abs(fd - an) <= tol * max(abs(fd), abs(an), 1e-3), (p.shape, k, fd, an)
            checked += 1
    assert checked >= 4 * skipped and checked > 0


@pytest.fixture(params=["transformer", "rnn"])
def architecture(request):
    return request.param


ACCEPTANCE = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE[number] = (passed, detail)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}")
