"""Independent reference computations shared by the unit and acceptance tests."""

import math

import numpy as np
import torch

from advgec import adversarial as adv
from advgec import discriminator as disc
from advgec import generator as gen

from conftest import A, B, all_outputs, tiny_discriminator, tiny_generator

X = [A, B, A]


class TableReward:
    """A fixed reward over the toy output space, looked up by token tuple."""

    trainable = False
    model = None

    def __init__(self, table):
        self.table = table

    def __call__(self, xs, ys, refs=None):
        return np.array([self.table[tuple(y)] for y in ys], dtype=np.float64)


def toy_table():
    table = {}
    for ids in all_outputs(max_len=2):
        tokens = tuple(t for t in ids if t in (A, B))
        table[tokens] = 0.3 * tokens.count(A) + (1.0 if tokens == (B,) else 0.0) + 0.05 * len(tokens)
    return table


def _flat_grad(model, f):
    params = list(model.net.parameters())
    grads = torch.autograd.grad(f(), params, allow_unused=True)
    return torch.cat([(torch.zeros_like(p) if g is None else g).reshape(-1) for p, g in zip(params, grads)])


def _flat_params(model):
    return torch.cat([p.detach().reshape(-1) for p in model.net.parameters()]).clone()


def reinforce_zscores(architecture="transformer", n=50_000, baseline=0.4, use_baseline=True, table=None,
                      model_seed=3, sample_seed=0):
    """Run one ``pg_step`` over ``n`` copies of one source and score it against enumeration.

    With SGD at learning rate 1 the update equals the mean single-sample
    estimate of ``grad E[A]``. The per-sample gradient depends only on the
    sampled output, so its variance is computed exactly from the nine
    distinct outputs and their empirical frequencies.

    Returns ``(z, consistency)``: per-coordinate z-scores of the update
    against the exact gradient, and the largest gap between the update and
    the grouped per-sample mean.
    """
    table = table or toy_table()
    m = tiny_generator(architecture, seed=model_seed, optimizer="sgd", learning_rate=1.0)
    with torch.no_grad():
        m.net.out.weight.mul_(10.0)
    outputs = all_outputs(max_len=2)
    keys = [tuple(t for t in ids if t in (A, B)) for ids in outputs]
    b = baseline if use_baseline else 0.0
    adv_of = {k: table[k] - b for k in keys}

    def expected():
        logp = gen.sequence_log_probs(m, [X] * len(outputs), outputs)
        return (torch.exp(logp) * torch.tensor([adv_of[k] for k in keys], dtype=logp.dtype)).sum()
    exact = _flat_grad(m, expected)
    per_output = {k: adv_of[k] * _flat_grad(m, lambda ids=ids: gen.sequence_log_probs(m, [X], [ids])[0])
                  for k, ids in zip(keys, outputs)}

    state = adv.TrainState(baseline=baseline if use_baseline else None, use_baseline=use_baseline)
    before = _flat_params(m)
    _, _, records, _ = adv.pg_step(m, TableReward(table), state, [X] * n, torch.Generator().manual_seed(sample_seed))
    update = _flat_params(m) - before

    counts = {k: 0 for k in keys}
    for r in records:
        counts[tuple(t for t in r.y_prime if t in (A, B))] += 1
    mean = sum(counts[k] / n * per_output[k] for k in keys)
    second = sum(counts[k] / n * per_output[k] ** 2 for k in keys)
    se = torch.sqrt(torch.clamp(second - mean ** 2, min=0.0) / n)
    gap = float((update - mean).abs().max())
    live = se > 1e-12
    z = ((update - exact)[live] / se[live]).numpy()
    dead = float((update - exact)[~live].abs().max()) if (~live).any() else 0.0
    assert dead <= 1e-12, dead
    return z, gap


SENTINEL = 9
SENTINEL_VOCAB = 10


def sentinel_probability(g_model, sources, seed=0, repeats=4):
    """Fraction of sampled output tokens that are the sentinel."""
    sampler = torch.Generator().manual_seed(seed)
    hits = total = 0
    for _ in range(repeats):
        for r in gen.sample_batch(g_model, sources, sampler):
            hits += sum(t == SENTINEL for t in r.tokens)
            total += max(len(r.tokens), 1)
    return hits / total


def sentinel_penalizer(seed=0):
    """A small discriminator trained to call any output containing the sentinel fake."""
    d = tiny_discriminator(vocab_size=SENTINEL_VOCAB, seed=seed, learning_rate=1e-2)
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(400):
        x = list(rng.integers(4, 9, size=int(rng.integers(2, 5))))
        y = list(rng.integers(4, 9, size=int(rng.integers(1, 4))))
        bad = list(y)
        bad[int(rng.integers(len(bad)))] = SENTINEL
        pairs += [disc.LabeledPair(x, y, 1), disc.LabeledPair(x, bad, 0)]
    for _ in range(300):
        disc.d_step(d, [pairs[i] for i in rng.choice(len(pairs), 32)])
    return d


def sentinel_flow(seed, steps=1000, batch_size=8):
    """Probability of the sentinel before and after PG training against a frozen penalizer."""
    d = sentinel_penalizer(seed)
    g = tiny_generator("transformer", seed=seed, vocab_size=SENTINEL_VOCAB, banned=(0, 1, 3),
                       max_decode_len=3, embed_dim=16, hidden_dim=16, ffn_dim=32)
    rng = np.random.default_rng(seed + 100)
    sources = [list(rng.integers(4, 9, size=3)) for _ in range(64)]
    start = sentinel_probability(g, sources)
    state = adv.TrainState(lam=1.0, seed=seed, alpha_g=3e-3)
    train = [(x, x) for x in sources]
    adv.adversarial_train(g, adv.DiscriminatorReward(d, trainable=False), state, train,
                          budget=steps, batch_size=batch_size)
    end = sentinel_probability(g, sources)
    return start, end


def binomial_band(n, lam):
    return 4.0 * math.sqrt(n * lam * (1.0 - lam))
