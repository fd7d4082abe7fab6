"""Adversarial co-training of generator and discriminator.

Each loop iteration draws a minibatch and flips a lambda-weighted coin: on
heads the generator takes a single-sample REINFORCE step on the reward
``-log(1 - D(x, y'))`` minus a moving-average baseline, otherwise a
teacher-forced MLE step. The discriminator then trains on the batch's
ground-truth pairs against fresh samples from the updated generator.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from . import discriminator as disc
from . import generator as gen
from .evaluation import GleuConfig
from .seeding import numpy_stream, torch_stream

Ids = Sequence[int]
logger = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainState:
    lam: float = 0.4
    epsilon: float = 0.7
    baseline: Optional[float] = None
    baseline_decay: float = 0.9
    step: int = 0
    seed: int = 0
    alpha_g: float = 1e-4
    alpha_d: float = 1e-3
    d_updates_per_g_update: int = 1
    use_baseline: bool = True

    def __post_init__(self):
        errors = []
        if not 0.0 <= self.lam <= 1.0:
            errors.append(f"lambda must be in [0, 1], got {self.lam}")
        if not 0.5 < self.epsilon < 1.0:
            errors.append(f"epsilon must be in (0.5, 1), got {self.epsilon}")
        if not 0.0 <= self.baseline_decay < 1.0:
            errors.append(f"baseline decay must be in [0, 1), got {self.baseline_decay}")
        if self.baseline is not None and not math.isfinite(self.baseline):
            errors.append("baseline must be finite")
        if self.d_updates_per_g_update < 1:
            errors.append("d_updates_per_g_update must be >= 1")
        if errors:
            raise ValueError("; ".join(errors))


@dataclass(frozen=True)
class RewardRecord:
    x: Tuple[int, ...]
    y_prime: Tuple[int, ...]
    raw_reward: float
    baseline_at_time: float
    advantage: float


def reward_from_probability(d: float, delta: float = 1e-6) -> float:
    d = min(max(d, delta), 1.0 - delta)
    return -math.log1p(-d)


def reward(d_model: disc.DiscriminatorModel, x: Ids, y_prime: Ids) -> float:
    return reward_from_probability(disc.score(d_model, x, y_prime), d_model.config.prob_clamp)


def update_baseline(state: TrainState, r: float) -> TrainState:
    if not math.isfinite(r):
        raise ValueError(f"reward must be finite, got {r}")
    if state.baseline is None:
        return dataclasses.replace(state, baseline=float(r))
    beta = state.baseline_decay
    return dataclasses.replace(state, baseline=beta * state.baseline + (1.0 - beta) * r)


class DiscriminatorReward:
    """``-log(1 - D(x, y'))`` from a discriminator.

    With ``trainable=False`` the discriminator stays frozen during co-training.
    """

    def __init__(self, model: disc.DiscriminatorModel, trainable: bool = True):
        self.model = model
        self.trainable = trainable

    def __call__(self, xs, ys, refs=None) -> np.ndarray:
        p = disc.score_batch(self.model, xs, ys)
        return -np.log1p(-p)


class GleuReward:
    """Sentence GLEU of ``y'`` against the batch reference, computed on ids."""

    trainable = False

    def __init__(self, config: GleuConfig = GleuConfig()):
        self.config = config
        self.model = None

    def __call__(self, xs, ys, refs=None) -> np.ndarray:
        if refs is None:
            raise ValueError("GLEU reward needs references")
        return np.array([disc.gleu_reward(list(x), list(y), [list(r)], self.config)
                         for x, y, r in zip(xs, ys, refs)])


def policy_gradient_loss(g_model: gen.GeneratorModel, xs: Sequence[Ids], ys: Sequence[Ids],
                         advantages: Sequence[float]) -> torch.Tensor:
    """Surrogate whose gradient is ``-mean(A * grad log G(y'|x))``."""
    logp = gen.sequence_log_probs(g_model, xs, ys)
    adv = torch.as_tensor(np.asarray(advantages, dtype=np.float64), dtype=logp.dtype)
    return -(adv * logp).mean()


def pg_step(g_model: gen.GeneratorModel, rewarder, state: TrainState, xs: Sequence[Ids],
            sampler: torch.Generator, refs: Optional[Sequence[Ids]] = None):
    """One single-sample REINFORCE update.

    All samples in the batch share the baseline value from before the step;
    afterwards the baseline absorbs each raw reward in sampling order.

    Returns ``(mean_advantage, new_state, records, loss)``.
    """
    samples = gen.sample_batch(g_model, xs, sampler)
    ys = [s.ids for s in samples]
    rewards = np.asarray(rewarder(xs, [s.tokens for s in samples], refs), dtype=np.float64)
    if state.use_baseline:
        b = state.baseline if state.baseline is not None else float(rewards[0])
    else:
        b = 0.0
    advantages = rewards - b
    loss = policy_gradient_loss(g_model, xs, ys, advantages)
    g_model.apply_update(loss)
    new_state = state
    for r in rewards:
        new_state = update_baseline(new_state, float(r))
    records = [RewardRecord(tuple(x), tuple(y), float(r), b, float(a))
               for x, y, r, a in zip(xs, ys, rewards, advantages)]
    return float(advantages.mean()), new_state, records, float(loss.detach())


def refresh_discriminator(d_model: disc.DiscriminatorModel, g_model: gen.GeneratorModel,
                          xs, ys, sampler: torch.Generator, updates: int = 1) -> float:
    loss = float("nan")
    for _ in range(updates):
        fakes = gen.sample_batch(g_model, xs, sampler)
        batch = ([disc.LabeledPair(x, y, 1) for x, y in zip(xs, ys)]
                 + [disc.LabeledPair(x, f.tokens, 0) for x, f in zip(xs, fakes)])
        loss = disc.d_step(d_model, batch)
    return loss


@dataclass
class TrainResult:
    g_model: gen.GeneratorModel
    d_model: Optional[disc.DiscriminatorModel]
    state: TrainState
    log: List[dict] = field(default_factory=list)
    best_dev_f05: Optional[float] = None
    best_step: int = 0
    stopped_early: bool = False


def _fmt(v):
    return None if v is None or (isinstance(v, float) and not math.isfinite(v)) else v


def adversarial_train(g_model: gen.GeneratorModel, rewarder, state: TrainState,
                      train: Sequence[Tuple[Ids, Ids]], dev_eval: Optional[Callable[[gen.GeneratorModel], float]] = None,
                      budget: int = 1000, batch_size: int = 32, eval_every: int = 200, patience: int = 5,
                      restore_best: bool = True, log_path=None, record_wall_time: bool = False,
                      reward_floor: float = 0.01, floor_window: int = 100, floor_windows: int = 5,
                      mode: str = "adversarial") -> TrainResult:
    """Run the co-training loop for ``budget`` minibatches.

    ``mode="mle"`` is the pure-MLE control: same batches, no coin flips, no
    discriminator. With ``rewarder.trainable`` false (GLEU) the reward has
    no parameters and the discriminator refresh is skipped.
    """
    if mode not in ("adversarial", "mle"):
        raise ValueError(f"unknown mode {mode!r}")
    if not train:
        raise ValueError("empty training set")
    batches = numpy_stream(state.seed, "batches")
    coins = numpy_stream(state.seed, "interleave")
    pg_sampler = torch_stream(state.seed, "sampling")
    d_sampler = torch_stream(state.seed, "negatives")
    d_model = getattr(rewarder, "model", None) if mode == "adversarial" else None
    train_d = mode == "adversarial" and getattr(rewarder, "trainable", False)
    g_model.set_learning_rate(state.alpha_g)
    if train_d:
        d_model.set_learning_rate(state.alpha_d)

    result = TrainResult(g_model, d_model, state)
    sink = open(log_path, "w", encoding="utf-8") if log_path else None
    best_params = g_model.snapshot()
    best = None
    since_best = 0
    window_rewards: List[float] = []
    low_windows = 0
    perm = batches.permutation(len(train))
    cursor = 0
    try:
        for it in range(1, budget + 1):
            t0 = time.perf_counter()
            if cursor + batch_size > len(perm):
                perm = batches.permutation(len(train))
                cursor = 0
            idx = perm[cursor:cursor + batch_size]
            cursor += batch_size
            xs = [train[i][0] for i in idx]
            ys = [train[i][1] for i in idx]

            mean_reward = None
            if mode == "mle":
                branch = "mle"
            else:
                rho = coins.random()
                branch = "pg" if rho <= state.lam else "mle"
            if branch == "pg":
                _, state, records, g_loss = pg_step(g_model, rewarder, state, xs, pg_sampler, refs=ys)
                mean_reward = float(np.mean([r.raw_reward for r in records]))
                window_rewards.append(mean_reward)
            else:
                g_loss = gen.mle_step(g_model, list(zip(xs, ys)))
            d_loss = None
            if train_d:
                d_loss = refresh_discriminator(d_model, g_model, xs, ys, d_sampler,
                                               state.d_updates_per_g_update)
            state = dataclasses.replace(state, step=state.step + 1)

            entry = {"step": state.step, "branch": branch, "mean_reward": _fmt(mean_reward),
                     "baseline": _fmt(state.baseline), "g_loss": _fmt(g_loss), "d_loss": _fmt(d_loss)}
            stop = False
            if dev_eval is not None and (it % eval_every == 0 or it == budget):
                f = float(dev_eval(g_model))
                entry["dev_f05"] = f
                logger.info("step %d dev F0.5 %.4f (best %s)", state.step, f, best)
                if best is None or f > best:
                    best, since_best = f, 0
                    best_params = g_model.snapshot()
                    result.best_step = state.step
                else:
                    since_best += 1
                    stop = since_best >= patience
            entry["wall_ms"] = round((time.perf_counter() - t0) * 1000, 3) if record_wall_time else None
            result.log.append(entry)
            if sink:
                sink.write(json.dumps(entry) + "\n")

            if it % floor_window == 0 and mode == "adversarial":
                if window_rewards and float(np.mean(window_rewards)) < reward_floor:
                    low_windows += 1
                    if low_windows >= floor_windows:
                        raise DivergenceError(
                            f"mean reward below {reward_floor} for {low_windows} windows of "
                            f"{floor_window} batches (last window mean {np.mean(window_rewards):.4g}, "
                            f"step {state.step})")
                elif window_rewards:
                    low_windows = 0
                window_rewards = []
            if stop:
                result.stopped_early = True
                break
    finally:
        if sink:
            sink.close()
    if dev_eval is not None and restore_best and best is not None:
        g_model.restore(best_params)
    result.state = state
    result.best_dev_f05 = best
    return result


def mle_finetune(g_model, state, train, dev_eval=None, **kw) -> TrainResult:
    """Pure-MLE control run over the same minibatch stream."""
    return adversarial_train(g_model, None, state, train, dev_eval, mode="mle", **kw)


def pretrain_generator(g_model: gen.GeneratorModel, train: Sequence[Tuple[Ids, Ids]],
                       dev: Sequence[Tuple[Ids, Ids]], seed: int = 0, batch_size: int = 64,
                       eval_every: int = 200, patience: int = 5, max_steps: int = 20000,
                       log: Optional[list] = None) -> Tuple[gen.GeneratorModel, float]:
    """MLE until dev loss fails to improve for ``patience`` evaluations.

    Restores the best parameters and returns ``(model, best_dev_loss)``.
    """
    batches = numpy_stream(seed, "batches")
    perm = batches.permutation(len(train))
    cursor = 0
    best = math.inf
    best_params = g_model.snapshot()
    since = 0
    for step in range(1, max_steps + 1):
        if cursor + batch_size > len(perm):
            perm = batches.permutation(len(train))
            cursor = 0
        loss = gen.mle_step(g_model, [train[i] for i in perm[cursor:cursor + batch_size]])
        cursor += batch_size
        if step % eval_every == 0:
            dev_loss = gen.eval_loss(g_model, dev)
            logger.info("pretrain step %d train loss %.4f dev loss %.4f", step, loss, dev_loss)
            if log is not None:
                log.append({"step": step, "train_loss": loss, "dev_loss": dev_loss})
            if dev_loss < best - 1e-6:
                best, since = dev_loss, 0
                best_params = g_model.snapshot()
            else:
                since += 1
                if since >= patience:
                    break
    g_model.restore(best_params)
    return g_model, best
