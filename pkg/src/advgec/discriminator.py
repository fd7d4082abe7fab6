"""Discriminators judging whether ``y`` is a human correction of ``x``.

Two formulations share the same encoders: sentence-pair (sees ``x`` and
``y``) and single-sentence (sees ``y`` only). Each comes in a siamese
recurrent and a convolutional matching architecture.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from . import checkpoint
from .evaluation import GleuConfig, gleu_sentence
from .nn_utils import DTYPES, Dropout, RngBox, make_optimizer, pad_batch
from .tokenizer import EOS, PAD

KIND = "discriminator"
Ids = Sequence[int]
logger = logging.getLogger(__name__)


@dataclass
class DiscriminatorConfig:
    formulation: str = "sentence_pair"
    architecture: str = "recurrent"
    embed_dim: int = 64
    hidden_dim: int = 64
    num_layers: int = 2
    dropout: float = 0.2
    dense_dim: int = 64
    kernel_size: int = 3
    learning_rate: float = 0.05
    optimizer: str = "sgd"
    prob_clamp: float = 1e-6
    dtype: str = "float32"

    def __post_init__(self):
        errors = []
        if self.formulation not in ("sentence_pair", "single_sentence"):
            errors.append(f"formulation must be sentence_pair or single_sentence, got {self.formulation!r}")
        if self.architecture not in ("recurrent", "convolutional"):
            errors.append(f"architecture must be recurrent or convolutional, got {self.architecture!r}")
        for name in ("embed_dim", "hidden_dim", "num_layers", "dense_dim", "kernel_size"):
            if getattr(self, name) <= 0:
                errors.append(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            errors.append("dropout must be in [0, 1)")
        if not 0.0 < self.prob_clamp < 0.5:
            errors.append("prob_clamp must be in (0, 0.5)")
        if self.learning_rate <= 0:
            errors.append("learning_rate must be positive")
        if self.optimizer not in ("sgd", "adam"):
            errors.append(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if self.dtype not in DTYPES:
            errors.append(f"dtype must be one of {sorted(DTYPES)}")
        if errors:
            raise ValueError("; ".join(errors))


@dataclass(frozen=True)
class LabeledPair:
    x: Tuple[int, ...]
    y: Tuple[int, ...]
    label: int  # 1 = ground truth, 0 = generated

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(self.x))
        object.__setattr__(self, "y", tuple(self.y))
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")


class DiscriminatorTargetError(RuntimeError):
    """Pre-training could not stop inside the requested accuracy window."""

    def __init__(self, message: str, best_accuracy: float, model=None):
        super().__init__(f"{message} (best held-out accuracy {best_accuracy:.4f})")
        self.best_accuracy = best_accuracy
        self.model = model


class RecurrentEncoder(nn.Module):
    """Stacked bi-GRU with residual connections above the first layer."""

    def __init__(self, cfg: DiscriminatorConfig, box: RngBox):
        super().__init__()
        H = cfg.hidden_dim
        self.layers = nn.ModuleList(
            nn.GRU(cfg.embed_dim if i == 0 else 2 * H, H, batch_first=True, bidirectional=True)
            for i in range(cfg.num_layers))
        self.drop = Dropout(cfg.dropout, box)
        self.out_dim = 2 * H

    def forward(self, emb, lengths):
        x = emb
        h_n = None
        for i, gru in enumerate(self.layers):
            packed = pack_padded_sequence(x, lengths, batch_first=True, enforce_sorted=False)
            out, h_n = gru(packed)
            out, _ = pad_packed_sequence(out, batch_first=True, total_length=emb.shape[1])
            x = self.drop(out + x if i > 0 else out)
        # final forward state and final backward state of the top layer
        return torch.cat([h_n[-2], h_n[-1]], dim=-1)


class ConvEncoder(nn.Module):
    """Two 1-D convolutions with max-over-time pooling."""

    def __init__(self, cfg: DiscriminatorConfig, box: RngBox):
        super().__init__()
        H, k = cfg.hidden_dim, cfg.kernel_size
        self.conv1 = nn.Conv1d(cfg.embed_dim, H, k, padding=k // 2)
        self.conv2 = nn.Conv1d(H, H, k, padding=k // 2)
        self.drop = Dropout(cfg.dropout, box)
        self.out_dim = H

    def forward(self, emb, lengths):
        # padded steps are zeroed before each convolution so that batch
        # padding looks exactly like the convolution's own zero padding
        pad = (torch.arange(emb.shape[1]).unsqueeze(0) >= lengths.unsqueeze(1)).unsqueeze(1)
        x = emb.transpose(1, 2).masked_fill(pad, 0.0)
        x = self.drop(torch.relu(self.conv1(x))).masked_fill(pad, 0.0)
        x = torch.relu(self.conv2(x))
        x = x.masked_fill(pad, float("-inf"))
        return x.max(dim=-1).values


class DiscriminatorNet(nn.Module):
    def __init__(self, cfg: DiscriminatorConfig, vocab_size: int, box: RngBox):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(vocab_size, cfg.embed_dim, padding_idx=PAD)
        enc_cls = RecurrentEncoder if cfg.architecture == "recurrent" else ConvEncoder
        self.encoder = enc_cls(cfg, box)
        d = self.encoder.out_dim
        if cfg.formulation == "single_sentence":
            feat = d
        elif cfg.architecture == "recurrent":
            feat = 2 * d
        else:
            feat = 4 * d
        self.dense = nn.Linear(feat, cfg.dense_dim)
        self.final = nn.Linear(cfg.dense_dim, 1)
        self.drop = Dropout(cfg.dropout, box)

    def _encode(self, ids):
        lengths = (ids != PAD).sum(1).clamp(min=1)
        return self.encoder(self.drop(self.embed(ids)), lengths)

    def forward(self, x, y):
        v = self._encode(y)
        if self.cfg.formulation == "single_sentence":
            feats = v
        else:
            u = self._encode(x)
            if self.cfg.architecture == "recurrent":
                feats = torch.cat([u, v], dim=-1)
            else:
                feats = torch.cat([u, v, (u - v).abs(), u * v], dim=-1)
        h = self.drop(torch.relu(self.dense(feats)))
        return self.final(h).squeeze(-1)


class DiscriminatorModel(nn.Module):
    def __init__(self, config: DiscriminatorConfig, vocab_size: int, seed: int = 0):
        super().__init__()
        self.config = config
        self.vocab_size = vocab_size
        self.box = RngBox(seed)
        torch_state = torch.random.get_rng_state()
        torch.manual_seed(seed)
        try:
            self.net = DiscriminatorNet(config, vocab_size, self.box)
        finally:
            torch.random.set_rng_state(torch_state)
        self.net.to(DTYPES[config.dtype])
        self.optimizer = make_optimizer(config.optimizer, self.net.parameters(), config.learning_rate)
        self.step_count = 0
        self.eval()

    @property
    def rng(self) -> torch.Generator:
        return self.box.gen

    def probabilities(self, xs: Sequence[Ids], ys: Sequence[Ids], training: bool = False) -> torch.Tensor:
        """Clamped ``D(x, y)`` for a batch; differentiable."""
        self.train(training)
        x = pad_batch([list(s) + [EOS] for s in xs])
        y = pad_batch([list(s) + [EOS] for s in ys])
        d = self.config.prob_clamp
        p = torch.sigmoid(self.net(x, y)).clamp(d, 1.0 - d)
        self.eval()
        return p

    def snapshot(self):
        return {k: v.detach().clone() for k, v in self.net.state_dict().items()}

    def restore(self, params):
        self.net.load_state_dict(params)

    def set_learning_rate(self, lr: float) -> None:
        for group in self.optimizer.param_groups:
            group["lr"] = lr


def score(model: DiscriminatorModel, x: Ids, y: Ids) -> float:
    if len(y) == 0:
        raise ValueError("y must be non-empty")
    with torch.no_grad():
        return float(model.probabilities([x], [y])[0])


@torch.no_grad()
def score_batch(model: DiscriminatorModel, xs: Sequence[Ids], ys: Sequence[Ids],
                batch_size: int = 512) -> np.ndarray:
    out = []
    for i in range(0, len(xs), batch_size):
        out.append(model.probabilities(xs[i:i + batch_size], ys[i:i + batch_size]).double().numpy())
    return np.concatenate(out) if out else np.zeros(0)


def bce_loss(model: DiscriminatorModel, batch: Sequence[LabeledPair], training: bool = True) -> torch.Tensor:
    """Negated log-likelihood of the labels, averaged over the batch."""
    if not batch:
        raise ValueError("empty batch")
    p = model.probabilities([b.x for b in batch], [b.y for b in batch], training=training)
    labels = torch.tensor([b.label for b in batch], dtype=p.dtype)
    return -(labels * torch.log(p) + (1 - labels) * torch.log1p(-p)).mean()


def d_step(model: DiscriminatorModel, batch: Sequence[LabeledPair]) -> float:
    loss = bce_loss(model, batch, training=True)
    model.optimizer.zero_grad()
    loss.backward()
    model.optimizer.step()
    model.step_count += 1
    return float(loss.detach())


def accuracy(model: DiscriminatorModel, batch: Sequence[LabeledPair]) -> float:
    p = score_batch(model, [b.x for b in batch], [b.y for b in batch])
    labels = np.array([b.label for b in batch])
    return float(np.mean((p >= 0.5) == (labels == 1)))


def labeled_pairs(positives: Sequence[Tuple[Ids, Ids]], negatives: Sequence[Tuple[Ids, Ids]]) -> List[LabeledPair]:
    return ([LabeledPair(x, y, 1) for x, y in positives if len(y)]
            + [LabeledPair(x, y, 0) for x, y in negatives if len(y)])


def pretrain_discriminator(model: DiscriminatorModel, positives, negatives, epsilon: float,
                           tolerance: float = 0.05, batch_size: int = 32, eval_every: int = 5,
                           max_steps: int = 20000, overshoot_patience: int = 8,
                           heldout_fraction: float = 0.1, seed: int = 0):
    """Train until held-out accuracy first lands in ``[epsilon, epsilon + tolerance]``.

    Accuracy is checked every ``eval_every`` batches on a held-out slice. If
    a check overshoots the window, the straight line between the previous
    check's parameters and the overshooting ones is bisected for a point
    inside the window. When that fails (accuracy jumps across the window),
    parameters roll back to the previous check and the learning rate halves;
    ``overshoot_patience`` such failures in a row raise
    :class:`DiscriminatorTargetError`, as does running out of steps.

    Returns ``(model, accuracy)``.
    """
    if not 0.5 < epsilon < 1.0:
        raise ValueError(f"epsilon must be in (0.5, 1), got {epsilon}")
    data = labeled_pairs(positives, negatives)
    if len(data) < 10:
        raise ValueError("need at least 10 labeled pairs")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(data))
    n_held = max(1, int(round(heldout_fraction * len(data))))
    held = [data[i] for i in order[:n_held]]
    train = [data[i] for i in order[n_held:]]

    acc = accuracy(model, held)
    best = acc
    if epsilon <= acc <= epsilon + tolerance:
        return model, acc
    saved = model.snapshot()
    saved_opt = copy.deepcopy(model.optimizer.state_dict())
    lr = model.config.learning_rate
    overshoots = 0
    step = 0
    perm = rng.permutation(len(train))
    cursor = 0
    while step < max_steps:
        for _ in range(eval_every):
            if cursor + batch_size > len(perm):
                perm = rng.permutation(len(train))
                cursor = 0
            d_step(model, [train[i] for i in perm[cursor:cursor + batch_size]])
            cursor += batch_size
            step += 1
        acc = accuracy(model, held)
        if (step // eval_every) % 20 == 0:
            logger.info("discriminator step %d held-out accuracy %.4f", step, acc)
        best = max(best, acc) if acc <= epsilon + tolerance else best
        if epsilon <= acc <= epsilon + tolerance:
            return model, acc
        if acc > epsilon + tolerance:
            hit = _bisect_window(model, saved, held, epsilon, epsilon + tolerance)
            if hit is not None:
                return model, hit
            overshoots += 1
            if overshoots >= overshoot_patience:
                raise DiscriminatorTargetError(
                    f"accuracy overshot {epsilon + tolerance:.3f} on {overshoots} consecutive checks", best, model)
            model.restore(saved)
            model.optimizer.load_state_dict(saved_opt)
            lr /= 2
            model.set_learning_rate(lr)
        else:
            overshoots = 0
            saved = model.snapshot()
            saved_opt = copy.deepcopy(model.optimizer.state_dict())
    raise DiscriminatorTargetError(f"accuracy {epsilon:.3f} not reached in {max_steps} steps", best, model)


def _bisect_window(model: DiscriminatorModel, start, held, lo: float, hi: float, iters: int = 30):
    """Search ``start + t * (current - start)`` for held-out accuracy in ``[lo, hi]``.

    ``start`` scores below ``lo`` and the current parameters above ``hi``.
    Leaves the model at the first point found, or unchanged on failure.
    """
    end = model.snapshot()
    a, b = 0.0, 1.0
    for _ in range(iters):
        t = 0.5 * (a + b)
        model.restore({k: start[k] + t * (end[k] - start[k]) if end[k].is_floating_point() else end[k]
                       for k in end})
        acc = accuracy(model, held)
        if lo <= acc <= hi:
            return acc
        if acc < lo:
            a = t
        else:
            b = t
    model.restore(end)
    return None


def gleu_reward(source, hypothesis, references, config: GleuConfig = GleuConfig()) -> float:
    """GLEU of one hypothesis, used directly as a reward."""
    if len(hypothesis) == 0:
        return 0.0
    return gleu_sentence(source, hypothesis, references, config)


# -------------------------------------------------------------- checkpoint

def save_checkpoint(model: DiscriminatorModel, path) -> None:
    state = {"vocab_size": model.vocab_size, "step_count": model.step_count,
             "rng_state": checkpoint.rng_to_text(model.rng)}
    checkpoint.save(path, KIND, model.config, model.net.state_dict(), state, model.optimizer.state_dict())


def load_checkpoint(path, config: Optional[DiscriminatorConfig] = None) -> DiscriminatorModel:
    cfg, params, state, opt_state = checkpoint.load(path, KIND, DiscriminatorConfig, config)
    model = DiscriminatorModel(cfg, state["vocab_size"])
    try:
        model.net.load_state_dict(params)
    except RuntimeError as exc:
        raise checkpoint.CheckpointError(f"{path}: parameters do not fit the config ({exc})") from None
    model.rng.set_state(checkpoint.rng_from_text(state["rng_state"]))
    model.step_count = state["step_count"]
    if opt_state is not None:
        model.optimizer.load_state_dict(opt_state)
    return model
