"""Seq2seq correction models (attention GRU and Transformer).

Sequences are passed around as plain id lists without framing. The source
is fed to the encoder as ``x + [EOS]``; the decoder reads ``[BOS] + y`` and
predicts ``y + [EOS]``.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from . import checkpoint
from .nn_utils import DTYPES, Dropout, RngBox, make_optimizer, pad_batch, sinusoidal_positions, word_dropout
from .tokenizer import BOS, EOS, PAD

Ids = Sequence[int]
KIND = "generator"


@dataclass
class GeneratorConfig:
    architecture: str = "transformer"
    num_layers: int = 2
    embed_dim: int = 64
    hidden_dim: int = 128
    num_heads: int = 2
    ffn_dim: int = 256
    layer_dropout: float = 0.3
    attention_dropout: float = 0.1
    source_word_dropout: float = 0.2
    target_word_dropout: float = 0.1
    max_decode_len: int = 32
    max_source_len: int = 128
    learning_rate: float = 0.1
    optimizer: str = "sgd"
    clip_norm: float = 0.0
    dtype: str = "float32"

    def __post_init__(self):
        errors = []
        if self.architecture not in ("rnn", "transformer"):
            errors.append(f"architecture must be rnn or transformer, got {self.architecture!r}")
        for name in ("num_layers", "embed_dim", "hidden_dim", "num_heads", "ffn_dim",
                     "max_decode_len", "max_source_len"):
            if getattr(self, name) <= 0:
                errors.append(f"{name} must be positive")
        for name in ("layer_dropout", "attention_dropout", "source_word_dropout", "target_word_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                errors.append(f"{name} must be in [0, 1)")
        if self.architecture == "transformer" and self.num_heads > 0 and self.embed_dim % self.num_heads:
            errors.append("num_heads must divide embed_dim")
        if self.architecture == "rnn" and self.hidden_dim % 2:
            errors.append("hidden_dim must be even for the bidirectional encoder")
        if self.learning_rate <= 0:
            errors.append("learning_rate must be positive")
        if self.optimizer not in ("sgd", "adam"):
            errors.append(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if self.dtype not in DTYPES:
            errors.append(f"dtype must be one of {sorted(DTYPES)}")
        if errors:
            raise ValueError("; ".join(errors))


@dataclass
class DecodeResult:
    ids: List[int]
    log_prob: float
    per_step_log_probs: List[float] = field(default_factory=list)

    @property
    def tokens(self) -> List[int]:
        """``ids`` without the closing EOS."""
        return self.ids[:-1] if self.ids and self.ids[-1] == EOS else list(self.ids)


# ------------------------------------------------------------- transformer

class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float, box: RngBox):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.o = nn.Linear(dim, dim)
        self.drop = Dropout(dropout, box)

    def forward(self, query, key, key_pad=None, causal=False):
        B, Tq, D = query.shape
        Tk = key.shape[1]
        h = self.heads
        q = self.q(query).view(B, Tq, h, D // h).transpose(1, 2)
        k = self.k(key).view(B, Tk, h, D // h).transpose(1, 2)
        v = self.v(key).view(B, Tk, h, D // h).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(D // h)
        if key_pad is not None:
            scores = scores.masked_fill(key_pad[:, None, None, :], float("-inf"))
        if causal:
            future = torch.ones(Tq, Tk, dtype=torch.bool).triu(1)
            scores = scores.masked_fill(future, float("-inf"))
        attn = self.drop(torch.softmax(scores, dim=-1))
        out = (attn @ v).transpose(1, 2).reshape(B, Tq, D)
        return self.o(out)


class TransformerLayer(nn.Module):
    """Pre-norm self-attention / cross-attention / feed-forward block."""

    def __init__(self, cfg: GeneratorConfig, box: RngBox, cross: bool):
        super().__init__()
        d = cfg.embed_dim
        self.self_attn = MultiHeadAttention(d, cfg.num_heads, cfg.attention_dropout, box)
        self.norm1 = nn.LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, cfg.num_heads, cfg.attention_dropout, box) if cross else None
        self.norm2 = nn.LayerNorm(d) if cross else None
        self.ffn = nn.Sequential(nn.Linear(d, cfg.ffn_dim), nn.ReLU(), nn.Linear(cfg.ffn_dim, d))
        self.norm3 = nn.LayerNorm(d)
        self.drop = Dropout(cfg.layer_dropout, box)

    def forward(self, x, self_pad=None, causal=False, memory=None, memory_pad=None):
        h = self.norm1(x)
        x = x + self.drop(self.self_attn(h, h, self_pad, causal))
        if self.cross_attn is not None:
            x = x + self.drop(self.cross_attn(self.norm2(x), memory, memory_pad))
        return x + self.drop(self.ffn(self.norm3(x)))


class TransformerSeq2Seq(nn.Module):
    def __init__(self, cfg: GeneratorConfig, vocab_size: int, box: RngBox):
        super().__init__()
        d = cfg.embed_dim
        self.cfg, self.box = cfg, box
        self.embed = nn.Embedding(vocab_size, d, padding_idx=PAD)
        nn.init.normal_(self.embed.weight, std=d ** -0.5)
        with torch.no_grad():
            self.embed.weight[PAD].zero_()
        self.register_buffer("pos", sinusoidal_positions(max(cfg.max_source_len, cfg.max_decode_len) + 2, d),
                             persistent=False)
        self.encoder = nn.ModuleList(TransformerLayer(cfg, box, cross=False) for _ in range(cfg.num_layers))
        self.decoder = nn.ModuleList(TransformerLayer(cfg, box, cross=True) for _ in range(cfg.num_layers))
        self.enc_norm = nn.LayerNorm(d)
        self.dec_norm = nn.LayerNorm(d)
        self.out = nn.Linear(d, vocab_size)
        nn.init.normal_(self.out.weight, std=0.02)
        nn.init.zeros_(self.out.bias)
        self.drop = Dropout(cfg.layer_dropout, box)

    def _embed(self, ids):
        x = self.embed(ids) * math.sqrt(self.cfg.embed_dim) + self.pos[: ids.shape[1]].to(self.embed.weight.dtype)
        return self.drop(x)

    def encode(self, src):
        pad = src == PAD
        x = self._embed(src)
        for layer in self.encoder:
            x = layer(x, pad)
        return {"memory": self.enc_norm(x), "pad": pad}

    def decode(self, enc, tgt_in):
        y = self._embed(tgt_in)
        for layer in self.decoder:
            y = layer(y, None, True, enc["memory"], enc["pad"])
        return self.out(self.dec_norm(y))

    def start(self, enc):
        B = enc["memory"].shape[0]
        return {"enc": enc, "prefix": torch.full((B, 0), BOS, dtype=torch.long)}

    def step(self, state, prev):
        prefix = torch.cat([state["prefix"], prev[:, None]], dim=1)
        logits = self.decode(state["enc"], prefix)[:, -1]
        return logits, {"enc": state["enc"], "prefix": prefix}

    @staticmethod
    def reorder(state, index):
        enc = {"memory": state["enc"]["memory"][index], "pad": state["enc"]["pad"][index]}
        return {"enc": enc, "prefix": state["prefix"][index]}


# --------------------------------------------------------------------- rnn

class RnnSeq2Seq(nn.Module):
    """Bi-GRU encoder, GRU decoder with general (bilinear) attention."""

    def __init__(self, cfg: GeneratorConfig, vocab_size: int, box: RngBox):
        super().__init__()
        E, H, L = cfg.embed_dim, cfg.hidden_dim, cfg.num_layers
        self.cfg, self.box = cfg, box
        self.embed = nn.Embedding(vocab_size, E, padding_idx=PAD)
        self.encoder = nn.ModuleList(
            nn.GRU(E if i == 0 else H, H // 2, batch_first=True, bidirectional=True) for i in range(L))
        self.bridge = nn.Linear(H, H)
        self.decoder = nn.ModuleList(nn.GRU(E if i == 0 else H, H, batch_first=True) for i in range(L))
        self.attn = nn.Linear(H, H, bias=False)
        self.combine = nn.Linear(2 * H, H)
        self.out = nn.Linear(H, vocab_size)
        nn.init.normal_(self.out.weight, std=0.02)
        nn.init.zeros_(self.out.bias)
        self.drop = Dropout(cfg.layer_dropout, box)
        self.attn_drop = Dropout(cfg.attention_dropout, box)

    def encode(self, src):
        pad = src == PAD
        lengths = (~pad).sum(1).clamp(min=1)
        x = self.drop(self.embed(src))
        for i, gru in enumerate(self.encoder):
            packed = pack_padded_sequence(x, lengths, batch_first=True, enforce_sorted=False)
            out, _ = gru(packed)
            out, _ = pad_packed_sequence(out, batch_first=True, total_length=src.shape[1])
            x = self.drop(out)
        mask = (~pad).to(x.dtype).unsqueeze(-1)
        mean = (x * mask).sum(1) / mask.sum(1).clamp(min=1)
        h0 = torch.tanh(self.bridge(mean))
        return {"memory": x, "pad": pad, "h0": h0}

    def _run_decoder(self, enc, emb, hidden):
        x = emb
        new_hidden = []
        for i, gru in enumerate(self.decoder):
            out, h = gru(x, hidden[i])
            new_hidden.append(h)
            x = self.drop(out) if i < len(self.decoder) - 1 else out
        scores = (self.attn(x) @ enc["memory"].transpose(1, 2))
        scores = scores.masked_fill(enc["pad"][:, None, :], float("-inf"))
        weights = self.attn_drop(torch.softmax(scores, dim=-1))
        ctx = weights @ enc["memory"]
        h = self.drop(torch.tanh(self.combine(torch.cat([x, ctx], dim=-1))))
        return self.out(h), new_hidden

    def _init_hidden(self, enc):
        h0 = enc["h0"].unsqueeze(0)
        return [h0.contiguous() for _ in self.decoder]

    def decode(self, enc, tgt_in):
        emb = self.drop(self.embed(tgt_in))
        logits, _ = self._run_decoder(enc, emb, self._init_hidden(enc))
        return logits

    def start(self, enc):
        return {"enc": enc, "hidden": self._init_hidden(enc)}

    def step(self, state, prev):
        emb = self.drop(self.embed(prev[:, None]))
        logits, hidden = self._run_decoder(state["enc"], emb, state["hidden"])
        return logits[:, 0], {"enc": state["enc"], "hidden": hidden}

    @staticmethod
    def reorder(state, index):
        enc = {k: v[index] for k, v in state["enc"].items()}
        return {"enc": enc, "hidden": [h[:, index] for h in state["hidden"]]}


# ------------------------------------------------------------------- model

class GeneratorModel(nn.Module):
    """A seq2seq network plus its optimizer, dropout RNG and step counter.

    ``banned_ids`` can never be emitted (PAD and BOS by default).
    """

    def __init__(self, config: GeneratorConfig, vocab_size: int, seed: int = 0,
                 banned_ids: Tuple[int, ...] = (PAD, BOS)):
        super().__init__()
        self.config = config
        self.vocab_size = vocab_size
        self.banned_ids = tuple(sorted(set(banned_ids)))
        if EOS in self.banned_ids:
            raise ValueError("EOS cannot be banned")
        self.box = RngBox(seed)
        torch_state = torch.random.get_rng_state()
        torch.manual_seed(seed)
        try:
            cls = TransformerSeq2Seq if config.architecture == "transformer" else RnnSeq2Seq
            self.net = cls(config, vocab_size, self.box)
        finally:
            torch.random.set_rng_state(torch_state)
        self.net.to(DTYPES[config.dtype])
        mask = torch.zeros(vocab_size, dtype=DTYPES[config.dtype])
        mask[list(self.banned_ids)] = float("-inf")
        self.register_buffer("output_mask", mask, persistent=False)
        self.step_count = 0
        self.optimizer = make_optimizer(config.optimizer, self.net.parameters(), config.learning_rate)
        self.eval()

    @property
    def rng(self) -> torch.Generator:
        return self.box.gen

    def logits(self, src, tgt_in):
        enc = self.net.encode(src)
        return self.net.decode(enc, tgt_in) + self.output_mask

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.net.parameters())

    def set_learning_rate(self, lr: float) -> None:
        for group in self.optimizer.param_groups:
            group["lr"] = lr

    def apply_update(self, loss: torch.Tensor) -> None:
        self.optimizer.zero_grad()
        loss.backward()
        if self.config.clip_norm > 0:
            nn.utils.clip_grad_norm_(self.net.parameters(), self.config.clip_norm)
        self.optimizer.step()
        self.step_count += 1

    def snapshot(self) -> Dict[str, torch.Tensor]:
        return {k: v.detach().clone() for k, v in self.net.state_dict().items()}

    def restore(self, params: Dict[str, torch.Tensor]) -> None:
        self.net.load_state_dict(params)


def _src_tensor(xs: Sequence[Ids]) -> torch.Tensor:
    return pad_batch([list(x) + [EOS] for x in xs])


def make_batch(pairs: Sequence[Tuple[Ids, Ids]]):
    """Frame and pad ``(x, y)`` id pairs into ``src, tgt_in, tgt_out``."""
    src = _src_tensor([x for x, _ in pairs])
    tgt_in = pad_batch([[BOS] + list(y) for _, y in pairs])
    tgt_out = pad_batch([list(y) + [EOS] for _, y in pairs])
    return src, tgt_in, tgt_out


def mle_loss(model: GeneratorModel, pairs: Sequence[Tuple[Ids, Ids]], training: bool = True) -> torch.Tensor:
    """Mean token cross-entropy over non-PAD target positions."""
    if not pairs:
        raise ValueError("empty batch")
    src, tgt_in, tgt_out = make_batch(pairs)
    model.train(training)
    cfg = model.config
    src = word_dropout(src, cfg.source_word_dropout, model.box, training)
    tgt_in = word_dropout(tgt_in, cfg.target_word_dropout, model.box, training)
    logits = model.logits(src, tgt_in)
    loss = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), tgt_out.reshape(-1), ignore_index=PAD)
    model.eval()
    return loss


def mle_step(model: GeneratorModel, pairs: Sequence[Tuple[Ids, Ids]]) -> float:
    loss = mle_loss(model, pairs, training=True)
    model.apply_update(loss)
    return float(loss.detach())


@torch.no_grad()
def eval_loss(model: GeneratorModel, pairs: Sequence[Tuple[Ids, Ids]], batch_size: int = 256) -> float:
    """Token-weighted dev cross-entropy in eval mode."""
    total, count = 0.0, 0
    for i in range(0, len(pairs), batch_size):
        chunk = pairs[i:i + batch_size]
        src, tgt_in, tgt_out = make_batch(chunk)
        logits = model.logits(src, tgt_in)
        total += float(F.cross_entropy(logits.reshape(-1, logits.shape[-1]), tgt_out.reshape(-1),
                                       ignore_index=PAD, reduction="sum"))
        count += int((tgt_out != PAD).sum())
    return total / max(count, 1)


def sequence_log_probs(model: GeneratorModel, xs: Sequence[Ids], ys: Sequence[Ids]) -> torch.Tensor:
    """Differentiable ``log G(y|x)`` per pair, eval mode.

    Each ``y`` is a decoder output: it ends in EOS or was truncated.
    """
    model.eval()
    src = _src_tensor(xs)
    tgt_in = pad_batch([[BOS] + list(y[:-1]) for y in ys])
    tgt_out = pad_batch([list(y) for y in ys])
    logp = torch.log_softmax(model.logits(src, tgt_in), dim=-1)
    picked = logp.gather(-1, tgt_out.unsqueeze(-1)).squeeze(-1)
    picked = picked.masked_fill(tgt_out == PAD, 0.0)
    return picked.sum(dim=1)


def log_prob(model: GeneratorModel, x: Ids, y: Ids) -> float:
    with torch.no_grad():
        return float(sequence_log_probs(model, [x], [y])[0])


@torch.no_grad()
def sample_batch(model: GeneratorModel, xs: Sequence[Ids], gen: torch.Generator,
                 max_len: Optional[int] = None) -> List[DecodeResult]:
    """Ancestral sampling, one sequence per source, eval mode."""
    model.eval()
    max_len = max_len or model.config.max_decode_len
    B = len(xs)
    state = model.net.start(model.net.encode(_src_tensor(xs)))
    prev = torch.full((B,), BOS, dtype=torch.long)
    done = torch.zeros(B, dtype=torch.bool)
    tokens, lps = [], []
    for _ in range(max_len):
        logits, state = model.net.step(state, prev)
        logp = torch.log_softmax(logits + model.output_mask, dim=-1)
        nxt = torch.multinomial(logp.exp().to(torch.float64), 1, generator=gen).squeeze(1)
        nxt = nxt.masked_fill(done, PAD)
        tokens.append(nxt)
        lps.append(logp.gather(1, nxt[:, None]).squeeze(1).masked_fill(done, 0.0))
        done = done | (nxt == EOS)
        prev = nxt.masked_fill(nxt == PAD, EOS)
        if bool(done.all()):
            break
    tok = torch.stack(tokens, 1).tolist()
    lp = torch.stack(lps, 1).tolist()
    results = []
    for row, lrow in zip(tok, lp):
        n = row.index(EOS) + 1 if EOS in row else len(row)
        steps = [float(v) for v in lrow[:n]]
        results.append(DecodeResult(row[:n], float(sum(steps)), steps))
    return results


def sample(model: GeneratorModel, x: Ids, seed: int) -> DecodeResult:
    gen = torch.Generator()
    gen.manual_seed(seed)
    return sample_batch(model, [x], gen)[0]


@torch.no_grad()
def greedy_decode_batch(model: GeneratorModel, xs: Sequence[Ids]) -> List[DecodeResult]:
    model.eval()
    B = len(xs)
    state = model.net.start(model.net.encode(_src_tensor(xs)))
    prev = torch.full((B,), BOS, dtype=torch.long)
    done = torch.zeros(B, dtype=torch.bool)
    tokens, lps = [], []
    for _ in range(model.config.max_decode_len):
        logits, state = model.net.step(state, prev)
        logp = torch.log_softmax(logits + model.output_mask, dim=-1)
        nxt = logp.argmax(-1).masked_fill(done, PAD)
        tokens.append(nxt)
        lps.append(logp.gather(1, nxt[:, None]).squeeze(1).masked_fill(done, 0.0))
        done = done | (nxt == EOS)
        prev = nxt.masked_fill(nxt == PAD, EOS)
        if bool(done.all()):
            break
    results = []
    for row, lrow in zip(torch.stack(tokens, 1).tolist(), torch.stack(lps, 1).tolist()):
        n = row.index(EOS) + 1 if EOS in row else len(row)
        steps = [float(v) for v in lrow[:n]]
        results.append(DecodeResult(row[:n], float(sum(steps)), steps))
    return results


@torch.no_grad()
def beam_decode_batch(model: GeneratorModel, xs: Sequence[Ids], beam_size: int = 4) -> List[DecodeResult]:
    """Beam search returning the best length-normalised finished hypothesis.

    A hypothesis that emits EOS leaves the beam, which shrinks by one; the
    search ends when no live hypothesis remains or at ``max_decode_len``,
    where survivors count as finished. With ``beam_size=1`` this is exactly
    greedy decoding.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    model.eval()
    B, K = len(xs), beam_size
    V = model.vocab_size
    enc = model.net.encode(_src_tensor(xs))
    rows = torch.arange(B).repeat_interleave(K)
    state = model.net.reorder(model.net.start(enc), rows)
    dtype = model.output_mask.dtype
    scores = torch.full((B, K), float("-inf"), dtype=dtype)
    scores[:, 0] = 0.0
    live = torch.zeros(B, K, dtype=torch.bool)
    live[:, 0] = True
    prev = torch.full((B * K,), BOS, dtype=torch.long)
    hist_tok = torch.zeros(B * K, 0, dtype=torch.long)
    hist_lp = torch.zeros(B * K, 0, dtype=dtype)
    finished: List[List[Tuple[float, List[int], List[float]]]] = [[] for _ in range(B)]
    max_len = model.config.max_decode_len
    for t in range(max_len):
        logits, state = model.net.step(state, prev)
        logp = torch.log_softmax(logits + model.output_mask, dim=-1).view(B, K, V)
        cand = (scores.unsqueeze(-1) + logp).masked_fill(~live.unsqueeze(-1), float("-inf"))
        top_val, top_idx = cand.view(B, K * V).topk(K, dim=1)
        src_beam = top_idx // V
        tok = top_idx % V
        n_live = live.sum(1, keepdim=True)
        keep = (torch.arange(K).unsqueeze(0) < n_live) & torch.isfinite(top_val)
        flat_src = (torch.arange(B).unsqueeze(1) * K + src_beam).view(-1)
        step_lp = logp.view(B * K, V)[flat_src, tok.view(-1)]
        hist_tok = torch.cat([hist_tok[flat_src], tok.view(-1, 1)], dim=1)
        hist_lp = torch.cat([hist_lp[flat_src], step_lp.view(-1, 1)], dim=1)
        state = model.net.reorder(state, flat_src)
        ended = keep & ((tok == EOS) | (t == max_len - 1))
        if bool(ended.any()):
            for b, k in ended.nonzero().tolist():
                r = b * K + k
                seq = hist_tok[r].tolist()
                steps = [float(v) for v in hist_lp[r].tolist()]
                finished[b].append((float(top_val[b, k]) / len(seq), seq, steps))
        live = keep & ~ended
        scores = top_val.masked_fill(~live, float("-inf"))
        prev = tok.view(-1).masked_fill(~live.view(-1), EOS)
        if not bool(live.any()):
            break
    results = []
    for hyps in finished:
        best = max(hyps, key=lambda h: h[0])  # max keeps the first of equal scores
        results.append(DecodeResult(best[1], float(sum(best[2])), best[2]))
    return results


def beam_decode(model: GeneratorModel, x: Ids, beam_size: int = 4) -> DecodeResult:
    return beam_decode_batch(model, [x], beam_size)[0]


def decode_corpus(model: GeneratorModel, xs: Sequence[Ids], beam_size: int = 4,
                  batch_size: int = 64) -> List[DecodeResult]:
    """Decode in length-sorted batches; output order matches ``xs``."""
    order = sorted(range(len(xs)), key=lambda i: len(xs[i]))
    out: List[Optional[DecodeResult]] = [None] * len(xs)
    for i in range(0, len(order), batch_size):
        idx = order[i:i + batch_size]
        batch = [xs[j] for j in idx]
        if beam_size == 1:
            res = greedy_decode_batch(model, batch)
        else:
            res = beam_decode_batch(model, batch, beam_size)
        for j, r in zip(idx, res):
            out[j] = r
    return out  # type: ignore[return-value]


# -------------------------------------------------------------- checkpoint

def save_checkpoint(model: GeneratorModel, path) -> None:
    state = {
        "vocab_size": model.vocab_size,
        "banned_ids": list(model.banned_ids),
        "step_count": model.step_count,
        "rng_state": checkpoint.rng_to_text(model.rng),
    }
    checkpoint.save(path, KIND, model.config, model.net.state_dict(), state, model.optimizer.state_dict())


def load_checkpoint(path, config: Optional[GeneratorConfig] = None) -> GeneratorModel:
    cfg, params, state, opt_state = checkpoint.load(path, KIND, GeneratorConfig, config)
    model = GeneratorModel(cfg, state["vocab_size"], banned_ids=tuple(state["banned_ids"]))
    try:
        model.net.load_state_dict(params)
    except RuntimeError as exc:
        raise checkpoint.CheckpointError(f"{path}: parameters do not fit the config ({exc})") from None
    model.rng.set_state(checkpoint.rng_from_text(state["rng_state"]))
    model.step_count = state["step_count"]
    if opt_state is not None:
        model.optimizer.load_state_dict(opt_state)
    return model


def clone(model: GeneratorModel) -> GeneratorModel:
    return copy.deepcopy(model)
