"""Backbone pretraining and soft prompt tuning."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F

from ..errors import Divergence, EmptyTrainSet, InvalidSpec
from ..rng import derive_seed
from .corpus import Corpus, answer_positions
from .model import LmConfig, LmModel, SoftPrompt, batch_answer_loss
from .tokenizer import PAD

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 2000
    batch_size: int = 16
    learning_rate: float = 3e-4
    betas: tuple = (0.9, 0.999)
    warmup_steps: int = 100
    weight_decay: float = 0.0
    clip_norm: float = 1.0
    eval_every: int = 250
    answer_weight: float = 1.0  # loss weight of answer tokens relative to the rest

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PretrainResult:
    model: LmModel
    losses: list = field(default_factory=list)
    heldout_loss: float = float("nan")
    initial_loss: float = float("nan")


def _lm_batch(docs: list[list[int]], answer_weight: float = 1.0):
    """Right-padded next-token batch with per-target loss weights (0 on padding)."""
    width = max(len(d) for d in docs) - 1
    tokens = torch.full((len(docs), width), PAD, dtype=torch.long)
    targets = torch.full((len(docs), width), PAD, dtype=torch.long)
    weights = torch.zeros(len(docs), width)
    for i, d in enumerate(docs):
        n = len(d) - 1
        tokens[i, :n] = torch.tensor(d[:-1])
        targets[i, :n] = torch.tensor(d[1:])
        weights[i, :n] = 1.0
        if answer_weight != 1.0:
            weights[i, :n][torch.from_numpy(answer_positions(d))] = answer_weight
    return tokens, targets, weights


def _lm_loss(model, docs, answer_weight: float = 1.0):
    tokens, targets, weights = _lm_batch(docs, answer_weight)
    # right padding: pad keys sit after every real query, so the causal mask suffices
    logits = model(tokens)
    nll = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), reduction="none")
    w = weights.reshape(-1).to(nll.dtype)
    return (nll * w).sum() / w.sum()


@torch.no_grad()
def corpus_loss(model: LmModel, docs: list[list[int]], batch_size: int = 32) -> float:
    """Mean next-token cross-entropy (nats/token) over ``docs``."""
    total, count = 0.0, 0
    for i in range(0, len(docs), batch_size):
        chunk = docs[i:i + batch_size]
        n = sum(len(d) - 1 for d in chunk)
        total += float(_lm_loss(model, chunk)) * n
        count += n
    return total / max(count, 1)


def init_model(config: LmConfig, seed: int) -> LmModel:
    torch.manual_seed(derive_seed(seed, "init"))
    return LmModel(config)


def pretrain(corpus: Corpus, config: LmConfig, seed: int, train_cfg: PretrainConfig = PretrainConfig(),
             eval_docs: int = 64) -> PretrainResult:
    """Adam pretraining with linear warmup and cosine decay.

    Raises :class:`Divergence` if the loss becomes non-finite.
    """
    if not corpus.train:
        raise EmptyTrainSet("corpus has no training documents")
    too_long = max(len(d) for d in corpus.train) - 1
    if too_long > config.context_len:
        raise InvalidSpec(f"corpus documents need {too_long} positions, context is {config.context_len}")
    model = init_model(config, seed)
    model.train()
    gen = torch.Generator().manual_seed(derive_seed(seed, "batches"))
    probe = corpus.heldout[:eval_docs]
    result = PretrainResult(model, initial_loss=corpus_loss(model, probe) if probe else float("nan"))
    if train_cfg.steps == 0:
        result.heldout_loss = corpus_loss(model, corpus.heldout)
        return result
    opt = torch.optim.AdamW(model.parameters(), lr=train_cfg.learning_rate, betas=train_cfg.betas,
                            weight_decay=train_cfg.weight_decay)
    total = train_cfg.steps
    for step in range(total):
        if step < train_cfg.warmup_steps:
            lr = train_cfg.learning_rate * (step + 1) / train_cfg.warmup_steps
        else:
            frac = (step - train_cfg.warmup_steps) / max(1, total - train_cfg.warmup_steps)
            lr = train_cfg.learning_rate * (0.1 + 0.9 * 0.5 * (1 + math.cos(math.pi * frac)))
        for g in opt.param_groups:
            g["lr"] = lr
        idx = torch.randint(len(corpus.train), (train_cfg.batch_size,), generator=gen)
        loss = _lm_loss(model, [corpus.train[int(i)] for i in idx], train_cfg.answer_weight)
        if not torch.isfinite(loss):
            raise Divergence(f"pretraining loss became non-finite at step {step}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.clip_norm)
        opt.step()
        result.losses.append(loss.item())
        if train_cfg.eval_every and (step + 1) % train_cfg.eval_every == 0:
            log.info("pretrain step %d loss %.4f", step + 1, result.losses[-1])
    model.eval()
    result.heldout_loss = corpus_loss(model, corpus.heldout)
    return result


# ------------------------------------------------------------- soft prompt

@dataclass(frozen=True)
class TuneConfig:
    steps: int = 5000
    learning_rate: float = 3.0
    batch_size: int = 8
    seed: int = 0
    prompt_len: int = 1
    clip_norm: float = 1.0
    eval_every: int = 25

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidSpec("steps must be >= 1")
        if self.learning_rate < 0 or self.batch_size < 1:
            raise InvalidSpec("learning_rate must be >= 0 and batch_size >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TuneResult:
    prompt: SoftPrompt  # best validation checkpoint
    final_prompt: SoftPrompt
    best_step: int
    best_val_loss: float
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)  # (step, loss)
    val_scores: list = field(default_factory=list)  # (step, score) when a scorer is given
    backbone_before: str = ""
    backbone_after: str = ""


def _val_loss(model, prompt, pairs, batch_size=32) -> float:
    with torch.no_grad():
        total, n = 0.0, 0
        for i in range(0, len(pairs), batch_size):
            chunk = pairs[i:i + batch_size]
            loss = batch_answer_loss(model, prompt, [p for p, _ in chunk], [a for _, a in chunk])
            k = sum(len(a) for _, a in chunk)
            total += float(loss) * k
            n += k
        return total / n


def tune_soft_prompt(model: LmModel, train_pairs: list, cfg: TuneConfig,
                     val_pairs: list | None = None, val_score=None) -> TuneResult:
    """Fit a soft prompt on ``(prompt_tokens, answer_tokens)`` pairs.

    Plain SGD with gradient-norm clipping; the backbone stays frozen. The
    prompt with the lowest validation loss (training loss when no validation
    pairs are given) is returned alongside the final one. With ``val_score``
    (a callable taking a :class:`SoftPrompt` and returning a number or a
    tuple, higher is better) checkpoints
    are ranked by that score first and by validation loss on ties; later
    checkpoints win exact ties.
    """
    if not getattr(model, "frozen", False):
        raise InvalidSpec("tune_soft_prompt needs a frozen model")
    if not train_pairs:
        raise EmptyTrainSet("no training examples for prompt tuning")
    val_pairs = val_pairs or train_pairs
    before = model.checksum()
    model.eval()
    gen = torch.Generator().manual_seed(derive_seed(cfg.seed, "tune"))
    prompt = SoftPrompt.from_vocab(model, cfg.prompt_len, generator=gen)
    dtype = model.tok_emb.weight.dtype
    prompt.embedding.data = prompt.embedding.data.to(dtype)

    def rank(step, loss):
        if val_score is None:
            return (-loss,)
        score = val_score(SoftPrompt(prompt.embedding.detach()))
        score = tuple(map(float, score)) if isinstance(score, tuple) else (float(score),)
        result.val_scores.append((step, list(score)))
        return (*score, -loss)

    best = prompt.embedding.detach().clone()
    best_loss, best_step = _val_loss(model, prompt, val_pairs), 0
    result = TuneResult(prompt, prompt, 0, best_loss, val_losses=[(0, best_loss)])
    best_rank = rank(0, best_loss)
    for step in range(1, cfg.steps + 1):
        idx = torch.randint(len(train_pairs), (min(cfg.batch_size, len(train_pairs)),), generator=gen)
        batch = [train_pairs[int(i)] for i in idx]
        loss = batch_answer_loss(model, prompt, [p for p, _ in batch], [a for _, a in batch])
        if not torch.isfinite(loss):
            raise Divergence(f"prompt tuning loss became non-finite at step {step}")
        prompt.embedding.grad = None
        loss.backward()
        torch.nn.utils.clip_grad_norm_([prompt.embedding], cfg.clip_norm)
        with torch.no_grad():
            prompt.embedding -= cfg.learning_rate * prompt.embedding.grad
        if not torch.isfinite(prompt.embedding).all():
            raise Divergence(f"soft prompt became non-finite at step {step}")
        result.train_losses.append(loss.item())
        if step % cfg.eval_every == 0 or step == cfg.steps:
            v = _val_loss(model, prompt, val_pairs)
            result.val_losses.append((step, v))
            r = rank(step, v)
            if r > best_rank or (val_score is not None and r == best_rank):
                best_rank, best_loss, best_step, best = r, v, step, prompt.embedding.detach().clone()
    result.final_prompt = SoftPrompt(prompt.embedding.detach())
    result.prompt = SoftPrompt(best)
    result.best_step, result.best_val_loss = best_step, best_loss
    result.backbone_before, result.backbone_after = before, model.checksum()
    if before != result.backbone_after:
        raise RuntimeError("backbone parameters changed during prompt tuning")
    return result
