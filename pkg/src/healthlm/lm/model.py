"""Decoder-only transformer with an optional soft prompt prefix.

Pre-LayerNorm blocks, learned absolute positions, tied input/output
embeddings. A soft prompt occupies the first ``prompt_len`` positions and goes
through the same positional embedding as ordinary tokens.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ContextOverflow, InvalidSpec
from .tokenizer import PAD, CharTokenizer


@dataclass(frozen=True)
class LmConfig:
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    context_len: int = 512
    ff_mult: int = 4
    vocab_size: int = 100
    dropout: float = 0.0

    def __post_init__(self):
        for name in ("d_model", "n_layers", "n_heads", "context_len", "ff_mult", "vocab_size"):
            if getattr(self, name) <= 0:
                raise InvalidSpec(f"{name} must be positive")
        if self.d_model % self.n_heads:
            raise InvalidSpec(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")

    def to_dict(self) -> dict:
        return asdict(self)


class SoftPrompt(nn.Module):
    def __init__(self, embedding: torch.Tensor):
        super().__init__()
        if embedding.ndim != 2 or embedding.shape[0] < 1:
            raise InvalidSpec("soft prompt must be a (prompt_len >= 1, d_model) matrix")
        if not torch.isfinite(embedding).all():
            raise InvalidSpec("soft prompt has non-finite entries")
        self.embedding = nn.Parameter(embedding.detach().clone())

    @property
    def prompt_len(self) -> int:
        return self.embedding.shape[0]

    @classmethod
    def from_vocab(cls, model: "LmModel", prompt_len: int = 1, generator=None,
                   candidates=None) -> "SoftPrompt":
        """Rows copied from randomly chosen token embeddings.

        ``candidates`` restricts the draw (default: letters and digits).
        """
        if not 1 <= prompt_len <= 20:
            raise InvalidSpec("prompt_len must be in 1..20")
        if candidates is None:
            tok = CharTokenizer()
            candidates = [tok.token_id(c) for c in
                          "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"]
        idx = torch.randint(len(candidates), (prompt_len,), generator=generator)
        rows = model.tok_emb.weight.detach()[torch.tensor(candidates)[idx]]
        return cls(rows.clone())


class Block(nn.Module):
    def __init__(self, cfg: LmConfig):
        super().__init__()
        d = cfg.d_model
        self.n_heads = cfg.n_heads
        self.ln1 = nn.LayerNorm(d)
        self.qkv = nn.Linear(d, 3 * d)
        self.proj = nn.Linear(d, d)
        self.ln2 = nn.LayerNorm(d)
        self.fc = nn.Linear(d, cfg.ff_mult * d)
        self.fc_out = nn.Linear(cfg.ff_mult * d, d)

    def forward(self, x, mask, cache=None):
        b, t, d = x.shape
        h = self.n_heads
        q, k, v = self.qkv(self.ln1(x)).split(d, dim=2)
        q, k, v = (z.view(b, t, h, d // h).transpose(1, 2) for z in (q, k, v))
        if cache is not None:
            if "k" in cache:
                k = torch.cat([cache["k"], k], dim=2)
                v = torch.cat([cache["v"], v], dim=2)
            cache["k"], cache["v"] = k, v
        att = (q @ k.transpose(-2, -1)) / math.sqrt(d // h)
        att = att.masked_fill(~mask, float("-inf")).softmax(dim=-1)
        y = (att @ v).transpose(1, 2).reshape(b, t, d)
        x = x + self.proj(y)
        return x + self.fc_out(F.gelu(self.fc(self.ln2(x))))


class LmModel(nn.Module):
    def __init__(self, cfg: LmConfig):
        super().__init__()
        self.config = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.pos_emb = nn.Embedding(cfg.context_len, cfg.d_model)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.frozen = False
        self.apply(self._init)
        for name, p in self.named_parameters():
            if name.endswith("fc_out.weight") or name.endswith("proj.weight"):
                nn.init.normal_(p, 0.0, 0.02 / math.sqrt(2 * cfg.n_layers))

    @staticmethod
    def _init(m):
        if isinstance(m, nn.Linear):
            nn.init.normal_(m.weight, 0.0, 0.02)
            nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Embedding):
            nn.init.normal_(m.weight, 0.0, 0.02)

    # ------------------------------------------------------------ state

    def freeze(self) -> "LmModel":
        for p in self.parameters():
            p.requires_grad_(False)
        self.frozen = True
        return self

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, p in sorted(self.state_dict().items()):
            h.update(name.encode())
            h.update(p.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()

    def n_params(self) -> int:
        return sum(p.numel() for p in self.parameters())

    # ---------------------------------------------------------- forward

    def forward(self, tokens: torch.Tensor, soft_prompt: SoftPrompt | None = None,
                valid: torch.Tensor | None = None, caches=None, positions=None,
                past_valid: torch.Tensor | None = None) -> torch.Tensor:
        """Logits of shape (batch, prompt_len + T, vocab).

        ``valid`` marks real (non-padding) tokens of a left-padded batch.
        With ``caches`` (one dict per block) the call extends earlier keys
        and values; ``positions`` and ``past_valid`` must then be given.
        """
        if tokens.ndim == 1:
            tokens = tokens[None]
        b, t = tokens.shape
        p = soft_prompt.prompt_len if soft_prompt is not None else 0
        if valid is None:
            valid = torch.ones(b, t, dtype=torch.bool)
        x = self.tok_emb(tokens)
        if p:
            x = torch.cat([soft_prompt.embedding.to(x.dtype).expand(b, p, -1), x], dim=1)
            valid = torch.cat([torch.ones(b, p, dtype=torch.bool), valid], dim=1)
        if positions is None:
            positions = (valid.long().cumsum(dim=1) - 1).clamp(min=0)
        if int(positions.max()) >= self.config.context_len:
            raise ContextOverflow(
                f"sequence needs {int(positions.max()) + 1} positions, context is {self.config.context_len}")
        x = x + self.pos_emb(positions)
        keys_valid = valid if past_valid is None else torch.cat([past_valid, valid], dim=1)
        s = keys_valid.shape[1]
        causal = torch.ones(x.shape[1], s, dtype=torch.bool).tril(diagonal=s - x.shape[1])
        mask = causal[None, None] & keys_valid[:, None, None, :]
        # fully padded query rows would softmax over nothing
        mask = mask | _shifted_eye(x.shape[1], s, s - x.shape[1])[None, None]
        for i, block in enumerate(self.blocks):
            x = block(x, mask, None if caches is None else caches[i])
        return self.ln_f(x) @ self.tok_emb.weight.T

    def probabilities(self, tokens, soft_prompt=None) -> torch.Tensor:
        return self.forward(tokens, soft_prompt).softmax(dim=-1)


def _shifted_eye(n: int, m: int, offset: int) -> torch.Tensor:
    out = torch.zeros(n, m, dtype=torch.bool)
    idx = torch.arange(n)
    out[idx, idx + offset] = True
    return out


def fit_or_raise(model: LmModel, n_tokens: int, soft_prompt: SoftPrompt | None = None):
    p = soft_prompt.prompt_len if soft_prompt is not None else 0
    if n_tokens + p > model.config.context_len:
        raise ContextOverflow(
            f"{n_tokens} tokens + {p} prompt rows exceed context {model.config.context_len}")


def masked_cross_entropy(logits: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean token cross-entropy over positions where ``mask`` is set."""
    nll = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), reduction="none")
    mask = mask.reshape(-1).to(nll.dtype)
    return (nll * mask).sum() / mask.sum().clamp(min=1)


def _left_pad(seqs: list[list[int]]):
    width = max(len(q) for q in seqs)
    tokens = torch.full((len(seqs), width), PAD, dtype=torch.long)
    valid = torch.zeros(len(seqs), width, dtype=torch.bool)
    for i, q in enumerate(seqs):
        if q:
            tokens[i, width - len(q):] = torch.tensor(q)
            valid[i, width - len(q):] = True
    return tokens, valid


def answer_loss(model: LmModel, soft_prompt: SoftPrompt | None, prompt_tokens, answer_tokens) -> torch.Tensor:
    """Mean cross-entropy over answer positions only."""
    prompt_tokens, answer_tokens = list(prompt_tokens), list(answer_tokens)
    if not prompt_tokens or not answer_tokens:
        raise InvalidSpec("prompt and answer must both be non-empty")
    fit_or_raise(model, len(prompt_tokens) + len(answer_tokens) - 1, soft_prompt)
    return batch_answer_loss(model, soft_prompt, [prompt_tokens], [answer_tokens])


def batch_answer_loss(model, soft_prompt, prompts, answers) -> torch.Tensor:
    p = soft_prompt.prompt_len if soft_prompt is not None else 0
    # the final answer token is a target only, never an input
    inputs = [pr + a[:-1] for pr, a in zip(prompts, answers)]
    tokens, valid = _left_pad(inputs)
    width = tokens.shape[1]
    targets = torch.full((len(inputs), p + width), PAD, dtype=torch.long)
    mask = torch.zeros_like(targets, dtype=torch.bool)
    for i, a in enumerate(answers):
        # the last output column predicts the final answer token
        targets[i, p + width - len(a):] = torch.tensor(a)
        mask[i, p + width - len(a):] = True
    logits = model(tokens, soft_prompt, valid)
    return masked_cross_entropy(logits, targets, mask)
