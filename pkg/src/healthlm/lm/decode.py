"""Greedy decoding with a key/value cache."""
from __future__ import annotations

import torch

from ..errors import ContextOverflow
from .model import LmModel, SoftPrompt, _left_pad
from .tokenizer import EOS


@torch.no_grad()
def generate_batch(model: LmModel, soft_prompt: SoftPrompt | None, prompts: list[list[int]],
                   max_new: int) -> list[list[int]]:
    """Greedy continuations for a batch of prompts (left-padded internally).

    Each row stops at EOS (not included in the output) or after ``max_new``
    tokens, or earlier if the context window is full.
    """
    if not prompts:
        return []
    p = soft_prompt.prompt_len if soft_prompt is not None else 0
    ctx = model.config.context_len
    longest = max(len(q) for q in prompts)
    if longest + p > ctx:
        raise ContextOverflow(f"prompt of {longest} tokens + {p} prompt rows exceeds context {ctx}")
    out: list[list[int]] = [[] for _ in prompts]
    if max_new <= 0:
        return out
    was_training = model.training
    model.eval()
    tokens, valid = _left_pad(prompts)
    b = len(prompts)
    caches = [{} for _ in model.blocks]
    logits = model(tokens, soft_prompt, valid, caches=caches)
    past_valid = torch.cat([torch.ones(b, p, dtype=torch.bool), valid], dim=1)
    last_pos = past_valid.long().sum(dim=1) - 1
    done = torch.zeros(b, dtype=torch.bool)
    for step in range(max_new):
        nxt = logits[:, -1].argmax(dim=-1)
        for i in range(b):
            if not done[i] and int(nxt[i]) != EOS:
                out[i].append(int(nxt[i]))
        done |= nxt == EOS
        if bool(done.all()) or step == max_new - 1 or int(last_pos.max()) + 1 >= ctx:
            break
        last_pos = last_pos + 1
        step_valid = torch.ones(b, 1, dtype=torch.bool)
        logits = model(nxt[:, None], None, step_valid, caches=caches, positions=last_pos[:, None],
                       past_valid=past_valid)
        past_valid = torch.cat([past_valid, step_valid], dim=1)
    model.train(was_training)
    return out


def generate(model: LmModel, soft_prompt: SoftPrompt | None, prompt_tokens, max_new: int) -> list[int]:
    return generate_batch(model, soft_prompt, [list(prompt_tokens)], max_new)[0]
