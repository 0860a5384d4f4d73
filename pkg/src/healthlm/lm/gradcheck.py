"""Soft-prompt gradient check against central finite differences."""
from __future__ import annotations

import torch

from ..errors import InvalidSpec
from .model import LmModel, SoftPrompt, answer_loss


def prompt_gradient(model: LmModel, prompt: SoftPrompt, prompt_tokens, answer_tokens) -> torch.Tensor:
    """Analytic d(answer loss)/d(prompt) by reverse-mode differentiation."""
    emb = prompt.embedding.detach().clone().requires_grad_(True)
    loss = answer_loss(model, _wrap(emb), prompt_tokens, answer_tokens)
    (grad,) = torch.autograd.grad(loss, emb)
    return grad


def _wrap(emb: torch.Tensor) -> SoftPrompt:
    sp = SoftPrompt.__new__(SoftPrompt)
    torch.nn.Module.__init__(sp)
    sp.embedding = emb  # plain tensor keeps the autograd graph to ``emb``
    return sp


def finite_difference_gradient(model, prompt, prompt_tokens, answer_tokens, epsilon: float) -> torch.Tensor:
    base = prompt.embedding.detach().clone()
    grad = torch.zeros_like(base)
    with torch.no_grad():
        for idx in range(base.numel()):
            plus, minus = base.clone(), base.clone()
            plus.view(-1)[idx] += epsilon
            minus.view(-1)[idx] -= epsilon
            f_plus = answer_loss(model, _wrap(plus), prompt_tokens, answer_tokens)
            f_minus = answer_loss(model, _wrap(minus), prompt_tokens, answer_tokens)
            grad.view(-1)[idx] = (f_plus - f_minus) / (2 * epsilon)
    return grad


def relative_errors(analytic: torch.Tensor, numeric: torch.Tensor) -> torch.Tensor:
    scale = torch.maximum(analytic.abs() + numeric.abs(), torch.full_like(analytic, 1e-12))
    return (analytic - numeric).abs() / scale


def grad_check(model: LmModel, prompt: SoftPrompt, example, epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients
    over all prompt entries. ``example`` is ``(prompt_tokens, answer_tokens)``.

    Needs a double-precision model with ``d_model <= 16``.
    """
    if model.tok_emb.weight.dtype != torch.float64 or prompt.embedding.dtype != torch.float64:
        raise InvalidSpec("grad_check needs a double-precision model and prompt")
    if model.config.d_model > 16:
        raise InvalidSpec("grad_check is limited to d_model <= 16")
    prompt_tokens, answer_tokens = example
    analytic = prompt_gradient(model, prompt, prompt_tokens, answer_tokens)
    numeric = finite_difference_gradient(model, prompt, prompt_tokens, answer_tokens, epsilon)
    return float(relative_errors(analytic, numeric).max())
