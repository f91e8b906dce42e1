"""
Adam with exponential learning-rate decay
"""

from typing import List, Sequence, Tuple

import torch
from loguru import logger
from torch.optim.lr_scheduler import ExponentialLR

from ..errors import ConfigurationError
from .autodiff import MlpParams


DEFAULT_DECAY = 0.995405


def decayed_learning_rate(base_lr: float, decay: float, epoch: int) -> float:
    return base_lr * decay ** epoch


class AdamState:
    """Adam moments, step counter and per-epoch decay for a list of parameter sets."""

    def __init__(
        self,
        params: Sequence[MlpParams],
        base_lr: float,
        decay: float = DEFAULT_DECAY,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if base_lr <= 0 or not (0 < decay <= 1):
            raise ConfigurationError(f"invalid learning rate {base_lr} or decay {decay}")
        self.base_lr = base_lr
        self.decay = decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.leaves: List[torch.Tensor] = [t for p in params for t in p.tensors()]
        for t in self.leaves:
            t.requires_grad_(True)

        self.optimizer = torch.optim.Adam(self.leaves, lr=base_lr, betas=(beta1, beta2), eps=eps)
        self.scheduler = ExponentialLR(self.optimizer, gamma=decay)
        self.step_count = 0
        self.skipped_steps = 0
        self.epoch = 0
        self._optimizer_stepped = False

    @property
    def effective_lr(self) -> float:
        return decayed_learning_rate(self.base_lr, self.decay, self.epoch)

    def moments(self) -> List[Tuple[torch.Tensor, torch.Tensor]]:
        """(first, second) moment per parameter block; zeros before the first update."""
        out = []
        for t in self.leaves:
            state = self.optimizer.state.get(t, {})
            out.append((
                state.get("exp_avg", torch.zeros_like(t)),
                state.get("exp_avg_sq", torch.zeros_like(t)),
            ))
        return out

    def end_epoch(self) -> None:
        self.epoch += 1
        if self._optimizer_stepped:
            self.scheduler.step()
            return
        # no update yet: torch warns on a scheduler step ahead of the optimizer
        for group in self.optimizer.param_groups:
            group["lr"] = self.effective_lr

    def advance_step_counts(self) -> None:
        """Count a step without an update, keeping torch's bias-correction step in line."""
        for t in self.leaves:
            state = self.optimizer.state[t]
            if not state:
                state["step"] = torch.tensor(0.0)
                state["exp_avg"] = torch.zeros_like(t, memory_format=torch.preserve_format)
                state["exp_avg_sq"] = torch.zeros_like(t, memory_format=torch.preserve_format)
            state["step"] += 1
        self.step_count += 1

    def config(self) -> dict:
        return {
            "base_lr": self.base_lr,
            "decay": self.decay,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
        }


def adam_step(
    state: AdamState,
    params: Sequence[MlpParams],
    grads: Sequence[MlpParams],
) -> Tuple[AdamState, Sequence[MlpParams]]:
    """One bias-corrected Adam update in place.

    A non-finite gradient skips the update. An all-zero gradient counts a
    step, in torch's state too, but leaves parameters and moments untouched.
    """
    leaves = [t for p in params for t in p.tensors()]
    flat = [g for p in grads for g in p.tensors()]
    if len(leaves) != len(state.leaves) or any(a is not b for a, b in zip(leaves, state.leaves)):
        raise ConfigurationError("parameters do not belong to this optimizer state")
    if len(flat) != len(leaves) or any(g.shape != t.shape for g, t in zip(flat, leaves)):
        raise ConfigurationError("gradient shapes do not match parameter shapes")

    if not all(bool(torch.isfinite(g).all()) for g in flat):
        state.skipped_steps += 1
        logger.warning(f"Skipping Adam step {state.step_count + 1}: non-finite gradient")
        return state, params

    if all(not bool(g.any()) for g in flat):
        state.advance_step_counts()
        return state, params

    for t, g in zip(leaves, flat):
        t.grad = g.detach().clone()
    state.optimizer.step()
    state.step_count += 1
    state._optimizer_stepped = True
    state.optimizer.zero_grad(set_to_none=True)
    return state, params
