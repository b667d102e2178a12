from __future__ import annotations

from typing import Iterable, Mapping

import torch


def adamw(params: Iterable[torch.nn.Parameter], lr: float = 1e-4, weight_decay: float = 0.01,
          betas=(0.9, 0.999), eps: float = 1e-8) -> torch.optim.AdamW:
    return torch.optim.AdamW(params, lr=lr, weight_decay=weight_decay, betas=betas, eps=eps)


def adamw_step(optimizer: torch.optim.Optimizer, loss: torch.Tensor) -> None:
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()


@torch.no_grad()
def ema_update(shadow: Mapping[str, torch.Tensor], params: Mapping[str, torch.Tensor], rate: float) -> None:
    """In place: shadow <- rate * shadow + (1 - rate) * params."""
    for name, s in shadow.items():
        if rate == 0.0:
            s.copy_(params[name])
        elif rate != 1.0:
            s.mul_(rate).add_(params[name].detach(), alpha=1.0 - rate)


class EMA:
    """Exponential moving average of parameters with the power-law warmup.

    decay(step) = min(max_decay, 1 - (1 + step / inv_gamma) ** -power), with
    step counted from zero at the first update (so the first update copies).
    """

    def __init__(self, model: torch.nn.Module, max_decay: float = 0.999,
                 inv_gamma: float = 1.0, power: float = 0.75):
        self.max_decay = max_decay
        self.inv_gamma = inv_gamma
        self.power = power
        self.updates = 0
        self.shadow = {k: v.detach().clone() for k, v in model.named_parameters()}

    def decay(self, step: int) -> float:
        if step <= 0:
            return 0.0
        return min(self.max_decay, 1.0 - (1.0 + step / self.inv_gamma) ** -self.power)

    def update(self, model: torch.nn.Module) -> float:
        rate = self.decay(self.updates)
        ema_update(self.shadow, dict(model.named_parameters()), rate)
        self.updates += 1
        return rate

    @torch.no_grad()
    def copy_to(self, model: torch.nn.Module) -> None:
        for k, p in model.named_parameters():
            p.copy_(self.shadow[k])
