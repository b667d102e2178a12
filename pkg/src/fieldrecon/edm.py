"""Variance-exploding (EDM) noising, preconditioning and the weighted denoising loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch


@dataclass(frozen=True)
class NoiseSchedule:
    P_mean: float = 1.2
    P_std: float = 1.7
    sigma_data: float = 0.5

    def __post_init__(self):
        if not self.P_std > 0:
            raise ValueError("P_std must be positive")
        if not self.sigma_data > 0:
            raise ValueError("sigma_data must be positive")


@dataclass(frozen=True)
class PreconditionCoeffs:
    c_skip: np.ndarray | float
    c_out: np.ndarray | float
    c_in: np.ndarray | float
    c_noise: np.ndarray | float
    weight: np.ndarray | float  # lambda(sigma)


def precondition_coeffs(sigma, sigma_data: float = 0.5) -> PreconditionCoeffs:
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(~(sigma > 0)):
        raise ValueError("sigma must be strictly positive")
    sd2 = sigma_data ** 2
    s2 = sigma ** 2
    denom = s2 + sd2
    c = PreconditionCoeffs(
        c_skip=sd2 / denom,
        c_out=sigma * sigma_data / np.sqrt(denom),
        c_in=1.0 / np.sqrt(denom),
        c_noise=np.log(sigma) / 4.0,
        weight=denom / (sigma * sigma_data) ** 2,
    )
    if sigma.ndim == 0:
        c = PreconditionCoeffs(*(float(v) for v in (c.c_skip, c.c_out, c.c_in, c.c_noise, c.weight)))
    return c


def sigma_from_normal(n, schedule: NoiseSchedule = NoiseSchedule()):
    """Log-normal map sigma = exp(P_mean + P_std n)."""
    return np.exp(schedule.P_mean + schedule.P_std * np.asarray(n, dtype=np.float64))


def sample_sigma(rng: np.random.Generator, schedule: NoiseSchedule = NoiseSchedule(), size=None):
    return sigma_from_normal(rng.standard_normal(size), schedule)


def add_noise(x0: np.ndarray, sigma, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """x0 + sigma * eps with eps ~ N(0, I); sigma may be per-sample (leading axis)."""
    x0 = np.asarray(x0, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < 0):
        raise ValueError("sigma must be nonnegative")
    eps = rng.standard_normal(x0.shape)
    s = sigma.reshape(sigma.shape + (1,) * (x0.ndim - sigma.ndim))
    return x0 + s * eps, eps


Network = Callable[[torch.Tensor, torch.Tensor, object], torch.Tensor]


def _as_batch(v, x: torch.Tensor) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(v, dtype=np.float64), dtype=x.dtype, device=x.device)
    if t.ndim == 0:
        t = t.expand(x.shape[0])
    return t.reshape(-1, *([1] * (x.ndim - 1)))


def denoise(net: Network, x: torch.Tensor, sigma, condition=None,
            sigma_data: float = 0.5) -> torch.Tensor:
    """D(x; sigma) = c_skip x + c_out F(c_in x; c_noise)."""
    c = precondition_coeffs(sigma, sigma_data)
    c_noise = _as_batch(c.c_noise, x).reshape(-1)
    f = net(_as_batch(c.c_in, x) * x, c_noise, condition)
    return _as_batch(c.c_skip, x) * x + _as_batch(c.c_out, x) * f


def _masked_mean(sq: torch.Tensor, weight_mask: torch.Tensor | None) -> torch.Tensor:
    """Per-sample mean of ``sq`` over included cells."""
    if weight_mask is None:
        return sq.flatten(1).mean(dim=1)
    m = weight_mask.expand_as(sq).to(sq.dtype)
    return (sq * m).flatten(1).sum(dim=1) / m.flatten(1).sum(dim=1).clamp_min(1.0)


def training_loss(net: Network, x0: torch.Tensor, x_noised: torch.Tensor, sigma, condition=None,
                  loss_mask: torch.Tensor | None = None, sigma_data: float = 0.5) -> torch.Tensor:
    """lambda c_out^2 || F(c_in x; c_noise) - (x0 - c_skip x) / c_out ||^2, batch-averaged.

    ``x_noised`` is x0 plus noise (noise may be zero on observed cells);
    ``loss_mask`` (B, 1, H, W) selects the cells that contribute.
    """
    c = precondition_coeffs(sigma, sigma_data)
    c_skip, c_out = _as_batch(c.c_skip, x0), _as_batch(c.c_out, x0)
    f = net(_as_batch(c.c_in, x0) * x_noised, _as_batch(c.c_noise, x0).reshape(-1), condition)
    target = (x0 - c_skip * x_noised) / c_out
    w = _as_batch(c.weight, x0) * c_out ** 2
    per_sample = _masked_mean(w * (f - target) ** 2, loss_mask)
    return per_sample.mean()


def training_loss_denoiser_form(net: Network, x0: torch.Tensor, x_noised: torch.Tensor, sigma,
                                condition=None, loss_mask: torch.Tensor | None = None,
                                sigma_data: float = 0.5) -> torch.Tensor:
    """lambda || D(x; sigma) - x0 ||^2, the unscaled form of the same objective."""
    d = denoise(net, x_noised, sigma, condition, sigma_data)
    c = precondition_coeffs(sigma, sigma_data)
    per_sample = _masked_mean(_as_batch(c.weight, x0) * (d - x0) ** 2, loss_mask)
    return per_sample.mean()
