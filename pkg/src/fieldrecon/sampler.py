"""Reverse-process sampling: sigma grid, PF-ODE integrators and the conditioning modes.

Samplers work on normalized fields of shape (B, C, H, W) in float64 through a
``Denoiser`` callable ``D(x, sigma) -> x0_hat``.  Model-backed denoisers are
built by :func:`model_denoiser`; tests inject analytic ones directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from . import edm
from .fields import NormStats, ObservationSet, condition_inputs, scatter

Denoiser = Callable[[np.ndarray, float], np.ndarray]

SCHEMES = ("euler", "heun-pc", "multistep2")
SAMPLE_MODES = ("guided", "cfg", "cross-attention")


@dataclass(frozen=True)
class SamplerConfig:
    n_steps: int = 20
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    scheme: str = "heun-pc"
    mode: str = "cross-attention"
    gamma: float = 1.0
    ensemble: int = 25
    seed: int = 0
    chunk: int = 64  # network batch size during sampling

    def __post_init__(self):
        if not self.sigma_max > self.sigma_min > 0:
            raise ValueError("need sigma_max > sigma_min > 0")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.mode not in SAMPLE_MODES:
            raise ValueError(f"mode must be one of {SAMPLE_MODES}")
        if self.ensemble < 1:
            raise ValueError("ensemble size must be >= 1")


def sigma_steps(cfg: SamplerConfig) -> np.ndarray:
    """Karras rho-power grid sigma_0 = sigma_max ... sigma_{N-1} = sigma_min, then sigma_N = 0."""
    n = cfg.n_steps
    if n == 1:
        return np.array([cfg.sigma_max, 0.0])
    i = np.arange(n)
    lo, hi = cfg.sigma_min ** (1 / cfg.rho), cfg.sigma_max ** (1 / cfg.rho)
    s = (hi + i / (n - 1) * (lo - hi)) ** cfg.rho
    s[0], s[-1] = cfg.sigma_max, cfg.sigma_min
    return np.append(s, 0.0)


def ode_rhs(x: np.ndarray, sigma: float, denoiser: Denoiser) -> np.ndarray:
    if not sigma > 0:
        raise ValueError("ode_rhs is undefined at sigma = 0")
    return (x - denoiser(x, sigma)) / sigma


def step_euler(x, sigma, sigma_next, denoiser, rhs=None):
    d = ode_rhs(x, sigma, denoiser) if rhs is None else rhs
    return x + (sigma_next - sigma) * d


def step_heun_pc(x, sigma, sigma_next, denoiser, refresh: Callable[[np.ndarray, float], np.ndarray] | None = None):
    """Euler predictor then trapezoidal corrector (skipped when sigma_next = 0).

    ``refresh`` re-imposes observed cells on the predicted state before the
    corrector's denoiser call (guided sampling).
    """
    if not sigma_next < sigma:
        raise ValueError("sigma must decrease")
    d = ode_rhs(x, sigma, denoiser)
    x_pred = x + (sigma_next - sigma) * d
    if sigma_next == 0:
        return x_pred
    if refresh is not None:
        x_pred = refresh(x_pred, sigma_next)
    d_next = ode_rhs(x_pred, sigma_next, denoiser)
    return x + (sigma_next - sigma) * 0.5 * (d + d_next)


def step_multistep2(history: list, x, sigma, sigma_next, denoiser):
    """Two-step Adams-Bashforth in sigma with nonuniform steps.

    ``history`` holds ``(f_prev, h_prev)`` of the previous step, or is empty
    on the first step (Euler fallback).  It is updated in place.
    """
    f = ode_rhs(x, sigma, denoiser)
    h = sigma_next - sigma
    if not history:
        x_next = x + h * f
    else:
        f_prev, h_prev = history[-1]
        r = h / (2.0 * h_prev)
        x_next = x + h * ((1.0 + r) * f - r * f_prev)
    history[:] = [(f, h)]
    return x_next


def cfg_combine(cond, uncond, gamma: float = 1.0):
    """uncond + gamma * (cond - uncond); returns ``cond`` itself at gamma = 1."""
    if np.shape(cond) != np.shape(uncond):
        raise ValueError(f"shape mismatch {np.shape(cond)} vs {np.shape(uncond)}")
    if gamma == 1.0:
        return cond
    return uncond + gamma * (cond - uncond)


def integrate(x: np.ndarray, sigmas: np.ndarray, denoiser: Denoiser, scheme: str,
              hold: Callable[[np.ndarray, int], np.ndarray] | None = None) -> np.ndarray:
    """Integrate the PF-ODE along ``sigmas``.

    ``hold(x, i)`` re-imposes the observed cells for noise level ``sigmas[i]``;
    it runs on the initial state, before every denoiser call and on the output.
    """
    hold = hold or (lambda v, i: v)
    history: list = []
    x = hold(x, 0)
    for i in range(len(sigmas) - 1):
        s, s_next = float(sigmas[i]), float(sigmas[i + 1])
        if scheme == "euler":
            x = step_euler(x, s, s_next, denoiser)
        elif scheme == "heun-pc":
            x = step_heun_pc(x, s, s_next, denoiser, refresh=lambda v, _s, j=i + 1: hold(v, j))
        elif scheme == "multistep2":
            x = step_multistep2(history, x, s, s_next, denoiser)
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        x = hold(x, i + 1)
    return x


# model-backed denoisers

def _chunked(fn, x: np.ndarray, chunk: int) -> np.ndarray:
    return np.concatenate([fn(x[i:i + chunk], slice(i, i + chunk)) for i in range(0, len(x), chunk)])


def model_denoiser(model, condition=None, chunk: int = 64, sigma_data: float = 0.5) -> Denoiser:
    """Wrap a FieldModel as D(x, sigma); ``condition`` is batch-aligned with x."""
    dtype = next(model.parameters()).dtype

    @torch.no_grad()
    def run(xb: np.ndarray, sl: slice, sigma: float) -> np.ndarray:
        c = None if condition is None else condition[sl]
        x = torch.as_tensor(xb, dtype=dtype)
        return edm.denoise(model, x, sigma, c, sigma_data).double().numpy()

    return lambda x, s: _chunked(lambda xb, sl: run(xb, sl, s), x, chunk)


def cfg_denoiser(cond: Denoiser, uncond: Denoiser, gamma: float = 1.0) -> Denoiser:
    """Guidance on denoiser outputs; equal to guidance on scores since (D - x)/sigma^2 is affine in D."""
    if gamma == 1.0:
        return cond
    return lambda x, s: cfg_combine(cond(x, s), uncond(x, s), gamma)


@torch.no_grad()
def encode_conditions(model, obs_list: Sequence[ObservationSet], grid, chunk: int = 64) -> torch.Tensor:
    dtype = next(model.parameters()).dtype
    out = []
    for i in range(0, len(obs_list), chunk):
        vor, ind = zip(*(condition_inputs(o, grid) for o in obs_list[i:i + chunk]))
        out.append(model.encode(torch.as_tensor(np.stack(vor), dtype=dtype),
                                torch.as_tensor(np.stack(ind), dtype=dtype)))
    return torch.cat(out)


@torch.no_grad()
def vtunet_predict(model, obs_list: Sequence[ObservationSet], grid, chunk: int = 64) -> np.ndarray:
    dtype = next(model.parameters()).dtype
    out = []
    for i in range(0, len(obs_list), chunk):
        vor, ind = zip(*(condition_inputs(o, grid) for o in obs_list[i:i + chunk]))
        out.append(model.net(torch.as_tensor(np.stack(vor), dtype=dtype),
                             torch.as_tensor(np.stack(ind), dtype=dtype)).double().numpy())
    return np.concatenate(out)


# sampling entry points

@dataclass
class Ensemble:
    members: np.ndarray  # (n, C, H, W)
    mean: np.ndarray
    variance: np.ndarray

    @classmethod
    def from_members(cls, members: np.ndarray) -> "Ensemble":
        members = np.asarray(members, dtype=np.float64)
        if len(members) < 1:
            raise ValueError("empty ensemble")
        mean = members.mean(axis=0)
        var = members.var(axis=0, ddof=1) if len(members) > 1 else np.zeros_like(mean)
        # cells where all members agree (observed cells) get exact statistics, free of round-off
        same = np.all(members == members[0], axis=0)
        mean = np.where(same, members[0], mean)
        var = np.where(same, 0.0, var)
        return cls(members, mean, var)


def member_rng(seed: int, instance: int, member: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, instance, member]))


def _identity_stats(channels: int) -> NormStats:
    return NormStats(np.zeros(channels), np.ones(channels), 1.0)


def _normalized_obs(obs: ObservationSet, stats: NormStats) -> ObservationSet:
    return obs.with_values(stats.normalize(obs.values, channel_axis_tail=1))


def sample_batch(obs_list: Sequence[ObservationSet], grid: tuple[int, int], cfg: SamplerConfig,
                 model=None, stats: NormStats | None = None, n: int | None = None,
                 denoiser: Denoiser | None = None, instance_offset: int = 0) -> list[Ensemble]:
    """Reconstruct every observation set with an ``n``-member ensemble.

    ``denoiser`` (normalized space, batch-aligned with the stacked members)
    replaces the model, which is how analytic oracles are injected.  Returned
    fields are denormalized and observed cells carry the supplied values.
    """
    if not obs_list:
        return []
    n = cfg.ensemble if n is None else n
    if n < 1:
        raise ValueError("ensemble size must be >= 1")
    for o in obs_list:
        if o.n_obs == 0:
            raise ValueError("observations are empty")
    c = obs_list[0].channels
    stats = stats or _identity_stats(c)
    if model is None and denoiser is None:
        raise ValueError("need a model or a denoiser")
    if model is not None and denoiser is None:
        _check_mode(model, cfg.mode)

    h, w = grid
    nobs = [_normalized_obs(o, stats) for o in obs_list]
    b = len(obs_list) * n
    obs_field = np.repeat(np.stack([scatter(o, grid) for o in nobs]), n, axis=0)
    mask = np.zeros((len(obs_list), 1, h, w), dtype=bool)
    for j, o in enumerate(obs_list):
        mask[j, 0, o.positions[:, 0], o.positions[:, 1]] = True
    mask = np.repeat(mask, n, axis=0)
    rngs = [member_rng(cfg.seed, instance_offset + j, m) for j in range(len(obs_list)) for m in range(n)]
    eps0 = np.stack([r.standard_normal((c, h, w)) for r in rngs])
    sigmas = sigma_steps(cfg)

    if denoiser is None:
        denoiser = _build_denoiser(model, nobs, grid, cfg, n)

    if cfg.mode == "guided":
        # fresh noise per sigma level, shared by the corrector and the next refresh
        level_eps = [np.stack([r.standard_normal((c, h, w)) for r in rngs]) for _ in range(len(sigmas))]

        def hold(x, i):
            return np.where(mask, obs_field + sigmas[i] * level_eps[i], x)
    else:
        def hold(x, i):
            return np.where(mask, obs_field, x)

    x = integrate(sigmas[0] * eps0, sigmas, denoiser, cfg.scheme, hold)
    x = np.where(mask, obs_field, x)
    x = stats.denormalize(x)
    phys = np.repeat(np.stack([scatter(o, grid) for o in obs_list]), n, axis=0)
    x = np.where(mask, phys, x)
    x = x.reshape(len(obs_list), n, c, h, w)
    return [Ensemble.from_members(x[j]) for j in range(len(obs_list))]


def _check_mode(model, mode: str) -> None:
    want = {"guided": "unconditional", "cfg": "cfg", "cross-attention": "cross-attention"}[mode]
    if model.mode != want:
        raise ValueError(f"sampler mode {mode!r} needs a {want!r} checkpoint, got {model.mode!r}")


def _build_denoiser(model, nobs, grid, cfg: SamplerConfig, n: int) -> Denoiser:
    if cfg.mode == "guided":
        return model_denoiser(model, None, cfg.chunk)
    cond = encode_conditions(model, nobs, grid, cfg.chunk).repeat_interleave(n, dim=0)
    d_cond = model_denoiser(model, cond, cfg.chunk)
    if cfg.mode == "cfg" and cfg.gamma != 1.0:
        null = model.null_condition(len(cond)).detach()
        return cfg_denoiser(d_cond, model_denoiser(model, null, cfg.chunk), cfg.gamma)
    return d_cond


def ensemble_sample(obs: ObservationSet, grid: tuple[int, int], cfg: SamplerConfig, model=None,
                    stats: NormStats | None = None, n: int | None = None,
                    denoiser: Denoiser | None = None) -> Ensemble:
    return sample_batch([obs], grid, cfg, model, stats, n, denoiser)[0]


def sample_conditional(obs: ObservationSet, grid: tuple[int, int], cfg: SamplerConfig, model=None,
                       stats: NormStats | None = None, denoiser: Denoiser | None = None) -> np.ndarray:
    """One trajectory with observed cells held at their values (cfg or cross-attention)."""
    if cfg.mode == "guided":
        raise ValueError("sample_conditional needs a cfg or cross-attention configuration")
    return ensemble_sample(obs, grid, cfg, model, stats, 1, denoiser).members[0]


def sample_guided(obs: ObservationSet, grid: tuple[int, int], cfg: SamplerConfig, model=None,
                  stats: NormStats | None = None, denoiser: Denoiser | None = None) -> np.ndarray:
    """One trajectory of an unconditional model with noised observed-cell refresh."""
    if cfg.mode != "guided":
        cfg = SamplerConfig(**{**cfg.__dict__, "mode": "guided"})
    return ensemble_sample(obs, grid, cfg, model, stats, 1, denoiser).members[0]
