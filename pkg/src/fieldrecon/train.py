"""Training loop for the diffusion denoisers and the VT-UNet baseline."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from . import edm
from .fields import NormStats, condition_inputs, ObservationSet, random_positions
from .net import optim
from .net.unet import FieldModel

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 1000
    batch: int = 16
    lr: float = 1e-4
    weight_decay: float = 0.01
    ema: float = 0.999
    seed: int = 0
    max_ratio: float = 0.1  # observed ratio ~ U(0, max_ratio)
    cfg_dropout: float = 0.1
    schedule: edm.NoiseSchedule = field(default_factory=edm.NoiseSchedule)
    log_every: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.batch < 1:
            raise ValueError("steps must be >= 0 and batch >= 1")
        if not 0 < self.max_ratio < 1:
            raise ValueError("max_ratio must lie in (0, 1)")
        if not 0 <= self.cfg_dropout < 1:
            raise ValueError("cfg_dropout must lie in [0, 1)")


def sample_ratio(rng: np.random.Generator, max_ratio: float = 0.1) -> float:
    while True:
        r = rng.uniform(0.0, max_ratio)
        if r > 0.0:
            return r


def unravel(fields: np.ndarray) -> np.ndarray:
    """(sims, T, C, H, W) -> (sims*T, C, H, W); the time axis becomes samples."""
    if fields.ndim == 4:
        return fields
    if fields.ndim != 5:
        raise ValueError(f"expected (sims, T, C, H, W), got shape {fields.shape}")
    return fields.reshape(-1, *fields.shape[2:])


def make_batch(snapshots: np.ndarray, mode: str, cfg: TrainConfig,
               rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Assemble one training batch from normalized snapshots (N, C, H, W).

    Keys: x0, x_in, sigma, mask (B,1,H,W; 1 on observed cells), voronoi,
    indicator, null (B,). Unconditional training gets an all-zero mask.
    """
    n, c, h, w = snapshots.shape
    idx = rng.integers(0, n, size=cfg.batch)
    x0 = snapshots[idx].astype(np.float64)
    b = cfg.batch
    mask = np.zeros((b, 1, h, w))
    voronoi = np.zeros((b, c, h, w))
    indicator = np.zeros((b, 1, h, w))
    if mode != "unconditional":
        for i in range(b):
            k = max(1, int(round(sample_ratio(rng, cfg.max_ratio) * h * w)))
            pos = random_positions(rng, (h, w), k)
            obs = ObservationSet(pos, x0[i][:, pos[:, 0], pos[:, 1]], (h, w))
            voronoi[i], indicator[i] = condition_inputs(obs, (h, w))
            mask[i, 0, pos[:, 0], pos[:, 1]] = 1.0
    sigma = edm.sample_sigma(rng, cfg.schedule, size=b)
    noised, _ = edm.add_noise(x0, sigma, rng)
    x_in = np.where(mask > 0, x0, noised)
    null = rng.random(b) < cfg.cfg_dropout if mode == "cfg" else np.zeros(b, dtype=bool)
    return dict(x0=x0, x_in=x_in, sigma=sigma, mask=mask, voronoi=voronoi,
                indicator=indicator, null=null)


def batch_loss(model: FieldModel, batch: dict[str, np.ndarray], sigma_data: float = 0.5,
               dtype=torch.float32) -> torch.Tensor:
    t = {k: torch.as_tensor(v, dtype=dtype) for k, v in batch.items() if k not in ("sigma", "null")}
    mode = model.mode
    if mode == "vtunet":
        return ((model.net(t["voronoi"], t["indicator"]) - t["x0"]) ** 2).mean()
    if mode == "unconditional":
        return edm.training_loss(model, t["x0"], t["x_in"], batch["sigma"], None, None, sigma_data)
    null = torch.as_tensor(batch["null"]) if mode == "cfg" else None
    cond = model.encode(t["voronoi"], t["indicator"], null)
    return edm.training_loss(model, t["x0"], t["x_in"], batch["sigma"], cond, 1.0 - t["mask"], sigma_data)


@dataclass
class TrainResult:
    model: FieldModel
    ema: optim.EMA
    losses: list[float]


def train_loop(model: FieldModel, snapshots: np.ndarray, cfg: TrainConfig,
               dtype=torch.float32) -> TrainResult:
    """Run ``cfg.steps`` AdamW steps with EMA tracking; ``snapshots`` are normalized."""
    snapshots = unravel(np.asarray(snapshots))
    if snapshots.shape[1] != model.cfg.channels or snapshots.shape[-1] != model.cfg.resolution:
        raise ValueError(f"data shape {snapshots.shape[1:]} does not match model config "
                         f"({model.cfg.channels} channels, {model.cfg.resolution}^2)")
    model.to(dtype)
    model.train()
    opt = optim.adamw(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    ema = optim.EMA(model, max_decay=cfg.ema)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    losses = []
    for step in range(cfg.steps):
        batch = make_batch(snapshots, model.mode, cfg, rng)
        loss = batch_loss(model, batch, cfg.schedule.sigma_data, dtype)
        if not torch.isfinite(loss):
            raise FloatingPointError(f"non-finite training loss at step {step}")
        optim.adamw_step(opt, loss)
        ema.update(model)
        losses.append(loss.item())
        if cfg.log_every and (step + 1) % cfg.log_every == 0:
            log.info("step %d loss %.5f", step + 1, np.mean(losses[-cfg.log_every:]))
    model.eval()
    return TrainResult(model, ema, losses)


def normalized_training_set(fields: np.ndarray, stats: NormStats, train_sims: int) -> np.ndarray:
    return stats.normalize(unravel(fields[:train_sims]))
