"""Checkpoints as FRD1 containers: ``param/<name>``, ``ema/<name>``, ``norm/*`` and JSON meta."""

from __future__ import annotations

from pathlib import Path
from typing import Any

import numpy as np
import torch

from .. import container
from ..fields import NormStats
from .unet import FieldModel, ModelConfig, build_model


def save(path: str | Path, model: FieldModel, ema_shadow: dict[str, torch.Tensor] | None,
         stats: NormStats, step: int, extra: dict[str, Any] | None = None) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, p in model.named_parameters():
        arrays[f"param/{name}"] = p.detach().cpu().float().numpy()
    for name, s in (ema_shadow or {}).items():
        arrays[f"ema/{name}"] = s.detach().cpu().float().numpy()
    arrays["norm/mean"] = stats.mean
    arrays["norm/std"] = stats.std
    meta = {"model": model.cfg.to_dict(), "step": int(step), "target_std": stats.target_std}
    meta.update(extra or {})
    container.write(path, arrays, meta)


def load(path: str | Path, use_ema: bool = True) -> tuple[FieldModel, NormStats, dict[str, Any]]:
    arrays, meta = container.read_with_meta(path)
    if "model" not in meta:
        raise ValueError(f"{path} is not a model checkpoint (no model config in meta)")
    cfg = ModelConfig(**meta["model"])
    model = build_model(cfg)
    prefix = "ema/" if use_ema and any(k.startswith("ema/") for k in arrays) else "param/"
    state = {}
    for name, p in model.named_parameters():
        key = prefix + name
        if key not in arrays:
            raise KeyError(f"checkpoint is missing {key}")
        if tuple(arrays[key].shape) != tuple(p.shape):
            raise ValueError(f"{key}: shape {arrays[key].shape} != {tuple(p.shape)}")
        state[name] = torch.from_numpy(arrays[key])
    model.load_state_dict(state, strict=True)
    model.eval()
    stats = NormStats(arrays["norm/mean"].astype(np.float64), arrays["norm/std"].astype(np.float64),
                      meta.get("target_std", 0.5))
    return model, stats, meta
