"""PDE dataset generators writing FRD1 containers."""

from __future__ import annotations

import dataclasses
import logging
from pathlib import Path

import numpy as np

from .. import container
from . import darcy, diffreact, shallow_water
from .darcy import DarcyConfig
from .diffreact import DiffReactConfig
from .shallow_water import BlowUpError, ShallowWaterConfig

log = logging.getLogger(__name__)

PROBLEMS = {
    "darcy": (DarcyConfig, darcy.simulate, ("log_permeability", "pressure")),
    "shallow-water": (ShallowWaterConfig, shallow_water.simulate, ("h", "u", "v")),
    "diff-react": (DiffReactConfig, diffreact.simulate, ("u", "v")),
}

TRAIN_FRACTION = 0.8


def sim_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def split_index(n: int) -> int:
    """Number of leading simulations in the training split."""
    return max(1, int(np.floor(TRAIN_FRACTION * n)))


def make_config(problem: str, **kwargs):
    cls = PROBLEMS[problem][0]
    names = {f.name for f in dataclasses.fields(cls)}
    return cls(**{k: v for k, v in kwargs.items() if k in names and v is not None})


def generate(problem: str, n_sims: int, config) -> np.ndarray:
    if problem not in PROBLEMS:
        raise ValueError(f"unknown problem {problem!r}; choose from {sorted(PROBLEMS)}")
    simulate = PROBLEMS[problem][1]
    sims = []
    for i in range(n_sims):
        sims.append(simulate(config, sim_rng(config.seed, i)))
        if (i + 1) % 100 == 0:
            log.info("%s: %d/%d simulations", problem, i + 1, n_sims)
    return np.stack(sims)


def generate_dataset(problem: str, n_sims: int, config, path: str | Path) -> dict[str, np.ndarray]:
    """Simulate and write ``fields`` (sims, T, C, H, W) plus training-split norm stats.

    Raw values are stored; normalization happens at load time. The file is
    written atomically, so a blow-up leaves no partial output behind.
    """
    if n_sims < 1:
        raise ValueError("n_sims must be >= 1")
    try:
        fields = generate(problem, n_sims, config)
    except BlowUpError:
        Path(path).with_name(Path(path).name + ".part").unlink(missing_ok=True)
        raise
    train = fields[:split_index(n_sims)]
    axes = (0, 1, 3, 4)
    arrays = {
        "fields": fields.astype(np.float32),
        "norm_mean": train.mean(axis=axes),
        "norm_std": np.maximum(train.std(axis=axes), 1e-8),
    }
    meta = {
        "problem": problem,
        "channels": list(PROBLEMS[problem][2]),
        "config": dataclasses.asdict(config),
        "n_sims": n_sims,
        "train_sims": split_index(n_sims),
    }
    container.write(path, arrays, meta)
    return arrays


def load_dataset(path: str | Path):
    """Return (fields, NormStats, meta) for an FRD1 dataset file."""
    from ..fields import NormStats

    arrays, meta = container.read_with_meta(path)
    stats = NormStats(arrays["norm_mean"].astype(np.float64), arrays["norm_std"].astype(np.float64))
    return arrays["fields"], stats, meta


__all__ = [
    "DarcyConfig", "ShallowWaterConfig", "DiffReactConfig", "BlowUpError",
    "generate", "generate_dataset", "load_dataset", "make_config", "split_index", "PROBLEMS",
]
