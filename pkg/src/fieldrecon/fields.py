"""Field tensors, observation masks and the Voronoi conditioning input.

A field is a plain ``(C, H, W)`` float array. Sensors share coordinates across
channels, so masks are single ``(H, W)`` boolean layers broadcast over C.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


def check_field(x: np.ndarray, name: str = "field") -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 3:
        raise ValueError(f"{name} must have shape (C, H, W), got {x.shape}")
    if x.shape[1] != x.shape[2]:
        raise ValueError(f"{name} must be square, got {x.shape[1]}x{x.shape[2]}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


@dataclass(frozen=True)
class ObservationMask:
    flags: np.ndarray

    def __post_init__(self):
        flags = np.asarray(self.flags, dtype=bool)
        if flags.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {flags.shape}")
        flags = flags.copy()
        flags.setflags(write=False)
        object.__setattr__(self, "flags", flags)

    @property
    def shape(self) -> tuple[int, int]:
        return self.flags.shape

    @property
    def count(self) -> int:
        return int(self.flags.sum())

    def complement(self) -> "ObservationMask":
        return ObservationMask(~self.flags)

    def positions(self) -> np.ndarray:
        """Flagged (row, col) indices in row-major order, shape (N, 2)."""
        return np.argwhere(self.flags)


@dataclass(frozen=True)
class ObservationSet:
    positions: np.ndarray  # (N, 2) int
    values: np.ndarray  # (C, N)
    grid: tuple[int, int] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.int64).reshape(-1, 2)
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[None, :]
        if vals.shape[1] != pos.shape[0]:
            raise ValueError(
                f"values have {vals.shape[1]} columns but there are {pos.shape[0]} positions")
        if len({tuple(p) for p in pos.tolist()}) != len(pos):
            raise ValueError("observation positions must be unique")
        if self.grid is not None:
            _check_bounds(pos, self.grid)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "values", vals)

    @property
    def n_obs(self) -> int:
        return self.positions.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    def with_values(self, values: np.ndarray) -> "ObservationSet":
        return ObservationSet(self.positions, values, self.grid)


def _check_bounds(pos: np.ndarray, grid: Sequence[int]) -> None:
    h, w = grid
    for i, (r, c) in enumerate(pos.tolist()):
        if not (0 <= r < h and 0 <= c < w):
            raise IndexError(f"position #{i} ({r}, {c}) lies outside the {h}x{w} grid")


def make_mask(positions: Iterable[Sequence[int]], grid: tuple[int, int]) -> ObservationMask:
    pos = np.asarray(list(positions), dtype=np.int64).reshape(-1, 2)
    _check_bounds(pos, grid)
    flags = np.zeros(grid, dtype=bool)
    for i, (r, c) in enumerate(pos.tolist()):
        if flags[r, c]:
            raise ValueError(f"duplicate position #{i} ({r}, {c})")
        flags[r, c] = True
    return ObservationMask(flags)


def _mask_like(x: np.ndarray, mask: ObservationMask) -> np.ndarray:
    if x.shape[-2:] != mask.shape:
        raise ValueError(f"field grid {x.shape[-2:]} does not match mask {mask.shape}")
    return np.broadcast_to(mask.flags, x.shape)


def mask_partition(x: np.ndarray, mask: ObservationMask) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x)
    m = _mask_like(x, mask)
    zero = np.zeros((), dtype=x.dtype)
    return np.where(m, x, zero), np.where(m, zero, x)


def observe(x: np.ndarray, mask: ObservationMask) -> ObservationSet:
    x = np.asarray(x)
    _mask_like(x, mask)
    pos = mask.positions()
    return ObservationSet(pos, x[:, pos[:, 0], pos[:, 1]], grid=mask.shape)


def scatter(obs: ObservationSet, grid: tuple[int, int], fill: float = 0.0) -> np.ndarray:
    """Place observation values onto a ``fill``-valued (C, H, W) grid."""
    out = np.full((obs.channels, *grid), fill, dtype=float)
    out[:, obs.positions[:, 0], obs.positions[:, 1]] = obs.values
    return out


def obs_mask(obs: ObservationSet, grid: tuple[int, int]) -> ObservationMask:
    return make_mask(obs.positions, grid)


def nearest_sensor_index(positions: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    """Index of the nearest sensor for every cell, shape (H, W).

    Squared distances are computed in exact integer arithmetic, and argmin
    returns the first minimum, so equidistant cells go to the lowest index.
    """
    pos = np.asarray(positions, dtype=np.int64).reshape(-1, 2)
    if len(pos) == 0:
        raise ValueError("cannot tessellate zero sensors")
    h, w = grid
    rr, cc = np.meshgrid(np.arange(h, dtype=np.int64), np.arange(w, dtype=np.int64), indexing="ij")
    cells = np.stack([rr.ravel(), cc.ravel()], axis=1)
    best = np.zeros(h * w, dtype=np.int64)
    best_d = np.full(h * w, np.iinfo(np.int64).max)
    # chunk over sensors to bound memory on large grids
    for start in range(0, len(pos), 256):
        chunk = pos[start:start + 256]
        d = ((cells[None, :, :] - chunk[:, None, :]) ** 2).sum(-1)
        arg = d.argmin(axis=0)
        dmin = d[arg, np.arange(h * w)]
        better = dmin < best_d
        best[better] = arg[better] + start
        best_d[better] = dmin[better]
    return best.reshape(h, w)


def voronoi_tessellate(obs: ObservationSet, grid: tuple[int, int]) -> np.ndarray:
    if obs.n_obs == 0:
        raise ValueError("cannot tessellate zero sensors")
    idx = nearest_sensor_index(obs.positions, grid)
    return obs.values[:, idx]


def sensor_indicator(positions: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    """Binary (1, H, W) channel marking sensor cells."""
    ind = np.zeros((1, *grid))
    pos = np.asarray(positions, dtype=np.int64).reshape(-1, 2)
    ind[0, pos[:, 0], pos[:, 1]] = 1.0
    return ind


def condition_inputs(obs: ObservationSet, grid: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Tessellated channels and the sensor-indicator channel for the encoder."""
    return voronoi_tessellate(obs, grid), sensor_indicator(obs.positions, grid)


def random_positions(rng: np.random.Generator, grid: tuple[int, int], n: int) -> np.ndarray:
    h, w = grid
    if not 1 <= n <= h * w:
        raise ValueError(f"cannot place {n} sensors on a {h}x{w} grid")
    flat = rng.choice(h * w, size=n, replace=False)
    flat.sort()
    return np.stack([flat // w, flat % w], axis=1)


def evenly_spaced_positions(grid: tuple[int, int], ratio: float) -> np.ndarray:
    """k x k lattice of cell centers with k = round(sqrt(ratio * H * W))."""
    h, w = grid
    k = max(1, int(round(np.sqrt(ratio * h * w))))
    rows = ((np.arange(k) + 0.5) * h / k).astype(np.int64)
    cols = ((np.arange(k) + 0.5) * w / k).astype(np.int64)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1)


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    target_std: float = 0.5

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        std = np.atleast_1d(np.asarray(self.std, dtype=float))
        if mean.shape != std.shape:
            raise ValueError("mean and std must have the same length")
        if np.any(~(std > 0)):
            raise ValueError("per-channel std must be strictly positive")
        if not self.target_std > 0:
            raise ValueError("target_std must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @classmethod
    def from_data(cls, data: np.ndarray, target_std: float = 0.5) -> "NormStats":
        """Per-channel statistics over an array shaped (..., C, H, W)."""
        data = np.asarray(data, dtype=np.float64)
        axes = tuple(i for i in range(data.ndim) if i != data.ndim - 3)
        return cls(data.mean(axis=axes), data.std(axis=axes), target_std)

    def _bcast(self, v: np.ndarray, ndim_tail: int) -> np.ndarray:
        return v.reshape((-1,) + (1,) * ndim_tail)

    def normalize(self, x: np.ndarray, channel_axis_tail: int = 2) -> np.ndarray:
        m = self._bcast(self.mean, channel_axis_tail)
        s = self._bcast(self.std, channel_axis_tail)
        return (np.asarray(x) - m) / s * self.target_std

    def denormalize(self, x: np.ndarray, channel_axis_tail: int = 2) -> np.ndarray:
        m = self._bcast(self.mean, channel_axis_tail)
        s = self._bcast(self.std, channel_axis_tail)
        return np.asarray(x) / self.target_std * s + m


def normalize(x: np.ndarray, stats: NormStats) -> np.ndarray:
    return stats.normalize(x)


def denormalize(x: np.ndarray, stats: NormStats) -> np.ndarray:
    return stats.denormalize(x)
