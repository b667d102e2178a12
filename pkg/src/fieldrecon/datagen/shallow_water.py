"""Dam-break shallow water on a periodic square, explicit FTCS.

Nondimensional form with unit gravity:

    h_t + (h u)_x + (h v)_y = 0
    u_t + h_x + b u = 0
    v_t + h_y + b v = 0
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class BlowUpError(RuntimeError):
    pass


@dataclass(frozen=True)
class ShallowWaterConfig:
    grid: int = 64
    side: float = 50.0  # mm
    radius: float = 4.0  # mm
    column_height: float = 0.1  # mm
    background: float = 1.0  # mm
    init_speed: float = 0.1
    init_column_velocity: bool = False
    drag: float = 0.0
    dt: float | None = None
    cfl_safety: float = 0.125
    n_steps: int = 50
    substeps: int = 4
    seed: int = 0

    def __post_init__(self):
        if not self.radius < self.side / 2:
            raise ValueError("column radius must be smaller than half the domain side")
        if self.n_steps < 1 or self.substeps < 1:
            raise ValueError("n_steps and substeps must be >= 1")
        if self.dt is not None and self.dt > self.cfl_bound():
            raise ValueError(f"dt={self.dt} exceeds the CFL bound {self.cfl_bound():.4g}")

    @property
    def dx(self) -> float:
        return self.side / self.grid

    def cfl_bound(self) -> float:
        h_max = self.background + self.column_height
        u_max = self.init_speed if self.init_column_velocity else 0.0
        return self.dx / (np.sqrt(2.0) * (np.sqrt(h_max) + u_max))

    def time_step(self) -> float:
        # pure FTCS amplifies centered modes every step; the default keeps the
        # snapshot spacing at half the CFL bound but splits it into 4 substeps
        return self.dt if self.dt is not None else self.cfl_safety * self.cfl_bound()


def sw_init(center: tuple[int, int], config: ShallowWaterConfig) -> dict[str, np.ndarray]:
    n = config.grid
    r0, c0 = center
    if not (0 <= r0 < n and 0 <= c0 < n):
        raise IndexError(f"center {center} outside the {n}x{n} grid")
    idx = np.arange(n)
    # periodic distance in cells
    dr = np.minimum(np.abs(idx - r0), n - np.abs(idx - r0))[:, None]
    dc = np.minimum(np.abs(idx - c0), n - np.abs(idx - c0))[None, :]
    disk = (dr ** 2 + dc ** 2) * config.dx ** 2 <= config.radius ** 2
    h = np.full((n, n), config.background)
    h[disk] += config.column_height
    u = np.zeros((n, n))
    v = np.zeros((n, n))
    if config.init_column_velocity:
        u[disk] = config.init_speed
        v[disk] = config.init_speed
    return {"h": h, "u": u, "v": v}


def _ddx(f: np.ndarray, dx: float) -> np.ndarray:
    # axis 1 is x, periodic centered difference
    return (np.roll(f, -1, axis=1) - np.roll(f, 1, axis=1)) / (2.0 * dx)


def _ddy(f: np.ndarray, dx: float) -> np.ndarray:
    return (np.roll(f, -1, axis=0) - np.roll(f, 1, axis=0)) / (2.0 * dx)


def sw_step_ftcs(state: dict[str, np.ndarray], dt: float, config: ShallowWaterConfig,
                 step: int = 0) -> dict[str, np.ndarray]:
    h, u, v = state["h"], state["u"], state["v"]
    dx = config.dx
    h_new = h - dt * (_ddx(h * u, dx) + _ddy(h * v, dx))
    u_new = u - dt * (_ddx(h, dx) + config.drag * u)
    v_new = v - dt * (_ddy(h, dx) + config.drag * v)
    if not (np.all(np.isfinite(h_new)) and np.all(np.isfinite(u_new)) and np.all(np.isfinite(v_new))):
        raise BlowUpError(f"blow-up at step {step}")
    return {"h": h_new, "u": u_new, "v": v_new}


def simulate(config: ShallowWaterConfig, rng: np.random.Generator) -> np.ndarray:
    """Snapshots (n_steps, 3, N, N) of (h, u, v) after each saved step."""
    n = config.grid
    center = (int(rng.integers(n)), int(rng.integers(n)))
    state = sw_init(center, config)
    dt = config.time_step()
    out = np.empty((config.n_steps, 3, n, n))
    k = 0
    for t in range(config.n_steps):
        for _ in range(config.substeps):
            state = sw_step_ftcs(state, dt, config, step=k)
            k += 1
        out[t] = state["h"], state["u"], state["v"]
    return out
