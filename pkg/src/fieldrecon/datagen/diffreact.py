"""2D FitzHugh-Nagumo diffusion-reaction on [-1, 1]^2 with zero-flux boundaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .shallow_water import BlowUpError


@dataclass(frozen=True)
class DiffReactConfig:
    grid: int = 64
    D_u: float = 1e-3
    D_v: float = 5e-3
    k: float = 5e-3
    dt: float | None = None
    n_steps: int = 500
    save_every: int = 5
    max_dt: float = 0.01  # explicit Euler limit for the cubic reaction term
    seed: int = 0

    def __post_init__(self):
        if self.n_steps < 1 or self.save_every < 1:
            raise ValueError("n_steps and save_every must be >= 1")
        if self.dt is not None and self.dt > self.stability_bound():
            raise ValueError(f"dt={self.dt} exceeds the stability bound {self.stability_bound():.4g}")

    @property
    def dx(self) -> float:
        return 2.0 / self.grid

    def stability_bound(self) -> float:
        return 0.5 * self.dx ** 2 / (4.0 * max(self.D_u, self.D_v))

    def time_step(self) -> float:
        if self.dt is not None:
            return self.dt
        return min(self.stability_bound(), self.max_dt)


def reaction_u(u, v, k: float = 5e-3):
    return u - u * u * u - k - v


def reaction_v(u, v):
    return u - v


def laplacian_neumann(f: np.ndarray, dx: float) -> np.ndarray:
    g = np.pad(f, 1, mode="edge")  # ghost cells mirror the boundary value -> zero flux
    # differences first, so a uniform field gives an exactly zero Laplacian
    return ((g[2:, 1:-1] - f) + (g[:-2, 1:-1] - f) + (g[1:-1, 2:] - f) + (g[1:-1, :-2] - f)) / dx ** 2


def dr_init(config: DiffReactConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    n = config.grid
    return {"u": rng.standard_normal((n, n)), "v": rng.standard_normal((n, n))}


def dr_step(state: dict[str, np.ndarray], dt: float, config: DiffReactConfig,
            step: int = 0) -> dict[str, np.ndarray]:
    u, v = state["u"], state["v"]
    dx = config.dx
    u_new = u + dt * (config.D_u * laplacian_neumann(u, dx) + reaction_u(u, v, config.k))
    v_new = v + dt * (config.D_v * laplacian_neumann(v, dx) + reaction_v(u, v))
    if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(v_new))):
        raise BlowUpError(f"blow-up at step {step}")
    return {"u": u_new, "v": v_new}


def simulate(config: DiffReactConfig, rng: np.random.Generator) -> np.ndarray:
    """Snapshots (n_steps // save_every + 1, 2, N, N), initial condition first."""
    state = dr_init(config, rng)
    dt = config.time_step()
    frames = [np.stack([state["u"], state["v"]])]
    for k in range(1, config.n_steps + 1):
        state = dr_step(state, dt, config, step=k)
        if k % config.save_every == 0:
            frames.append(np.stack([state["u"], state["v"]]))
    return np.stack(frames)
