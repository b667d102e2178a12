"""Darcy flow on the unit square: KLE log-permeability and a finite-volume pressure solve."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class DarcyConfig:
    grid: int = 32
    n_modes: int = 128
    d: float = 1.2
    tau: float = 1.0
    seed: int = 0
    cg_tol: float = 1e-8
    cg_maxiter: int = 20000

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValueError("n_modes must be >= 1")
        if not self.d > 1:
            raise ValueError("d must exceed 1 for the eigenvalues to be summable")
        if self.grid < 8:
            raise ValueError("grid must be >= 8")


class ConvergenceError(RuntimeError):
    pass


def darcy_source(x1: float, x2: float) -> float:
    del x1  # layered source, depends on x2 only
    if x2 <= 4 / 6:
        return 1000.0
    if x2 <= 5 / 6:
        return 2000.0
    return 3000.0


def cell_centers(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Cell-center coordinates; axis 0 runs along x1, axis 1 along x2."""
    c = (np.arange(n) + 0.5) / n
    return np.meshgrid(c, c, indexing="ij")


def source_field(n: int) -> np.ndarray:
    x1, x2 = cell_centers(n)
    return np.vectorize(darcy_source)(x1, x2)


def kle_eigenvalue(l1: int, l2: int, tau: float, d: float) -> float:
    return (np.pi ** 2 * (l1 * l1 + l2 * l2) + tau ** 2) ** (-d)


def kle_eigenfunction(l1: int, l2: int, x1, x2):
    # first matching case wins, so (0, 0) falls in the l2 == 0 branch
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if l2 == 0:
        return np.sqrt(2.0) * np.cos(np.pi * l1 * x1) + 0.0 * x2
    if l1 == 0:
        return np.sqrt(2.0) * np.cos(np.pi * l2 * x2) + 0.0 * x1
    return 2.0 * np.cos(np.pi * l1 * x1) * np.cos(np.pi * l2 * x2)


def kle_eigenpair(l: tuple[int, int], tau: float = 1.0, d: float = 1.2):
    l1, l2 = l
    if l1 < 0 or l2 < 0:
        raise ValueError("mode indices must be nonnegative")
    return kle_eigenvalue(l1, l2, tau, d), lambda x1, x2: kle_eigenfunction(l1, l2, x1, x2)


@lru_cache(maxsize=16)
def kle_modes(n_modes: int, tau: float = 1.0, d: float = 1.2) -> tuple[tuple[int, int], ...]:
    """Top ``n_modes`` index pairs by descending eigenvalue, ties by (l1, l2)."""
    side = int(np.ceil(np.sqrt(n_modes))) * 2 + 2
    pairs = [(a, b) for a in range(side) for b in range(side)]
    pairs.sort(key=lambda p: (-kle_eigenvalue(p[0], p[1], tau, d), p))
    return tuple(pairs[:n_modes])


@lru_cache(maxsize=16)
def _kle_basis(n: int, n_modes: int, tau: float, d: float) -> np.ndarray:
    x1, x2 = cell_centers(n)
    modes = kle_modes(n_modes, tau, d)
    basis = np.empty((n_modes, n, n))
    for k, (l1, l2) in enumerate(modes):
        basis[k] = np.sqrt(kle_eigenvalue(l1, l2, tau, d)) * kle_eigenfunction(l1, l2, x1, x2)
    basis.setflags(write=False)
    return basis


def kle_sample(theta: np.ndarray, config: DarcyConfig) -> np.ndarray:
    """Log-permeability on the cell-center grid, shape (N, N)."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (config.n_modes,):
        raise ValueError(f"theta must have length {config.n_modes}, got {theta.shape}")
    basis = _kle_basis(config.grid, config.n_modes, config.tau, config.d)
    return np.tensordot(theta, basis, axes=1)


def _face_harmonic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 2.0 * a * b / (a + b)


def assemble_operator(alpha: np.ndarray) -> sp.csr_matrix:
    """Finite-volume matrix for -div(alpha grad p) with p = 0 on the boundary.

    Interior faces use harmonic-mean permeabilities; boundary faces sit half a
    cell from the center, giving a coefficient 2*alpha/h^2.
    """
    n = alpha.shape[0]
    h2 = (1.0 / n) ** 2
    idx = np.arange(n * n).reshape(n, n)
    diag = np.zeros((n, n))
    rows, cols, vals = [], [], []
    for axis in (0, 1):
        a_lo = np.take(alpha, np.arange(n - 1), axis=axis)
        a_hi = np.take(alpha, np.arange(1, n), axis=axis)
        t = _face_harmonic(a_lo, a_hi) / h2
        i_lo = np.take(idx, np.arange(n - 1), axis=axis).ravel()
        i_hi = np.take(idx, np.arange(1, n), axis=axis).ravel()
        rows += [i_lo, i_hi]
        cols += [i_hi, i_lo]
        vals += [-t.ravel(), -t.ravel()]
        sl_lo = [slice(None)] * 2
        sl_hi = [slice(None)] * 2
        sl_lo[axis] = slice(0, n - 1)
        sl_hi[axis] = slice(1, n)
        diag[tuple(sl_lo)] += t
        diag[tuple(sl_hi)] += t
        edge = [slice(None)] * 2
        for pos in (0, n - 1):
            edge[axis] = pos
            diag[tuple(edge)] += 2.0 * alpha[tuple(edge)] / h2
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(diag.ravel())
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n * n, n * n))


def conjugate_gradient(A, b: np.ndarray, tol: float, maxiter: int) -> np.ndarray:
    """Jacobi-preconditioned CG stopping on the true residual ||b - Ax|| <= tol*||b||."""
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b)
    if bnorm == 0.0:
        return x
    dinv = 1.0 / A.diagonal()
    r = b.copy()
    z = dinv * r
    p = z.copy()
    rz = r @ z
    for _ in range(maxiter):
        Ap = A @ p
        step = rz / (p @ Ap)
        x += step * p
        r -= step * Ap
        if np.linalg.norm(r) <= tol * bnorm:
            r_true = b - A @ x
            if np.linalg.norm(r_true) <= tol * bnorm:
                return x
            r = r_true
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = np.linalg.norm(b - A @ x)
    raise ConvergenceError(f"CG did not converge in {maxiter} iterations "
                           f"(residual {res:.3e}, target {tol * bnorm:.3e})")


def darcy_solve(alpha: np.ndarray, config: DarcyConfig | None = None,
                source: np.ndarray | None = None) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 2 or alpha.shape[0] != alpha.shape[1]:
        raise ValueError(f"alpha must be square 2-D, got {alpha.shape}")
    if np.any(~(alpha > 0)):
        raise ValueError("permeability must be strictly positive")
    config = config or DarcyConfig(grid=alpha.shape[0])
    n = alpha.shape[0]
    f = source_field(n) if source is None else np.asarray(source, dtype=float)
    A = assemble_operator(alpha)
    p = conjugate_gradient(A, f.ravel(), config.cg_tol, config.cg_maxiter)
    return p.reshape(n, n)


def simulate(config: DarcyConfig, rng: np.random.Generator) -> np.ndarray:
    """One sample: (1, 2, N, N) with channels (log-permeability, pressure)."""
    theta = rng.standard_normal(config.n_modes)
    log_alpha = kle_sample(theta, config)
    p = darcy_solve(np.exp(log_alpha), config)
    return np.stack([log_alpha, p])[None]
