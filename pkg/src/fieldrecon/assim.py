"""Reduced-order data assimilation: PCA basis, ensemble covariance, BLUE analysis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

RIDGE = 1e-10


@dataclass(frozen=True)
class PcaBasis:
    components: np.ndarray  # (d, q), orthonormal columns
    eigenvalues: np.ndarray  # (q,), descending
    mean: np.ndarray  # (d,); zeros for uncentered PCA

    @property
    def dim(self) -> int:
        return self.components.shape[0]

    @property
    def q(self) -> int:
        return self.components.shape[1]

    def truncate(self, q: int) -> "PcaBasis":
        if not 1 <= q <= self.q:
            raise ValueError(f"q must lie in [1, {self.q}]")
        return PcaBasis(self.components[:, :q], self.eigenvalues[:q], self.mean)


def pca_fit(snapshots: np.ndarray, q: int, centered: bool = True) -> PcaBasis:
    """PCA of a (d, n) snapshot matrix (one snapshot per column)."""
    x = np.asarray(snapshots, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("snapshots must be a (d, n) matrix")
    d, n = x.shape
    if n < 2:
        raise ValueError("need at least two snapshots")
    if not 1 <= q <= min(n, d):
        raise ValueError(f"q={q} must lie in [1, min(n, d) = {min(n, d)}]")
    mean = x.mean(axis=1) if centered else np.zeros(d)
    u, s, _ = np.linalg.svd(x - mean[:, None], full_matrices=False)
    # rank deficiency -> exact zeros; tolerance scaled by the raw data so centering round-off counts as zero
    tol = np.finfo(np.float64).eps * max(d, n) * np.abs(x).max(initial=0.0) * np.sqrt(d * n)
    eig = np.where(s > tol, s ** 2 / (n - 1), 0.0)
    return PcaBasis(u[:, :q].copy(), eig[:q].copy(), mean)


def reduce(x: np.ndarray, basis: PcaBasis) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != basis.dim:
        raise ValueError(f"state length {x.shape[0]} != basis dimension {basis.dim}")
    m = basis.mean if x.ndim == 1 else basis.mean[:, None]
    return basis.components.T @ (x - m)


def expand(z: np.ndarray, basis: PcaBasis) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[0] != basis.q:
        raise ValueError(f"latent length {z.shape[0]} != q = {basis.q}")
    m = basis.mean if z.ndim == 1 else basis.mean[:, None]
    return basis.components @ z + m


def ensemble_cov(latent_members: np.ndarray) -> np.ndarray:
    """Unbiased covariance of (n, q) reduced ensemble members."""
    z = np.asarray(latent_members, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValueError("ensemble covariance needs at least two members")
    a = z - z.mean(axis=0)
    b = a.T @ a / (z.shape[0] - 1)
    return 0.5 * (b + b.T)


def blue_analysis(xb: np.ndarray, y: np.ndarray, H: np.ndarray, B: np.ndarray, R: np.ndarray) -> np.ndarray:
    """x_a = x_b + B H^T (H B H^T + R)^{-1} (y - H x_b) via a Cholesky solve."""
    xb, y = np.asarray(xb, float), np.atleast_1d(np.asarray(y, float))
    H, B, R = np.atleast_2d(H).astype(float), np.atleast_2d(B).astype(float), np.atleast_2d(R).astype(float)
    if H.shape != (y.shape[0], xb.shape[0]) or B.shape != (xb.shape[0],) * 2 or R.shape != (y.shape[0],) * 2:
        raise ValueError(f"inconsistent shapes H{H.shape} B{B.shape} R{R.shape} x_b{xb.shape} y{y.shape}")
    bht = B @ H.T
    s = H @ bht + R
    s = 0.5 * (s + s.T)
    innovation = y - H @ xb
    if s.shape == (1, 1) and s[0, 0] > 0:
        # a single observation needs no factorization; division avoids the sqrt round-off
        return xb + bht[:, 0] * (innovation[0] / s[0, 0])
    try:
        cf = scipy.linalg.cho_factor(s)
    except np.linalg.LinAlgError:
        cf = scipy.linalg.cho_factor(s + RIDGE * np.eye(len(s)))
    return xb + bht @ scipy.linalg.cho_solve(cf, innovation)


def improvement(xb: np.ndarray, xa: np.ndarray, xt: np.ndarray) -> float:
    eb = np.linalg.norm(np.ravel(xb) - np.ravel(xt))
    if eb == 0:
        raise ValueError("background already exact: improvement undefined")
    return float((eb - np.linalg.norm(np.ravel(xa) - np.ravel(xt))) / eb)


def observation_matrix(indices: np.ndarray, dim: int) -> np.ndarray:
    """Selection operator picking flat state ``indices``."""
    idx = np.asarray(indices, dtype=np.int64).ravel()
    h = np.zeros((len(idx), dim))
    h[np.arange(len(idx)), idx] = 1.0
    return h


@dataclass
class AnalysisResult:
    x_a: np.ndarray
    x_b: np.ndarray
    Im: float | None = None


def assimilate(members: np.ndarray, y: np.ndarray, obs_indices: np.ndarray, basis: PcaBasis,
               cov: str = "ensemble", r_sigma: float = 1.0, truth: np.ndarray | None = None) -> AnalysisResult:
    """Assimilate point observations into the ensemble-mean background.

    ``members`` is (n, d) flattened fields. The analysis increment lives in
    the span of the basis: x_a = x_b + L (z_a - z_b) with z_b = L^T (x_b - mean)
    and the latent observation operator H L applied to innovations computed
    on the full background.
    """
    members = np.asarray(members, dtype=np.float64)
    if members.ndim != 2 or members.shape[1] != basis.dim:
        raise ValueError(f"members must be (n, {basis.dim})")
    if not r_sigma > 0:
        raise ValueError("r_sigma must be positive")
    xb = members.mean(axis=0)
    zb = reduce(xb, basis)
    if cov == "ensemble":
        bhat = ensemble_cov(reduce(members.T, basis).T)
    elif cov == "identity":
        bhat = np.eye(basis.q)
    else:
        raise ValueError("cov must be 'ensemble' or 'identity'")
    H = observation_matrix(obs_indices, basis.dim)
    y = np.asarray(y, dtype=np.float64).ravel()
    R = r_sigma ** 2 * np.eye(len(y))
    # latent problem with the innovation of the full background
    y_lat = y - H @ xb + (H @ basis.components) @ zb
    za = blue_analysis(zb, y_lat, H @ basis.components, bhat, R)
    xa = xb + basis.components @ (za - zb)
    im = improvement(xb, xa, truth) if truth is not None else None
    return AnalysisResult(xa, xb, im)
