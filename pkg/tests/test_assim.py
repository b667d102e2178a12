import numpy as np
import pytest

from fieldrecon import assim
from oracles import dense_3dvar_minimizer


def spd(rng, n, floor=0.1):
    a = rng.standard_normal((n, n))
    return a @ a.T / n + floor * np.eye(n)


def test_pca_basis_properties():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((50, 20))
    basis = assim.pca_fit(x, 19)
    assert np.abs(basis.components.T @ basis.components - np.eye(19)).max() < 1e-8
    assert np.all(np.diff(basis.eigenvalues) <= 0)
    xc = x - x.mean(axis=1, keepdims=True)
    assert abs(basis.eigenvalues.sum() - np.trace(xc @ xc.T) / 19) < 1e-8
    # centered rank is n-1 = 19: round trip exact on every training column
    for col in x.T:
        assert np.abs(assim.expand(assim.reduce(col, basis), basis) - col).max() < 1e-8
    cum = np.cumsum(basis.eigenvalues)
    assert np.all(np.diff(cum) >= 0)


def test_pca_degenerate_and_errors():
    v = np.random.default_rng(1).standard_normal(10)
    b = assim.pca_fit(np.repeat(v[:, None], 5, axis=1), 1)
    assert b.eigenvalues[0] == 0.0
    x = np.random.default_rng(2).standard_normal((6, 4))
    with pytest.raises(ValueError):
        assim.pca_fit(x, 5)
    with pytest.raises(ValueError):
        assim.pca_fit(x[:, :1], 1)
    with pytest.raises(ValueError):
        assim.reduce(np.zeros(7), assim.pca_fit(x, 2))
    ub = assim.pca_fit(x, 3, centered=False)
    assert not ub.mean.any()


def test_reduce_expand_projection_properties():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((30, 12))
    basis = assim.pca_fit(x, 11)
    inside = basis.mean + basis.components[:, :4] @ rng.standard_normal(4)
    assert np.abs(assim.expand(assim.reduce(inside, basis), basis) - inside).max() < 1e-8
    q, _ = np.linalg.qr(np.column_stack([basis.components, rng.standard_normal(30)]))
    ortho = q[:, -1]
    assert np.abs(assim.expand(assim.reduce(basis.mean + ortho, basis), basis) - basis.mean).max() < 1e-12
    target = rng.standard_normal(30)
    errs = [np.linalg.norm(assim.expand(assim.reduce(target, basis.truncate(k)), basis.truncate(k)) - target)
            for k in range(1, 12)]
    assert np.all(np.diff(errs) <= 1e-12)


def test_ensemble_cov():
    rng = np.random.default_rng(4)
    z = rng.standard_normal(5)
    assert not assim.ensemble_cov(np.stack([z, z])).any()
    m, d = rng.standard_normal(5), rng.standard_normal(5)
    assert np.allclose(assim.ensemble_cov(np.stack([m + d, m - d])), 2 * np.outer(d, d), rtol=0, atol=1e-14)
    b = assim.ensemble_cov(rng.standard_normal((10, 8)))
    assert np.array_equal(b, b.T) and np.linalg.eigvalsh(b).min() >= -1e-10
    with pytest.raises(ValueError):
        assim.ensemble_cov(z[None])


def test_blue_scalar_and_limits():
    one = np.eye(1)
    assert assim.blue_analysis(np.zeros(1), np.ones(1), one, one, one)[0] == pytest.approx(0.5, abs=1e-15)
    rng = np.random.default_rng(5)
    H = rng.standard_normal((3, 6))
    y = rng.standard_normal(3)
    xa = assim.blue_analysis(np.zeros(6), y, H, spd(rng, 6), 1e-12 * np.eye(3))
    assert np.abs(H @ xa - y).max() < 1e-5
    with pytest.raises(ValueError):
        assim.blue_analysis(np.zeros(6), y, H, np.eye(5), np.eye(3))


def test_blue_singular_innovation_uses_ridge():
    xa = assim.blue_analysis(np.zeros(2), np.ones(2), np.eye(2), np.zeros((2, 2)), np.zeros((2, 2)))
    assert np.array_equal(xa, np.zeros(2))


@pytest.mark.parametrize("n,m", [(1, 1), (5, 3), (20, 20), (50, 20), (50, 7)])
def test_blue_matches_dense_quadratic_minimizer(n, m):
    rng = np.random.default_rng(n * 100 + m)
    for _ in range(5):
        xb, y = rng.standard_normal(n), rng.standard_normal(m)
        H, B = rng.standard_normal((m, n)), spd(rng, n)
        R = np.diag(rng.uniform(0.1, 2.0, m))
        got = assim.blue_analysis(xb, y, H, B, R)
        ref = dense_3dvar_minimizer(xb, y, H, B, R)
        assert np.linalg.norm(got - ref) / np.linalg.norm(ref) < 1e-8


def test_blue_monte_carlo_optimality():
    rng = np.random.default_rng(6)
    n, m = 8, 4
    B, R = spd(rng, n, 0.5), np.diag(rng.uniform(0.2, 1.0, m))
    H = rng.standard_normal((m, n))
    lb, lr = np.linalg.cholesky(B), np.linalg.cholesky(R)
    eb = ea = 0.0
    for _ in range(1000):
        xt = rng.standard_normal(n)
        xb = xt + lb @ rng.standard_normal(n)
        y = H @ xt + lr @ rng.standard_normal(m)
        xa = assim.blue_analysis(xb, y, H, B, R)
        eb += np.sum((xb - xt) ** 2)
        ea += np.sum((xa - xt) ** 2)
    assert ea <= eb


def test_improvement():
    xt, xb = np.zeros(3), np.array([1.0, 0, 0])
    assert assim.improvement(xb, xt, xt) == 1.0
    assert assim.improvement(xb, xb, xt) == 0.0
    assert assim.improvement(xb, 2 * xb, xt) == -1.0
    with pytest.raises(ValueError, match="already exact"):
        assim.improvement(xt, xb, xt)


def fit_basis(rng, d=40, n=30, q=10):
    return assim.pca_fit(rng.standard_normal((d, n)) * np.linspace(2, 0.1, d)[:, None], q)


def test_assimilate_identity_mode_matches_dense_oracle():
    rng = np.random.default_rng(7)
    basis = fit_basis(rng)
    members = rng.standard_normal((6, 40))
    idx = np.array([5])
    y = rng.standard_normal(1)
    res = assim.assimilate(members, y, idx, basis, cov="identity", r_sigma=1.0)
    xb = members.mean(axis=0)
    zb = basis.components.T @ (xb - basis.mean)
    Hl = assim.observation_matrix(idx, 40) @ basis.components
    y_lat = y - xb[idx] + Hl @ zb
    za = dense_3dvar_minimizer(zb, y_lat, Hl, np.eye(basis.q), np.eye(1))
    assert np.allclose(res.x_a, xb + basis.components @ (za - zb), rtol=0, atol=1e-12)
    assert np.array_equal(res.x_b, xb)


def test_assimilate_zero_innovation_and_zero_gain():
    rng = np.random.default_rng(8)
    basis = fit_basis(rng)
    members = rng.standard_normal((6, 40))
    idx = np.array([1, 7, 30])
    xb = members.mean(axis=0)
    res = assim.assimilate(members, xb[idx], idx, basis, r_sigma=0.1)
    assert np.allclose(res.x_a, xb, rtol=0, atol=1e-12)
    same = np.repeat(members[:1], 4, axis=0)
    res = assim.assimilate(same, rng.standard_normal(3), idx, basis, r_sigma=0.1)
    assert np.array_equal(res.x_a, res.x_b)


def test_assimilate_reports_improvement_and_validates():
    rng = np.random.default_rng(9)
    basis = fit_basis(rng)
    truth = basis.mean + basis.components @ rng.standard_normal(basis.q)
    members = truth + 0.3 * rng.standard_normal((10, 40))
    idx = np.arange(0, 40, 3)
    res = assim.assimilate(members, truth[idx], idx, basis, r_sigma=0.01, truth=truth)
    assert res.Im is not None and res.Im <= 1
    with pytest.raises(ValueError):
        assim.assimilate(members, truth[idx], idx, basis, cov="full")
    with pytest.raises(ValueError):
        assim.assimilate(members, truth[idx], idx, basis, r_sigma=0.0)
    with pytest.raises(ValueError):
        assim.assimilate(members[:, :30], truth[idx], idx, basis)
