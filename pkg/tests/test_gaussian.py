"""Tests for Gaussian marginals, cubature, and moment approximation."""
import numpy as np
import pytest

from cdsmooth.errors import DegenerateCovariance, NumericalFault
from cdsmooth.gaussian import (
    CUBATURE,
    TAYLOR1,
    GaussianMarginal,
    approx_moments,
    cubature_points,
    jittered_cholesky,
    symmetrize_psd,
)


def test_marginal_symmetrizes_on_construction():
    g = GaussianMarginal([0.0, 0.0], [[1.0, 0.3], [0.1, 1.0]])
    assert np.allclose(g.cov, g.cov.T)
    assert g.cov[0, 1] == pytest.approx(0.2)


def test_marginal_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        GaussianMarginal([0.0, 0.0], np.eye(3))


def test_cubature_points_scalar_standard_normal():
    pts, w = cubature_points(GaussianMarginal([0.0], [[1.0]]))
    assert np.allclose(sorted(pts[:, 0]), [-1.0, 1.0])
    assert np.allclose(w, [0.5, 0.5])


def test_cubature_points_2d_identity():
    pts, w = cubature_points(GaussianMarginal([0.0, 0.0], np.eye(2)))
    s = np.sqrt(2.0)
    expected = np.array([[s, 0.0], [0.0, s], [-s, 0.0], [0.0, -s]])
    got = sorted(map(tuple, pts))
    want = sorted(map(tuple, expected))
    assert np.allclose(got, want, atol=1e-14)
    assert np.allclose(w, 0.25)


def test_cubature_points_zero_covariance_collapse():
    mean = np.array([1.5, -2.0])
    pts, w = cubature_points(GaussianMarginal(mean, np.zeros((2, 2))))
    assert np.allclose(pts, mean)
    assert np.allclose(w, 0.25)


def test_cubature_points_match_first_two_moments():
    rng = np.random.default_rng(3)
    for d in (1, 2, 5):
        for _ in range(5):
            mean = rng.normal(size=d)
            m = rng.normal(size=(d, d))
            cov = m @ m.T + 0.1 * np.eye(d)
            pts, w = cubature_points(GaussianMarginal(mean, cov))
            assert np.allclose(w @ pts, mean, atol=1e-13)
            dx = pts - mean
            scatter = (w[:, None] * dx).T @ dx
            assert np.allclose(scatter, cov, atol=1e-12 * np.trace(cov))


def _gaussian_monomial_moment(mean, cov, powers):
    """Closed-form E[prod x_i^{p_i}] for total degree <= 3 (Isserlis)."""
    idx = [i for i, p in enumerate(powers) for _ in range(p)]
    if len(idx) == 1:
        return mean[idx[0]]
    if len(idx) == 2:
        i, j = idx
        return mean[i] * mean[j] + cov[i, j]
    if len(idx) == 3:
        i, j, k = idx
        return (mean[i] * mean[j] * mean[k]
                + mean[i] * cov[j, k] + mean[j] * cov[i, k] + mean[k] * cov[i, j])
    raise ValueError("degree > 3")


def test_cubature_exact_through_degree_three():
    rng = np.random.default_rng(11)
    d = 3
    for _ in range(20):
        mean = rng.normal(size=d)
        m = rng.normal(size=(d, d))
        cov = m @ m.T + 0.2 * np.eye(d)
        pts, w = cubature_points(GaussianMarginal(mean, cov))
        for powers in [(1, 0, 0), (0, 2, 0), (1, 1, 0), (1, 1, 1), (3, 0, 0), (2, 1, 0)]:
            vals = np.prod(pts ** np.asarray(powers), axis=1)
            exact = _gaussian_monomial_moment(mean, cov, powers)
            scale = max(1.0, abs(exact))
            assert w @ vals == pytest.approx(exact, abs=1e-9 * scale)


@pytest.mark.parametrize("approx", [CUBATURE, TAYLOR1])
def test_affine_exactness(approx):
    rng = np.random.default_rng(5)
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=2)
    mean = rng.normal(size=3)
    m = rng.normal(size=(3, 3))
    cov = m @ m.T + 0.3 * np.eye(3)
    g = GaussianMarginal(mean, cov)
    ef, cxf, vf = approx_moments(lambda x: a @ x + b, g, approx)
    assert np.allclose(ef, a @ mean + b, atol=1e-10)
    assert np.allclose(cxf, g.cov @ a.T, atol=1e-10)
    assert np.allclose(vf, a @ g.cov @ a.T, atol=1e-10)


def test_variants_agree_on_affine():
    rng = np.random.default_rng(6)
    a = rng.normal(size=(2, 2))
    b = rng.normal(size=2)
    g = GaussianMarginal(rng.normal(size=2), np.diag([0.5, 2.0]))
    out_c = approx_moments(lambda x: a @ x + b, g, CUBATURE)
    out_t = approx_moments(lambda x: a @ x + b, g, TAYLOR1)
    for mc, mt in zip(out_c, out_t):
        assert np.allclose(mc, mt, atol=1e-10)


def test_cubature_square_standard_normal():
    # Two-point rule at +/-1: f values both 1, so zero spread.
    g = GaussianMarginal([0.0], [[1.0]])
    ef, cxf, vf = approx_moments(lambda x: x ** 2, g, CUBATURE)
    assert ef[0] == pytest.approx(1.0)
    assert cxf[0, 0] == pytest.approx(0.0, abs=1e-14)
    assert vf[0, 0] == pytest.approx(0.0, abs=1e-14)


def test_taylor_sin_standard_normal():
    g = GaussianMarginal([0.0], [[1.0]])
    ef, cxf, vf = approx_moments(lambda x: np.sin(x), g, TAYLOR1)
    assert ef[0] == pytest.approx(0.0)
    assert cxf[0, 0] == pytest.approx(1.0, abs=1e-9)
    assert vf[0, 0] == pytest.approx(1.0, abs=1e-9)


def test_taylor_uses_analytic_jacobian_when_given():
    g = GaussianMarginal([0.5], [[2.0]])
    ef, cxf, vf = approx_moments(lambda x: np.sin(x), g, TAYLOR1,
                                 jacobian=lambda m: np.array([[np.cos(m[0])]]))
    j = np.cos(0.5)
    assert cxf[0, 0] == pytest.approx(2.0 * j)
    assert vf[0, 0] == pytest.approx(2.0 * j * j)


def test_residual_covariance_psd_for_cubature():
    rng = np.random.default_rng(9)
    for _ in range(20):
        mean = rng.normal(size=3)
        m = rng.normal(size=(3, 3))
        cov = m @ m.T + 0.2 * np.eye(3)
        g = GaussianMarginal(mean, cov)
        f = lambda x: np.array([np.sin(x[0]) + x[1] ** 2, x[2] ** 3 - x[0] * x[1]])
        ef, cxf, vf = approx_moments(f, g, CUBATURE)
        resid = vf - cxf.T @ np.linalg.solve(cov, cxf)
        assert np.linalg.eigvalsh(resid)[0] >= -1e-8


def test_non_finite_value_raises_numerical_fault():
    g = GaussianMarginal([0.0], [[1.0]])
    with pytest.raises(NumericalFault) as exc:
        approx_moments(lambda x: np.array([np.inf if x[0] > 0 else 0.0]), g, CUBATURE)
    assert exc.value.point is not None


def test_symmetrize_psd_identity_unchanged():
    assert np.array_equal(symmetrize_psd(np.eye(3)), np.eye(3))


def test_symmetrize_psd_formula():
    out = symmetrize_psd(np.array([[1.0, 2.0], [0.0, 1.0]]))
    assert np.allclose(out, [[1.0, 1.0], [1.0, 1.0]])


def test_symmetrize_psd_clips_small_negative_eigenvalue():
    out = symmetrize_psd(np.diag([1.0, -1e-14]))
    assert np.allclose(np.linalg.eigvalsh(out), [0.0, 1.0], atol=1e-15)
    assert np.linalg.eigvalsh(out)[0] >= 0.0


def test_jittered_cholesky_recovers_near_singular():
    cov = np.diag([1.0, 0.0])
    chol = jittered_cholesky(cov)
    assert np.allclose(chol @ chol.T, cov, atol=1e-11)


def test_jittered_cholesky_rejects_indefinite():
    with pytest.raises(DegenerateCovariance):
        jittered_cholesky(np.diag([1.0, -1.0]))


def test_jittered_cholesky_rejects_zero_matrix():
    with pytest.raises(DegenerateCovariance):
        jittered_cholesky(np.zeros((2, 2)))
