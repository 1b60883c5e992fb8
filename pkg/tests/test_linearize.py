"""Tests for statistical linear regression of drift, diffusion, measurements."""
import numpy as np
import pytest

from cdsmooth.errors import DegenerateCovariance
from cdsmooth.gaussian import CUBATURE, TAYLOR1, GaussianMarginal
from cdsmooth.linearize import slr_drift, slr_measurement, trace_gap
from cdsmooth.models import ModelSpec, affine_model, coordturn_benchmark


def scalar_model(drift, diffusion, meas=None, r=0.09, diffusion_constant=False):
    return ModelSpec(
        name="scalar", d=1, d_w=1, d_y=1,
        drift=lambda t, x: np.atleast_1d(drift(x[0])),
        diffusion=lambda t, x: np.atleast_2d(diffusion(x[0])),
        meas=(lambda t, x: np.atleast_1d(meas(x[0]))) if meas else (lambda t, x: x.copy()),
        R=np.atleast_2d(r),
        prior=GaussianMarginal([0.0], [[1.0]]),
        diffusion_constant=diffusion_constant,
    )


@pytest.mark.parametrize("kind", ["first", "second"])
@pytest.mark.parametrize("approx", [CUBATURE, TAYLOR1])
def test_affine_drift_recovered_exactly(kind, approx):
    rng = np.random.default_rng(0)
    f = rng.normal(size=(3, 3))
    c = rng.normal(size=3)
    sig = rng.normal(size=(3, 2))
    model = affine_model(f, c, sig, np.eye(3), np.zeros(3), 0.1 * np.eye(3),
                         GaussianMarginal(rng.normal(size=3), np.diag([0.4, 1.0, 2.0])))
    g = GaussianMarginal(rng.normal(size=3), np.diag([1.0, 0.5, 2.0]))
    ld = slr_drift(model, g, 0.0, kind, approx)
    assert np.allclose(ld.A, f, atol=1e-10)
    assert np.allclose(ld.b, c, atol=1e-10)
    assert np.allclose(ld.Qbar, sig @ sig.T, atol=1e-12)


def test_cubic_drift_two_point_rule():
    # Two-point rule at +/-1 sees the cubic as the identity.
    model = scalar_model(lambda x: x ** 3, lambda x: 1.0)
    ld = slr_drift(model, GaussianMarginal([0.0], [[1.0]]), 0.0, "first", CUBATURE)
    assert ld.A[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert ld.b[0] == pytest.approx(0.0, abs=1e-12)


def test_cubic_drift_exact_moments_via_sampling_oracle():
    # Dense-sample least squares approximates the exact-moment regression,
    # whose slope is E[x^4] = 3 for a standard normal.
    rng = np.random.default_rng(123)
    x = rng.standard_normal(200_000)
    a_mat = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(a_mat, x ** 3, rcond=None)
    assert coef[0] == pytest.approx(3.0, abs=0.05)
    assert coef[1] == pytest.approx(0.0, abs=0.05)


def test_slr_matches_sampled_least_squares_argmin():
    # Gently nonlinear drift: the two-point rule is exact through cubics,
    # so the sampled regression argmin must agree with slr_drift.
    rng = np.random.default_rng(42)
    m, p = 0.3, 0.8
    fun = lambda x: x + 0.05 * x ** 2
    model = scalar_model(lambda x: fun(x), lambda x: 1.0)
    ld = slr_drift(model, GaussianMarginal([m], [[p]]), 0.0, "first", CUBATURE)

    x = m + np.sqrt(p) * rng.standard_normal(100_000)
    y = fun(x)
    # Sufficient statistics make the dense grid evaluation O(1) per point.
    sx, sxx = x.mean(), (x * x).mean()
    sy, sxy = y.mean(), (x * y).mean()

    def objective(a, b):
        return (np.mean(y * y) - 2 * a * sxy - 2 * b * sy + a * a * sxx
                + 2 * a * b * sx + b * b)

    a_ls = (sxy - sx * sy) / (sxx - sx * sx)
    b_ls = sy - a_ls * sx
    grid_a = a_ls + np.linspace(-5e-3, 5e-3, 101)
    grid_b = b_ls + np.linspace(-5e-3, 5e-3, 101)
    vals = np.array([[objective(a, b) for b in grid_b] for a in grid_a])
    ia, ib = np.unravel_index(np.argmin(vals), vals.shape)
    assert ld.A[0, 0] == pytest.approx(grid_a[ia], abs=1e-3)
    assert ld.b[0] == pytest.approx(grid_b[ib], abs=1e-3)


def test_state_dependent_diffusion_kinds():
    model = scalar_model(lambda x: -x, lambda x: x)
    g = GaussianMarginal([0.0], [[1.0]])
    q1 = slr_drift(model, g, 0.0, "first", CUBATURE).Qbar
    q2 = slr_drift(model, g, 0.0, "second", CUBATURE).Qbar
    assert q1[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert q2[0, 0] == pytest.approx(0.0, abs=1e-14)


def test_taylor_variant_kinds_coincide():
    model = scalar_model(lambda x: -x, lambda x: 1.0 + x ** 2)
    g = GaussianMarginal([0.3], [[2.0]])
    q1 = slr_drift(model, g, 0.0, "first", TAYLOR1).Qbar
    q2 = slr_drift(model, g, 0.0, "second", TAYLOR1).Qbar
    assert np.array_equal(q1, q2)


def test_slr_drift_rejects_zero_covariance():
    model = scalar_model(lambda x: -x, lambda x: 1.0)
    with pytest.raises(DegenerateCovariance):
        slr_drift(model, GaussianMarginal([0.0], [[0.0]]), 0.0, "first", CUBATURE)


def test_slr_drift_rejects_unknown_kind():
    model = scalar_model(lambda x: -x, lambda x: 1.0)
    with pytest.raises(ValueError):
        slr_drift(model, GaussianMarginal([0.0], [[1.0]]), 0.0, "third", CUBATURE)


@pytest.mark.parametrize("approx", [CUBATURE, TAYLOR1])
def test_affine_measurement_recovered_exactly(approx):
    rng = np.random.default_rng(1)
    h = rng.normal(size=(2, 3))
    c = rng.normal(size=2)
    r = np.diag([0.1, 0.2])
    model = affine_model(np.zeros((3, 3)), np.zeros(3), np.eye(3), h, c, r,
                         GaussianMarginal(np.zeros(3), np.eye(3)))
    g = GaussianMarginal(rng.normal(size=3), np.diag([0.5, 1.0, 1.5]))
    lm = slr_measurement(model, g, 0.0, approx)
    assert np.allclose(lm.C, h, atol=1e-9)
    assert np.allclose(lm.d, c, atol=1e-9)
    assert np.allclose(lm.Delta, r, atol=1e-9)


def test_square_measurement_two_point_rule():
    model = scalar_model(lambda x: -x, lambda x: 1.0, meas=lambda x: x ** 2, r=0.25)
    lm = slr_measurement(model, GaussianMarginal([0.0], [[1.0]]), 0.0, CUBATURE)
    assert lm.C[0, 0] == pytest.approx(0.0, abs=1e-13)
    assert lm.d[0] == pytest.approx(1.0)
    assert lm.Delta[0, 0] == pytest.approx(0.25, abs=1e-12)


def test_measurement_rejects_zero_covariance():
    model = scalar_model(lambda x: -x, lambda x: 1.0)
    with pytest.raises(DegenerateCovariance):
        slr_measurement(model, GaussianMarginal([0.0], [[0.0]]), 0.0, CUBATURE)


def test_delta_dominates_r():
    # Residual inflation keeps Delta >= R in the PSD order (small slack).
    bench = coordturn_benchmark()
    rng = np.random.default_rng(2)
    prior = bench.model.prior
    for _ in range(10):
        mean = prior.mean + np.linalg.cholesky(prior.cov) @ rng.standard_normal(7)
        g = GaussianMarginal(mean, 0.5 * prior.cov)
        lm = slr_measurement(bench.model, g, 0.0, CUBATURE)
        assert np.linalg.eigvalsh(lm.Delta - bench.model.R)[0] >= -1e-8


def test_trace_gap_zero_for_constant_diffusion():
    model = scalar_model(lambda x: -x, lambda x: 2.0, diffusion_constant=True)
    g = GaussianMarginal([0.1], [[0.7]])
    assert trace_gap(model, g, 0.0, CUBATURE) == pytest.approx(0.0, abs=1e-14)


def test_trace_gap_linear_diffusion_standard_normal():
    model = scalar_model(lambda x: -x, lambda x: x)
    g = GaussianMarginal([0.0], [[1.0]])
    assert trace_gap(model, g, 0.0, CUBATURE) == pytest.approx(1.0, abs=1e-12)


def test_trace_gap_vanishes_with_covariance():
    model = scalar_model(lambda x: -x, lambda x: x)
    p = 1e-10
    gap = trace_gap(model, GaussianMarginal([1.0], [[p]]), 0.0, CUBATURE)
    assert 0.0 <= gap <= 1.01 * p + 1e-15


def test_trace_gap_nonnegative_on_coordturn():
    bench = coordturn_benchmark()
    model = bench.model
    prior = bench.model.prior
    rng = np.random.default_rng(7)
    chol = np.linalg.cholesky(prior.cov)
    for _ in range(200):
        mean = prior.mean + chol @ rng.standard_normal(7)
        scale = rng.uniform(0.05, 1.5)
        g = GaussianMarginal(mean, scale * prior.cov)
        assert trace_gap(model, g, 0.0, CUBATURE) >= -1e-10
