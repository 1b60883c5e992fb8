"""Statistical linear regression of SDE drift/diffusion and of measurements.

Given a Gaussian marginal N(m, P), the best affine fit of a function f is
A = Cov[f,X] P^{-1}, b = E[f] - A m.  For the diffusion two conventions
for the effective process noise are supported: the first kind keeps
Qbar = E[sigma sigma^T], the second kind keeps Qbar = E[sigma] E[sigma]^T.
Measurement linearization additionally carries the regression residual in
an inflated noise covariance Delta = V[h] + R - C P C^T.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCovariance, NumericalFault
from .gaussian import (
    GaussianMarginal,
    MomentApproximator,
    _central_jacobian,
    _cubature_stats,
    _eval_stack,
    _points_from_chol,
    approx_moments,
    chol_solve,
    cubature_points,
    jittered_cholesky,
    symmetrize,
)

__all__ = [
    "LinearDrift",
    "LinearMeasurement",
    "slr_drift",
    "slr_measurement",
    "trace_gap",
]

KIND_FIRST = "first"
KIND_SECOND = "second"


@dataclass(frozen=True)
class LinearDrift:
    """Affine drift A x + b with effective diffusion Qbar on one mesh node."""

    A: np.ndarray
    b: np.ndarray
    Qbar: np.ndarray
    kind: str


@dataclass(frozen=True)
class LinearMeasurement:
    """Affine measurement C x + d with residual-inflated noise Delta."""

    C: np.ndarray
    d: np.ndarray
    Delta: np.ndarray


def _check_kind(kind: str) -> None:
    if kind not in (KIND_FIRST, KIND_SECOND):
        raise ValueError(f"kind must be 'first' or 'second', got {kind!r}")


def _qbar_from_points(model, t: float, kind: str, points: np.ndarray,
                      weights: np.ndarray) -> np.ndarray:
    if kind == KIND_FIRST:
        acc = None
        for w, p in zip(weights, points):
            s = np.atleast_2d(np.asarray(model.diffusion(t, p), dtype=float))
            term = w * (s @ s.T)
            acc = term if acc is None else acc + term
        return symmetrize(acc)
    acc = None
    for w, p in zip(weights, points):
        s = np.atleast_2d(np.asarray(model.diffusion(t, p), dtype=float))
        acc = w * s if acc is None else acc + w * s
    return symmetrize(acc @ acc.T)


def _diffusion_qbar(model, g: GaussianMarginal, t: float, kind: str,
                    approx: MomentApproximator) -> np.ndarray:
    """Effective diffusion E[sigma sigma^T] (first) or E[sigma]E[sigma]^T (second).

    For state-independent diffusions and for the Taylor variant, sigma is
    evaluated once at the mean; both kinds coincide there.
    """
    if approx.variant == "taylor1" or getattr(model, "diffusion_constant", False):
        s = np.atleast_2d(np.asarray(model.diffusion(t, g.mean), dtype=float))
        return symmetrize(s @ s.T)
    points, weights = cubature_points(g)
    return _qbar_from_points(model, t, kind, points, weights)


def slr_drift(model, g: GaussianMarginal, t: float, kind: str,
              approx: MomentApproximator) -> LinearDrift:
    """Statistically linearize the drift and diffusion at a Gaussian marginal.

    The slope is computed through Cholesky solves against the marginal
    covariance; the effective diffusion is stored as Qbar directly (the
    smoothing equations never need its square root).
    """
    _check_kind(kind)
    if approx.variant == "cubature":
        chol = jittered_cholesky(g.cov)
        points = _points_from_chol(g.mean, chol)
        weights = np.full(points.shape[0], 1.0 / points.shape[0])
        fx = _eval_stack(lambda x: model.drift(t, x), points)
        ef, cxf, _ = _cubature_stats(g.mean, points, weights, fx)
        a = chol_solve(chol, cxf).T
        b = ef - a @ g.mean
        if getattr(model, "diffusion_constant", False):
            s = np.atleast_2d(np.asarray(model.diffusion(t, g.mean), dtype=float))
            qbar = symmetrize(s @ s.T)
        else:
            qbar = _qbar_from_points(model, t, kind, points, weights)
        return LinearDrift(A=a, b=b, Qbar=qbar, kind=kind)
    # Taylor slope: Cxf = cov J^T, so the induced Cxf^T cov^{-1} is exactly
    # the Jacobian at the mean; no covariance inversion is needed.
    jac = getattr(model, "drift_jacobian", None)
    m = g.mean
    if jac is not None:
        a = np.atleast_2d(np.asarray(jac(t, m), dtype=float))
    else:
        a = _central_jacobian(lambda x: model.drift(t, x), m)
    ef = np.atleast_1d(np.asarray(model.drift(t, m), dtype=float))
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(ef))):
        raise NumericalFault("non-finite drift linearization at the mean", point=m)
    b = ef - a @ m
    qbar = _diffusion_qbar(model, g, t, kind, approx)
    return LinearDrift(A=a, b=b, Qbar=qbar, kind=kind)


def _wrap_to(values: np.ndarray, ref: float) -> np.ndarray:
    return ref + (values - ref + math.pi) % (2.0 * math.pi) - math.pi


def _unwrap_angular(fx: np.ndarray, weights: np.ndarray, channels) -> np.ndarray:
    """Map angular point values into one chart of the circle.

    The chart is centered at the weighted circular mean, so the usual
    linear statistics stay meaningful across the atan2 branch cut. Tight
    spreads are untouched; spreads approaching the full circle keep a
    large scatter and thereby deweight the channel in the update.
    """
    if not channels:
        return fx
    fx = fx.copy()
    for ch in channels:
        theta = fx[:, ch]
        center = math.atan2(float(weights @ np.sin(theta)),
                            float(weights @ np.cos(theta)))
        fx[:, ch] = _wrap_to(theta, center)
    return fx


def slr_measurement(model, g: GaussianMarginal, t_k: float,
                    approx: MomentApproximator) -> LinearMeasurement:
    """Statistically linearize the measurement function at a Gaussian marginal.

    Delta = V[h] + R - C P C^T, symmetrized and eigenvalue-floored at
    1e-9 times the smallest eigenvalue of R. Angular channels are handled
    in a local chart around their circular mean.
    """
    if not np.any(g.cov):
        raise DegenerateCovariance("measurement linearization requires an invertible covariance")
    channels = getattr(model, "angular_channels", ())
    if approx.variant == "cubature":
        chol = jittered_cholesky(g.cov)
        points = _points_from_chol(g.mean, chol)
        weights = np.full(points.shape[0], 1.0 / points.shape[0])
        fx = _eval_stack(lambda x: model.meas(t_k, x), points)
        fx = _unwrap_angular(fx, weights, channels)
        eh, cxh, vh = _cubature_stats(g.mean, points, weights, fx)
    else:
        # Taylor differences are infinitesimal; only the branch cut in the
        # finite-difference numerator needs care.
        ref = np.atleast_1d(np.asarray(model.meas(t_k, g.mean), dtype=float))

        def chart(x):
            h = np.atleast_1d(np.asarray(model.meas(t_k, x), dtype=float)).copy()
            for ch in channels:
                h[ch] = _wrap_to(h[ch], ref[ch])
            return h

        jac = getattr(model, "meas_jacobian", None)
        jac_t = (lambda x: jac(t_k, x)) if jac is not None else None
        eh, cxh, vh = approx_moments(chart, g, approx, jacobian=jac_t)
        chol = jittered_cholesky(g.cov)
    c = chol_solve(chol, cxh).T
    d = eh - c @ g.mean
    delta = symmetrize(vh + model.R - c @ g.cov @ c.T)
    floor = 1e-9 * float(np.linalg.eigvalsh(model.R)[0])
    w = np.linalg.eigvalsh(delta)
    if w[0] < floor:
        w, v = np.linalg.eigh(delta)
        delta = symmetrize((v * np.clip(w, floor, None)) @ v.T)
    return LinearMeasurement(C=c, d=d, Delta=delta)


def trace_gap(model, g: GaussianMarginal, t: float,
              approx: MomentApproximator) -> float:
    """tr(Qbar_first) - tr(Qbar_second); nonnegative by Jensen's inequality."""
    q1 = _diffusion_qbar(model, g, t, KIND_FIRST, approx)
    q2 = _diffusion_qbar(model, g, t, KIND_SECOND, approx)
    return float(np.trace(q1) - np.trace(q2))
