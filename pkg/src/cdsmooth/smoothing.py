"""Backward/forward Gaussian smoothing passes.

Four routes to the smoothing moments, all driven by a completed filter
trajectory:

* ``smooth_linear`` integrates the linear smoothing ODEs backward with
  fixed-step RK4, given one affine drift per substep.
* ``smooth_type1star`` re-linearizes drift and diffusion at the current
  smoothing marginal at every RK4 stage (posterior linearization on the
  fly).
* ``smooth_type2`` re-derives the affine statistics from the model at the
  stored filter moments of each substep and integrates the same backward
  ODEs; it reproduces ``smooth_linear`` driven by the filter's own
  linearizations to roundoff.
* ``smooth_type3`` solves only forward-time gain equations and applies
  discrete corrections backward, substep by substep.

Filter moments needed at RK4 interior stages are linearly interpolated
between the enclosing nodes. Inverses of filter covariances are never
formed; every product with an inverse is a Cholesky solve.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .discretize import zoh_discretize
from .errors import DegenerateCovariance
from .filtering import FilterTrajectory
from .gaussian import (
    GaussianMarginal,
    MomentApproximator,
    approx_moments,
    chol_solve,
    jittered_cholesky,
    symmetrize,
)
from .linearize import LinearDrift, _diffusion_qbar, slr_drift

__all__ = [
    "SmoothTrajectory",
    "GainSegment",
    "smooth_linear",
    "smooth_type1star",
    "smooth_type2",
    "smooth_type3",
]


@dataclass
class SmoothTrajectory:
    """Smoothing moments on every mesh node."""

    mesh: object
    means: np.ndarray
    covs: np.ndarray
    provenance: str
    kind: str | None = None
    iteration: int | None = None

    def marginal(self, i: int) -> GaussianMarginal:
        return GaussianMarginal(self.means[i], self.covs[i])


@dataclass(frozen=True)
class GainSegment:
    """Forward gain data for one substep: H(t) solves dH/dt = H A^T."""

    H_end: np.ndarray
    G: np.ndarray


def _stage_filter_moments(ft: FilterTrajectory, i: int, s: float):
    """Filter moments at fraction s of substep i (0 = left node, 1 = right).

    The left end uses updated moments, the right end the predicted ones,
    so the interpolation follows the continuous filter path across
    measurement jumps.
    """
    if s == 0.0:
        return ft.means_filt[i], ft.covs_filt[i]
    if s == 1.0:
        return ft.means_pred[i + 1], ft.covs_pred[i + 1]
    xbar = (1.0 - s) * ft.means_filt[i] + s * ft.means_pred[i + 1]
    sig = (1.0 - s) * ft.covs_filt[i] + s * ft.covs_pred[i + 1]
    return xbar, sig


def _rk4_backward(ft: FilterTrajectory, terminal_mean, terminal_cov, stage_fn):
    """Integrate backward over all substeps with fixed-step RK4.

    ``stage_fn(i, s, t, x, omega)`` returns (dx/dt, dOmega/dt) at fraction
    s of substep i.
    """
    nodes = ft.mesh.nodes
    n = nodes.size
    d = terminal_mean.size
    means = np.empty((n, d))
    covs = np.empty((n, d, d))
    means[n - 1] = terminal_mean
    covs[n - 1] = terminal_cov
    x = terminal_mean.copy()
    om = terminal_cov.copy()
    for i in range(n - 2, -1, -1):
        delta = nodes[i + 1] - nodes[i]
        h = -delta
        t_right = nodes[i + 1]
        t_mid = 0.5 * (nodes[i] + nodes[i + 1])
        t_left = nodes[i]
        k1x, k1o = stage_fn(i, 1.0, t_right, x, om)
        k2x, k2o = stage_fn(i, 0.5, t_mid, x + 0.5 * h * k1x, om + 0.5 * h * k1o)
        k3x, k3o = stage_fn(i, 0.5, t_mid, x + 0.5 * h * k2x, om + 0.5 * h * k2o)
        k4x, k4o = stage_fn(i, 0.0, t_left, x + h * k3x, om + h * k3o)
        x = x + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        om = symmetrize(om + (h / 6.0) * (k1o + 2.0 * k2o + 2.0 * k3o + k4o))
        means[i] = x
        covs[i] = om
    return means, covs


def _stage_chol(sig_stages: np.ndarray) -> np.ndarray:
    """Batched lower Cholesky factors of the per-stage filter covariances."""
    try:
        return np.linalg.cholesky(sig_stages)
    except np.linalg.LinAlgError:
        out = np.empty_like(sig_stages)
        for idx in np.ndindex(sig_stages.shape[:-2]):
            try:
                out[idx] = jittered_cholesky(sig_stages[idx])
            except DegenerateCovariance as exc:
                raise DegenerateCovariance(
                    f"filter covariance singular at stage {idx}") from exc
        return out


def smooth_linear(ft: FilterTrajectory, drifts: Sequence[LinearDrift]) -> SmoothTrajectory:
    """Linear smoothing ODEs driven by the filter moments.

    Terminal condition: the smoothing and filtering moments coincide at
    the final node. The per-stage coefficients depend only on the filter
    trajectory and the frozen drifts, so they are assembled in one
    vectorized pass before the backward sweep.
    """
    n = ft.mesh.n_nodes
    if len(drifts) != n - 1:
        raise ValueError("need one drift per substep")
    # Stage order matches the backward RK4 sweep: right node, midpoint, left node.
    xbar = np.stack([
        ft.means_pred[1:],
        0.5 * (ft.means_filt[:-1] + ft.means_pred[1:]),
        ft.means_filt[:-1],
    ], axis=1)
    sig = np.stack([
        ft.covs_pred[1:],
        0.5 * (ft.covs_filt[:-1] + ft.covs_pred[1:]),
        ft.covs_filt[:-1],
    ], axis=1)
    a_all = np.stack([ld.A for ld in drifts])
    b_all = np.stack([ld.b for ld in drifts])
    q_all = np.stack([ld.Qbar for ld in drifts])
    chol = _stage_chol(sig)
    # (Sigma^{-1} Qbar)^T through the triangular factors, batched.
    half = np.linalg.solve(chol, q_all[:, None, :, :])
    q_sinv = np.linalg.solve(np.swapaxes(chol, -1, -2), half).swapaxes(-1, -2)
    m_all = a_all[:, None, :, :] + q_sinv
    c_all = b_all[:, None, :] - np.einsum("isab,isb->isa", q_sinv, xbar)

    def stage(i, s, t, x, om):
        k = 0 if s == 1.0 else (1 if s == 0.5 else 2)
        m = m_all[i, k]
        dx = m @ x + c_all[i, k]
        mo = m @ om
        dom = mo + mo.T - q_all[i]
        return dx, dom

    means, covs = _rk4_backward(ft, ft.means_filt[n - 1], ft.covs_filt[n - 1], stage)
    return SmoothTrajectory(mesh=ft.mesh, means=means, covs=covs, provenance="linear")


def smooth_type1star(ft: FilterTrajectory, model, kind: str,
                     approx: MomentApproximator) -> SmoothTrajectory:
    """Backward pass with posterior linearization on the fly.

    Drift expectation, cross-covariance, and effective diffusion are
    recomputed at every RK4 stage from the current smoothing marginal.
    """
    jac = getattr(model, "drift_jacobian", None)

    def stage(i, s, t, x, om):
        g = GaussianMarginal(x, symmetrize(om))
        jac_t = (lambda z: jac(t, z)) if jac is not None else None
        e_mu, cx_mu, _ = approx_moments(lambda z: model.drift(t, z), g, approx, jacobian=jac_t)
        qbar = _diffusion_qbar(model, g, t, kind, approx)
        xbar, sig = _stage_filter_moments(ft, i, s)
        try:
            chol = jittered_cholesky(sig)
        except DegenerateCovariance as exc:
            raise DegenerateCovariance(
                f"filter covariance singular inside substep {i}") from exc
        q_sinv = chol_solve(chol, qbar).T
        dx = e_mu + q_sinv @ (x - xbar)
        qso = q_sinv @ om
        dom = qso + qso.T - qbar + cx_mu.T + cx_mu
        return dx, dom

    n = ft.mesh.n_nodes
    means, covs = _rk4_backward(ft, ft.means_filt[n - 1], ft.covs_filt[n - 1], stage)
    return SmoothTrajectory(mesh=ft.mesh, means=means, covs=covs,
                            provenance="typeIstar", kind=kind)


def smooth_type2(ft: FilterTrajectory, model, kind: str,
                 approx: MomentApproximator) -> SmoothTrajectory:
    """Backward pass with linearization at the stored filter moments.

    The statistics are re-derived from the model at the left-node updated
    moments of each substep and canonicalized to affine form there, which
    makes the pass agree to roundoff with the linear smoother driven by
    the filter's stored linearizations.
    """
    drifts = [
        slr_drift(model, ft.marginal_filt(i), ft.mesh.nodes[i], kind, approx)
        for i in range(ft.mesh.n_nodes - 1)
    ]
    out = smooth_linear(ft, drifts)
    return SmoothTrajectory(mesh=ft.mesh, means=out.means, covs=out.covs,
                            provenance="typeII", kind=kind)


def smooth_type3(ft: FilterTrajectory, drifts: Sequence[LinearDrift]) -> SmoothTrajectory:
    """Forward gain equations with discrete backward corrections.

    Per substep, H solves dH/dt = H A^T from H = Sigma(left); with frozen
    coefficients the end value is Sigma(left) F^T, the gain is
    G = H Sigma(right-)^{-1}, and the usual discrete correction follows.
    Applying the same machinery on every substep yields full-mesh
    smoothing moments.
    """
    if len(drifts) != ft.mesh.n_nodes - 1:
        raise ValueError("need one drift per substep")
    nodes = ft.mesh.nodes
    n = nodes.size
    d = ft.means_filt.shape[1]
    means = np.empty((n, d))
    covs = np.empty((n, d, d))
    means[n - 1] = ft.means_filt[n - 1]
    covs[n - 1] = ft.covs_filt[n - 1]
    for i in range(n - 2, -1, -1):
        delta = nodes[i + 1] - nodes[i]
        da = zoh_discretize(drifts[i], delta)
        h_end = ft.covs_filt[i] @ da.F.T
        try:
            chol = jittered_cholesky(ft.covs_pred[i + 1])
        except DegenerateCovariance as exc:
            raise DegenerateCovariance(
                f"predicted covariance singular at node {i + 1}") from exc
        gain = chol_solve(chol, h_end.T).T
        seg = GainSegment(H_end=h_end, G=gain)
        means[i] = ft.means_filt[i] + seg.G @ (means[i + 1] - ft.means_pred[i + 1])
        covs[i] = symmetrize(
            ft.covs_filt[i] + seg.G @ (covs[i + 1] - ft.covs_pred[i + 1]) @ seg.G.T)
    return SmoothTrajectory(mesh=ft.mesh, means=means, covs=covs, provenance="typeIII")
