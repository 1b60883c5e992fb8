"""Continuous-discrete Gaussian filter.

Between measurements the moments are propagated substep by substep with
exact zeroth-order-hold transitions of the frozen affine drift; the drift
is either statistically linearized on the fly at the current moments or
supplied externally (posterior-linearization iterations). Updates are
discrete Kalman steps against an affine measurement linearization.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .discretize import Mesh, zoh_discretize
from .errors import DegenerateInnovation, NumericalFault
from .gaussian import (
    GaussianMarginal,
    MomentApproximator,
    chol_solve,
    symmetrize,
)
from .linearize import LinearDrift, LinearMeasurement, slr_drift, slr_measurement

__all__ = [
    "KalmanUpdateReport",
    "FilterTrajectory",
    "wrap_angle",
    "kalman_update",
    "predict_interval",
    "run_filter",
]


def wrap_angle(v: np.ndarray | float) -> np.ndarray | float:
    """Wrap angles to (-pi, pi]."""
    w = -((-np.asarray(v) + math.pi) % (2.0 * math.pi) - math.pi)
    return w


@dataclass(frozen=True)
class KalmanUpdateReport:
    """Innovation covariance, gain, innovation, and log-likelihood term."""

    S: np.ndarray
    K: np.ndarray
    innovation: np.ndarray
    loglik_term: float


@dataclass
class FilterTrajectory:
    """Predicted and updated moments on every mesh node.

    At non-measurement nodes the predicted and updated moments coincide.
    ``drifts[i]`` is the affine drift used on the substep from node i to
    node i+1; ``meas_lins[k]`` the measurement linearization applied at
    measurement node k.
    """

    mesh: Mesh
    means_pred: np.ndarray
    covs_pred: np.ndarray
    means_filt: np.ndarray
    covs_filt: np.ndarray
    drifts: list[LinearDrift]
    meas_lins: list[LinearMeasurement]
    updates: list[KalmanUpdateReport]

    def marginal_filt(self, i: int) -> GaussianMarginal:
        return GaussianMarginal(self.means_filt[i], self.covs_filt[i])

    def marginal_pred(self, i: int) -> GaussianMarginal:
        return GaussianMarginal(self.means_pred[i], self.covs_pred[i])


def kalman_update(
    g_pred: GaussianMarginal,
    lm: LinearMeasurement,
    y: np.ndarray,
    angular_channels: Sequence[int] = (),
) -> tuple[GaussianMarginal, KalmanUpdateReport]:
    """Discrete Kalman update against an affine measurement linearization.

    Innovation components listed in ``angular_channels`` are wrapped to
    (-pi, pi] before the correction is applied.
    """
    sigma = g_pred.cov
    s = symmetrize(lm.C @ sigma @ lm.C.T + lm.Delta)
    d_y = s.shape[0]
    try:
        chol = np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        s = s + (1e-12 * np.trace(s) / d_y) * np.eye(d_y)
        try:
            chol = np.linalg.cholesky(s)
        except np.linalg.LinAlgError as exc:
            raise DegenerateInnovation("innovation covariance not positive definite") from exc
    gain = chol_solve(chol, lm.C @ sigma).T
    innov = np.asarray(y, dtype=float) - lm.C @ g_pred.mean - lm.d
    for ch in angular_channels:
        innov[ch] = wrap_angle(innov[ch])
    mean = g_pred.mean + gain @ innov
    cov = symmetrize(sigma - gain @ s @ gain.T)
    alpha = chol_solve(chol, innov)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    loglik = -0.5 * (float(innov @ alpha) + logdet + d_y * math.log(2.0 * math.pi))
    report = KalmanUpdateReport(S=s, K=gain, innovation=innov, loglik_term=loglik)
    return GaussianMarginal(mean, cov), report


def predict_interval(
    g: GaussianMarginal,
    model,
    mesh: Mesh,
    start: int,
    stop: int,
    kind: str,
    approx: MomentApproximator,
    drifts: Optional[Sequence[LinearDrift]] = None,
) -> tuple[np.ndarray, np.ndarray, list[LinearDrift]]:
    """Propagate moments over mesh nodes ``start..stop`` (inclusive).

    ``drifts`` supplies one affine drift per substep (iteration reruns);
    when omitted the drift is statistically linearized at the left-node
    moments of every substep. Returns the moments at every node of the
    interval together with the drifts actually used.
    """
    n = stop - start
    means = np.empty((n + 1, g.dim))
    covs = np.empty((n + 1, g.dim, g.dim))
    means[0] = g.mean
    covs[0] = g.cov
    used: list[LinearDrift] = []
    mean, cov = g.mean, g.cov
    for j in range(n):
        t_left = mesh.nodes[start + j]
        dt = mesh.nodes[start + j + 1] - t_left
        if drifts is None:
            ld = slr_drift(model, GaussianMarginal(mean, cov), t_left, kind, approx)
        else:
            ld = drifts[j]
        da = zoh_discretize(ld, dt)
        mean = da.F @ mean + da.u
        cov = symmetrize(da.F @ cov @ da.F.T + da.Qd)
        means[j + 1] = mean
        covs[j + 1] = cov
        used.append(ld)
    if not (np.all(np.isfinite(means)) and np.all(np.isfinite(covs))):
        raise NumericalFault("non-finite moments during interval prediction")
    return means, covs, used


def run_filter(
    model,
    mesh: Mesh,
    measurements: np.ndarray,
    kind: str,
    approx: MomentApproximator,
    drifts: Optional[Sequence[LinearDrift]] = None,
    meas_lins: Optional[Sequence[LinearMeasurement]] = None,
) -> FilterTrajectory:
    """Run the continuous-discrete Gaussian filter over the whole mesh.

    Parameters
    ----------
    measurements : ndarray, shape (K, d_y)
        One row per mesh measurement time.
    drifts, meas_lins
        Externally supplied linearizations (one drift per substep, one
        measurement linearization per measurement node). When omitted the
        filter linearizes on the fly: drifts at the left-node updated
        moments, measurements at the predicted moments.
    """
    measurements = np.atleast_2d(np.asarray(measurements, dtype=float))
    k_total = mesh.measurement_times.size
    if k_total == 0:
        measurements = measurements.reshape(0, model.d_y)
    if measurements.shape[0] != k_total:
        raise ValueError(
            f"got {measurements.shape[0]} measurements for {k_total} measurement times"
        )
    if drifts is not None and len(drifts) != mesh.n_nodes - 1:
        raise ValueError("need one provided drift per substep")
    if meas_lins is not None and len(meas_lins) != k_total:
        raise ValueError("need one provided measurement linearization per measurement")

    n = mesh.n_nodes
    d = model.d
    means_pred = np.empty((n, d))
    covs_pred = np.empty((n, d, d))
    means_filt = np.empty((n, d))
    covs_filt = np.empty((n, d, d))
    all_drifts: list[LinearDrift] = []
    lins: list[LinearMeasurement] = []
    updates: list[KalmanUpdateReport] = []

    meas_at_node = {int(node): k for k, node in enumerate(mesh.measurement_nodes)}

    g = model.prior
    means_pred[0] = g.mean
    covs_pred[0] = g.cov
    if 0 in meas_at_node:
        k = meas_at_node[0]
        lm = meas_lins[k] if meas_lins is not None else slr_measurement(
            model, g, mesh.measurement_times[k], approx)
        g, rep = kalman_update(g, lm, measurements[k], model.angular_channels)
        lins.append(lm)
        updates.append(rep)
    means_filt[0] = g.mean
    covs_filt[0] = g.cov

    anchor_nodes = [0] + [int(i) for i in mesh.measurement_nodes if i > 0]
    if anchor_nodes[-1] != n - 1:
        anchor_nodes.append(n - 1)

    for left, right in zip(anchor_nodes[:-1], anchor_nodes[1:]):
        seg = drifts[left:right] if drifts is not None else None
        means, covs, used = predict_interval(g, model, mesh, left, right, kind, approx, seg)
        means_pred[left + 1:right + 1] = means[1:]
        covs_pred[left + 1:right + 1] = covs[1:]
        means_filt[left + 1:right] = means[1:-1]
        covs_filt[left + 1:right] = covs[1:-1]
        all_drifts.extend(used)
        g = GaussianMarginal(means[-1], covs[-1])
        if right in meas_at_node:
            k = meas_at_node[right]
            lm = meas_lins[k] if meas_lins is not None else slr_measurement(
                model, g, mesh.measurement_times[k], approx)
            g, rep = kalman_update(g, lm, measurements[k], model.angular_channels)
            lins.append(lm)
            updates.append(rep)
        means_filt[right] = g.mean
        covs_filt[right] = g.cov

    return FilterTrajectory(
        mesh=mesh,
        means_pred=means_pred,
        covs_pred=covs_pred,
        means_filt=means_filt,
        covs_filt=covs_filt,
        drifts=all_drifts,
        meas_lins=lins,
        updates=updates,
    )
