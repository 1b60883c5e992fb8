"""Time meshes and zeroth-order-hold discretization of frozen affine SDEs.

On each substep the drift coefficients are frozen (left node) and the
exact discrete transition is computed: F from the matrix exponential,
the offset from an augmented exponential, and the process noise from the
matrix fraction decomposition.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from .errors import NumericalFault
from .gaussian import GaussianMarginal, symmetrize
from .linearize import LinearDrift

__all__ = ["Mesh", "DiscreteAffine", "zoh_discretize", "propagate_moments"]


@dataclass(frozen=True)
class Mesh:
    """Integration grid: measurement times plus N equal substeps per interval.

    ``nodes`` always starts at t=0 and contains every measurement time;
    ``measurement_nodes[k]`` is the node index of ``measurement_times[k]``.
    """

    measurement_times: np.ndarray
    substeps: int
    nodes: np.ndarray
    measurement_nodes: np.ndarray

    @classmethod
    def build(cls, measurement_times: Sequence[float], substeps: int,
              t_end: float | None = None) -> "Mesh":
        times = np.asarray(list(measurement_times), dtype=float)
        if times.size and np.any(np.diff(times) <= 0.0):
            raise ValueError("measurement times must be strictly increasing")
        if times.size and times[0] < 0.0:
            raise ValueError("measurement times must be nonnegative")
        if substeps < 1:
            raise ValueError("substeps must be >= 1")
        anchors = [0.0]
        for t in times:
            if t > anchors[-1]:
                anchors.append(float(t))
        if t_end is not None and t_end > anchors[-1]:
            anchors.append(float(t_end))
        nodes = [0.0]
        for left, right in zip(anchors[:-1], anchors[1:]):
            seg = np.linspace(left, right, substeps + 1)[1:]
            nodes.extend(seg.tolist())
        nodes = np.asarray(nodes)
        meas_idx = np.searchsorted(nodes, times)
        # Guard against roundoff in linspace endpoints.
        if times.size and not np.allclose(nodes[meas_idx], times, rtol=0.0, atol=1e-9):
            raise ValueError("measurement times do not align with mesh nodes")
        nodes[meas_idx] = times
        return cls(measurement_times=times, substeps=substeps, nodes=nodes,
                   measurement_nodes=meas_idx.astype(int))

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    def is_measurement_node(self) -> np.ndarray:
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.measurement_nodes] = True
        return mask


@dataclass(frozen=True)
class DiscreteAffine:
    """Discrete transition x' = F x + u + w, w ~ N(0, Qd)."""

    F: np.ndarray
    u: np.ndarray
    Qd: np.ndarray


def zoh_discretize(ld: LinearDrift, dt: float) -> DiscreteAffine:
    """Exact discretization of a frozen affine SDE over a step of length dt.

    One augmented-matrix exponential carries all three pieces: with
    C = [[A, b, Qbar], [0, 0, 0], [0, 0, -A^T]], the blocks of exp(C dt)
    give F = e^{A dt}, the held-input offset u, and the matrix fraction
    pair (M12, M22) whose quotient M12 M22^{-1} is the integral
    int_0^dt exp(A s) Qbar exp(A^T s) ds.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    a = ld.A
    d = a.shape[0]
    m = np.zeros((2 * d + 1, 2 * d + 1))
    m[:d, :d] = a
    m[:d, d] = ld.b
    m[:d, d + 1:] = ld.Qbar
    m[d + 1:, d + 1:] = -a.T
    e = expm(m * dt)
    f = e[:d, :d]
    u = e[:d, d]
    qd = symmetrize(np.linalg.solve(e[d + 1:, d + 1:].T, e[:d, d + 1:].T).T)
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(u)) and np.all(np.isfinite(qd))):
        raise NumericalFault("matrix exponential produced non-finite entries")
    return DiscreteAffine(F=f, u=u, Qd=qd)


def propagate_moments(g: GaussianMarginal, da: DiscreteAffine) -> GaussianMarginal:
    """Push a Gaussian marginal through one discrete affine transition."""
    mean = da.F @ g.mean + da.u
    cov = symmetrize(da.F @ g.cov @ da.F.T + da.Qd)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
        raise NumericalFault("non-finite moments after propagation")
    return GaussianMarginal(mean=mean, cov=cov)
