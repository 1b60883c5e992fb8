"""Gaussian marginals and moment approximators for nonlinear functions.

The moment approximators compute the expectation, input/output
cross-covariance, and output covariance of ``f(X)`` for ``X`` Gaussian,
either with the 2d-point spherical-radial cubature rule or a first-order
Taylor expansion around the mean.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import get_lapack_funcs

from .errors import DegenerateCovariance, NumericalFault

_POTRF, _POTRS = get_lapack_funcs(("potrf", "potrs"), (np.empty((1, 1)),))

__all__ = [
    "GaussianMarginal",
    "MomentApproximator",
    "CUBATURE",
    "TAYLOR1",
    "symmetrize",
    "symmetrize_psd",
    "jittered_cholesky",
    "chol_solve",
    "cubature_points",
    "approx_moments",
]

# Jitter policy for nearly singular covariances: start at 1e-12*tr/d and
# double up to 6 attempts before giving up.
_JITTER_SCALE = 1e-12
_JITTER_ATTEMPTS = 6

_FD_STEP = 1e-6


def symmetrize(m: np.ndarray) -> np.ndarray:
    """Return (M + M^T)/2."""
    return 0.5 * (m + m.T)


def symmetrize_psd(m: np.ndarray) -> np.ndarray:
    """Symmetrize a square matrix and clip negative eigenvalues to zero."""
    s = symmetrize(np.asarray(m, dtype=float))
    w = np.linalg.eigvalsh(s)
    if w[0] >= 0.0:
        return s
    w, v = np.linalg.eigh(s)
    return symmetrize((v * np.clip(w, 0.0, None)) @ v.T)


def jittered_cholesky(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a covariance, jittering the diagonal on failure.

    Raises
    ------
    DegenerateCovariance
        If the factorization keeps failing after the maximum jitter.
    """
    c, info = _POTRF(cov, lower=1, clean=1, overwrite_a=0)
    if info == 0:
        return c
    if info < 0:
        raise ValueError(f"illegal Cholesky input (argument {-info})")
    d = cov.shape[0]
    jitter = _JITTER_SCALE * float(np.trace(cov)) / d
    eye = np.eye(d)
    for _ in range(_JITTER_ATTEMPTS):
        c, info = _POTRF(cov + jitter * eye, lower=1, clean=1, overwrite_a=1)
        if info == 0:
            return c
        jitter *= 2.0
    raise DegenerateCovariance(
        f"covariance not positive definite after {_JITTER_ATTEMPTS} jitter attempts"
    )


def chol_solve(chol_lower: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve (L L^T) X = rhs given the lower factor L."""
    rhs = np.asarray(rhs, dtype=float)
    b = rhs.reshape(-1, 1) if rhs.ndim == 1 else rhs
    x, info = _POTRS(chol_lower, b, lower=1)
    if info != 0:
        raise ValueError(f"Cholesky solve failed (info={info})")
    return x.reshape(rhs.shape)


@dataclass(frozen=True)
class GaussianMarginal:
    """Mean and symmetric PSD covariance of the state at one time instant.

    The covariance is symmetrized on construction; positive
    semidefiniteness is maintained by the jitter policy wherever a
    factorization is required.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        if cov.shape != (mean.size, mean.size):
            raise ValueError(
                f"covariance shape {cov.shape} does not match state dimension {mean.size}"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", symmetrize(cov))

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class MomentApproximator:
    """Gaussian moment approximation scheme.

    variant ``"cubature"`` uses the 2d-point equal-weight spherical-radial
    rule; ``"taylor1"`` linearizes at the mean using an analytic Jacobian
    when one is supplied and central finite differences otherwise.
    """

    variant: str

    def __post_init__(self):
        if self.variant not in ("cubature", "taylor1"):
            raise ValueError(f"unknown approximator variant {self.variant!r}")


CUBATURE = MomentApproximator("cubature")
TAYLOR1 = MomentApproximator("taylor1")


def _points_from_chol(mean: np.ndarray, chol: np.ndarray) -> np.ndarray:
    d = mean.size
    scaled = np.sqrt(d) * chol.T
    return np.concatenate([mean + scaled, mean - scaled], axis=0)


def cubature_points(g: GaussianMarginal) -> tuple[np.ndarray, np.ndarray]:
    """Spherical-radial cubature points and weights for a Gaussian marginal.

    Returns
    -------
    points : ndarray, shape (2d, d)
        ``mean +/- sqrt(d) * L[:, j]`` with L the (jittered) lower Cholesky
        factor of the covariance.
    weights : ndarray, shape (2d,)
        Equal weights 1/(2d).
    """
    d = g.dim
    if not np.any(g.cov):
        # Zero spread: the factor is exactly zero, all points sit at the mean.
        chol = np.zeros((d, d))
    else:
        chol = jittered_cholesky(g.cov)
    points = _points_from_chol(g.mean, chol)
    weights = np.full(2 * d, 1.0 / (2 * d))
    return points, weights


def _eval_stack(f: Callable[[np.ndarray], np.ndarray], points: np.ndarray) -> np.ndarray:
    """Evaluate f at each point, stack, and fault on non-finite values."""
    fx = np.array([f(p) for p in points], dtype=float)
    if fx.ndim == 1:
        fx = fx[:, None]
    if not np.all(np.isfinite(fx)):
        bad = int(np.nonzero(~np.all(np.isfinite(fx.reshape(fx.shape[0], -1)), axis=1))[0][0])
        raise NumericalFault("non-finite function value at sigma point", point=points[bad])
    return fx


def _cubature_stats(mean: np.ndarray, points: np.ndarray, weights: np.ndarray,
                    fx: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ef = weights @ fx
    dx = points - mean
    df = fx - ef
    cxf = (weights[:, None] * dx).T @ df
    vf = symmetrize((weights[:, None] * df).T @ df)
    return ef, cxf, vf


def _central_jacobian(f: Callable[[np.ndarray], np.ndarray], m: np.ndarray) -> np.ndarray:
    steps = _FD_STEP * (1.0 + np.abs(m))
    cols = []
    for i in range(m.size):
        e = np.zeros_like(m)
        e[i] = steps[i]
        cols.append((np.atleast_1d(f(m + e)) - np.atleast_1d(f(m - e))) / (2.0 * steps[i]))
    return np.column_stack(cols)


def approx_moments(
    f: Callable[[np.ndarray], np.ndarray],
    g: GaussianMarginal,
    approx: MomentApproximator,
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gaussian moments of a nonlinear function.

    Returns
    -------
    ef : ndarray, shape (df,)
        Expectation of ``f(X)``.
    cxf : ndarray, shape (d, df)
        Cross-covariance ``Cov[X, f(X)]``, arranged so the induced
        regression slope is ``cxf.T @ inv(cov)``.
    vf : ndarray, shape (df, df)
        Covariance of ``f(X)``, symmetrized.

    Raises
    ------
    NumericalFault
        If ``f`` returns a non-finite value at any evaluation point.
    """
    if approx.variant == "cubature":
        points, weights = cubature_points(g)
        fx = _eval_stack(f, points)
        return _cubature_stats(g.mean, points, weights, fx)

    m = g.mean
    ef = np.atleast_1d(np.asarray(f(m), dtype=float))
    if not np.all(np.isfinite(ef)):
        raise NumericalFault("non-finite function value at the mean", point=m)
    jac = jacobian(m) if jacobian is not None else _central_jacobian(f, m)
    jac = np.atleast_2d(np.asarray(jac, dtype=float))
    if not np.all(np.isfinite(jac)):
        raise NumericalFault("non-finite Jacobian at the mean", point=m)
    cxf = g.cov @ jac.T
    vf = symmetrize(jac @ g.cov @ jac.T)
    return ef, cxf, vf
