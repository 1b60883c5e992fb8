"""Model contract and the three benchmark systems.

A model is a drift mu(t,x), a diffusion sigma(t,x), a discrete
measurement h(t,x) with noise covariance R, and a Gaussian prior.
Shipped systems: a 4-dim linear-Gaussian test model, the reentry vehicle
tracked by a ground radar, and a 3D coordinated turn with state-dependent
singular diffusion tracked by a range/azimuth/elevation radar.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Optional

import numpy as np

from .errors import NumericalFault
from .gaussian import GaussianMarginal

__all__ = [
    "ModelSpec",
    "ReentryParams",
    "CoordTurnParams",
    "Benchmark",
    "affine_model",
    "linear_benchmark",
    "reentry_benchmark",
    "coordturn_benchmark",
    "benchmark",
    "model_card",
    "BENCHMARK_NAMES",
]


@dataclass(frozen=True)
class ModelSpec:
    """Continuous-discrete model: SDE drift/diffusion plus discrete measurements.

    ``angular_channels`` flags measurement components that live on the
    circle; their innovations are wrapped to (-pi, pi] during updates.
    ``blocks`` names state index groups used for block RMSE reporting.
    """

    name: str
    d: int
    d_w: int
    d_y: int
    drift: Callable[[float, np.ndarray], np.ndarray]
    diffusion: Callable[[float, np.ndarray], np.ndarray]
    meas: Callable[[float, np.ndarray], np.ndarray]
    R: np.ndarray
    prior: GaussianMarginal
    angular_channels: tuple[int, ...] = ()
    drift_jacobian: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    meas_jacobian: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    blocks: dict = field(default_factory=dict)
    # State-independent diffusions may be evaluated once at the mean; both
    # effective-diffusion kinds coincide exactly in that case.
    diffusion_constant: bool = False

    def validate(self) -> list[str]:
        """Dimension and definiteness checks at the prior mean.

        Returns a list of human-readable check lines; raises ValueError on
        the first failed check.
        """
        lines = []
        m = self.prior.mean
        if m.size != self.d:
            raise ValueError(f"prior dimension {m.size} != d={self.d}")
        lines.append(f"prior: dim {self.d} ok")
        mu = np.asarray(self.drift(0.0, m), dtype=float)
        if mu.shape != (self.d,):
            raise ValueError(f"drift shape {mu.shape} != ({self.d},)")
        if not np.all(np.isfinite(mu)):
            raise ValueError("drift non-finite at prior mean")
        lines.append("drift: shape/finite ok")
        sig = np.asarray(self.diffusion(0.0, m), dtype=float)
        if sig.shape != (self.d, self.d_w):
            raise ValueError(f"diffusion shape {sig.shape} != ({self.d}, {self.d_w})")
        if not np.all(np.isfinite(sig)):
            raise ValueError("diffusion non-finite at prior mean")
        lines.append("diffusion: shape/finite ok")
        h = np.asarray(self.meas(0.0, m), dtype=float)
        if h.shape != (self.d_y,):
            raise ValueError(f"measurement shape {h.shape} != ({self.d_y},)")
        if not np.all(np.isfinite(h)):
            raise ValueError("measurement non-finite at prior mean")
        lines.append("measurement: shape/finite ok")
        if self.R.shape != (self.d_y, self.d_y):
            raise ValueError("R shape mismatch")
        if np.linalg.eigvalsh(self.R)[0] <= 0.0:
            raise ValueError("R is not positive definite")
        lines.append("R: positive definite ok")
        if any(c < 0 or c >= self.d_y for c in self.angular_channels):
            raise ValueError("angular channel index out of range")
        lines.append(f"angular channels: {self.angular_channels or 'none'}")
        return lines


@dataclass(frozen=True)
class Benchmark:
    """A model plus its default experiment grid.

    ``draw_initial_state`` selects the truth protocol: most models draw
    X(0) from the prior (calibrated NEES); the coordinated turn starts
    every truth at the nominal state, leaving the prior covariance to
    describe estimator-side uncertainty (wide velocity-direction draws
    are untrackable through 6-second measurement gaps).
    """

    model: ModelSpec
    measurement_times: np.ndarray
    substeps: int
    sim_dt: float
    draw_initial_state: bool = True


# ---------------------------------------------------------------------------
# generic affine system


def _affine_drift(a, b, t, x):
    return a @ x + b


def _affine_drift_jac(a, t, x):
    return a


def _const_diffusion(s, t, x):
    return s


def _affine_meas(h, c, t, x):
    return h @ x + c


def _affine_meas_jac(h, t, x):
    return h


def affine_model(a, b, sigma, h, c, r, prior: GaussianMarginal,
                 name: str = "affine", blocks: dict | None = None) -> ModelSpec:
    """Affine SDE with constant diffusion and affine measurements.

    Statistical linearization is exact on these systems, which makes them
    the reference case for every smoother variant.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    h = np.atleast_2d(np.asarray(h, dtype=float))
    c = np.atleast_1d(np.asarray(c, dtype=float))
    r = np.atleast_2d(np.asarray(r, dtype=float))
    return ModelSpec(
        name=name,
        d=a.shape[0],
        d_w=sigma.shape[1],
        d_y=h.shape[0],
        drift=partial(_affine_drift, a, b),
        diffusion=partial(_const_diffusion, sigma),
        meas=partial(_affine_meas, h, c),
        R=r,
        prior=prior,
        drift_jacobian=partial(_affine_drift_jac, a),
        meas_jacobian=partial(_affine_meas_jac, h),
        blocks=blocks or {},
        diffusion_constant=True,
    )


def linear_benchmark() -> Benchmark:
    """4-dim pair of lightly coupled damped oscillators, position measured."""
    a = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [-1.0, -0.4, 0.1, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.1, 0.0, -1.0, -0.4],
    ])
    b = np.array([0.0, 0.1, 0.0, -0.1])
    sigma = np.array([
        [0.0, 0.0],
        [0.3, 0.0],
        [0.0, 0.0],
        [0.0, 0.3],
    ])
    h = np.array([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
    ])
    c = np.zeros(2)
    r = np.diag([0.04, 0.04])
    prior = GaussianMarginal(np.array([1.0, 0.0, -1.0, 0.0]), 0.25 * np.eye(4))
    model = affine_model(a, b, sigma, h, c, r, prior, name="linear",
                         blocks={"pos": (0, 2), "vel": (1, 3), "par": ()})
    times = np.arange(1, 21) * 0.1
    return Benchmark(model=model, measurement_times=times, substeps=20, sim_dt=1e-3)


# ---------------------------------------------------------------------------
# reentry vehicle


@dataclass(frozen=True)
class ReentryParams:
    """Reentry constants; distances in km, time in s."""

    beta0: float = -0.59783
    h0: float = 13.406
    gm0: float = 3.9860e5
    r0: float = 6374.0
    sigma_vel: float = math.sqrt(2.4064) * 10.0 ** (-2.5)
    sigma_par: float = 1e-3
    r_range: float = 1e-3
    r_bearing: float = 1.7e-3
    radar_x: float = 6374.0
    radar_y: float = 0.0
    prior_mean: tuple = (6500.4, 349.14, -1.8093, -6.7967, 0.6932)
    prior_var: tuple = (1e-6, 1e-6, 1e-6, 1e-6, 1.0)


def _reentry_drift(p: ReentryParams, t, u):
    x, y, vx, vy, psi = u
    r2 = x * x + y * y
    if r2 == 0.0:
        raise NumericalFault("reentry drift undefined at the origin", point=u)
    r = math.sqrt(r2)
    g = -p.gm0 / (r2 * r)
    speed = math.hypot(vx, vy)
    # beta0 < 0 keeps the velocity feedback dissipative (drag).
    drag = p.beta0 * math.exp(psi + (p.r0 - r) / p.h0) * speed
    return np.array([vx, vy, g * x + drag * vx, g * y + drag * vy, 0.0])


def _reentry_meas(p: ReentryParams, t, u):
    dx = u[0] - p.radar_x
    dy = u[1] - p.radar_y
    rng = math.hypot(dx, dy)
    if rng == 0.0:
        raise NumericalFault("reentry measurement undefined at zero range", point=u)
    return np.array([rng, math.atan2(dy, dx)])


def reentry_benchmark(params: ReentryParams | None = None) -> Benchmark:
    """Reentry vehicle, radar range/bearing once per second on [0, 200]."""
    p = params or ReentryParams()
    sigma = np.zeros((5, 3))
    sigma[2, 0] = p.sigma_vel
    sigma[3, 1] = p.sigma_vel
    sigma[4, 2] = p.sigma_par
    prior = GaussianMarginal(np.asarray(p.prior_mean), np.diag(p.prior_var))
    model = ModelSpec(
        name="reentry",
        d=5,
        d_w=3,
        d_y=2,
        drift=partial(_reentry_drift, p),
        diffusion=partial(_const_diffusion, sigma),
        meas=partial(_reentry_meas, p),
        R=np.diag([p.r_range, p.r_bearing]),
        prior=prior,
        angular_channels=(1,),
        blocks={"pos": (0, 1), "vel": (2, 3), "par": (4,)},
        diffusion_constant=True,
    )
    times = np.arange(1, 201, dtype=float)
    return Benchmark(model=model, measurement_times=times, substeps=100, sim_dt=1e-3)


# ---------------------------------------------------------------------------
# radar-tracked coordinated turn


@dataclass(frozen=True)
class CoordTurnParams:
    """Coordinated turn constants; distances in m, angles in rad, time in s."""

    sigma_along: float = math.sqrt(100.0)
    sigma_horiz: float = math.sqrt(0.2)
    sigma_vert: float = math.sqrt(0.2)
    sigma_turn: float = 7e-3
    sigma_range: float = 50.0
    sigma_azimuth: float = 0.1 * math.pi / 180.0
    sigma_elevation: float = 0.1 * math.pi / 180.0
    dt_meas: float = 6.0
    n_meas: int = 26
    prior_mean: tuple = (1000.0, 0.0, 2650.0, 200.0, 0.0, 150.0, 6.0 * math.pi / 180.0)


def _coordturn_prior(p: CoordTurnParams) -> GaussianMarginal:
    var = 100.0 ** 2 * np.array([1.0] * 6 + [math.pi / (180.0 * 100.0 ** 2)])
    return GaussianMarginal(np.asarray(p.prior_mean), np.diag(var))


def _coordturn_drift(t, u):
    vx, vy, vz, psi = u[3], u[4], u[5], u[6]
    return np.array([vx, vy, vz, -psi * vy, psi * vx, 0.0, 0.0])


def _coordturn_diffusion(p: CoordTurnParams, t, u):
    vx, vy, vz = u[3], u[4], u[5]
    # xi is the speed: the three noise columns then form an orthonormal
    # frame (along-track, horizontal cross-track, vertical cross-track).
    xi = math.sqrt(vx * vx + vy * vy + vz * vz)
    eta = math.hypot(vx, vy)
    if xi == 0.0 or eta == 0.0:
        raise NumericalFault("coordinated-turn diffusion undefined at zero (planar) speed", point=u)
    s = np.zeros((7, 4))
    s[3] = (vx / xi, vy / eta, vx * vz / (xi * eta), 0.0)
    s[4] = (vy / xi, -vx / eta, vy * vz / (xi * eta), 0.0)
    s[5] = (vz / xi, 0.0, -eta / xi, 0.0)
    s[6, 3] = 1.0
    s[:, 0] *= p.sigma_along
    s[:, 1] *= p.sigma_horiz
    s[:, 2] *= p.sigma_vert
    s[:, 3] *= p.sigma_turn
    return s


def _coordturn_meas(t, u):
    x, y, z = u[0], u[1], u[2]
    rng = math.sqrt(x * x + y * y + z * z)
    if rng == 0.0:
        raise NumericalFault("radar measurement undefined at zero range", point=u)
    return np.array([rng, math.atan2(y, x), math.atan2(z, math.hypot(x, y))])


def coordturn_benchmark(params: CoordTurnParams | None = None) -> Benchmark:
    """3D coordinated turn with singular state-dependent diffusion."""
    p = params or CoordTurnParams()
    model = ModelSpec(
        name="coordturn",
        d=7,
        d_w=4,
        d_y=3,
        drift=_coordturn_drift,
        diffusion=partial(_coordturn_diffusion, p),
        meas=_coordturn_meas,
        R=np.diag([p.sigma_range ** 2, p.sigma_azimuth ** 2, p.sigma_elevation ** 2]),
        prior=_coordturn_prior(p),
        angular_channels=(1, 2),
        blocks={"pos": (0, 1, 2), "vel": (3, 4, 5), "par": (6,)},
    )
    times = p.dt_meas * np.arange(p.n_meas, dtype=float)
    return Benchmark(model=model, measurement_times=times, substeps=120, sim_dt=5e-3,
                     draw_initial_state=False)


BENCHMARK_NAMES = ("linear", "reentry", "coordturn")


def benchmark(name: str, radar_x: float | None = None,
              radar_y: float | None = None) -> Benchmark:
    """Look up a benchmark by name; radar overrides apply to reentry only."""
    if name == "linear":
        return linear_benchmark()
    if name == "reentry":
        p = ReentryParams()
        if radar_x is not None or radar_y is not None:
            p = ReentryParams(radar_x=radar_x if radar_x is not None else p.radar_x,
                              radar_y=radar_y if radar_y is not None else p.radar_y)
        return reentry_benchmark(p)
    if name == "coordturn":
        return coordturn_benchmark()
    raise ValueError(f"unknown model {name!r}; choose from {BENCHMARK_NAMES}")


def model_card(name: str) -> str:
    """Markdown card listing every constant of a benchmark model."""
    if name == "linear":
        bm = linear_benchmark()
        return "\n".join([
            "# linear",
            "",
            "4-dim affine SDE (two lightly coupled damped oscillators), positions",
            "measured directly. Exact case for every smoother variant.",
            "",
            "| constant | value |",
            "|---|---|",
            "| measurement noise R | diag(0.04, 0.04) |",
            "| prior mean | [1, 0, -1, 0] |",
            "| prior covariance | 0.25 I4 |",
            f"| measurement times | 0.1 .. 2.0 step 0.1 ({bm.measurement_times.size} total) |",
            f"| substeps per interval | {bm.substeps} |",
            f"| truth step size | {bm.sim_dt} |",
        ])
    if name == "reentry":
        p = ReentryParams()
        bm = reentry_benchmark(p)
        return "\n".join([
            "# reentry",
            "",
            "Vehicle reentering the atmosphere; state [x, y, vx, vy, psi] with",
            "gravity toward the origin and exponential-atmosphere drag scaled by",
            "exp(psi). A radar on the surface measures range and bearing once per",
            "second. Units: km, s.",
            "",
            "| constant | value |",
            "|---|---|",
            f"| beta0 (drag coefficient) | {p.beta0} |",
            f"| H0 (atmosphere scale height) | {p.h0} |",
            f"| Gm0 (gravitational parameter) | {p.gm0} |",
            f"| R0 (planet radius) | {p.r0} |",
            f"| velocity diffusion | {p.sigma_vel!r} (variance 2.4064e-5) |",
            f"| parameter diffusion | {p.sigma_par} |",
            f"| R | diag({p.r_range}, {p.r_bearing}) |",
            f"| radar position | ({p.radar_x}, {p.radar_y}) |",
            f"| prior mean | {list(p.prior_mean)} |",
            f"| prior variances | {list(p.prior_var)} |",
            f"| measurement times | 1 .. 200 step 1 ({bm.measurement_times.size} total) |",
            f"| substeps per interval | {bm.substeps} (integration step 0.01) |",
            f"| truth step size | {bm.sim_dt} |",
            "",
            "Angular channel: bearing (index 1).",
        ])
    if name == "coordturn":
        p = CoordTurnParams()
        bm = coordturn_benchmark(p)
        return "\n".join([
            "# coordturn",
            "",
            "3D coordinated turn; state [x, y, z, vx, vy, vz, psi] with turn rate",
            "psi coupling the horizontal velocities. The diffusion is singular",
            "(rank 4, no position noise) and state-dependent. A radar at the",
            "origin measures range, azimuth, elevation. Units: m, rad, s.",
            "",
            "| constant | value |",
            "|---|---|",
            f"| along-track noise | {p.sigma_along} |",
            f"| horizontal cross-track noise | {p.sigma_horiz!r} |",
            f"| vertical cross-track noise | {p.sigma_vert!r} |",
            f"| turn-rate noise | {p.sigma_turn} |",
            f"| range noise std | {p.sigma_range} |",
            f"| azimuth/elevation noise std | {p.sigma_azimuth!r} |",
            f"| measurement interval | {p.dt_meas} |",
            f"| measurement count | {p.n_meas} (starting at t=0) |",
            f"| prior mean | {list(p.prior_mean)} |",
            "| prior covariance | 100^2 diag(1,1,1,1,1,1, pi/(180*100^2)) |",
            f"| substeps per interval | {bm.substeps} (integration step 0.05) |",
            f"| truth step size | {bm.sim_dt} |",
            "",
            "Angular channels: azimuth, elevation (indices 1, 2).",
        ])
    raise ValueError(f"unknown model {name!r}")
