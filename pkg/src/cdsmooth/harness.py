"""Ground-truth simulation, metrics, Monte Carlo orchestration, CSV output.

Truth paths are Euler-Maruyama on a fine grid; measurements are sampled
at the nearest fine-grid state. Metrics follow the benchmark reporting
conventions: block RMSE at measurement nodes and the normalized
estimation error squared (NEES), whose Monte Carlo average is banded by
the exact distribution of a mean of iid chi-square variables (a Gamma).
"""
from __future__ import annotations

import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import gamma as gamma_dist

from .discretize import Mesh
from .errors import CdsmoothError, NumericalFault
from .gaussian import (
    CUBATURE,
    TAYLOR1,
    GaussianMarginal,
    MomentApproximator,
    jittered_cholesky,
)
from .iteration import IterationConfig, run_iterated
from .models import Benchmark, ModelSpec, benchmark

__all__ = [
    "SimPath",
    "TrialReport",
    "ExperimentConfig",
    "ExperimentResult",
    "euler_maruyama",
    "sample_measurements",
    "nees",
    "block_rmse",
    "chi2_mean_band",
    "run_experiment",
]


@dataclass(frozen=True)
class SimPath:
    """One simulated truth path on a uniform fine grid."""

    times: np.ndarray
    states: np.ndarray
    seed: object
    dt: float

    def state_at(self, t: float) -> np.ndarray:
        idx = int(round(t / self.dt))
        return self.states[idx]


def _generator(seed) -> np.random.Generator:
    """Counter-based generator; accepts ints and SeedSequences."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def _stream(seed: int, trial: int, purpose: int) -> np.random.SeedSequence:
    """Splittable per-(trial, purpose) stream; reproducible under any scheduling."""
    return np.random.SeedSequence(entropy=seed, spawn_key=(trial, purpose))


def euler_maruyama(model: ModelSpec, x0: np.ndarray, dt: float, t_end: float,
                   seed) -> SimPath:
    """Simulate dX = mu dt + sigma dW with the Euler-Maruyama scheme.

    Bit-for-bit reproducible for a fixed seed.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    n = int(round(t_end / dt))
    rng = _generator(seed)
    noise = rng.standard_normal((n, model.d_w))
    sqdt = math.sqrt(dt)
    times = dt * np.arange(n + 1)
    states = np.empty((n + 1, model.d))
    x = np.asarray(x0, dtype=float).copy()
    states[0] = x
    for i in range(n):
        t = times[i]
        x = x + np.asarray(model.drift(t, x)) * dt \
            + np.asarray(model.diffusion(t, x)) @ (sqdt * noise[i])
        if not np.all(np.isfinite(x)):
            raise NumericalFault(f"non-finite state at step {i + 1}", point=i + 1)
        states[i + 1] = x
    return SimPath(times=times, states=states, seed=seed, dt=dt)


def sample_measurements(path: SimPath, model: ModelSpec, mesh: Mesh,
                        seed) -> np.ndarray:
    """Noisy measurements at each mesh measurement time.

    The measurement function is evaluated at the nearest fine-grid state;
    angular channels are left unwrapped here (wrapping happens at
    innovation time).
    """
    rng = _generator(seed)
    k = mesh.measurement_times.size
    ys = np.empty((k, model.d_y))
    if np.any(model.R):
        chol_r = jittered_cholesky(model.R)
    else:
        chol_r = np.zeros_like(model.R)
    for j, t in enumerate(mesh.measurement_times):
        x = path.state_at(t)
        ys[j] = np.asarray(model.meas(t, x)) + chol_r @ rng.standard_normal(model.d_y)
    return ys


def nees(x_true: np.ndarray, g: GaussianMarginal) -> float:
    """Normalized estimation error squared (x - m)^T P^{-1} (x - m)."""
    from scipy.linalg import solve_triangular

    r = np.asarray(x_true, dtype=float) - g.mean
    chol = jittered_cholesky(g.cov)
    z = solve_triangular(chol, r, lower=True)
    return float(z @ z)


def block_rmse(truths: np.ndarray, estimates: np.ndarray,
               block: Sequence[int]) -> float:
    """Root of the time-and-trial mean squared block-norm error.

    ``truths``/``estimates`` have shape (..., n_times, d); the block is a
    set of state indices. Empty blocks return nan.
    """
    block = tuple(block)
    if not block:
        return float("nan")
    err = np.asarray(estimates, dtype=float) - np.asarray(truths, dtype=float)
    sq = np.sum(err[..., block] ** 2, axis=-1)
    return float(np.sqrt(np.mean(sq)))


def chi2_mean_band(dof: int, n_trials: int, level: float = 0.95) -> tuple[float, float]:
    """Two-sided band for the mean of ``n_trials`` iid chi-square_dof variables."""
    g = gamma_dist(a=n_trials * dof / 2.0, scale=2.0 / n_trials)
    tail = 0.5 * (1.0 - level)
    return float(g.ppf(tail)), float(g.ppf(1.0 - tail))


@dataclass
class TrialReport:
    """Per-iteration metrics for one Monte Carlo trial."""

    trial: int
    rmse_pos: np.ndarray
    rmse_vel: np.ndarray
    rmse_par: np.ndarray
    chi2_avg: np.ndarray
    nees: np.ndarray  # (iterations, n_measurements)
    wall_time: float


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat experiment configuration (mirrors the JSON config file)."""

    model: str = "linear"
    kind: int = 1
    smoother: str = "type3"
    approximator: str = "cubature"
    iterations: int = 4
    tol: float = 1e-6
    dt_integration: float | None = None
    substeps: int | None = None
    mc_runs: int = 10
    seed: int = 0
    sim_dt: float | None = None
    radar_x: float | None = None
    radar_y: float | None = None
    out_dir: str = "out"

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    bench: Benchmark
    mesh: Mesh
    reports: list[TrialReport]
    failures: list[tuple[int, str]]
    summary: np.ndarray  # rows (iteration, rmse_pos, rmse_vel, rmse_par, chi2_avg)
    files: dict = field(default_factory=dict)


def _resolve(config: ExperimentConfig) -> tuple[Benchmark, Mesh, MomentApproximator, IterationConfig]:
    bench = benchmark(config.model, radar_x=config.radar_x, radar_y=config.radar_y)
    substeps = config.substeps
    if substeps is None and config.dt_integration is not None:
        anchors = np.unique(np.concatenate([[0.0], bench.measurement_times]))
        interval = float(np.diff(anchors)[0])
        substeps = max(1, int(round(interval / config.dt_integration)))
    if substeps is None:
        substeps = bench.substeps
    if config.sim_dt is not None:
        bench = replace(bench, sim_dt=config.sim_dt)
    mesh = Mesh.build(bench.measurement_times, substeps)
    approx = {"cubature": CUBATURE, "taylor1": TAYLOR1}[config.approximator]
    kind = {1: "first", 2: "second"}[config.kind]
    itercfg = IterationConfig(max_iters=config.iterations, tol=config.tol,
                              smoother_type=config.smoother, kind=kind)
    return bench, mesh, approx, itercfg


def _run_trial(trial: int, bench: Benchmark, mesh: Mesh,
               approx: MomentApproximator, itercfg: IterationConfig,
               seed: int) -> TrialReport:
    model = bench.model
    t0 = time.perf_counter()
    if bench.draw_initial_state:
        rng0 = _generator(_stream(seed, trial, 0))
        x0 = model.prior.mean + jittered_cholesky(model.prior.cov) @ rng0.standard_normal(model.d)
    else:
        x0 = model.prior.mean
    t_end = float(mesh.nodes[-1])
    path = euler_maruyama(model, x0, bench.sim_dt, t_end, _stream(seed, trial, 1))
    ys = sample_measurements(path, model, mesh, _stream(seed, trial, 2))
    states = run_iterated(model, mesh, ys, itercfg, approx)

    truth = np.array([path.state_at(t) for t in mesh.measurement_times])
    n_iter = len(states)
    k = mesh.measurement_times.size
    rmse = {name: np.empty(n_iter) for name in ("pos", "vel", "par")}
    chi2 = np.empty((n_iter, k))
    for j, st in enumerate(states):
        est = st.smooth.means[mesh.measurement_nodes]
        for name in rmse:
            rmse[name][j] = block_rmse(truth, est, model.blocks.get(name, ()))
        for kk, node in enumerate(mesh.measurement_nodes):
            chi2[j, kk] = nees(truth[kk], st.smooth.marginal(int(node)))
    return TrialReport(
        trial=trial,
        rmse_pos=rmse["pos"],
        rmse_vel=rmse["vel"],
        rmse_par=rmse["par"],
        chi2_avg=chi2.mean(axis=1),
        nees=chi2,
        wall_time=time.perf_counter() - t0,
    )


def _trial_outcome(trial, bench, mesh, approx, itercfg, seed):
    """Pool-friendly wrapper: returns the report or the library error."""
    try:
        return _run_trial(trial, bench, mesh, approx, itercfg, seed)
    except CdsmoothError as exc:
        return exc


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _write_csvs(result: ExperimentResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    trials_path = out_dir / "trials.csv"
    with trials_path.open("w") as fh:
        fh.write("trial,iteration,rmse_pos,rmse_vel,rmse_par,chi2_avg\n")
        for rep in result.reports:
            for j in range(rep.chi2_avg.size):
                fh.write(",".join([
                    str(rep.trial), str(j),
                    _fmt(rep.rmse_pos[j]), _fmt(rep.rmse_vel[j]),
                    _fmt(rep.rmse_par[j]), _fmt(rep.chi2_avg[j]),
                ]) + "\n")

    mesh = result.mesh
    d = result.bench.model.d
    n_ok = len(result.reports)
    chi2_path = out_dir / "chi2_timeseries.csv"
    with chi2_path.open("w") as fh:
        fh.write("time,iteration,chi2_mean,band_lo,band_hi\n")
        if n_ok:
            lo, hi = chi2_mean_band(d, n_ok)
            n_iter = min(rep.nees.shape[0] for rep in result.reports)
            for j in range(n_iter):
                stacked = np.array([rep.nees[j] for rep in result.reports])
                mean_t = stacked.mean(axis=0)
                for t, m in zip(mesh.measurement_times, mean_t):
                    fh.write(",".join([
                        _fmt(t), str(j), _fmt(m), _fmt(lo), _fmt(hi)]) + "\n")

    summary_path = out_dir / "summary.csv"
    with summary_path.open("w") as fh:
        fh.write("iteration,rmse_pos,rmse_vel,rmse_par,chi2_avg\n")
        for row in result.summary:
            fh.write(",".join([str(int(row[0]))] + [_fmt(v) for v in row[1:]]) + "\n")

    result.files = {"trials": trials_path, "chi2_timeseries": chi2_path,
                    "summary": summary_path}


def _worker_count(mc_runs: int) -> int:
    env = os.environ.get("CDSMOOTH_WORKERS")
    if env is not None:
        return max(1, int(env))
    return max(1, min(os.cpu_count() or 1, mc_runs))


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Simulate, smooth, and report over Monte Carlo trials.

    Trials execute in a process pool (size from CDSMOOTH_WORKERS, default
    the CPU count); each trial owns its RNG streams, so results and CSV
    bytes are identical regardless of scheduling. Per-trial failures are
    recorded and excluded with a warning; the run aborts if more than 10%
    of trials fail.
    """
    bench, mesh, approx, itercfg = _resolve(config)
    reports: list[TrialReport] = []
    failures: list[tuple[int, str]] = []

    def record(trial: int, outcome):
        if isinstance(outcome, CdsmoothError):
            failures.append((trial, f"{type(outcome).__name__}: {outcome}"))
            warnings.warn(f"trial {trial} failed: {outcome}")
            if len(failures) > 0.10 * config.mc_runs:
                raise CdsmoothError(
                    f"{len(failures)} of {config.mc_runs} trials failed; aborting"
                ) from outcome
        else:
            reports.append(outcome)

    workers = _worker_count(config.mc_runs)
    if workers == 1:
        for trial in range(config.mc_runs):
            try:
                outcome = _run_trial(trial, bench, mesh, approx, itercfg, config.seed)
            except CdsmoothError as exc:
                outcome = exc
            record(trial, outcome)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_trial_outcome, trial, bench, mesh, approx, itercfg, config.seed)
                for trial in range(config.mc_runs)
            ]
            for trial, fut in enumerate(futures):
                record(trial, fut.result())
    reports.sort(key=lambda rep: rep.trial)

    if reports:
        n_iter = min(rep.chi2_avg.size for rep in reports)
        summary = np.empty((n_iter, 5))
        for j in range(n_iter):
            summary[j] = [
                j,
                float(np.mean([rep.rmse_pos[j] for rep in reports])),
                float(np.mean([rep.rmse_vel[j] for rep in reports])),
                float(np.mean([rep.rmse_par[j] for rep in reports])),
                float(np.mean([rep.chi2_avg[j] for rep in reports])),
            ]
    else:
        summary = np.empty((0, 5))

    result = ExperimentResult(config=config, bench=bench, mesh=mesh,
                              reports=reports, failures=failures, summary=summary)
    _write_csvs(result, Path(config.out_dir))
    return result
