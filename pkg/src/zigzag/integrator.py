"""Trajectory propagation: Cash-Karp drift interleaved with chirality flips.

Each accepted step advances all positions with chiralities frozen, then every
particle flips independently with probability r_{-chi} * dt, the rate taken at
the start of the step. Step sizes are bounded by the absolute error tolerance
and by rate * dt <= rate_dt_cap.

Random streams: trajectory i of a batch with master seed S uses
PCG64(SeedSequence(S, spawn_key=(0, i))), one uniform per particle per
accepted step in particle order. Records therefore do not depend on worker
count or scheduling.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .guidance import NodeProximity, ParticleConfig
from .states import SpinorState

log = logging.getLogger(__name__)

TRAJECTORY_STREAM = 0
SAMPLER_STREAM = 1


class StepFailure(RuntimeError):
    pass


def trajectory_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(master_seed, spawn_key=(TRAJECTORY_STREAM, index))))


@dataclass(frozen=True)
class IntegratorSettings:
    abs_tolerance: float = 1e-10
    rate_dt_cap: float = 2.0 ** -7
    max_dt: float = 50.0
    min_dt: float = 1e-9
    initial_dt: float = 1e-2
    rng_seed: int = 0
    T_final: float = 1e5
    stride: int = 1
    output_times: tuple[float, ...] = ()

    def __post_init__(self):
        if not 0 < self.min_dt <= self.initial_dt <= self.max_dt:
            raise ValueError("need 0 < min_dt <= initial_dt <= max_dt")
        if self.abs_tolerance <= 0 or self.rate_dt_cap <= 0:
            raise ValueError("tolerances must be positive")
        if self.T_final <= 0:
            raise ValueError("T_final must be positive")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    def stops(self) -> np.ndarray:
        return np.array(sorted(t for t in set(self.output_times) if 0 < t < self.T_final), dtype=float)


@dataclass(frozen=True)
class JumpEvent:
    time: float
    particle: int
    position: np.ndarray
    chirality_before: int
    spin: np.ndarray

    @property
    def chirality_after(self) -> int:
        return -self.chirality_before


@dataclass
class TrajectoryRecord:
    """Sampled time series plus every chirality flip of one trajectory.

    positions (n, N, 3), chiralities (n, N), spins (n, N, 3), densities (n,).
    Jumps are stored column-wise (jump_t, jump_k, jump_x, jump_chi_before,
    jump_s); `jumps` gives them as JumpEvent objects.
    """

    times: np.ndarray
    positions: np.ndarray
    chiralities: np.ndarray
    spins: np.ndarray
    densities: np.ndarray
    jump_t: np.ndarray
    jump_k: np.ndarray
    jump_x: np.ndarray
    jump_chi_before: np.ndarray
    jump_s: np.ndarray
    settings: IntegratorSettings
    seed: int | None = None
    index: int | None = None
    n_steps: int = 0
    failure: str | None = None
    meta: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.failure is None

    @property
    def n_particles(self) -> int:
        return self.positions.shape[1]

    @property
    def final_position(self) -> np.ndarray:
        return self.positions[-1]

    @property
    def jumps(self) -> list[JumpEvent]:
        return [JumpEvent(float(t), int(k), x.copy(), int(c), s.copy())
                for t, k, x, c, s in zip(self.jump_t, self.jump_k, self.jump_x, self.jump_chi_before, self.jump_s)]

    def sample_at(self, t: float) -> int:
        """Row index recorded exactly at time t."""
        hit = np.flatnonzero(self.times == t)
        if hit.size == 0:
            raise KeyError(f"time {t} was not recorded (add it to output_times)")
        return int(hit[0])

    def uniforms(self) -> np.ndarray:
        """Regenerate the per-step uniforms consumed by this trajectory, shape (n_steps, N)."""
        if self.seed is None or self.index is None:
            raise ValueError("record has no seed/index to regenerate its stream")
        return trajectory_rng(self.seed, self.index).random((self.n_steps, self.n_particles))


_STATUS = {
    _kernels.STEP_FAILURE: "step size fell below min_dt",
    _kernels.NODE_AT_START: "start configuration is at a node",
    _kernels.RATE_TOO_HIGH: "jump rate forces dt below min_dt",
}


def _record_from(out, settings, seed, index) -> TrajectoryRecord:
    status, n_steps, times, xs, chis, spins, rhos, jt, jk, jx, jchi, js = out
    return TrajectoryRecord(times, xs, chis, spins, rhos, jt, jk, jx, jchi, js, settings,
                            seed=seed, index=index, n_steps=int(n_steps),
                            failure=_STATUS.get(int(status)))


_NO_FORCED = (np.empty(0), np.empty(0, dtype=np.int64))


def _initial(config: ParticleConfig):
    return np.ascontiguousarray(config.positions, dtype=float), np.ascontiguousarray(config.chiralities, dtype=np.int64)


def run_trajectory(state: SpinorState, initial: ParticleConfig, settings: IntegratorSettings,
                   *, index: int = 0, rng: np.random.Generator | None = None) -> TrajectoryRecord:
    """Integrate from `initial` (t = 0) to settings.T_final.

    The stream is trajectory_rng(settings.rng_seed, index) unless an explicit
    generator is passed. Failures are reported in record.failure.
    """
    if initial.t != 0.0:
        raise ValueError("trajectories start at t = 0")
    x0, chi0 = _initial(initial)
    seed = settings.rng_seed if rng is None else None
    if rng is None:
        rng = trajectory_rng(settings.rng_seed, index)
    coef, params, kets = state.packed
    out = _kernels.run(coef, params, kets, x0, chi0, 0.0, float(settings.T_final), settings.abs_tolerance,
                       settings.rate_dt_cap, settings.max_dt, settings.min_dt, settings.initial_dt,
                       settings.stride, settings.stops(), *_NO_FORCED, True, rng)
    return _record_from(out, settings, seed, index)


def run_forced(state: SpinorState, initial: ParticleConfig, settings: IntegratorSettings,
               flip_times, flip_particles) -> TrajectoryRecord:
    """Deterministic integration with chirality flips at prescribed times.

    Steps land exactly on each flip time; the listed particles flip there.
    Used to re-integrate a recorded jump sequence at a different tolerance.
    """
    x0, chi0 = _initial(initial)
    order = np.argsort(flip_times, kind="stable")
    ft = np.ascontiguousarray(np.asarray(flip_times, dtype=float)[order])
    fk = np.ascontiguousarray(np.asarray(flip_particles, dtype=np.int64)[order])
    coef, params, kets = state.packed
    out = _kernels.run(coef, params, kets, x0, chi0, float(initial.t), float(settings.T_final),
                       settings.abs_tolerance, settings.rate_dt_cap, settings.max_dt, settings.min_dt,
                       settings.initial_dt, settings.stride, settings.stops(), ft, fk, False,
                       np.random.default_rng(0))
    return _record_from(out, settings, None, None)


@dataclass
class ReplayResult:
    times: np.ndarray
    positions: np.ndarray
    chiralities: np.ndarray
    spins: np.ndarray
    densities: np.ndarray
    n_flips: np.ndarray
    failure: str | None = None


def replay_trajectory(state: SpinorState, initial: ParticleConfig, times, uniforms) -> ReplayResult:
    """Re-run on a fixed time grid, deciding flips with the given uniforms.

    With the state, grid and uniforms of a stride-1 record this reproduces the
    record exactly; with a different state it answers "what would this
    particle have done with the same randomness".
    """
    x0, chi0 = _initial(initial)
    times = np.ascontiguousarray(times, dtype=float)
    uniforms = np.ascontiguousarray(np.asarray(uniforms, dtype=float).reshape(len(times) - 1, -1))
    if uniforms.shape[1] != state.n_particles:
        raise ValueError("need one uniform column per particle")
    coef, params, kets = state.packed
    status, xs, chis, spins, rhos, n_flips = _kernels.replay(coef, params, kets, x0, chi0, times, uniforms)
    return ReplayResult(times, xs, chis, spins, rhos, n_flips, _STATUS.get(int(status)))


@dataclass
class StepResult:
    config: ParticleConfig
    dt: float
    dt_next: float
    jumps: list[JumpEvent]


def step(state: SpinorState, config: ParticleConfig, settings: IntegratorSettings,
         rng: np.random.Generator, dt: float | None = None) -> StepResult:
    """One accepted step from `config`, proposing `dt` (default settings.initial_dt).

    Raises StepFailure if no acceptable step exists above min_dt and
    NodeProximity if the start point is at a node.
    """
    if config.t >= settings.T_final:
        raise ValueError("configuration is already at T_final")
    n = config.n_particles
    coef, params, kets = state.packed
    x = np.ascontiguousarray(config.positions, dtype=float)
    chi = np.ascontiguousarray(config.chiralities, dtype=np.int64)
    dim = state.dim
    psi = np.empty(dim, dtype=complex)
    grad = np.empty((n, 3, dim), dtype=complex)
    work = _kernels.make_work(params)
    ks = np.empty((6, n, 3))
    rp, rm, sp = np.empty(n), np.empty(n), np.empty((n, 3))
    rho = _kernels.guidance(coef, params, kets, x, chi, config.t, psi, grad, work, ks[0], rp, rm, sp)
    if rho < 0:
        raise NodeProximity(f"start of step at a node (t={config.t})")
    flip_rate = np.empty(n)
    _kernels._flip_rates(chi, rp, rm, flip_rate)
    x5 = np.empty((n, 3))
    status, t_new, h, dt_next, _ = _kernels.take_step(
        coef, params, kets, x, config.t, chi, flip_rate, settings.initial_dt if dt is None else dt,
        float(settings.T_final), settings.abs_tolerance, settings.rate_dt_cap, settings.max_dt,
        settings.min_dt, ks, np.empty((n, 3)), x5, psi, grad, work, np.empty(n), np.empty(n), np.empty((n, 3)))
    if status != _kernels.OK:
        raise StepFailure(_STATUS[int(status)])
    new_chi = chi.copy()
    flipped = []
    for k in range(n):
        if rng.random() < flip_rate[k] * h:
            new_chi[k] = -chi[k]
            flipped.append(k)
    new = ParticleConfig(x5, new_chi, t_new)
    jumps = []
    if flipped:
        rho = _kernels.guidance(coef, params, kets, x5, new_chi, t_new, psi, grad, work, ks[0], rp, rm, sp)
        for k in flipped:
            spin = sp[k].copy() if rho >= 0 else np.full(3, np.nan)
            jumps.append(JumpEvent(t_new, k, x5[k].copy(), int(chi[k]), spin))
    return StepResult(new, h, dt_next, jumps)


def run_batch(state: SpinorState, initial_configs, settings: IntegratorSettings,
              workers: int = 1) -> list[TrajectoryRecord]:
    """Run trajectory i from initial_configs[i] with stream (settings.rng_seed, i).

    The compiled kernel releases the GIL, so threads run trajectories in
    parallel. Failed trajectories come back with record.failure set.
    """
    configs = list(initial_configs)
    if not configs:
        return []

    def one(i):
        return run_trajectory(state, configs[i], settings, index=i)

    if workers <= 1:
        records = [one(i) for i in range(len(configs))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(one, range(len(configs))))
    n_failed = sum(not r.ok for r in records)
    if n_failed:
        log.warning("%d of %d trajectories failed", n_failed, len(records))
    return records


def with_settings(settings: IntegratorSettings, **changes) -> IntegratorSettings:
    return replace(settings, **changes)
