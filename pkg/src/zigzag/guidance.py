"""Zig-zag guidance fields: velocity, chirality jump rates, spin vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .states import SpinorState, evaluate_many


class NodeProximity(ArithmeticError):
    """The density at a configuration is below the node floor."""


@dataclass
class ParticleConfig:
    positions: np.ndarray
    chiralities: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.positions = np.array(self.positions, dtype=float).reshape(-1, 3)
        self.chiralities = np.array(self.chiralities, dtype=np.int64).reshape(-1)
        if self.chiralities.shape[0] != self.positions.shape[0]:
            raise ValueError("need one chirality per particle")
        if not np.all(np.abs(self.chiralities) == 1):
            raise ValueError(f"chiralities must be +1 or -1, got {self.chiralities}")

    @property
    def n_particles(self) -> int:
        return self.positions.shape[0]

    def copy(self) -> ParticleConfig:
        return ParticleConfig(self.positions.copy(), self.chiralities.copy(), self.t)


@dataclass
class GuidanceSample:
    """Guidance at one configuration.

    flip_rate[k] is the rate for the transition actually available to
    particle k, r_{-chi_k}; rate_plus / rate_minus hold both signs.
    """

    velocity: np.ndarray
    rate_plus: np.ndarray
    rate_minus: np.ndarray
    spin: np.ndarray
    density: float
    chiralities: np.ndarray

    @property
    def flip_rate(self) -> np.ndarray:
        return np.where(self.chiralities > 0, self.rate_minus, self.rate_plus)

    def rate(self, k: int, target_chirality: int) -> float:
        return float(self.rate_plus[k] if target_chirality > 0 else self.rate_minus[k])


def _as_config(state: SpinorState, config, t, chiralities=None) -> tuple[np.ndarray, np.ndarray, float]:
    if isinstance(config, ParticleConfig):
        x, chi = config.positions, config.chiralities
        t = config.t if t is None else t
    else:
        x = np.asarray(config, dtype=float).reshape(state.n_particles, 3)
        chi = np.ones(state.n_particles, dtype=np.int64) if chiralities is None else chiralities
    if t is None:
        raise ValueError("time not given")
    return np.ascontiguousarray(x), np.asarray(chi, dtype=np.int64), float(t)


def guidance_sample(state: SpinorState, config, t: float | None = None, chiralities=None) -> GuidanceSample:
    """All guidance quantities from a single evaluation of Psi and its gradients."""
    x, chi, t = _as_config(state, config, t, chiralities)
    coef, params, kets = state.packed
    n = state.n_particles
    psi = np.empty(state.dim, dtype=complex)
    grad = np.empty((n, 3, state.dim), dtype=complex)
    work = _kernels.make_work(params)
    vel = np.empty((n, 3))
    rp = np.empty(n)
    rm = np.empty(n)
    spin = np.empty((n, 3))
    rho = _kernels.guidance(coef, params, kets, x, chi, t, psi, grad, work, vel, rp, rm, spin)
    if rho < 0:
        raise NodeProximity(f"density below node floor at t={t}, x={x.tolist()}")
    return GuidanceSample(vel, rp, rm, spin, rho, chi.copy())


def spin_vector(state: SpinorState, config, t: float | None = None, k: int = 0) -> np.ndarray:
    return guidance_sample(state, config, t).spin[k]


def velocity(state: SpinorState, config, t: float | None = None, k: int = 0, chirality: int | None = None) -> np.ndarray:
    x, chi, t = _as_config(state, config, t)
    if chirality is not None:
        chi = chi.copy()
        chi[k] = chirality
    return guidance_sample(state, x, t, chi).velocity[k]


def jump_rate(state: SpinorState, config, t: float | None = None, k: int = 0, target_chirality: int = 1) -> float:
    """r_target for particle k; a particle with chirality chi flips at jump_rate(..., -chi)."""
    if target_chirality not in (1, -1):
        raise ValueError("target chirality must be +1 or -1")
    return guidance_sample(state, config, t).rate(k, target_chirality)


def velocity_terms(state: SpinorState, config, t: float, k: int = 0, chirality: int = 1):
    """The three velocity contributions (current, spin curl, chirality) separately."""
    x, _, t = _as_config(state, config, t)
    psis, grads = evaluate_many(state, x[None], t)
    psi, grad = psis[0], grads[0, k]
    rho = float(np.sum(np.abs(psi) ** 2))
    current = np.array([np.sum(np.conj(psi) * grad[b]).imag for b in range(3)]) / rho
    ds = _spin_density_gradient(psi, grad, k, state.n_particles)
    curl = np.array([ds[2, 1] - ds[1, 2], ds[0, 2] - ds[2, 0], ds[1, 0] - ds[0, 1]])
    s = spin_density(psi, k, state.n_particles) / rho
    return current, 0.5 * curl / rho, chirality * s


def apply_sigma(psi: np.ndarray, a: int, k: int, n: int) -> np.ndarray:
    """sigma_a acting on particle k of n, applied elementwise along the last axis.

    Particle 0 is the most significant bit of the component index; bit 0
    means spin up.
    """
    idx = np.arange(2 ** n)
    shift = n - 1 - k
    up = ((idx >> shift) & 1) == 0
    if a == 2:
        return np.where(up, psi, -psi)
    swapped = psi[..., idx ^ (1 << shift)]
    if a == 0:
        return swapped
    return np.where(up, -1j * swapped, 1j * swapped)


def spin_density(psi: np.ndarray, k: int, n: int) -> np.ndarray:
    """Psi^dagger sigma_k Psi as a real 3-vector."""
    return np.array([np.sum(np.conj(psi) * apply_sigma(psi, a, k, n)).real for a in range(3)])


def _spin_density_gradient(psi, grad, k, n):
    return np.array([[2.0 * np.sum(np.conj(psi) * apply_sigma(grad[b], a, k, n)).real for b in range(3)]
                     for a in range(3)])


def jump_drive_divergence_form(state: SpinorState, config, t: float, k: int = 0, h: float = 1e-2) -> float:
    """div_k(Psi^dagger sigma_k Psi) / Psi^dagger Psi by a fourth-order stencil.

    Reference route for the jump rate: r_chi = [chi * this]^+. Only used for
    cross-checking the gradient form used in production.
    """
    x, _, t = _as_config(state, config, t)
    n = state.n_particles
    offsets = (-2, -1, 1, 2)
    weights = (1 / 12, -8 / 12, 8 / 12, -1 / 12)
    pts = []
    for ax in range(3):
        for o in offsets:
            xx = x.copy()
            xx[k, ax] += o * h
            pts.append(xx)
    psis, _ = evaluate_many(state, np.array(pts), t)
    div = 0.0
    for ax in range(3):
        for i, w in enumerate(weights):
            div += w * spin_density(psis[4 * ax + i], k, n)[ax] / h
    psi0, _ = evaluate_many(state, x[None], t)
    return div / float(np.vdot(psi0[0], psi0[0]).real)


def guidance_batch(state: SpinorState, positions: np.ndarray, times, chiralities=None):
    """Guidance at many configurations; node-proximity entries come back as NaN.

    Returns dict of arrays: velocity (M, N, 3), rate_plus / rate_minus (M, N),
    spin (M, N, 3), density (M,).
    """
    coef, params, kets = state.packed
    n = state.n_particles
    xs = np.ascontiguousarray(np.asarray(positions, dtype=float).reshape(-1, n, 3))
    m = xs.shape[0]
    ts = np.broadcast_to(np.asarray(times, dtype=float), (m,)).copy()
    if chiralities is None:
        chis = np.ones((m, n), dtype=np.int64)
    else:
        chis = np.ascontiguousarray(np.broadcast_to(np.asarray(chiralities, dtype=np.int64), (m, n)))
    vel = np.empty((m, n, 3))
    rp = np.empty((m, n))
    rm = np.empty((m, n))
    spin = np.empty((m, n, 3))
    rho = np.empty(m)
    _kernels.guidance_many(coef, params, kets, xs, chis, ts, vel, rp, rm, spin, rho)
    return dict(velocity=vel, rate_plus=rp, rate_minus=rm, spin=spin, density=rho)
