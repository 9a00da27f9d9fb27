"""Closed-form Pauli spinors built from products of 1D Gaussian packet factors.

Every wave function used here is a finite sum of terms

    coefficient * prod_k [ f_kx(x_k) f_ky(y_k) f_kz(z_k) ] * (ket_1 x ... x ket_N)

where each factor f is exp(A(t) q^2 + B(t) q + C(t)). Units are natural
(hbar = m = c = e = 1) and there is no scalar or vector potential; the only
external field is the time-gated Stern-Gerlach gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from . import _kernels

UP = np.array([1.0, 0.0], dtype=complex)
DOWN = np.array([0.0, 1.0], dtype=complex)
AXES = "xyz"


class NormalizationError(ValueError):
    pass


@dataclass(frozen=True)
class PhysicsConstants:
    hbar: float = 1.0
    m: float = 1.0
    c: float = 1.0
    e: float = 1.0

    def __post_init__(self):
        if (self.hbar, self.m, self.c, self.e) != (1.0, 1.0, 1.0, 1.0):
            raise ValueError("only natural units (hbar = m = c = e = 1) are supported")


UNITS = PhysicsConstants()


@dataclass(frozen=True)
class FieldProfile:
    """Field B = (0, 0, 2 b z / e) switched on for t_i <= t < t_f.

    `axis` selects the gradient direction; "z" is the standard device, "y"
    the rotated one.
    """

    b: float = 1e-6
    t_i: float = 2e4
    t_f: float = 6e4
    axis: str = "z"

    def __post_init__(self):
        if not self.t_i < self.t_f:
            raise ValueError(f"need t_i < t_f, got {self.t_i} >= {self.t_f}")
        if self.axis not in ("y", "z"):
            raise ValueError(f"field axis must be 'y' or 'z', got {self.axis!r}")

    def active(self, t: float) -> bool:
        return self.t_i <= t < self.t_f

    def field(self, position: Sequence[float], t: float) -> np.ndarray:
        """Magnetic field vector at a point."""
        out = np.zeros(3)
        if self.active(t):
            ax = AXES.index(self.axis)
            out[ax] = 2.0 * self.b * position[ax] / UNITS.e
        return out


@dataclass(frozen=True)
class PacketParams:
    d_x: float = 100.0
    d_y: float = 100.0
    d_z: float = 100.0
    p: float = 0.1

    def __post_init__(self):
        if min(self.d_x, self.d_y, self.d_z) <= 0:
            raise ValueError("packet widths must be positive")

    @property
    def widths(self) -> tuple[float, float, float]:
        return (self.d_x, self.d_y, self.d_z)


@dataclass(frozen=True)
class GaussianFactor:
    """One-dimensional packet exp(A(t) q^2 + B(t) q + C(t)).

    A free Gaussian of width `width` and momentum `momentum`, normalized at
    t = 0, optionally kicked by a constant force on [t_on, t_off). The force
    selects three regimes (before, during, after); values and derivatives are
    continuous across the switch times.
    """

    width: float
    momentum: float = 0.0
    force: float = 0.0
    t_on: float = 0.0
    t_off: float = 0.0

    def params(self) -> tuple[float, float, float, float, float]:
        return (self.width, self.momentum, self.force, self.t_on, self.t_off)

    def regime(self, t: float) -> int:
        """0 before the kick, 1 while it acts, 2 after."""
        if self.force == 0.0 or t < self.t_on:
            return 0
        return 1 if t < self.t_off else 2

    def coefficients(self, t: float) -> tuple[complex, complex, complex]:
        return _kernels.factor_coefficients(*self.params(), float(t))

    def value(self, q, t: float):
        a, b, c = self.coefficients(t)
        q = np.asarray(q, dtype=float)
        return np.exp((a * q + b) * q + c)

    def dlog(self, q, t: float):
        """d/dq log f."""
        a, b, _ = self.coefficients(t)
        return 2.0 * a * np.asarray(q, dtype=float) + b

    def center(self, t: float) -> float:
        """Mean of |f|^2."""
        a, b, _ = self.coefficients(t)
        return -b.real / (2.0 * a.real)

    def sigma(self, t: float) -> float:
        """Standard deviation of |f|^2 / norm."""
        a, _, _ = self.coefficients(t)
        return math.sqrt(-1.0 / (4.0 * a.real))

    def norm2(self, t: float) -> float:
        """Integral of |f|^2 over the real line."""
        a, b, c = self.coefficients(t)
        alpha = 2.0 * a.real
        return math.exp(2.0 * c.real - b.real ** 2 / (2.0 * a.real)) * math.sqrt(math.pi / -alpha)


@dataclass(frozen=True)
class Term:
    coefficient: complex
    factors: tuple[tuple[GaussianFactor, GaussianFactor, GaussianFactor], ...]
    kets: tuple[tuple[complex, complex], ...]


@dataclass(frozen=True)
class SpinorState:
    """Sum of Gaussian-product terms for N spin-1/2 particles. Immutable."""

    terms: tuple[Term, ...]
    label: str = ""
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if not self.terms:
            raise ValueError("a state needs at least one term")
        n = len(self.terms[0].factors)
        for term in self.terms:
            if len(term.factors) != n or len(term.kets) != n:
                raise ValueError("all terms must describe the same number of particles")

    @property
    def n_particles(self) -> int:
        return len(self.terms[0].factors)

    @property
    def dim(self) -> int:
        return 2 ** self.n_particles

    @cached_property
    def packed(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n_terms, n = len(self.terms), self.n_particles
        coef = np.array([complex(term.coefficient) for term in self.terms], dtype=complex)
        params = np.empty((n_terms, n, 3, 5))
        kets = np.empty((n_terms, n, 2), dtype=complex)
        for m, term in enumerate(self.terms):
            for k in range(n):
                kets[m, k] = term.kets[k]
                for ax in range(3):
                    params[m, k, ax] = term.factors[k][ax].params()
        for arr in (coef, params, kets):
            arr.setflags(write=False)
        return coef, params, kets

    def _positions(self, config) -> np.ndarray:
        x = np.asarray(getattr(config, "positions", config), dtype=float)
        x = x.reshape(self.n_particles, 3)
        return np.ascontiguousarray(x)

    def evaluate(self, config, t: float) -> np.ndarray:
        return evaluate(self, config, t)

    def gradient(self, config, t: float, k: int) -> np.ndarray:
        return gradient(self, config, t, k)

    def spin_norm(self) -> float:
        """Norm of the spin part, assuming all spatial factors agree at t = 0."""
        vec = np.zeros(self.dim, dtype=complex)
        for term in self.terms:
            ket = np.array([1.0 + 0j])
            for k in range(self.n_particles):
                ket = np.kron(ket, np.asarray(term.kets[k], dtype=complex))
            vec += term.coefficient * ket
        return float(np.vdot(vec, vec).real)


def _check_t(t: float) -> float:
    t = float(t)
    if t < 0:
        raise ValueError(f"states are defined for t >= 0, got t = {t}")
    return t


def evaluate(state: SpinorState, config, t: float) -> np.ndarray:
    """Psi at a configuration: complex vector of length 2**N."""
    psi, _ = _psi_grad(state, config, t)
    return psi


def gradient(state: SpinorState, config, t: float, k: int) -> np.ndarray:
    """Analytic gradient with respect to particle k, shape (3, 2**N)."""
    _, grad = _psi_grad(state, config, t)
    return grad[k]


def laplacian(state: SpinorState, config, t: float, k: int) -> np.ndarray:
    coef, params, kets = state.packed
    lap = np.empty(state.dim, dtype=complex)
    _kernels.psi_laplacian(coef, params, kets, state._positions(config), _check_t(t), k, lap)
    return lap


def _psi_grad(state: SpinorState, config, t: float):
    coef, params, kets = state.packed
    n = state.n_particles
    psi = np.empty(state.dim, dtype=complex)
    grad = np.empty((n, 3, state.dim), dtype=complex)
    work = _kernels.make_work(params)
    _kernels.psi_and_grad(coef, params, kets, state._positions(config), _check_t(t), psi, grad, work)
    return psi, grad


def evaluate_many(state: SpinorState, positions: np.ndarray, times) -> tuple[np.ndarray, np.ndarray]:
    """Psi and gradients for M configurations: shapes (M, 2**N), (M, N, 3, 2**N)."""
    coef, params, kets = state.packed
    n = state.n_particles
    xs = np.ascontiguousarray(np.asarray(positions, dtype=float).reshape(-1, n, 3))
    ts = np.broadcast_to(np.asarray(times, dtype=float), (xs.shape[0],)).copy()
    if np.any(ts < 0):
        raise ValueError("states are defined for t >= 0")
    psis = np.empty((xs.shape[0], state.dim), dtype=complex)
    grads = np.empty((xs.shape[0], n, 3, state.dim), dtype=complex)
    _kernels.evaluate_many(coef, params, kets, xs, ts, psis, grads)
    return psis, grads


def peak_density(state: SpinorState, t: float) -> float:
    """Density scale used for the node floor: sum_m |c_m|^2 prod max|f|^2."""
    coef, params, kets = state.packed
    n = state.n_particles
    psi = np.empty(state.dim, dtype=complex)
    grad = np.empty((n, 3, state.dim), dtype=complex)
    work = _kernels.make_work(params)
    return _kernels.psi_and_grad(coef, params, kets, np.zeros((n, 3)), _check_t(t), psi, grad, work)


def norm_quadrature(state: SpinorState, t: float, nodes: int = 60) -> float:
    """Integral of Psi^dagger Psi by tensor Gauss-Hermite quadrature.

    The integral is expanded over pairs of terms; each 1D overlap of two
    factors is integrated on a Hermite grid fitted to the product's envelope.
    """
    herm_x, herm_w = np.polynomial.hermite.hermgauss(nodes)
    total = 0.0j
    for t1 in state.terms:
        for t2 in state.terms:
            amp = np.conj(t1.coefficient) * t2.coefficient
            for k in range(state.n_particles):
                amp *= np.vdot(np.asarray(t1.kets[k]), np.asarray(t2.kets[k]))
            if amp == 0:
                continue
            for k in range(state.n_particles):
                for ax in range(3):
                    f, g = t1.factors[k][ax], t2.factors[k][ax]
                    a1, b1, _ = f.coefficients(t)
                    a2, b2, _ = g.coefficients(t)
                    alpha = (a1.conjugate() + a2).real
                    beta = (b1.conjugate() + b2).real
                    mu = -beta / (2 * alpha)
                    s = math.sqrt(-1.0 / alpha)
                    q = mu + s * herm_x
                    integrand = np.conj(f.value(q, t)) * g.value(q, t) * np.exp(herm_x ** 2)
                    amp *= s * np.sum(herm_w * integrand)
            total += amp
    return float(total.real)


def _product_factors(params: PacketParams, momentum: float, force: float = 0.0,
                     field: FieldProfile | None = None) -> tuple[GaussianFactor, ...]:
    t_on = field.t_i if field is not None else 0.0
    t_off = field.t_f if field is not None else 0.0
    axis = AXES.index(field.axis) if field is not None else 2
    out = []
    for ax, width in enumerate(params.widths):
        kick = force if ax == axis else 0.0
        out.append(GaussianFactor(width, momentum if ax == 0 else 0.0, kick, t_on, t_off))
    return tuple(out)


def _field_basis(field: FieldProfile) -> tuple[np.ndarray, np.ndarray]:
    """Spin kets along the field axis (+, -)."""
    if field.axis == "z":
        return UP, DOWN
    r = 1 / math.sqrt(2)
    return np.array([r, 1j * r]), np.array([r, -1j * r])


def build_sg_state(params: PacketParams, field: FieldProfile, c_plus: complex, c_minus: complex,
                   *, atol: float = 1e-12) -> SpinorState:
    """Single particle (c_+ psi_+, c_- psi_-) through a Stern-Gerlach field.

    c_plus / c_minus are amplitudes in the z basis. For a y-axis device the
    spinor is re-expanded in the sigma_y eigenbasis so each branch gets its
    own kick.
    """
    c_plus, c_minus = complex(c_plus), complex(c_minus)
    norm = abs(c_plus) ** 2 + abs(c_minus) ** 2
    if abs(norm - 1.0) > atol:
        raise NormalizationError(f"|c+|^2 + |c-|^2 = {norm!r}, expected 1")
    up_ket, down_ket = _field_basis(field)
    spinor = np.array([c_plus, c_minus])
    amp_up = np.vdot(up_ket, spinor)
    amp_down = np.vdot(down_ket, spinor)
    terms = []
    for amp, ket, sign in ((amp_up, up_ket, 1.0), (amp_down, down_ket, -1.0)):
        if amp == 0:
            continue
        factors = _product_factors(params, params.p, sign * field.b, field)
        terms.append(Term(complex(amp), (factors,), (tuple(complex(v) for v in ket),)))
    return SpinorState(tuple(terms), label="sg",
                       meta=dict(params=params, field=field, c_plus=c_plus, c_minus=c_minus))


def build_free_state(params: PacketParams, c_plus: complex, c_minus: complex) -> SpinorState:
    """Field-free single-particle spinor psi (c_+, c_-)."""
    c_plus, c_minus = complex(c_plus), complex(c_minus)
    norm = abs(c_plus) ** 2 + abs(c_minus) ** 2
    if abs(norm - 1.0) > 1e-12:
        raise NormalizationError(f"|c+|^2 + |c-|^2 = {norm!r}, expected 1")
    factors = _product_factors(params, params.p)
    return SpinorState((Term(1.0, (factors,), ((c_plus, c_minus),)),), label="free",
                       meta=dict(params=params, c_plus=c_plus, c_minus=c_minus))


def build_epr_state(params: PacketParams, field: FieldProfile, with_sg_on_particle1: bool,
                    a: float = 1 / math.sqrt(2), b_spin: float = 1 / math.sqrt(2)) -> SpinorState:
    """Two particles in a|up,down> - b|down,up>, flying apart with momenta +p / -p.

    With the flag set, particle 1's packet in each term is the Stern-Gerlach
    branch matching its spin (psi_{p,B,+} for up, psi_{p,B,-} for down).
    Particle 2 is always free.
    """
    norm = a * a + b_spin * b_spin
    if abs(norm - 1.0) > 1e-12:
        raise NormalizationError(f"a^2 + b^2 = {norm!r}, expected 1")
    if with_sg_on_particle1:
        up_ket, down_ket = _field_basis(field)
        p1_up = _product_factors(params, params.p, field.b, field)
        p1_down = _product_factors(params, params.p, -field.b, field)
    else:
        up_ket, down_ket = UP, DOWN
        p1_up = p1_down = _product_factors(params, params.p)
    p2 = _product_factors(params, -params.p)
    up = tuple(complex(v) for v in up_ket)
    down = tuple(complex(v) for v in down_ket)
    terms = (
        Term(complex(a), (p1_up, p2), (up, down)),
        Term(complex(-b_spin), (p1_down, p2), (down, up)),
    )
    return SpinorState(terms, label="epr_sg" if with_sg_on_particle1 else "epr_free",
                       meta=dict(params=params, field=field, a=a, b_spin=b_spin,
                                 with_sg=with_sg_on_particle1))
