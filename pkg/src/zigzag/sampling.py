"""Initial configurations drawn from the quantum equilibrium distribution at t = 0."""

from __future__ import annotations

import numpy as np

from .analysis import marginal_components
from .guidance import ParticleConfig
from .integrator import SAMPLER_STREAM
from .states import SpinorState


def sampler_rng(master_seed: int) -> np.random.Generator:
    """The sampler's stream, disjoint from every per-trajectory stream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(master_seed, spawn_key=(SAMPLER_STREAM,))))


def _product_gaussian(state: SpinorState) -> np.ndarray:
    """Per-particle, per-axis (mean, std) of |Psi(., 0)|^2.

    Requires every term to share the same spatial factors at t = 0, so the
    spin part factors out of the density. Raises NotImplementedError otherwise.
    """
    first = [[f.coefficients(0.0) for f in fs] for fs in state.terms[0].factors]
    for term in state.terms[1:]:
        for k, fs in enumerate(term.factors):
            for ax, f in enumerate(fs):
                if not np.allclose(f.coefficients(0.0), first[k][ax], rtol=1e-14, atol=0.0):
                    raise NotImplementedError(
                        "t = 0 density is not a single product of Gaussians; only such states can be sampled")
    if abs(state.spin_norm() - 1.0) > 1e-12:
        raise NotImplementedError("spin part is not normalised; density would not be a product Gaussian")
    out = np.empty((state.n_particles, 3, 2))
    for k, fs in enumerate(first):
        for ax, (a, b, _) in enumerate(fs):
            # |exp(a q^2 + b q + c)|^2 is Gaussian with precision -4 Re a
            var = -1.0 / (4.0 * a.real)
            out[k, ax] = (2.0 * b.real * var, np.sqrt(var))
    return out


class EquilibriumSampler:
    """Draws (X, chi) with density Psi^dagger Psi(x, 0) / 2 per chirality."""

    def __init__(self, state: SpinorState, seed: int | np.random.Generator = 0):
        self.state = state
        self.moments = _product_gaussian(state)
        self.rng = seed if isinstance(seed, np.random.Generator) else sampler_rng(seed)

    def positions(self, n: int) -> np.ndarray:
        mean, std = self.moments[..., 0], self.moments[..., 1]
        return mean + std * self.rng.standard_normal((n,) + mean.shape)

    def draw(self, n: int) -> list[ParticleConfig]:
        if n < 0:
            raise ValueError("n must be non-negative")
        xs = self.positions(n)
        chis = self.rng.choice(np.array([-1, 1]), size=(n, self.state.n_particles))
        return [ParticleConfig(x, c, 0.0) for x, c in zip(xs, chis)]


def sample_initial(state: SpinorState, n: int, rng: int | np.random.Generator = 0) -> list[ParticleConfig]:
    """n i.i.d. equilibrium configurations; an int rng is taken as the master seed."""
    return EquilibriumSampler(state, rng).draw(n)


def positions_at(state: SpinorState, t: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """n configurations distributed as |Psi(., t)|^2, shape (n, N, 3).

    Exact for states whose terms are spin-orthogonal (every built-in state):
    the density is then a mixture with one product Gaussian per term.
    """
    weights, _, _ = marginal_components(state, t)
    which = rng.choice(len(weights), size=n, p=weights)
    out = np.empty((n, state.n_particles, 3))
    for m, term in enumerate(state.terms):
        rows = np.flatnonzero(which == m)
        for k, fs in enumerate(term.factors):
            for ax, f in enumerate(fs):
                out[rows, k, ax] = f.center(t) + f.sigma(t) * rng.standard_normal(rows.size)
    return out
