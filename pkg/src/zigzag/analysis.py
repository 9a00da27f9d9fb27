"""Statistics over trajectory batches and checks on the guidance fields."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import closed_forms
from .guidance import apply_sigma, guidance_batch
from .integrator import TrajectoryRecord
from .states import AXES, FieldProfile, SpinorState, evaluate_many, laplacian

log = logging.getLogger(__name__)

KS_CRITICAL_001 = 1.63


@dataclass
class OutcomeStats:
    n_up: int
    n_down: int
    n_failed: int

    @property
    def n(self) -> int:
        return self.n_up + self.n_down + self.n_failed

    @property
    def fraction_up(self) -> float:
        done = self.n_up + self.n_down
        return self.n_up / done if done else float("nan")

    @property
    def stderr(self) -> float:
        done = self.n_up + self.n_down
        f = self.fraction_up
        return math.sqrt(f * (1 - f) / done) if done else float("nan")


def outcome_fraction(records, k: int = 0, axis: str = "z") -> OutcomeStats:
    """Classify each record by the sign of particle k's coordinate at its final time."""
    ax = AXES.index(axis)
    up = down = failed = 0
    for rec in records:
        if not rec.ok:
            failed += 1
            continue
        q = rec.positions[-1, k, ax]
        if q == 0.0:
            log.warning("trajectory %s ends exactly on the plane; counted as up", rec.index)
        if q >= 0.0:
            up += 1
        else:
            down += 1
    return OutcomeStats(up, down, failed)


def marginal_components(state: SpinorState, t: float, k: int = 0, axis: str = "z"):
    """(weights, means, stds) of the one-dimensional marginal of |Psi|^2.

    The marginal is a Gaussian mixture with one component per term, provided
    the terms' spin kets are mutually orthogonal (cross terms then vanish).
    """
    ax = AXES.index(axis)
    _, _, kets = state.packed
    gram = np.einsum("mkd,nkd->mnk", kets.conj(), kets).prod(axis=2)
    off = gram - np.diag(np.diag(gram))
    if np.abs(off).max(initial=0.0) > 1e-12:
        raise NotImplementedError("terms are not spin-orthogonal; marginal is not a plain mixture")
    weights, means, stds = [], [], []
    for m, term in enumerate(state.terms):
        w = abs(term.coefficient) ** 2 * gram[m, m].real
        for fs in term.factors:
            for f in fs:
                w *= f.norm2(t)
        f = term.factors[k][ax]
        weights.append(w)
        means.append(f.center(t))
        stds.append(f.sigma(t))
    weights = np.array(weights)
    return weights / weights.sum(), np.array(means), np.array(stds)


def marginal_cdf(state: SpinorState, t: float, k: int = 0, axis: str = "z"):
    w, mu, sd = marginal_components(state, t, k, axis)

    def cdf(q):
        q = np.asarray(q, dtype=float)[..., None]
        return np.sum(w * stats.norm.cdf(q, mu, sd), axis=-1)

    return cdf


@dataclass
class KSReport:
    statistic: float
    pvalue: float
    n: int
    t: float
    alpha: float = 0.01

    @property
    def critical(self) -> float:
        return KS_CRITICAL_001 / math.sqrt(self.n)

    @property
    def passed(self) -> bool:
        return self.statistic < self.critical


def samples_at(records, t: float, k: int = 0, axis: str = "z") -> np.ndarray:
    ax = AXES.index(axis)
    return np.array([rec.positions[rec.sample_at(t), k, ax] for rec in records if rec.ok])


def equivariance_test(records, t_check: float, state: SpinorState, k: int = 0, axis: str = "z") -> KSReport:
    """KS distance between recorded coordinates at t_check and the |Psi|^2 marginal.

    Raises KeyError if some record was not sampled at t_check.
    """
    q = samples_at(records, t_check, k, axis)
    if q.size == 0:
        raise ValueError("no completed records")
    res = stats.kstest(q, marginal_cdf(state, t_check, k, axis))
    return KSReport(float(res.statistic), float(res.pvalue), int(q.size), float(t_check))


@dataclass
class FieldMap:
    """Guidance quantities on a planar grid of one-particle positions.

    axes names the two varying coordinates; the third is held at `fixed`.
    Arrays are indexed [i, j] with i along axes[0]. NaN marks nodes.
    """

    axes: tuple[str, str]
    u: np.ndarray
    v: np.ndarray
    fixed: float
    t: float
    chirality: int
    positions: np.ndarray
    spin: np.ndarray
    rate_plus: np.ndarray
    rate_minus: np.ndarray
    velocity: np.ndarray
    density: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.density)


def field_map(state: SpinorState, t: float, axes=("y", "z"), u_range=(-1000.0, 1000.0),
              v_range=(-1000.0, 1000.0), resolution=(41, 41), fixed: float | None = None,
              chirality: int = 1) -> FieldMap:
    """Evaluate spin, rates, velocity and density on a grid of a one-particle state.

    fixed defaults to the packet's centre along the remaining axis.
    """
    if state.n_particles != 1:
        raise ValueError("field maps are for single-particle states")
    if len(set(axes)) != 2 or not set(axes) <= set(AXES):
        raise ValueError(f"bad axes {axes!r}")
    a0, a1 = AXES.index(axes[0]), AXES.index(axes[1])
    rest = ({0, 1, 2} - {a0, a1}).pop()
    if fixed is None:
        fixed = state.terms[0].factors[0][rest].center(t)
    u = np.linspace(*u_range, resolution[0])
    v = np.linspace(*v_range, resolution[1])
    pts = np.empty((len(u), len(v), 3))
    pts[..., a0] = u[:, None]
    pts[..., a1] = v[None, :]
    pts[..., rest] = fixed
    g = guidance_batch(state, pts.reshape(-1, 1, 3), t, chirality)
    shape = (len(u), len(v))
    return FieldMap(tuple(axes), u, v, float(fixed), float(t), chirality, pts,
                    g["spin"].reshape(shape + (3,)), g["rate_plus"].reshape(shape),
                    g["rate_minus"].reshape(shape), g["velocity"].reshape(shape + (3,)),
                    g["density"].reshape(shape))


def _density(state, xs, t):
    psi, _ = evaluate_many(state, xs, t)
    return np.sum(np.abs(psi) ** 2, axis=1)


def fokker_planck_residual(state: SpinorState, positions, times, chiralities, h: float = 1e-3,
                           ht: float = 1e-3) -> np.ndarray:
    """Relative residual of the chirality-resolved balance law at each point.

    With rho_chi = Psi^dagger Psi / 2^N, checks
    d_t rho_chi + sum_k div_k(v_k rho_chi) = sum_k (r_{k,chi_k} - r_{k,-chi_k}) rho_chi,
    using central differences (step h in space, ht in time). Each residual is
    divided by the sum of the magnitudes of the individual terms.
    """
    n = state.n_particles
    xs = np.asarray(positions, dtype=float).reshape(-1, n, 3)
    ts = np.broadcast_to(np.asarray(times, dtype=float), (len(xs),))
    chis = np.broadcast_to(np.asarray(chiralities, dtype=np.int64).reshape(-1, n), (len(xs), n))
    scale = 0.5 ** n
    out = np.empty(len(xs))
    for i, (x, t, chi) in enumerate(zip(xs, ts, chis)):
        dt_rho = scale * (_density(state, x[None], t + ht)[0] - _density(state, x[None], t - ht)[0]) / (2 * ht)
        terms = [dt_rho]
        pts = []
        for k in range(n):
            for ax in range(3):
                for s in (1, -1):
                    y = x.copy()
                    y[k, ax] += s * h
                    pts.append(y)
        g = guidance_batch(state, np.array(pts), t, chi)
        flux = g["velocity"] * g["density"][:, None, None] * scale
        j = 0
        for k in range(n):
            for ax in range(3):
                terms.append((flux[j, k, ax] - flux[j + 1, k, ax]) / (2 * h))
                j += 2
        g0 = guidance_batch(state, x[None], t, chi)
        rho0 = g0["density"][0] * scale
        for k in range(n):
            gain = g0["rate_plus"][0, k] if chi[k] > 0 else g0["rate_minus"][0, k]
            loss = g0["rate_minus"][0, k] if chi[k] > 0 else g0["rate_plus"][0, k]
            terms.append(-(gain - loss) * rho0)
        terms = np.array(terms)
        out[i] = abs(terms.sum()) / np.abs(terms).sum()
    return out


def _field_particles(state: SpinorState):
    """(particle, axis, b) for every particle whose packets are kicked."""
    found = {}
    for term in state.terms:
        for k, fs in enumerate(term.factors):
            for ax, f in enumerate(fs):
                if f.force != 0.0:
                    found[k] = (ax, abs(f.force), f.t_on, f.t_off)
    return found


def pauli_residual(state: SpinorState, positions, times, ht: float = 1e-3) -> np.ndarray:
    """Relative residual of i d_t Psi = -1/2 sum_k lap_k Psi - b q sigma_q Psi.

    The field term acts on the particles whose packets carry a kick, along the
    kick axis, while the field is on. d_t by central differences (step ht),
    Laplacians analytic. Normalised by the sum of the three term norms.
    """
    n = state.n_particles
    xs = np.asarray(positions, dtype=float).reshape(-1, n, 3)
    ts = np.broadcast_to(np.asarray(times, dtype=float), (len(xs),))
    kicked = _field_particles(state)
    out = np.empty(len(xs))
    for i, (x, t) in enumerate(zip(xs, ts)):
        psi_p, _ = evaluate_many(state, x[None], t + ht)
        psi_m, _ = evaluate_many(state, x[None], t - ht)
        psi, _ = evaluate_many(state, x[None], t)
        lhs = 1j * (psi_p[0] - psi_m[0]) / (2 * ht)
        kin = sum(-0.5 * laplacian(state, x, t, k) for k in range(n))
        pot = np.zeros_like(psi[0])
        for k, (ax, b, t_on, t_off) in kicked.items():
            if t_on <= t < t_off:
                pot -= b * x[k, ax] * apply_sigma(psi[0], ax, k, n)
        res = lhs - kin - pot
        scale = np.linalg.norm(lhs) + np.linalg.norm(kin) + np.linalg.norm(pot)
        out[i] = np.linalg.norm(res) / scale
    return out


def switch_discontinuity(state: SpinorState, positions, t_switch: float, gap: float = 1e-6) -> np.ndarray:
    """|Psi(t+gap) - Psi(t-gap)| / |Psi(t)| at each configuration."""
    n = state.n_particles
    xs = np.asarray(positions, dtype=float).reshape(-1, n, 3)
    after, _ = evaluate_many(state, xs, t_switch + gap)
    before, _ = evaluate_many(state, xs, t_switch - gap)
    mid, _ = evaluate_many(state, xs, t_switch)
    return np.linalg.norm(after - before, axis=1) / np.linalg.norm(mid, axis=1)


def crossing_count(record: TrajectoryRecord, k: int = 0, axis: str = "z", after: float = 0.0) -> int:
    """Sign changes of particle k's coordinate among rows with t >= after."""
    q = record.positions[record.times >= after, k, AXES.index(axis)]
    s = np.sign(q)
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


@dataclass
class JumpLocationStats:
    n_jumps: int
    median_abs: float
    separation: float

    @property
    def clustered(self) -> bool:
        return self.n_jumps > 0 and self.median_abs < self.separation


def jump_location_stats(records, field_profile: FieldProfile, t_end: float, k: int = 0) -> JumpLocationStats:
    """Median |q| (field axis) of particle k's jumps after t_f, against the final branch offset."""
    ax = AXES.index(field_profile.axis)
    qs = [abs(x[ax]) for rec in records
          for t, kk, x in zip(rec.jump_t, rec.jump_k, rec.jump_x) if kk == k and t > field_profile.t_f]
    sep = closed_forms.branch_center(t_end, field_profile, +1)
    return JumpLocationStats(len(qs), float(np.median(qs)) if qs else float("nan"), sep)


@dataclass
class AntiCorrelation:
    max_sum: float
    sign_violations: int
    rows_checked: int


def anti_correlation(records, min_abs: float = 1e-6) -> AntiCorrelation:
    """How far s_1 + s_2 departs from zero along two-particle records."""
    worst, bad, rows = 0.0, 0, 0
    for rec in records:
        s1, s2 = rec.spins[:, 0], rec.spins[:, 1]
        worst = max(worst, float(np.abs(s1 + s2).max()))
        mask = np.abs(s1[:, 2]) > min_abs
        bad += int(np.count_nonzero(np.sign(s2[mask, 2]) != -np.sign(s1[mask, 2])))
        rows += len(s1)
    return AntiCorrelation(worst, bad, rows)
