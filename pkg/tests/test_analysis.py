import logging
import math

import numpy as np
import pytest

from zigzag import analysis
from zigzag.analysis import (anti_correlation, crossing_count, equivariance_test, field_map,
                             fokker_planck_residual, jump_location_stats, marginal_components, marginal_cdf,
                             outcome_fraction)
from zigzag.integrator import IntegratorSettings, TrajectoryRecord, run_batch
from zigzag.sampling import positions_at, sample_initial
from zigzag.states import evaluate_many


def _record(times, z, ok=True, index=0):
    n = len(times)
    pos = np.zeros((n, 1, 3))
    pos[:, 0, 2] = z
    e = np.empty(0)
    return TrajectoryRecord(np.asarray(times, float), pos, np.ones((n, 1), dtype=np.int64), np.zeros((n, 1, 3)),
                            np.ones(n), e, e.astype(np.int64), np.empty((0, 3)), e.astype(np.int64),
                            np.empty((0, 3)), IntegratorSettings(), index=index,
                            failure=None if ok else "x")


def test_outcome_counts_and_zero_plane(caplog):
    recs = [_record([0, 1], [0, 5.0]), _record([0, 1], [0, -5.0]), _record([0, 1], [0, 0.0]),
            _record([0, 1], [0, 1.0], ok=False)]
    with caplog.at_level(logging.WARNING):
        s = outcome_fraction(recs)
    assert (s.n_up, s.n_down, s.n_failed) == (2, 1, 1)
    assert s.n == 4
    assert s.fraction_up == pytest.approx(2 / 3)
    assert s.stderr == pytest.approx(math.sqrt(2 / 9 / 3))
    assert "counted as up" in caplog.text


def test_spin_up_always_ends_up(spin_up):
    cfgs = sample_initial(spin_up, 6, 5)
    recs = run_batch(spin_up, cfgs, IntegratorSettings(stride=1 << 30, rng_seed=5))
    assert outcome_fraction(recs).fraction_up == 1.0


def test_marginal_weights(weighted):
    w, mu, sd = marginal_components(weighted, 1e5)
    assert w == pytest.approx([0.9, 0.1])
    assert mu == pytest.approx([2400, -2400])
    assert sd == pytest.approx([100 * math.sqrt(1 + 1e10 / 4e8)] * 2)


@pytest.mark.parametrize("t", [0.0, 4e4, 1e5])
def test_marginal_matches_quadrature(weighted, t):
    # integrate |Psi|^2 over x and y with Gauss-Hermite nodes around the packet
    nodes, wts = np.polynomial.hermite_e.hermegauss(40)
    sig = 100 * math.sqrt(1 + t * t / 4e8)
    xg, yg = 0.1 * t + sig * nodes, sig * nodes
    w2 = np.outer(wts, wts) * sig * sig * np.exp((nodes[:, None] ** 2 + nodes[None, :] ** 2) / 2)
    w_, mu, sd = marginal_components(weighted, t)
    for z in np.linspace(-3000, 3000, 13):
        pts = np.stack(np.broadcast_arrays(xg[:, None], yg[None, :], z), axis=-1).reshape(-1, 1, 3)
        psi, _ = evaluate_many(weighted, pts, t)
        dens = np.sum(np.sum(np.abs(psi) ** 2, axis=1) * w2.ravel())
        ref = np.sum(w_ * np.exp(-(z - mu) ** 2 / (2 * sd ** 2)) / (sd * math.sqrt(2 * math.pi)))
        assert dens == pytest.approx(ref, rel=1e-8, abs=1e-14)


def test_equivariance_at_start_and_negative_control(weighted):
    cfgs = sample_initial(weighted, 2000, 9)
    recs = [_record([0.0], [c.positions[0, 2]]) for c in cfgs]
    assert equivariance_test(recs, 0.0, weighted).passed
    shifted = [_record([0.0], [c.positions[0, 2] + 500.0]) for c in cfgs]
    assert not equivariance_test(shifted, 0.0, weighted).passed
    with pytest.raises(KeyError):
        equivariance_test(recs, 1.0, weighted)


def test_ks_critical_value():
    r = analysis.KSReport(0.02, 0.5, 5000, 0.0)
    assert r.critical == pytest.approx(0.02305, abs=1e-5)
    assert r.passed


def test_mixture_cdf_limits(weighted):
    cdf = marginal_cdf(weighted, 1e5)
    assert cdf(-1e5) == pytest.approx(0.0, abs=1e-12)
    # plus the up branch's tail below zero, 4.7 widths away
    assert cdf(0.0) == pytest.approx(0.1, abs=1e-5)
    assert cdf(1e5) == pytest.approx(1.0)


def test_field_map_values(spin_y):
    t = 7e4
    fm = field_map(spin_y, t, ("y", "z"), (-500, 500), (-2000, 2000), (5, 9))
    assert fm.fixed == pytest.approx(0.1 * t)
    assert fm.valid.all()
    j0 = list(fm.v).index(0.0)
    assert np.allclose(fm.spin[:, j0], [0, 1, 0], atol=1e-12)
    assert np.allclose(fm.spin[:, -1], [0, 0, 1], atol=1e-6)
    assert np.allclose(fm.spin[:, 0], [0, 0, -1], atol=1e-6)
    # stored values are direct evaluations, not interpolated
    from zigzag.guidance import guidance_sample
    g = guidance_sample(spin_y, fm.positions[2, 3], t, [1])
    assert np.array_equal(g.spin[0], fm.spin[2, 3])
    assert g.rate_plus[0] == fm.rate_plus[2, 3]


def test_field_map_rates_grow_away_from_bulk(spin_y):
    t = 1.6e5
    fm = field_map(spin_y, t, ("y", "z"), (0, 0), (2400, 7200), (1, 41))
    r = np.maximum(fm.rate_plus, fm.rate_minus)[0]
    centre = int(np.argmin(np.abs(fm.v - 4800)))
    assert r[centre] < 1e-6
    assert r[0] > 100 * r[centre] and r[-1] > 100 * r[centre]


def test_field_map_marks_nodes(spin_y):
    fm = field_map(spin_y, 0.0, ("y", "z"), (-1e5, 1e5), (-1e5, 1e5), (3, 3))
    assert not fm.valid[0, 0] and fm.valid[1, 1]
    assert np.isnan(fm.spin[0, 0]).all()


def test_field_map_argument_checks(spin_y, epr_sg):
    with pytest.raises(ValueError):
        field_map(spin_y, 0.0, ("y", "y"))
    with pytest.raises(ValueError):
        field_map(epr_sg, 0.0)


@pytest.mark.parametrize("name", ["spin_y", "free_up", "epr_sg"])
def test_fokker_planck_balance(request, rng, name):
    state = request.getfixturevalue(name)
    for lo, hi in ((0, 2e4), (2e4, 6e4), (6e4, 1e5)):
        ts = rng.uniform(lo + 1, hi - 1, 8)
        xs = np.stack([positions_at(state, t, 1, rng)[0] for t in ts])
        chis = rng.choice([-1, 1], size=(8, state.n_particles))
        assert fokker_planck_residual(state, xs, ts, chis).max() < 1e-6
        assert fokker_planck_residual(state, xs, ts, -chis).max() < 1e-6


def test_fokker_planck_detects_wrong_rates(spin_y, rng):
    # same points but with a bogus density time derivative step (too coarse) is not balanced
    ts = np.array([3e4])
    xs = positions_at(spin_y, 3e4, 1, rng)
    assert fokker_planck_residual(spin_y, xs, ts, [[1]], ht=5e3).max() > 1e-6


def test_crossings():
    rec = _record([0, 1, 2, 3, 4, 5], [1.0, -1.0, 0.0, 2.0, 3.0, -1.0])
    assert crossing_count(rec) == 3
    assert crossing_count(rec, after=2.5) == 1


def test_jump_locations_and_anti_correlation(epr_sg, spin_y):
    cfgs = sample_initial(spin_y, 3, 2)
    recs = run_batch(spin_y, cfgs, IntegratorSettings(stride=1 << 30))
    stats = jump_location_stats(recs, spin_y.meta["field"], 1e5)
    assert stats.n_jumps > 0 and stats.clustered
    cfgs = sample_initial(epr_sg, 2, 2)
    recs = run_batch(epr_sg, cfgs, IntegratorSettings(stride=20))
    ac = anti_correlation(recs)
    assert ac.max_sum <= 1e-12 and ac.sign_violations == 0 and ac.rows_checked > 0
