import math

import numpy as np
import pytest

from zigzag import closed_forms as cf
from zigzag.analysis import pauli_residual, switch_discontinuity
from zigzag.sampling import positions_at
from zigzag.states import (FieldProfile, GaussianFactor, NormalizationError, PacketParams, build_epr_state,
                           build_sg_state, evaluate, gradient, laplacian, norm_quadrature, peak_density)

REGIME_TIMES = [0.0, 1.0e4, 2.5e4, 4.0e4, 5.9e4, 6.1e4, 8.0e4, 1.0e5]


@pytest.mark.parametrize("t", REGIME_TIMES)
def test_sg_state_matches_direct_formula(spin_y, params, field, rng, t):
    for _ in range(10):
        x = rng.normal(0, 400, 3)
        x[0] += params.p * t
        got = evaluate(spin_y, x, t)
        want = cf.sg_spinor(x, t, params, field, 1 / math.sqrt(2), 1j / math.sqrt(2))
        assert np.allclose(got, want, rtol=1e-11, atol=1e-13 * np.abs(want).max())


@pytest.mark.parametrize("t", [0.0, 3e4, 5e4, 1e5])
def test_norm_is_one(weighted, epr_sg, t):
    assert norm_quadrature(weighted, t) == pytest.approx(1.0, abs=1e-12)
    assert norm_quadrature(epr_sg, t) == pytest.approx(1.0, abs=1e-12)


def test_branch_centres_and_width(field):
    # centre b(t-t_i)^2/2 inside the field, then uniform motion with speed b(t_f - t_i)
    assert cf.branch_center(6e4, field, +1) == pytest.approx(800.0)
    assert cf.branch_center(1e5, field, -1) == pytest.approx(-2400.0)
    assert cf.branch_center(1e4, field, +1) == 0.0
    assert cf.packet_sigma(1e5, 100.0) == pytest.approx(100 * math.sqrt(1 + 1e10 / 4e8))


@pytest.mark.parametrize("t", REGIME_TIMES)
def test_factor_centre_follows_branch(field, t):
    for sign in (1, -1):
        f = GaussianFactor(100.0, 0.0, sign * field.b, field.t_i, field.t_f)
        assert f.center(t) == pytest.approx(cf.branch_center(t, field, sign), abs=1e-9)
        assert f.sigma(t) == pytest.approx(cf.packet_sigma(t, 100.0), rel=1e-12)


@pytest.mark.parametrize("t", REGIME_TIMES)
def test_mirror_symmetry_of_branches(field, t):
    up = GaussianFactor(100.0, 0.0, field.b, field.t_i, field.t_f)
    down = GaussianFactor(100.0, 0.0, -field.b, field.t_i, field.t_f)
    z = np.linspace(-3000, 3000, 61)
    assert np.allclose(up.value(z, t), down.value(-z, t), rtol=1e-12, atol=0)


@pytest.mark.parametrize("t", [1e4, 2.5e4, 8e4])
def test_branch_log_ratio_matches_moduli(field, t):
    for z in (-300.0, -20.0, 45.0, 700.0):
        wp = abs(cf.psi_z(z, t, 100.0, field, +1)) ** 2
        wm = abs(cf.psi_z(z, t, 100.0, field, -1)) ** 2
        assert cf.branch_log_ratio(z, t, 100.0, field) == pytest.approx(math.log(wp / wm), abs=1e-9)


def test_branch_log_ratio_resolves_near_equal_weights(field):
    # just after switch-on the two weights agree to ~1e-7; the ratio stays first order in z
    t = field.t_i + 60.0
    r1 = cf.branch_log_ratio(-6.0, t, 100.0, field)
    r2 = cf.branch_log_ratio(-12.0, t, 100.0, field)
    assert 0 < abs(r1) < 1e-5
    assert r2 == pytest.approx(2 * r1, rel=1e-14)


def test_regimes(field):
    f = GaussianFactor(100.0, 0.0, field.b, field.t_i, field.t_f)
    assert [f.regime(t) for t in (0, field.t_i, 3e4, field.t_f, 9e4)] == [0, 1, 1, 2, 2]
    assert GaussianFactor(100.0).regime(5e4) == 0


@pytest.mark.parametrize("t", [0.0, 3e4, 7e4])
def test_gradient_matches_finite_difference(epr_sg, rng, t):
    x = positions_at(epr_sg, t, 1, rng)[0]
    h = 1e-3
    for k in range(2):
        g = gradient(epr_sg, x, t, k)
        for ax in range(3):
            xp, xm = x.copy(), x.copy()
            xp[k, ax] += h
            xm[k, ax] -= h
            fd = (evaluate(epr_sg, xp, t) - evaluate(epr_sg, xm, t)) / (2 * h)
            assert np.allclose(g[ax], fd, rtol=1e-7, atol=1e-9 * np.abs(g).max())


def test_laplacian_matches_finite_difference(spin_y, rng):
    t = 4e4
    x = positions_at(spin_y, t, 1, rng)[0]
    h = 1e-1
    fd = -6 * evaluate(spin_y, x, t)
    for ax in range(3):
        for s in (1, -1):
            y = x.copy()
            y[0, ax] += s * h
            fd = fd + evaluate(spin_y, y, t)
    fd /= h * h
    lap = laplacian(spin_y, x, t, 0)
    assert np.allclose(lap, fd, rtol=1e-5, atol=1e-6 * np.abs(lap).max())


@pytest.mark.parametrize("name", ["spin_y", "weighted", "epr_sg"])
def test_pauli_equation_holds_in_every_regime(request, field, rng, name):
    state = request.getfixturevalue(name)
    for lo, hi in ((0, field.t_i), (field.t_i, field.t_f), (field.t_f, 1e5)):
        ts = rng.uniform(lo + 1, hi - 1, 15)
        xs = np.stack([positions_at(state, t, 1, rng)[0] for t in ts])
        assert pauli_residual(state, xs, ts).max() < 1e-6


@pytest.mark.parametrize("t_switch", [2e4, 6e4])
def test_continuous_across_switches(spin_y, rng, t_switch):
    xs = positions_at(spin_y, t_switch, 30, rng)
    assert switch_discontinuity(spin_y, xs, t_switch).max() < 1e-6


def test_reversed_post_field_drift_violates_schrodinger(field):
    # The drift term after switch-off must keep the branch moving outward.
    def residual(literal):
        z, t, h, ht = 900.0, 8e4, 1e-2, 1e-1
        f = lambda zz, tt: cf.psi_z(zz, tt, 100.0, field, +1, literal)
        dt = (f(z, t + ht) - f(z, t - ht)) / (2 * ht)
        lap = (f(z + h, t) - 2 * f(z, t) + f(z - h, t)) / h ** 2
        return abs(1j * dt + 0.5 * lap) / abs(f(z, t))

    assert residual(False) < 1e-8
    assert residual(True) > 1e-5


def test_y_device_kicks_along_y(params):
    fp = FieldProfile(axis="y")
    state = build_sg_state(params, fp, 1 / math.sqrt(2), 1j / math.sqrt(2))
    # spin up along y is an eigenstate of the rotated device: single term
    assert len(state.terms) == 1
    assert state.terms[0].factors[0][1].force == fp.b
    xs = np.array([[[3e3, 500.0, 10.0]], [[6e3, -200.0, 100.0]]])
    assert pauli_residual(state, xs, [3e4, 7e4]).max() < 1e-6


def test_normalisation_is_enforced(params, field):
    with pytest.raises(NormalizationError):
        build_sg_state(params, field, 1.0, 1.0)
    with pytest.raises(NormalizationError):
        build_epr_state(params, field, True, 0.5, 0.5)


def test_invalid_parameters():
    with pytest.raises(ValueError):
        FieldProfile(t_i=5.0, t_f=1.0)
    with pytest.raises(ValueError):
        FieldProfile(axis="x")
    with pytest.raises(ValueError):
        PacketParams(d_x=0.0)


def test_negative_time_rejected(spin_y):
    with pytest.raises(ValueError):
        evaluate(spin_y, np.zeros(3), -1.0)


def test_spin_part_normalised(weighted, epr_sg, epr_free):
    for s in (weighted, epr_sg, epr_free):
        assert s.spin_norm() == pytest.approx(1.0, abs=1e-14)


def test_peak_density_bounds_density(weighted, rng):
    for t in (0.0, 5e4, 1e5):
        peak = peak_density(weighted, t)
        xs = positions_at(weighted, t, 50, rng)
        rho = [np.sum(np.abs(evaluate(weighted, x, t)) ** 2) for x in xs]
        assert max(rho) <= peak * (1 + 1e-12)


def test_epr_momenta_opposite(epr_sg, params):
    for term in epr_sg.terms:
        assert term.factors[0][0].momentum == params.p
        assert term.factors[1][0].momentum == -params.p
