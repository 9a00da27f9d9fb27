import numpy as np
import pytest

from zigzag import closed_forms as cf
from zigzag.guidance import (NodeProximity, ParticleConfig, guidance_batch, guidance_sample,
                             jump_drive_divergence_form, jump_rate, spin_vector, velocity, velocity_terms)
from zigzag.sampling import positions_at
from zigzag.states import build_epr_state

TIMES = [0.0, 1.5e4, 3e4, 5.5e4, 6.5e4, 9e4]


def test_spin_y_state_at_origin(spin_y):
    # s = (0, 1, 0); current = (p, 0, 0); curl term gives (d_y - ...) = 0 at origin,
    # chirality term adds s
    g = guidance_sample(spin_y, [0.0, 0.0, 0.0], 0.0, [1])
    assert np.allclose(g.spin[0], [0, 1, 0], atol=1e-15)
    assert np.allclose(g.velocity[0], [0.1, 1.0, 0.0], atol=1e-15)
    g = guidance_sample(spin_y, [0.0, 0.0, 0.0], 0.0, [-1])
    assert np.allclose(g.velocity[0], [0.1, -1.0, 0.0], atol=1e-15)


def test_spin_up_curl_term(spin_up):
    # s = e_z, v_curl = (d_y ln rho, -d_x ln rho, 0)/2 with ln rho = -y^2/(2 d^2) + ...
    v = velocity(spin_up, [0.0, 50.0, 0.0], 0.0, chirality=1)
    assert v == pytest.approx([0.1 - 50 / (2 * 1e4), 0.0, 1.0], abs=1e-15)


def test_spin_up_rates(spin_up):
    # r_chi = [chi d_z ln rho]^+ with d_z ln rho = -z / d^2
    assert jump_rate(spin_up, [0, 0, -100.0], 0.0, target_chirality=1) == pytest.approx(0.01)
    assert jump_rate(spin_up, [0, 0, -100.0], 0.0, target_chirality=-1) == 0.0
    assert jump_rate(spin_up, [0, 0, 100.0], 0.0, target_chirality=-1) == pytest.approx(0.01)
    with pytest.raises(ValueError):
        jump_rate(spin_up, [0, 0, 0], 0.0, target_chirality=0)


def test_flip_rate_uses_opposite_chirality(spin_up):
    g = guidance_sample(spin_up, [0, 0, -100.0], 0.0, [-1])
    assert g.flip_rate[0] == g.rate_plus[0]
    g = guidance_sample(spin_up, [0, 0, -100.0], 0.0, [1])
    assert g.flip_rate[0] == g.rate_minus[0] == 0.0


@pytest.mark.parametrize("t", TIMES)
def test_single_particle_structure(weighted, rng, t):
    xs = positions_at(weighted, t, 40, rng)
    g = guidance_batch(weighted, xs, t, rng.choice([-1, 1], size=(40, 1)))
    assert np.abs(np.linalg.norm(g["spin"][:, 0], axis=1) - 1).max() < 1e-12
    assert np.all(g["rate_plus"] * g["rate_minus"] == 0.0)
    for x in xs[:5]:
        for chi in (1, -1):
            third = velocity_terms(weighted, x, t, 0, chi)[2]
            assert np.linalg.norm(third) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("t", TIMES)
def test_velocity_terms_sum_to_kernel_velocity(epr_sg, rng, t):
    x = positions_at(epr_sg, t, 1, rng)[0]
    chi = np.array([1, -1])
    g = guidance_sample(epr_sg, x, t, chi)
    for k in range(2):
        total = sum(velocity_terms(epr_sg, x, t, k, chi[k]))
        assert np.allclose(total, g.velocity[k], rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("t", TIMES)
def test_rate_gradient_form_matches_divergence_form(weighted, rng, t):
    # r_chi = [chi div(Psi^+ sigma Psi) / rho]^+, stencil versus analytic gradients
    for x in positions_at(weighted, t, 5, rng):
        g = guidance_sample(weighted, x, t, [1])
        drive = g.rate_plus[0] - g.rate_minus[0]
        div = jump_drive_divergence_form(weighted, x, t)
        assert drive == pytest.approx(div, rel=1e-6, abs=1e-12)


@pytest.mark.parametrize("t", TIMES)
def test_generic_matches_entangled_free_formula(params, field, rng, t):
    a, b = 0.8, 0.6
    state = build_epr_state(params, field, False, a, b)
    for x in positions_at(state, t, 20, rng):
        chi = rng.choice([-1, 1], size=2)
        g = guidance_sample(state, x, t, chi)
        v1, v2, r1, r2 = cf.entangled_free_guidance(x[0], x[1], t, chi, params, a, b)
        assert np.allclose(g.velocity, [v1, v2], rtol=1e-12, atol=1e-16)
        assert np.allclose([g.rate_plus, g.rate_minus], np.array([r1, r2]).T, rtol=1e-10, atol=1e-18)


@pytest.mark.parametrize("t", TIMES)
def test_generic_matches_epr_sg_formula(epr_sg, params, field, rng, t):
    for x in positions_at(epr_sg, t, 20, rng):
        chi = rng.choice([-1, 1], size=2)
        g = guidance_sample(epr_sg, x, t, chi)
        v1, v2, s1, s2, r1, r2 = cf.epr_sg_guidance(x[0], x[1], t, chi, params, field)
        assert np.allclose(g.velocity, [v1, v2], rtol=1e-10, atol=1e-15)
        assert np.allclose(g.spin, [s1, s2], atol=1e-12)
        assert np.allclose([g.rate_plus, g.rate_minus], np.array([r1, r2]).T, rtol=1e-10, atol=1e-17)


@pytest.mark.parametrize("t", TIMES)
def test_epr_spins_opposite_and_local_invariant(epr_sg, rng, t):
    for x in positions_at(epr_sg, t, 10, rng):
        s = guidance_sample(epr_sg, x, t).spin
        assert np.abs(s[0] + s[1]).max() <= 1e-12
        y = x.copy()
        y[1] += rng.normal(0, 300, 3)
        assert np.abs(guidance_sample(epr_sg, y, t).spin - s).max() <= 1e-12


def test_equal_weights_kill_spin_terms_exactly(epr_free, rng):
    for t in TIMES:
        for x in positions_at(epr_free, t, 10, rng):
            g = guidance_sample(epr_free, x, t, [1, -1])
            assert np.all(g.spin == 0.0)
            assert np.all(g.rate_plus == 0.0) and np.all(g.rate_minus == 0.0)
            for k in range(2):
                _, curl, third = velocity_terms(epr_free, x, t, k)
                assert np.all(curl == 0.0) and np.all(third == 0.0)


def test_no_jumps_possible_before_field_for_epr_sg(epr_sg, rng):
    xs = positions_at(epr_sg, 1e4, 50, rng)
    g = guidance_batch(epr_sg, xs, 1e4)
    assert np.all(g["rate_plus"] == 0.0) and np.all(g["rate_minus"] == 0.0)


def test_spin_in_plane_and_far_from_it(spin_y):
    # after the field: y-spin on z = 0, +z far above
    x0 = 0.1 * 7e4
    assert spin_vector(spin_y, [x0, 0.0, 0.0], 7e4) == pytest.approx([0, 1, 0], abs=1e-12)
    assert spin_vector(spin_y, [x0, 0.0, 1600.0], 7e4) == pytest.approx([0, 0, 1], abs=1e-6)


def test_node_proximity_raised(spin_y):
    with pytest.raises(NodeProximity):
        guidance_sample(spin_y, [0.0, 0.0, 1e5], 0.0)
    g = guidance_batch(spin_y, np.array([[[0.0, 0.0, 1e5]], [[0.0, 0.0, 0.0]]]), 0.0)
    assert np.isnan(g["density"][0]) and np.isfinite(g["density"][1])


def test_particle_config_validation():
    with pytest.raises(ValueError):
        ParticleConfig(np.zeros((2, 3)), [1])
    with pytest.raises(ValueError):
        ParticleConfig(np.zeros((1, 3)), [0])
    c = ParticleConfig(np.zeros(3), [1], 2.0)
    d = c.copy()
    d.positions[0, 0] = 1.0
    assert c.positions[0, 0] == 0.0


@pytest.mark.parametrize("t", [1e4, 3e4, 8e4])
def test_closed_form_density_gradients(epr_sg, params, field, rng, t):
    h = 1e-3
    for x in positions_at(epr_sg, t, 5, rng):
        grads = cf.epr_sg_density_gradients(x[0], x[1], t, params, field)
        for k in range(2):
            fd = np.empty(3)
            for ax in range(3):
                xp, xm = x.copy(), x.copy()
                xp[k, ax] += h
                xm[k, ax] -= h
                lp = np.log(guidance_sample(epr_sg, xp, t).density)
                lm = np.log(guidance_sample(epr_sg, xm, t).density)
                fd[ax] = (lp - lm) / (2 * h)
            assert np.allclose(grads[k], fd, rtol=1e-6, atol=1e-9)
