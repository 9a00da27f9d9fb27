"""Direct, regime-by-regime formulas for the Stern-Gerlach and EPR states.

These are written straight from the propagated Gaussian solution and the
reduced two-particle guidance laws, without the GaussianFactor machinery, so
they can serve as an independent cross-check of the generic engine.
"""

from __future__ import annotations

import numpy as np

from .states import FieldProfile, PacketParams


def _spread(d: float, t):
    return 1.0 + 1j * t / (2.0 * d * d)


def psi_x(x, t, d: float, p: float):
    s = _spread(d, t)
    pref = (2 * np.pi * d * d) ** -0.25 / np.sqrt(s)
    return pref * np.exp(-(x - p * t) ** 2 / (4 * d * d * s) + 1j * p * x - 0.5j * p * p * t)


def psi_y(y, t, d: float):
    s = _spread(d, t)
    return (2 * np.pi * d * d) ** -0.25 / np.sqrt(s) * np.exp(-y * y / (4 * d * d * s))


def psi_z(z, t, d: float, field: FieldProfile, sign: int, literal_sign: bool = False):
    """z factor of psi_+ (sign=+1) or psi_- (sign=-1) in the three field regimes.

    literal_sign reproduces the printed post-field drift term
    (... +/- b (t_f - t_i)(t - t_f)), which moves the branch centre backwards;
    the default continues the motion outward.
    """
    b, ti, tf = field.b, field.t_i, field.t_f
    s = _spread(d, t)
    pref = (2 * np.pi * d * d) ** -0.25 / np.sqrt(s)
    w = 4 * d * d * s
    if t < ti:
        return pref * np.exp(-z * z / w)
    if t < tf:
        tau = t - ti
        return pref * np.exp(-(z - sign * b * tau ** 2 / 2) ** 2 / w
                             + sign * 1j * b * tau * z - 1j * b * b * tau ** 3 / 6)
    dt = tf - ti
    drift = -sign * b * dt * (t - tf)
    if literal_sign:
        drift = -drift
    return pref * np.exp(-(z - sign * b * dt ** 2 / 2 + drift) ** 2 / w
                         + sign * 1j * b * dt * z - 1j * b * b * dt ** 3 / 6
                         - 0.5j * b * b * dt * dt * (t - tf))


def dlog_psi_z(z, t, d: float, field: FieldProfile, sign: int):
    """d/dz log psi_z, from the same exponents as psi_z."""
    b, ti, tf = field.b, field.t_i, field.t_f
    w = 4 * d * d * _spread(d, t)
    if t < ti:
        return -2 * z / w
    if t < tf:
        tau = t - ti
        return -2 * (z - sign * b * tau ** 2 / 2) / w + sign * 1j * b * tau
    dt = tf - ti
    return -2 * (z - sign * b * dt ** 2 / 2 - sign * b * dt * (t - tf)) / w + sign * 1j * b * dt


def branch_log_ratio(z, t, d: float, field: FieldProfile):
    """log(|psi_{z,+}|^2 / |psi_{z,-}|^2), taken from the exponent difference.

    The two exponents differ only by terms odd in the kick, so this stays
    accurate when the two weights are nearly equal.
    """
    w = 4 * d * d * _spread(d, t)
    return 8 * z * branch_center(t, field, +1) * (1 / w).real


def branch_center(t: float, field: FieldProfile, sign: int) -> float:
    """Centre of |psi_{z,+/-}|^2."""
    b, ti, tf = field.b, field.t_i, field.t_f
    if t < ti:
        return 0.0
    if t < tf:
        return sign * b * (t - ti) ** 2 / 2
    dt = tf - ti
    return sign * (b * dt ** 2 / 2 + b * dt * (t - tf))


def packet_sigma(t: float, d: float) -> float:
    """Standard deviation of |psi|^2 along one axis."""
    return d * np.sqrt(1.0 + t * t / (4.0 * d ** 4))


def sg_spinor(x, t, params: PacketParams, field: FieldProfile, c_plus, c_minus):
    """(c_+ psi_+, c_- psi_-) at a single point."""
    px = psi_x(x[0], t, params.d_x, params.p) * psi_y(x[1], t, params.d_y)
    return np.array([c_plus * px * psi_z(x[2], t, params.d_z, field, +1),
                     c_minus * px * psi_z(x[2], t, params.d_z, field, -1)])


def _dlog_free(x, t, params: PacketParams, p: float):
    """Gradient of log psi for a free packet with momentum p."""
    out = []
    for ax, d in enumerate(params.widths):
        s = _spread(d, t)
        mom = p if ax == 0 else 0.0
        out.append(-(x[ax] - mom * t) / (2 * d * d * s) + 1j * mom)
    return np.array(out)


def entangled_free_guidance(x1, x2, t, chi, params: PacketParams, a: float, b: float):
    """Velocities and rates for psi_1 psi_2 (a|ud> - b|du>), both packets free.

    Particle 1 moves with +p, particle 2 with -p. Returns
    (v1, v2, (r1_plus, r1_minus), (r2_plus, r2_minus)).
    """
    kappa = (a * a - b * b) / (a * a + b * b)
    results = []
    for k, (x, p) in enumerate(((x1, params.p), (x2, -params.p)), start=1):
        g = _dlog_free(x, t, params, p)
        current = g.imag
        grad_ln_rho = 2 * g.real
        # curl(ln|psi|^2 e_z) = (d_y, -d_x, 0) ln|psi|^2
        curl = np.array([grad_ln_rho[1], -grad_ln_rho[0], 0.0])
        sign = -(-1) ** k
        v = current + sign * kappa * (0.5 * curl + chi[k - 1] * np.array([0.0, 0.0, 1.0]))
        drive = sign * kappa * grad_ln_rho[2]
        results.append((v, (max(drive, 0.0), max(-drive, 0.0))))
    (v1, r1), (v2, r2) = results
    return v1, v2, r1, r2


def epr_sg_guidance(x1, x2, t, chi, params: PacketParams, field: FieldProfile):
    """Guidance for psi_2(x2) [psi_{B,+}(x1)|ud> - psi_{B,-}(x1)|du>].

    Built from s_1 = -s_2 = (|psi_+|^2 - |psi_-|^2)/(|psi_+|^2 + |psi_-|^2) e_z.
    Returns (v1, v2, s1, s2, (r1_plus, r1_minus), (r2_plus, r2_minus)).
    """
    d = params.d_z
    pp = psi_z(x1[2], t, d, field, +1)
    pm = psi_z(x1[2], t, d, field, -1)
    wp, wm = abs(pp) ** 2, abs(pm) ** 2
    sz = np.tanh(0.5 * branch_log_ratio(x1[2], t, d, field))

    # particle 1: shared x, y factors, branch-weighted z derivative
    g1 = _dlog_free(x1, t, params, params.p)
    gzp = dlog_psi_z(x1[2], t, d, field, +1)
    gzm = dlog_psi_z(x1[2], t, d, field, -1)
    current1 = g1.imag.copy()
    current1[2] = (wp * gzp.imag + wm * gzm.imag) / (wp + wm)
    # S_1 = |psi_2|^2 |psi_xy|^2 (wp - wm) e_z, rho = |psi_2|^2 |psi_xy|^2 (wp + wm)
    dx_ln = 2 * g1.real[0]
    dy_ln = 2 * g1.real[1]
    # (wp gzp - wm gzm)/(wp + wm) = sz (gzp + gzm)/2 + (gzp - gzm)/2, with the
    # branch difference of the log-derivative taken analytically
    gap = 4 * branch_center(t, field, +1) * (1 / (4 * d * d * _spread(d, t))).real
    dz_s = sz * (gzp.real + gzm.real) + gap
    curl1 = np.array([dy_ln * sz, -dx_ln * sz, 0.0])
    v1 = current1 + 0.5 * curl1 + chi[0] * np.array([0.0, 0.0, sz])
    drive1 = dz_s

    g2 = _dlog_free(x2, t, params, -params.p)
    ln2 = 2 * g2.real
    s2z = -sz
    curl2 = np.array([ln2[1] * s2z, -ln2[0] * s2z, 0.0])
    v2 = g2.imag + 0.5 * curl2 + chi[1] * np.array([0.0, 0.0, s2z])
    drive2 = s2z * ln2[2]
    s1 = np.array([0.0, 0.0, sz])
    return (v1, v2, s1, -s1, (max(drive1, 0.0), max(-drive1, 0.0)),
            (max(drive2, 0.0), max(-drive2, 0.0)))


def entangled_free_density_gradients(x1, x2, t, params: PacketParams):
    """(grad_1 log rho, grad_2 log rho) for the field-free entangled pair."""
    return (2 * _dlog_free(x1, t, params, params.p).real,
            2 * _dlog_free(x2, t, params, -params.p).real)


def epr_sg_density_gradients(x1, x2, t, params: PacketParams, field: FieldProfile):
    """(grad_1 log rho, grad_2 log rho) for the pair with the device on particle 1."""
    d = params.d_z
    g1 = 2 * _dlog_free(x1, t, params, params.p).real
    # weight of the + branch, from the stable log ratio
    lam = 0.5 * (1 + np.tanh(0.5 * branch_log_ratio(x1[2], t, d, field)))
    g1[2] = 2 * (lam * dlog_psi_z(x1[2], t, d, field, +1).real
                 + (1 - lam) * dlog_psi_z(x1[2], t, d, field, -1).real)
    return g1, 2 * _dlog_free(x2, t, params, -params.p).real
