"""Compiled inner loops: packet factors, spinor evaluation, guidance fields and
the Cash-Karp / chirality-flip stepping.

A state is passed around in packed form:

    coef   complex128[T]          term amplitudes
    params float64[T, N, 3, 5]    (width, momentum, force, t_on, t_off) per 1D factor
    kets   complex128[T, N, 2]    per-particle spinor of each term

Component index j of the 2**N dimensional spinor uses particle 0 as the most
significant bit, bit value 0 meaning spin up along z.
"""

import cmath
import math

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True)

# guidance refuses to evaluate below this fraction of the peak density
NODE_FLOOR = 1e-30

OK = 0
STEP_FAILURE = 1
NODE_AT_START = 2
RATE_TOO_HIGH = 3

# Cash-Karp 5(4) tableau
CK_C = np.array([0.0, 1 / 5, 3 / 10, 3 / 5, 1.0, 7 / 8])
CK_A = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [1 / 5, 0.0, 0.0, 0.0, 0.0],
    [3 / 40, 9 / 40, 0.0, 0.0, 0.0],
    [3 / 10, -9 / 10, 6 / 5, 0.0, 0.0],
    [-11 / 54, 5 / 2, -70 / 27, 35 / 27, 0.0],
    [1631 / 55296, 175 / 512, 575 / 13824, 44275 / 110592, 253 / 4096],
])
CK_B5 = np.array([37 / 378, 0.0, 250 / 621, 125 / 594, 0.0, 512 / 1771])
CK_B4 = np.array([2825 / 27648, 0.0, 18575 / 48384, 13525 / 55296, 277 / 14336, 1 / 4])
CK_E = CK_B5 - CK_B4


@njit(**_JIT)
def factor_coefficients(width, momentum, force, t_on, t_off, t):
    """(A, B, C) with factor = exp(A q^2 + B q + C) at time t.

    Free Gaussian packet with the given momentum, kicked by a constant force
    on [t_on, t_off). The kick enters through a shift of the free packet plus
    a plane-wave phase, which keeps the three time regimes continuous.
    """
    kick = 0.0
    shift = 0.0
    phase = 0.0
    if force != 0.0 and t > t_on:
        tau = min(t, t_off) - t_on
        since_off = t - t_on - tau
        kick = force * tau
        shift = 0.5 * force * tau * tau + kick * since_off
        phase = -force * force * tau * tau * tau / 6.0 - 0.5 * kick * kick * since_off
    d2 = width * width
    w = complex(4.0 * d2, 2.0 * t)
    center = shift + momentum * t
    a = -1.0 / w
    b = 2.0 * center / w + 1j * (momentum + kick)
    c = (-center * center / w
         + 1j * (phase - momentum * shift - 0.5 * momentum * momentum * t)
         - 0.25 * math.log(2.0 * math.pi * d2)
         - 0.5 * cmath.log(complex(1.0, t / (2.0 * d2))))
    return a, b, c


@njit(**_JIT)
def make_work(params):
    """Scratch for psi_and_grad: per factor exponent, log-derivative, log peak."""
    return np.empty((params.shape[0], params.shape[1], 3, 3), dtype=np.complex128)


@njit(**_JIT)
def _same_factor(params, m, mm, k, ax):
    for i in range(5):
        if params[m, k, ax, i] != params[mm, k, ax, i]:
            return False
    return True


@njit(**_JIT)
def psi_and_grad(coef, params, kets, x, t, psi, grad, work):
    """Fill psi[j] and grad[k, axis, j]; return the peak-density scale at t."""
    n_terms = params.shape[0]
    n_part = params.shape[1]
    dim = psi.shape[0]
    psi[:] = 0.0
    grad[:] = 0.0
    peak = 0.0
    for m in range(n_terms):
        if coef[m] == 0.0:
            continue
        expo = 0.0j
        log_peak = 0.0
        weight = abs(coef[m]) ** 2
        for k in range(n_part):
            weight *= abs(kets[m, k, 0]) ** 2 + abs(kets[m, k, 1]) ** 2
            for ax in range(3):
                q = x[k, ax]
                reuse = -1
                for mm in range(m):
                    if coef[mm] != 0.0 and _same_factor(params, m, mm, k, ax):
                        reuse = mm
                        break
                if reuse >= 0:
                    work[m, k, ax, :] = work[reuse, k, ax, :]
                else:
                    a, b, c = factor_coefficients(params[m, k, ax, 0], params[m, k, ax, 1],
                                                  params[m, k, ax, 2], params[m, k, ax, 3],
                                                  params[m, k, ax, 4], t)
                    work[m, k, ax, 0] = (a * q + b) * q + c
                    work[m, k, ax, 1] = 2.0 * a * q + b
                    work[m, k, ax, 2] = 2.0 * c.real - b.real * b.real / (2.0 * a.real)
                expo += work[m, k, ax, 0]
                log_peak += work[m, k, ax, 2].real
        peak += weight * math.exp(log_peak)
        val = coef[m] * cmath.exp(expo)
        for j in range(dim):
            amp = val
            for k in range(n_part):
                amp *= kets[m, k, (j >> (n_part - 1 - k)) & 1]
            if amp == 0.0:
                continue
            psi[j] += amp
            for k in range(n_part):
                for ax in range(3):
                    grad[k, ax, j] += amp * work[m, k, ax, 1]
    return peak


@njit(**_JIT)
def psi_laplacian(coef, params, kets, x, t, k, lap):
    """Laplacian with respect to particle k, from the exact log-derivatives."""
    n_terms = params.shape[0]
    n_part = params.shape[1]
    dim = lap.shape[0]
    lap[:] = 0.0
    for m in range(n_terms):
        expo = 0.0j
        second = 0.0j
        for kk in range(n_part):
            for ax in range(3):
                a, b, c = factor_coefficients(params[m, kk, ax, 0], params[m, kk, ax, 1],
                                              params[m, kk, ax, 2], params[m, kk, ax, 3],
                                              params[m, kk, ax, 4], t)
                q = x[kk, ax]
                expo += (a * q + b) * q + c
                if kk == k:
                    g = 2.0 * a * q + b
                    second += g * g + 2.0 * a
        val = coef[m] * cmath.exp(expo) * second
        for j in range(dim):
            amp = val
            for kk in range(n_part):
                amp *= kets[m, kk, (j >> (n_part - 1 - kk)) & 1]
            lap[j] += amp


@njit(**_JIT)
def spin_density(psi, k, n_part, out):
    """out[a] = Psi^dagger sigma_a^(k) Psi."""
    mask = 1 << (n_part - 1 - k)
    sx = 0.0
    sy = 0.0
    sz = 0.0
    for j in range(psi.shape[0]):
        cj = psi[j].conjugate()
        other = psi[j ^ mask]
        if (j & mask) == 0:
            sy += (cj * (-1j) * other).real
            sz += (cj * psi[j]).real
        else:
            sy += (cj * 1j * other).real
            sz -= (cj * psi[j]).real
        sx += (cj * other).real
    out[0] = sx
    out[1] = sy
    out[2] = sz


@njit(**_JIT)
def guidance(coef, params, kets, x, chi, t, psi, grad, work, vel, rate_plus, rate_minus, spin):
    """Velocities, jump rates r_+ / r_- and spin vectors of all particles.

    Returns the density, or -1.0 when the density is below the node floor
    (outputs are then left untouched).
    """
    peak = psi_and_grad(coef, params, kets, x, t, psi, grad, work)
    n_part = x.shape[0]
    dim = psi.shape[0]
    rho = 0.0
    for j in range(dim):
        rho += psi[j].real ** 2 + psi[j].imag ** 2
    if not rho > NODE_FLOOR * peak:
        return -1.0
    for k in range(n_part):
        mask = 1 << (n_part - 1 - k)
        # d_b (Psi^dagger sigma_a Psi) accumulated as s{a}{b}; current as c{b}
        c0 = c1 = c2 = 0.0
        sx0 = sx1 = sx2 = sy0 = sy1 = sy2 = sz0 = sz1 = sz2 = 0.0
        spx = spy = spz = 0.0
        for j in range(dim):
            cj = psi[j].conjugate()
            jf = j ^ mask
            sign = 1.0 if (j & mask) == 0 else -1.0
            g0 = cj * grad[k, 0, j]
            g1 = cj * grad[k, 1, j]
            g2 = cj * grad[k, 2, j]
            f0 = cj * grad[k, 0, jf]
            f1 = cj * grad[k, 1, jf]
            f2 = cj * grad[k, 2, jf]
            c0 += g0.imag
            c1 += g1.imag
            c2 += g2.imag
            sx0 += f0.real
            sx1 += f1.real
            sx2 += f2.real
            sy0 += sign * f0.imag
            sy1 += sign * f1.imag
            sy2 += sign * f2.imag
            sz0 += sign * g0.real
            sz1 += sign * g1.real
            sz2 += sign * g2.real
            other = cj * psi[jf]
            spx += other.real
            spy += sign * other.imag
            spz += sign * (psi[j].real ** 2 + psi[j].imag ** 2)
        spin[k, 0] = spx / rho
        spin[k, 1] = spy / rho
        spin[k, 2] = spz / rho
        # curl uses 2 Re(...) = d_b S_a, hence the factor 0.5 * 2
        vel[k, 0] = c0 / rho + (sz1 - sy2) / rho + chi[k] * spin[k, 0]
        vel[k, 1] = c1 / rho + (sx2 - sz0) / rho + chi[k] * spin[k, 1]
        vel[k, 2] = c2 / rho + (sy0 - sx1) / rho + chi[k] * spin[k, 2]
        drive = 2.0 * (sx0 + sy1 + sz2) / rho
        rate_plus[k] = drive if drive > 0.0 else 0.0
        rate_minus[k] = -drive if drive < 0.0 else 0.0
    return rho


@njit(**_JIT)
def guidance_many(coef, params, kets, xs, chis, ts, vel, rate_plus, rate_minus, spin, rho):
    """Vectorised guidance over configurations; NaN marks node-proximity entries."""
    n_part = params.shape[1]
    dim = 1 << n_part
    psi = np.empty(dim, dtype=np.complex128)
    grad = np.empty((n_part, 3, dim), dtype=np.complex128)
    work = make_work(params)
    for i in range(xs.shape[0]):
        r = guidance(coef, params, kets, xs[i], chis[i], ts[i], psi, grad, work,
                     vel[i], rate_plus[i], rate_minus[i], spin[i])
        if r < 0.0:
            vel[i, :, :] = np.nan
            rate_plus[i, :] = np.nan
            rate_minus[i, :] = np.nan
            spin[i, :, :] = np.nan
            rho[i] = np.nan
        else:
            rho[i] = r


@njit(**_JIT)
def evaluate_many(coef, params, kets, xs, ts, psis, grads):
    work = make_work(params)
    for i in range(xs.shape[0]):
        psi_and_grad(coef, params, kets, xs[i], ts[i], psis[i], grads[i], work)


# ---------------------------------------------------------------------------
# stepping


@njit(**_JIT)
def _ck_attempt(coef, params, kets, x, chi, t, h, ks, xtmp, x5, psi, grad, work, rp, rm, sp):
    """One Cash-Karp trial; ks[0] must hold the velocity at (t, x).

    Returns the max-norm error estimate, or -1.0 if a stage hit a node.
    """
    n_part = x.shape[0]
    for i in range(1, 6):
        for k in range(n_part):
            for ax in range(3):
                acc = 0.0
                for j in range(i):
                    acc += CK_A[i, j] * ks[j, k, ax]
                xtmp[k, ax] = x[k, ax] + h * acc
        r = guidance(coef, params, kets, xtmp, chi, t + CK_C[i] * h, psi, grad, work,
                     ks[i], rp, rm, sp)
        if r < 0.0:
            return -1.0
    err = 0.0
    for k in range(n_part):
        for ax in range(3):
            acc5 = 0.0
            acce = 0.0
            for j in range(6):
                acc5 += CK_B5[j] * ks[j, k, ax]
                acce += CK_E[j] * ks[j, k, ax]
            x5[k, ax] = x[k, ax] + h * acc5
            err = max(err, abs(h * acce))
    return err


@njit(**_JIT)
def take_step(coef, params, kets, x, t, chi, flip_rate, dt, target, tol, cap, max_dt, min_dt,
              ks, xtmp, x5, psi, grad, work, rp, rm, sp):
    """Accept one drift step from (t, x) with chiralities held fixed.

    ks[0] and flip_rate must describe the start point. On success x5 holds the
    new positions. Returns (status, t_new, h, dt_next, landed) where landed
    means the step ended exactly on `target`.
    """
    rmax = 0.0
    for k in range(flip_rate.shape[0]):
        rmax = max(rmax, flip_rate[k])
    h = min(dt, max_dt)
    landed = False
    if t + h >= target:
        h = target - t
        landed = True
    if rmax * h > cap:
        h = cap / rmax
        landed = False
        if h < min_dt:
            return RATE_TOO_HIGH, t, h, dt, False
    while True:
        if landed:
            t_new = target
        else:
            t_new = t + h
        # step size exactly representable as a difference of recorded times
        h = t_new - t
        err = _ck_attempt(coef, params, kets, x, chi, t, h, ks, xtmp, x5, psi, grad, work, rp, rm, sp)
        if err >= 0.0 and err <= tol:
            break
        landed = False
        if err < 0.0:
            h *= 0.5
        else:
            h *= max(0.1, 0.9 * (tol / err) ** 0.25)
        if h < min_dt:
            return STEP_FAILURE, t, h, dt, False
    if err == 0.0:
        grow = 5.0
    else:
        grow = min(5.0, max(0.2, 0.9 * (tol / err) ** 0.2))
    dt_next = h * grow
    if landed and dt > dt_next:
        dt_next = dt
    return OK, t_new, h, dt_next, landed


@njit(**_JIT)
def _grow_rows(arr, n):
    shape = (max(2 * arr.shape[0], n),) + arr.shape[1:]
    out = np.empty(shape, dtype=arr.dtype)
    out[:arr.shape[0]] = arr
    return out


@njit(**_JIT)
def _flip_rates(chi, rp, rm, out):
    # chi -> -chi happens at rate r_{-chi}
    for k in range(chi.shape[0]):
        out[k] = rm[k] if chi[k] > 0 else rp[k]


@njit(**_JIT)
def run(coef, params, kets, x0, chi0, t0, t_end, tol, cap, max_dt, min_dt, dt_init, stride,
        stops, forced_times, forced_particles, stochastic, rng):
    """Integrate one trajectory from t0 to t_end.

    stochastic: chirality flips are Bernoulli draws with probability
        r_{-chi} * h evaluated at the step start (one uniform per particle
        per accepted step, always drawn).
    otherwise: flips happen exactly at forced_times for forced_particles.
    Steps land exactly on every time in `stops` (sorted), which are recorded.
    """
    n_part = x0.shape[0]
    dim = 1 << n_part
    psi = np.empty(dim, dtype=np.complex128)
    grad = np.empty((n_part, 3, dim), dtype=np.complex128)
    work = make_work(params)
    ks = np.empty((6, n_part, 3))
    xtmp = np.empty((n_part, 3))
    x5 = np.empty((n_part, 3))
    rp = np.empty(n_part)
    rm = np.empty(n_part)
    sp = np.empty((n_part, 3))
    rp_s = np.empty(n_part)
    rm_s = np.empty(n_part)
    sp_s = np.empty((n_part, 3))
    flip_rate = np.empty(n_part)
    flips = np.zeros(n_part, dtype=np.bool_)

    cap_rows = 1024
    times = np.empty(cap_rows)
    xs = np.empty((cap_rows, n_part, 3))
    chis = np.empty((cap_rows, n_part), dtype=np.int64)
    spins = np.empty((cap_rows, n_part, 3))
    rhos = np.empty(cap_rows)
    cap_j = 256
    j_t = np.empty(cap_j)
    j_k = np.empty(cap_j, dtype=np.int64)
    j_x = np.empty((cap_j, 3))
    j_chi = np.empty(cap_j, dtype=np.int64)
    j_s = np.empty((cap_j, 3))

    x = x0.copy()
    chi = chi0.copy()
    t = t0
    rho = guidance(coef, params, kets, x, chi, t, psi, grad, work, ks[0], rp, rm, sp)
    n_rows = 0
    n_jumps = 0
    n_steps = 0
    if rho < 0.0:
        return (NODE_AT_START, n_steps, times[:0], xs[:0], chis[:0], spins[:0], rhos[:0],
                j_t[:0], j_k[:0], j_x[:0], j_chi[:0], j_s[:0])
    times[0] = t
    xs[0] = x
    chis[0] = chi
    spins[0] = sp
    rhos[0] = rho
    n_rows = 1

    stop_i = 0
    while stop_i < stops.shape[0] and stops[stop_i] <= t:
        stop_i += 1
    forced_i = 0
    while forced_i < forced_times.shape[0] and forced_times[forced_i] <= t:
        forced_i += 1

    status = OK
    dt = dt_init
    while t < t_end:
        target = t_end
        if stop_i < stops.shape[0] and stops[stop_i] < target:
            target = stops[stop_i]
        if not stochastic and forced_i < forced_times.shape[0] and forced_times[forced_i] < target:
            target = forced_times[forced_i]
        if stochastic:
            _flip_rates(chi, rp, rm, flip_rate)
        else:
            flip_rate[:] = 0.0
        status, t_new, h, dt, landed = take_step(coef, params, kets, x, t, chi, flip_rate, dt,
                                                 target, tol, cap, max_dt, min_dt,
                                                 ks, xtmp, x5, psi, grad, work, rp_s, rm_s, sp_s)
        if status != OK:
            break
        x[:] = x5
        flips[:] = False
        if stochastic:
            for k in range(n_part):
                u = rng.random()
                if u < flip_rate[k] * h:
                    flips[k] = True
        elif landed:
            while forced_i < forced_times.shape[0] and forced_times[forced_i] == t_new:
                flips[forced_particles[forced_i]] = True
                forced_i += 1
        chi_before = chi.copy()
        for k in range(n_part):
            if flips[k]:
                chi[k] = -chi[k]
        t = t_new
        n_steps += 1
        rho = guidance(coef, params, kets, x, chi, t, psi, grad, work, ks[0], rp, rm, sp)
        if rho < 0.0:
            status = STEP_FAILURE
        for k in range(n_part):
            if flips[k]:
                if n_jumps == j_t.shape[0]:
                    j_t = _grow_rows(j_t, n_jumps + 1)
                    j_k = _grow_rows(j_k, n_jumps + 1)
                    j_x = _grow_rows(j_x, n_jumps + 1)
                    j_chi = _grow_rows(j_chi, n_jumps + 1)
                    j_s = _grow_rows(j_s, n_jumps + 1)
                j_t[n_jumps] = t
                j_k[n_jumps] = k
                j_x[n_jumps] = x[k]
                j_chi[n_jumps] = chi_before[k]
                if rho < 0.0:
                    j_s[n_jumps] = np.nan
                else:
                    j_s[n_jumps] = sp[k]
                n_jumps += 1
        at_stop = stop_i < stops.shape[0] and landed and t == stops[stop_i]
        while stop_i < stops.shape[0] and stops[stop_i] <= t:
            stop_i += 1
        if rho < 0.0:
            break
        if n_steps % stride == 0 or at_stop or t >= t_end:
            if n_rows == times.shape[0]:
                times = _grow_rows(times, n_rows + 1)
                xs = _grow_rows(xs, n_rows + 1)
                chis = _grow_rows(chis, n_rows + 1)
                spins = _grow_rows(spins, n_rows + 1)
                rhos = _grow_rows(rhos, n_rows + 1)
            times[n_rows] = t
            xs[n_rows] = x
            chis[n_rows] = chi
            spins[n_rows] = sp
            rhos[n_rows] = rho
            n_rows += 1
    return (status, n_steps, times[:n_rows].copy(), xs[:n_rows].copy(), chis[:n_rows].copy(),
            spins[:n_rows].copy(), rhos[:n_rows].copy(), j_t[:n_jumps].copy(), j_k[:n_jumps].copy(),
            j_x[:n_jumps].copy(), j_chi[:n_jumps].copy(), j_s[:n_jumps].copy())


@njit(**_JIT)
def replay(coef, params, kets, x0, chi0, times, uniforms):
    """Re-run a trajectory on a fixed time grid with given per-step uniforms.

    Every interval is one Cash-Karp step (no error control); particle k flips
    after step i when uniforms[i, k] < r_{-chi_k} * h at the step start.
    Returns (status, xs, chis, spins, rhos, n_flips) at every grid time.
    """
    n_part = x0.shape[0]
    dim = 1 << n_part
    n = times.shape[0]
    psi = np.empty(dim, dtype=np.complex128)
    grad = np.empty((n_part, 3, dim), dtype=np.complex128)
    work = make_work(params)
    ks = np.empty((6, n_part, 3))
    xtmp = np.empty((n_part, 3))
    x5 = np.empty((n_part, 3))
    rp = np.empty(n_part)
    rm = np.empty(n_part)
    sp = np.empty((n_part, 3))
    rp_s = np.empty(n_part)
    rm_s = np.empty(n_part)
    sp_s = np.empty((n_part, 3))
    flip_rate = np.empty(n_part)
    xs = np.full((n, n_part, 3), np.nan)
    chis = np.zeros((n, n_part), dtype=np.int64)
    spins = np.full((n, n_part, 3), np.nan)
    rhos = np.full(n, np.nan)
    n_flips = np.zeros(n_part, dtype=np.int64)

    x = x0.copy()
    chi = chi0.copy()
    rho = guidance(coef, params, kets, x, chi, times[0], psi, grad, work, ks[0], rp, rm, sp)
    if rho < 0.0:
        return NODE_AT_START, xs, chis, spins, rhos, n_flips
    xs[0] = x
    chis[0] = chi
    spins[0] = sp
    rhos[0] = rho
    for i in range(n - 1):
        h = times[i + 1] - times[i]
        _flip_rates(chi, rp, rm, flip_rate)
        err = _ck_attempt(coef, params, kets, x, chi, times[i], h, ks, xtmp, x5,
                          psi, grad, work, rp_s, rm_s, sp_s)
        if err < 0.0:
            return STEP_FAILURE, xs, chis, spins, rhos, n_flips
        x[:] = x5
        for k in range(n_part):
            if uniforms[i, k] < flip_rate[k] * h:
                chi[k] = -chi[k]
                n_flips[k] += 1
        rho = guidance(coef, params, kets, x, chi, times[i + 1], psi, grad, work, ks[0], rp, rm, sp)
        if rho < 0.0:
            return STEP_FAILURE, xs, chis, spins, rhos, n_flips
        xs[i + 1] = x
        chis[i + 1] = chi
        spins[i + 1] = sp
        rhos[i + 1] = rho
    return OK, xs, chis, spins, rhos, n_flips
