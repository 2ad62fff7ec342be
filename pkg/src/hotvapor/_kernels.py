"""Compiled inner loops: Bloch matrix fill, TR-BDF2 step, path integration.

Parameter vector layout (``par``)::

    0 gamma   1 delta_hf   2 detuning   3 transit   4 g1   5 g2

All rates in rad/s. Along a path the system is affine in the field envelope,
A(t) = A0 + e(t) A1 and b(t) = b0 + e(t) b1, with
e(t) = exp(-|p0 + v t|^2 / w0^2) times an optional switch-on ramp (the
intensity envelope is e^2). The path routines are dtype-generic: they run on
the complex 8-vector or on its real Hermitian form.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

GAMMA_TRBDF2 = 2.0 - math.sqrt(2.0)
D_TRBDF2 = GAMMA_TRBDF2 / 2.0
C1_BDF = 1.0 / (GAMMA_TRBDF2 * (2.0 - GAMMA_TRBDF2))
C0_BDF = (1.0 - GAMMA_TRBDF2) ** 2 / (GAMMA_TRBDF2 * (2.0 - GAMMA_TRBDF2))
# third-order quadrature on the nodes (0, gamma, 1), used for the error estimate
B_G = 1.0 / (6.0 * GAMMA_TRBDF2 * (1.0 - GAMMA_TRBDF2))
B_1 = 0.5 - 1.0 / (6.0 * (1.0 - GAMMA_TRBDF2))
B_0 = 1.0 - B_G - B_1

# inf/nan checks must survive, so no 'nnan' / 'ninf'
FASTMATH = {"nsz", "arcp", "contract", "afn", "reassoc"}

STATUS_OK = 0
STATUS_UNDERFLOW = 1
STATUS_MAXSTEPS = 2


@njit(cache=True, fastmath=FASTMATH)
def fill_operator(A, b, par, o13, o23):
    """Write the 8x8 Bloch matrix and inhomogeneity for Rabi pair (o13, o23)."""
    gam = par[0]
    dhf = par[1]
    det = par[2]
    gt = par[3]
    g1 = par[4]
    g2 = par[5]
    g32 = gam - 1j * det
    g31 = gam - 1j * (det - dhf)
    g21 = gt + 1j * dhf
    o13c = np.conj(o13)
    o23c = np.conj(o23)
    for i in range(8):
        for j in range(8):
            A[i, j] = 0.0
    A[0, 0] = -gt - gam / 2
    A[0, 1] = -gam / 2
    A[0, 4] = 0.5j * o13c
    A[0, 5] = -0.5j * o13

    A[1, 0] = -gam / 2
    A[1, 1] = -gt - gam / 2
    A[1, 6] = 0.5j * o23c
    A[1, 7] = -0.5j * o23

    A[2, 2] = -g21
    A[2, 4] = 0.5j * o23c
    A[2, 7] = -0.5j * o13

    A[3, 3] = -np.conj(g21)
    A[3, 5] = -0.5j * o23
    A[3, 6] = 0.5j * o13c

    A[4, 0] = 1j * o13
    A[4, 1] = 0.5j * o13
    A[4, 2] = 0.5j * o23
    A[4, 4] = -g31

    A[5, 0] = -1j * o13c
    A[5, 1] = -0.5j * o13c
    A[5, 3] = -0.5j * o23c
    A[5, 5] = -np.conj(g31)

    A[6, 0] = 0.5j * o23
    A[6, 1] = 1j * o23
    A[6, 3] = 0.5j * o13
    A[6, 6] = -g32

    A[7, 0] = -0.5j * o23c
    A[7, 1] = -1j * o23c
    A[7, 2] = -0.5j * o13c
    A[7, 7] = -np.conj(g32)

    b[0] = gam / 2 + g1 * gt
    b[1] = gam / 2 + g2 * gt
    b[2] = 0.0
    b[3] = 0.0
    b[4] = -0.5j * o13
    b[5] = 0.5j * o13c
    b[6] = -0.5j * o23
    b[7] = 0.5j * o23c


@njit(cache=True, fastmath=FASTMATH)
def lu_factor(M, piv):
    """In-place LU with partial pivoting of an 8x8 matrix. Returns False if singular."""
    n = 8
    for k in range(n):
        p = k
        best = abs(M[k, k])
        for i in range(k + 1, n):
            a = abs(M[i, k])
            if a > best:
                best = a
                p = i
        if best == 0.0:
            return False
        piv[k] = p
        if p != k:
            for j in range(n):
                tmp = M[k, j]
                M[k, j] = M[p, j]
                M[p, j] = tmp
        inv = 1.0 / M[k, k]
        for i in range(k + 1, n):
            f = M[i, k] * inv
            M[i, k] = f
            for j in range(k + 1, n):
                M[i, j] -= f * M[k, j]
    return True


@njit(cache=True, fastmath=FASTMATH)
def lu_solve(M, piv, x):
    """Solve in place given the output of :func:`lu_factor`."""
    n = 8
    for k in range(n):
        p = piv[k]
        if p != k:
            tmp = x[k]
            x[k] = x[p]
            x[p] = tmp
    for i in range(n):
        s = x[i]
        for j in range(i):
            s -= M[i, j] * x[j]
        x[i] = s
    for i in range(n - 1, -1, -1):
        s = x[i]
        for j in range(i + 1, n):
            s -= M[i, j] * x[j]
        x[i] = s / M[i, i]


@njit(cache=True, fastmath=FASTMATH)
def matvec_add(A, y, b, out):
    n = 8
    for i in range(n):
        s = b[i]
        for j in range(n):
            s += A[i, j] * y[j]
        out[i] = s


@njit(cache=True, fastmath=FASTMATH)
def trbdf2_step(y0, f0, h, Ag, bg, A1, b1, rtol, atol, y1, f1, M, piv, work):
    """One TR-BDF2 step for y' = A(t) y + b(t).

    ``Ag, bg`` are evaluated at t + gamma h and ``A1, b1`` at t + h. Writes
    the new state into ``y1`` and its derivative into ``f1``; returns the
    scaled RMS norm of the filtered local error estimate, or inf when a
    stage matrix is singular.
    """
    n = 8
    dh = D_TRBDF2 * h
    yg = work[0]
    fg = work[1]
    est = work[2]
    # trapezoidal stage to t + gamma h
    for i in range(n):
        for j in range(n):
            M[i, j] = -dh * Ag[i, j]
        M[i, i] += 1.0
        yg[i] = y0[i] + dh * (f0[i] + bg[i])
    if not lu_factor(M, piv):
        return np.inf
    lu_solve(M, piv, yg)
    for i in range(n):
        fg[i] = (yg[i] - y0[i]) / dh - f0[i]
    # BDF2 stage to t + h
    for i in range(n):
        for j in range(n):
            M[i, j] = -dh * A1[i, j]
        M[i, i] += 1.0
        y1[i] = C1_BDF * yg[i] - C0_BDF * y0[i] + dh * b1[i]
    if not lu_factor(M, piv):
        return np.inf
    lu_solve(M, piv, y1)
    for i in range(n):
        f1[i] = (y1[i] - C1_BDF * yg[i] + C0_BDF * y0[i]) / dh
    # embedded third-order estimate, filtered through (I - d h A1)^-1
    for i in range(n):
        est[i] = h * (B_0 * f0[i] + B_G * fg[i] + B_1 * f1[i]) - (y1[i] - y0[i])
    lu_solve(M, piv, est)
    acc = 0.0
    for i in range(n):
        sc = atol + rtol * max(abs(y0[i]), abs(y1[i]))
        r = abs(est[i]) / sc
        acc += r * r
    return math.sqrt(acc / n)


@njit(cache=True, fastmath=FASTMATH)
def envelope(p0x, p0y, vx, vy, w0, t, t_on, t_rise):
    """Field envelope on a straight path with a sin^2 switch-on ramp."""
    if t < t_on:
        return 0.0
    x = p0x + vx * t
    y = p0y + vy * t
    e = math.exp(-(x * x + y * y) / (w0 * w0))
    if t_rise > 0.0 and t < t_on + t_rise:
        s = math.sin(0.5 * math.pi * (t - t_on) / t_rise)
        e *= s * s
    return e


@njit(cache=True, fastmath=FASTMATH)
def _affine(A, b, A0, A1, b0, b1, e):
    n = 8
    for i in range(n):
        for j in range(n):
            A[i, j] = A0[i, j] + e * A1[i, j]
        b[i] = b0[i] + e * b1[i]


@njit(cache=True, fastmath=FASTMATH)
def integrate_affine(A0, A1, b0, b1, p0x, p0y, vx, vy, w0, t_on, t_rise, y_init,
                     t_samples, max_step, rtol, atol, h_init, max_steps, out):
    """Integrate one atom along its path, storing the state at every sample time.

    Returns ``(status, n_done, n_steps)``: ``n_done`` is the number of sample
    rows of ``out`` that hold valid states.
    """
    n = 8
    A = np.empty_like(A0)
    b = np.empty_like(b0)
    Ag = np.empty_like(A0)
    bg = np.empty_like(b0)
    M = np.empty_like(A0)
    piv = np.empty(n, np.int64)
    work = np.empty((3, n), A0.dtype)
    y = y_init.copy()
    y1 = np.empty_like(y)
    f0 = np.empty_like(y)
    f1 = np.empty_like(y)

    t = t_samples[0]
    _affine(A, b, A0, A1, b0, b1, envelope(p0x, p0y, vx, vy, w0, t, t_on, t_rise))
    matvec_add(A, y, b, f0)
    for i in range(n):
        out[0, i] = y[i]
    h = min(h_init, max_step)
    steps = 0
    facmax = 5.0
    ns = t_samples.shape[0]
    for k in range(1, ns):
        t_target = t_samples[k]
        while t < t_target:
            remaining = t_target - t
            last = h >= remaining
            h_use = remaining if last else h
            e = envelope(p0x, p0y, vx, vy, w0, t + GAMMA_TRBDF2 * h_use, t_on, t_rise)
            _affine(Ag, bg, A0, A1, b0, b1, e)
            t1 = t_target if last else t + h_use
            e = envelope(p0x, p0y, vx, vy, w0, t1, t_on, t_rise)
            _affine(A, b, A0, A1, b0, b1, e)
            err = trbdf2_step(y, f0, h_use, Ag, bg, A, b, rtol, atol, y1, f1, M, piv, work)
            steps += 1
            if steps > max_steps:
                return STATUS_MAXSTEPS, k, steps
            if err <= 1.0:
                t = t1
                for i in range(n):
                    y[i] = y1[i]
                    f0[i] = f1[i]
                if err == 0.0:
                    fac = facmax
                else:
                    fac = min(facmax, max(0.2, 0.9 * err ** (-1.0 / 3.0)))
                facmax = 5.0
                # a step clipped to the sample time must not shrink h
                if not last or fac < 1.0:
                    h = min(max_step, h_use * fac)
            else:
                if math.isfinite(err):
                    fac = max(0.2, 0.9 * err ** (-1.0 / 3.0))
                else:
                    fac = 0.2
                h = h_use * fac
                facmax = 1.0
                if h < 1e-18 or h < 1e-14 * abs(t):
                    return STATUS_UNDERFLOW, k, steps
        for i in range(n):
            out[k, i] = y[i]
    return STATUS_OK, ns, steps


@njit(cache=True, fastmath=FASTMATH)
def state_is_physical(y, tol):
    """Population bounds and Hermitian-pair closure of a complex state vector."""
    r11 = y[0].real
    r22 = y[1].real
    if abs(y[0].imag) > 1e-9 or abs(y[1].imag) > 1e-9:
        return False
    if r11 < -tol or r22 < -tol or r11 > 1 + tol or r22 > 1 + tol:
        return False
    if r11 + r22 > 1 + tol:
        return False
    if abs(y[2] - np.conj(y[3])) > 1e-9:
        return False
    if abs(y[4] - np.conj(y[5])) > 1e-9:
        return False
    if abs(y[6] - np.conj(y[7])) > 1e-9:
        return False
    return True


@njit(cache=True, fastmath=FASTMATH)
def real_is_physical(x, tol):
    """Population bounds of a real-form state (Hermiticity holds by construction)."""
    r11 = x[0]
    r22 = x[1]
    if r11 < -tol or r22 < -tol or r11 > 1 + tol or r22 > 1 + tol:
        return False
    return r11 + r22 <= 1 + tol


@njit(cache=True, fastmath=FASTMATH)
def accumulate_chunk(A0, A1, b0, b1, w0, starts, dirs, durations, speed, dt_sample,
                     grid_n, box, max_step, rtol, atol, x_init, max_steps, phys_tol):
    """Integrate a chunk of chords (real form) and deposit sampled coherences.

    Returns per-chunk sums of rho13 and rho23, visit counts, the status of
    each trajectory, and the number of samples that violated physicality.
    A failed trajectory contributes nothing.
    """
    sum13 = np.zeros((grid_n, grid_n), np.complex128)
    sum23 = np.zeros((grid_n, grid_n), np.complex128)
    counts = np.zeros((grid_n, grid_n), np.int64)
    ntraj = starts.shape[0]
    status = np.zeros(ntraj, np.int64)
    violations = 0
    cell = box / grid_n
    half = box / 2
    for j in range(ntraj):
        ns = int(durations[j] / dt_sample) + 1
        ts = np.arange(ns) * dt_sample
        out = np.empty((ns, 8), np.float64)
        vx = dirs[j, 0] * speed
        vy = dirs[j, 1] * speed
        st, nd, _ = integrate_affine(A0, A1, b0, b1, starts[j, 0], starts[j, 1], vx, vy,
                                     w0, -1.0, 0.0, x_init, ts, max_step, rtol, atol,
                                     min(max_step, dt_sample), max_steps, out)
        status[j] = st
        if st != STATUS_OK:
            continue
        for k in range(ns):
            x = starts[j, 0] + vx * ts[k]
            y = starts[j, 1] + vy * ts[k]
            ix = min(max(int(math.floor((x + half) / cell)), 0), grid_n - 1)
            iy = min(max(int(math.floor((y + half) / cell)), 0), grid_n - 1)
            # rho13 = conj(rho31), rho23 = conj(rho32)
            sum13[iy, ix] += complex(out[k, 4], -out[k, 5])
            sum23[iy, ix] += complex(out[k, 6], -out[k, 7])
            counts[iy, ix] += 1
            if not real_is_physical(out[k], phys_tol):
                violations += 1
    return sum13, sum23, counts, status, violations


@njit(cache=True, fastmath=FASTMATH)
def final_states(A0, A1, b0, b1, w0, t_on, t_rise, starts, dirs, speed, t_end, max_step,
                 rtol, atol, x_init, max_steps, phys_tol):
    """Real-form state of each atom at ``t_end``."""
    ntraj = starts.shape[0]
    res = np.empty((ntraj, 8), np.float64)
    status = np.zeros(ntraj, np.int64)
    violations = 0
    ts = np.array([0.0, t_end])
    out = np.empty((2, 8), np.float64)
    for j in range(ntraj):
        st, _, _ = integrate_affine(A0, A1, b0, b1, starts[j, 0], starts[j, 1],
                                    dirs[j, 0] * speed, dirs[j, 1] * speed, w0, t_on,
                                    t_rise, x_init, ts, max_step, rtol, atol, 1e-9,
                                    max_steps, out)
        status[j] = st
        for i in range(8):
            res[j, i] = out[1, i]
        if st == STATUS_OK and not real_is_physical(out[1], phys_tol):
            violations += 1
    return res, status, violations
