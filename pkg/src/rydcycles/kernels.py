"""Compiled single-atom equations and integrators shared by the batched backends.

Per-atom arrays hold 8 reals ``(p_s, p_r, c_gs_re, c_gs_im, c_gr_re, c_gr_im,
c_sr_re, c_sr_im)``. The mean-field batch integrator stores coherences as
``sigma^ab`` directly; the phase-space engine stores quadratures
``x + i y = 2 sigma^ab`` and converts on the fly (``coherence_scale``).

``par`` is ``[omega_s, omega_r, delta_s, delta_r, gamma_s, gamma_r]``.
"""

import numpy as np
from numba import njit

ALL_TO_ALL = 0
SPARSE = 1


@njit(cache=True, inline="always")
def _clamp01(x):
    return min(max(x, 0.0), 1.0)


@njit(cache=True, inline="always")
def _rhs8(ps, pr, sgr, sgi, rgr, rgi, rsr, rsi, hs, hr, par, kappa, scale):
    """Scalar single-atom derivative in real arithmetic.

    Coherence arguments are in storage units; ``scale`` converts them to
    ``rho_sg, rho_rg, rho_rs``. Using ``-i (a + i b) = b - i a`` for each
    coherence equation.
    """
    om_s = par[0]
    om_r = par[1]
    g_s = par[4]
    g_r = par[5]
    inv = 1.0 / scale
    sgr *= inv
    sgi *= inv
    rgr *= inv
    rgi *= inv
    rsr *= inv
    rsi *= inv
    pg = 1.0 - ps - pr
    es = -par[2] + hs
    er = -par[3] + hr
    hos = 0.5 * om_s
    hor = 0.5 * om_r
    dps = -om_s * sgi - g_s * ps + kappa * ps
    dpr = -om_r * rgi - g_r * pr + kappa * pr
    # d rho_sg = -i (hos (pg - ps) + es rho_sg - hor conj(rho_rs)) + (kappa - g_s / 2) rho_sg
    a = hos * (pg - ps) + es * sgr - hor * rsr
    b = es * sgi + hor * rsi
    d = kappa - 0.5 * g_s
    dsgr = b + d * sgr
    dsgi = -a + d * sgi
    # d rho_rg = -i (hor (pg - pr) + er rho_rg - hos rho_rs) + (kappa - g_r / 2) rho_rg
    a = hor * (pg - pr) + er * rgr - hos * rsr
    b = er * rgi - hos * rsi
    d = kappa - 0.5 * g_r
    drgr = b + d * rgr
    drgi = -a + d * rgi
    # d rho_rs = -i (hor conj(rho_sg) - hos rho_rg + (er - es) rho_rs) + (kappa - (g_s + g_r) / 2) rho_rs
    a = hor * sgr - hos * rgr + (er - es) * rsr
    b = -hor * sgi - hos * rgi + (er - es) * rsi
    d = kappa - 0.5 * (g_s + g_r)
    drsr = b + d * rsr
    drsi = -a + d * rsi
    return (dps, dpr, scale * dsgr, scale * dsgi, scale * drgr, scale * drgi,
            scale * drsr, scale * drsi)


@njit(cache=True)
def atom_rhs(y, hs, hr, par, kappa, scale, out):
    """Single-atom derivative; ``kappa`` adds the norm-restoring term of the no-jump evolution.

    With ``kappa = 0`` this is the full single-atom Lindblad flow (the
    recycling into ``g`` is implicit because ``p_g = 1 - p_s - p_r``).
    """
    r = _rhs8(y[0], y[1], y[2], y[3], y[4], y[5], y[6], y[7], hs, hr, par, kappa, scale)
    for j in range(8):
        out[j] = r[j]


# ---------------------------------------------------------------------------
# mean-field batch integration


@njit(cache=True)
def _mf_batch_rhs(V, par, chi, out):
    for b in range(V.shape[0]):
        hs = chi[0] * V[b, 0] + chi[2] * V[b, 1]
        hr = chi[1] * V[b, 1] + chi[2] * V[b, 0]
        r = _rhs8(V[b, 0], V[b, 1], V[b, 2], V[b, 3], V[b, 4], V[b, 5], V[b, 6], V[b, 7],
                  hs, hr, par[b], 0.0, 1.0)
        for j in range(8):
            out[b, j] = r[j]


@njit(cache=True)
def mf_batch_integrate(V0, par, chi, dt, n_steps, record_from):
    """RK4 for independent mean-field systems; returns ``(final, late n_s/n_r series)``.

    ``V0`` is ``(B, 8)`` in sigma coordinates, ``par`` is ``(B, 6)``. Populations
    are recorded at every step ``i >= record_from`` (``i = 0`` is the start).
    """
    B = V0.shape[0]
    V = V0.copy()
    k1 = np.empty_like(V)
    k2 = np.empty_like(V)
    k3 = np.empty_like(V)
    k4 = np.empty_like(V)
    Y = np.empty_like(V)
    n_rec = n_steps - record_from + 1
    rec = np.empty((n_rec, B, 2))
    if record_from == 0:
        rec[0, :, 0] = V[:, 0]
        rec[0, :, 1] = V[:, 1]
    for i in range(1, n_steps + 1):
        _mf_batch_rhs(V, par, chi, k1)
        Y[:] = V + 0.5 * dt * k1
        _mf_batch_rhs(Y, par, chi, k2)
        Y[:] = V + 0.5 * dt * k2
        _mf_batch_rhs(Y, par, chi, k3)
        Y[:] = V + dt * k3
        _mf_batch_rhs(Y, par, chi, k4)
        V += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if i >= record_from:
            j = i - record_from
            rec[j, :, 0] = V[:, 0]
            rec[j, :, 1] = V[:, 1]
    return V, rec


# ---------------------------------------------------------------------------
# phase-space (OSDTWA) engine


@njit(cache=True)
def compute_fields(X, mode, chi, indptr, indices, vss, vrr, vsr, hs, hr):
    """Site-resolved shifts from the populations of all other atoms."""
    n = X.shape[0]
    if mode == ALL_TO_ALL:
        if n == 1:
            hs[0] = 0.0
            hr[0] = 0.0
            return
        tot_s = 0.0
        tot_r = 0.0
        for l in range(n):
            tot_s += X[l, 0]
            tot_r += X[l, 1]
        for l in range(n):
            ms = (tot_s - X[l, 0]) / (n - 1)
            mr = (tot_r - X[l, 1]) / (n - 1)
            hs[l] = chi[0] * ms + chi[2] * mr
            hr[l] = chi[1] * mr + chi[2] * ms
    else:
        for l in range(n):
            a = 0.0
            b = 0.0
            for q in range(indptr[l], indptr[l + 1]):
                k = indices[q]
                a += vss[q] * X[k, 0] + vsr[q] * X[k, 1]
                b += vrr[q] * X[k, 1] + vsr[q] * X[k, 0]
            hs[l] = 2.0 * a
            hr[l] = 2.0 * b


@njit(cache=True)
def jump_rate(ps, pr, par):
    return par[4] * _clamp01(ps) + par[5] * _clamp01(pr)


@njit(cache=True)
def sample_ground_atom(X, l, rng):
    """Discrete Wigner sample of |g>: g-s and g-r quadratures +-1, everything else 0."""
    X[l, 0] = 0.0
    X[l, 1] = 0.0
    for j in range(2, 6):
        X[l, j] = 1.0 if rng.random() < 0.5 else -1.0
    X[l, 6] = 0.0
    X[l, 7] = 0.0


@njit(cache=True)
def sample_ground(n, rng):
    X = np.empty((n, 8))
    for l in range(n):
        sample_ground_atom(X, l, rng)
    return X


# reassociation lets LLVM vectorize the neighbor sums; NaN semantics stay intact for the guard
@njit(cache=True, fastmath={"reassoc", "contract"})
def drift_stage(Y, mode, chi, indptr, indices, vss, vrr, vsr, par, out):
    """Fields and no-jump drift fused into one pass over the atoms."""
    n = Y.shape[0]
    tot_s = 0.0
    tot_r = 0.0
    # contiguous copies keep the neighbor sums cache friendly
    p_s = np.empty(n)
    p_r = np.empty(n)
    for l in range(n):
        p_s[l] = Y[l, 0]
        p_r[l] = Y[l, 1]
        tot_s += p_s[l]
        tot_r += p_r[l]
    for l in range(n):
        hs = 0.0
        hr = 0.0
        if mode == ALL_TO_ALL:
            if n > 1:
                ms = (tot_s - Y[l, 0]) / (n - 1)
                mr = (tot_r - Y[l, 1]) / (n - 1)
                hs = chi[0] * ms + chi[2] * mr
                hr = chi[1] * mr + chi[2] * ms
        else:
            a = 0.0
            b = 0.0
            for q in range(indptr[l], indptr[l + 1]):
                k = indices[q]
                a += vss[q] * p_s[k] + vsr[q] * p_r[k]
                b += vrr[q] * p_r[k] + vsr[q] * p_s[k]
            hs = 2.0 * a
            hr = 2.0 * b
        ps = Y[l, 0]
        pr = Y[l, 1]
        kappa = par[4] * _clamp01(ps) + par[5] * _clamp01(pr)
        r = _rhs8(ps, pr, Y[l, 2], Y[l, 3], Y[l, 4], Y[l, 5], Y[l, 6], Y[l, 7], hs, hr, par,
                  kappa, 2.0)
        for j in range(8):
            out[l, j] = r[j]


@njit(cache=True)
def rk4_drift(X, dt, mode, chi, indptr, indices, vss, vrr, vsr, par, work):
    """One RK4 step of the deterministic part, in place. ``work`` is ``(5, N, 8)``."""
    n = X.shape[0]
    k1 = work[0]
    k2 = work[1]
    k3 = work[2]
    k4 = work[3]
    Y = work[4]
    drift_stage(X, mode, chi, indptr, indices, vss, vrr, vsr, par, k1)
    for l in range(n):
        for j in range(8):
            Y[l, j] = X[l, j] + 0.5 * dt * k1[l, j]
    drift_stage(Y, mode, chi, indptr, indices, vss, vrr, vsr, par, k2)
    for l in range(n):
        for j in range(8):
            Y[l, j] = X[l, j] + 0.5 * dt * k2[l, j]
    drift_stage(Y, mode, chi, indptr, indices, vss, vrr, vsr, par, k3)
    for l in range(n):
        for j in range(8):
            Y[l, j] = X[l, j] + dt * k3[l, j]
    drift_stage(Y, mode, chi, indptr, indices, vss, vrr, vsr, par, k4)
    for l in range(n):
        for j in range(8):
            X[l, j] += (dt / 6.0) * (k1[l, j] + 2.0 * k2[l, j] + 2.0 * k3[l, j] + k4[l, j])


@njit(cache=True)
def apply_jumps(X, dt, par, rng):
    """Reset atoms to a fresh ground-state sample with probability ``1 - exp(-kappa dt)``.

    Both decay channels end in the same reset, so one draw against the summed
    rate is equivalent to independent per-channel draws.
    """
    jumps = 0
    for l in range(X.shape[0]):
        kappa = jump_rate(X[l, 0], X[l, 1], par)
        if kappa > 0.0 and rng.random() < 1.0 - np.exp(-kappa * dt):
            sample_ground_atom(X, l, rng)
            jumps += 1
    return jumps


@njit(cache=True)
def breaches_guard(X, guard):
    for l in range(X.shape[0]):
        for j in range(8):
            v = X[l, j]
            if not np.isfinite(v):
                return True
            if j >= 2 and abs(v) > guard:
                return True
    return False


@njit(cache=True)
def run_trajectory(X, rng, n_steps, dt, record_every, mode, chi, indptr, indices, vss, vrr, vsr,
                   par, window, snap_steps, guard):
    """Evolve one trajectory in place.

    Returns ``(records, snapshots, abort_step)``. ``records[k]`` holds the
    lattice means of ``p_s, p_r`` and the same means over ``window`` at step
    ``k * record_every``; ``snapshots[m]`` holds site populations at
    ``snap_steps[m]``. ``abort_step`` is -1 unless the divergence guard fired.
    """
    n = X.shape[0]
    n_rec = n_steps // record_every + 1
    rec = np.full((n_rec, 4), np.nan)
    snaps = np.full((len(snap_steps), n, 2), np.nan)
    work = np.empty((5, n, 8))
    n_win = 0
    for l in range(n):
        if window[l]:
            n_win += 1
    next_snap = 0
    for i in range(n_steps + 1):
        if i > 0:
            rk4_drift(X, dt, mode, chi, indptr, indices, vss, vrr, vsr, par, work)
            apply_jumps(X, dt, par, rng)
            if breaches_guard(X, guard):
                return rec, snaps, i
        if i % record_every == 0:
            a = 0.0
            b = 0.0
            wa = 0.0
            wb = 0.0
            for l in range(n):
                a += X[l, 0]
                b += X[l, 1]
                if window[l]:
                    wa += X[l, 0]
                    wb += X[l, 1]
            k = i // record_every
            rec[k, 0] = a / n
            rec[k, 1] = b / n
            rec[k, 2] = wa / max(n_win, 1)
            rec[k, 3] = wb / max(n_win, 1)
        while next_snap < len(snap_steps) and snap_steps[next_snap] == i:
            for l in range(n):
                snaps[next_snap, l, 0] = X[l, 0]
                snaps[next_snap, l, 1] = X[l, 1]
            next_snap += 1
    return rec, snaps, -1
