"""Compiled closed-loop segment integrator (numba twin of _rk.py).

The kernel specializes the generic stepper to the closed-loop structure:
chain/internal state layout, sinusoidal reference evaluated in closed form,
funnel gain with a fixed reset offset per segment.  It records (t, state)
rows into caller-provided buffers and returns a resume tuple when the
buffer fills, so the caller never needs to guess the step count.

Import of this module must not fail when numba is absent; the factory
returns None in that case and the simulator falls back to _rk.py.
"""

import numpy as np

HALF_PI = np.pi / 2.0

# Return statuses of the segment kernel.
DONE = 0
BUFFER_FULL = 1
UNDERFLOW = 2
INFEASIBLE = 3    # the segment's start state already violates the domain

SAFETY_K = 0.9
FAC_MIN_K = 0.2
FAC_MAX_K = 5.0

_kernel_cache = None


def get_kernel():
    """Compile (once) and return the segment kernel, or None without numba."""
    global _kernel_cache
    if _kernel_cache is not None:
        return _kernel_cache
    try:
        from numba import njit
    except ImportError:          # pragma: no cover - exercised without numba
        return None

    @njit(cache=True, fastmath=False)
    def rhs(t, x, dx, avail, tau, fa, fb, fc, sflip, Rw, S, G, Q, P,
            off, amp, om, ph, r, m, kdim, lim_sq, e_r, ed):
        """Closed-loop derivative. Returns (ok, norm_sq, phi); writes dx,
        and the final cascade stage into e_r."""
        phi = 0.0
        n_sq = 0.0
        rm = r * m
        if avail == 1:
            phi = 1.0 / (fa * np.exp(-fb * (t - tau)) + fc)
            nk = amp.shape[1]
            for i in range(r):
                for j in range(m):
                    v = off[j] if i == 0 else 0.0
                    for q in range(nk):
                        w = om[j, q]
                        v += (amp[j, q] * w ** i
                              * np.cos(w * t + ph[j, q] + i * HALF_PI))
                    ed[i, j] = x[i * m + j] - v
            for j in range(m):
                e_r[j] = phi * ed[0, j]
            for i in range(r):
                n_sq = 0.0
                for j in range(m):
                    n_sq += e_r[j] * e_r[j]
                if n_sq >= lim_sq:
                    return False, n_sq, phi
                if i + 1 < r:
                    g = 1.0 / (1.0 - n_sq)
                    for j in range(m):
                        e_r[j] = phi * ed[i + 1, j] + g * e_r[j]
        # chain shift
        for i in range(rm - m):
            dx[i] = x[i + m]
        for j in range(m):
            acc = 0.0
            for l in range(rm):
                acc += Rw[j, l] * x[l]
            for l in range(kdim):
                acc += S[j, l] * x[rm + l]
            if avail == 1:
                gi = -sflip / (1.0 - n_sq)
                for l in range(m):
                    acc += G[j, l] * (gi * e_r[l])
            dx[rm - m + j] = acc
        for i in range(kdim):
            acc = 0.0
            for l in range(kdim):
                acc += Q[i, l] * x[rm + l]
            for l in range(m):
                acc += P[i, l] * x[l]
            dx[rm + i] = acc
        return True, n_sq, phi

    @njit(cache=True, fastmath=False)
    def run_segment(t0, t1, x, k1, have_k1, h_in,
                    avail, tau, fa, fb, fc, sflip,
                    Rw, S, G, Q, P, off, amp, om, ph,
                    r, m, kdim,
                    rtol, atol, h_min, h_max, lim_sq,
                    grid, gidx_in, headroom, out_t, out_x):
        """One availability segment.  x and k1 are updated in place.

        headroom bounds the rows one step can emit (grid crossings plus the
        endpoint); the caller sizes the buffers to at least twice that.
        Returns (status, nrows, t, h, gidx, accepted, rejected, evals).
        """
        n = x.size
        cap = out_t.size
        # DP45 tableau, unrolled rows
        c2, c3, c4, c5 = 0.2, 0.3, 0.8, 8.0 / 9.0
        a21 = 0.2
        a31, a32 = 3.0 / 40.0, 9.0 / 40.0
        a41, a42, a43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
        a51, a52, a53, a54 = (19372.0 / 6561.0, -25360.0 / 2187.0,
                              64448.0 / 6561.0, -212.0 / 729.0)
        a61, a62, a63, a64, a65 = (9017.0 / 3168.0, -355.0 / 33.0,
                                   46732.0 / 5247.0, 49.0 / 176.0,
                                   -5103.0 / 18656.0)
        b1, b3, b4, b5, b6 = (35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0,
                              -2187.0 / 6784.0, 11.0 / 84.0)
        e1, e3, e4, e5, e6, e7 = (71.0 / 57600.0, -71.0 / 16695.0,
                                  71.0 / 1920.0, -17253.0 / 339200.0,
                                  22.0 / 525.0, -1.0 / 40.0)
        k2 = np.empty(n)
        k3 = np.empty(n)
        k4 = np.empty(n)
        k5 = np.empty(n)
        k6 = np.empty(n)
        k7 = np.empty(n)
        xs = np.empty(n)
        x_new = np.empty(n)
        e_r = np.empty(m)
        ed = np.empty((r, m))
        n_accept = 0
        n_reject = 0
        n_eval = 0
        t = t0
        if have_k1 == 0:
            ok, _, _ = rhs(t, x, k1, avail, tau, fa, fb, fc, sflip,
                           Rw, S, G, Q, P, off, amp, om, ph,
                           r, m, kdim, lim_sq, e_r, ed)
            n_eval += 1
            if not ok:
                return (INFEASIBLE, 0, t, h_in, gidx_in,
                        n_accept, n_reject, n_eval)
        h = min(h_in, h_max, t1 - t0)
        gidx = gidx_in
        n_grid = grid.size
        nrows = 0
        just_rejected = False

        while t < t1:
            if nrows + headroom > cap and nrows > 0:
                # not enough room for a worst-case step's grid crossings
                return (BUFFER_FULL, nrows, t, h, gidx,
                        n_accept, n_reject, n_eval)
            last = False
            if t + h >= t1:
                h = t1 - t
                last = True
            ok = True
            err = 0.0
            for j in range(n):
                xs[j] = x[j] + h * a21 * k1[j]
            ok, _, _ = rhs(t + c2 * h, xs, k2, avail, tau, fa, fb, fc,
                           sflip, Rw, S, G, Q, P, off, amp, om, ph,
                           r, m, kdim, lim_sq, e_r, ed)
            n_eval += 1
            if ok:
                for j in range(n):
                    xs[j] = x[j] + h * (a31 * k1[j] + a32 * k2[j])
                ok, _, _ = rhs(t + c3 * h, xs, k3, avail, tau, fa, fb, fc,
                               sflip, Rw, S, G, Q, P, off, amp, om, ph,
                               r, m, kdim, lim_sq, e_r, ed)
                n_eval += 1
            if ok:
                for j in range(n):
                    xs[j] = x[j] + h * (a41 * k1[j] + a42 * k2[j]
                                        + a43 * k3[j])
                ok, _, _ = rhs(t + c4 * h, xs, k4, avail, tau, fa, fb, fc,
                               sflip, Rw, S, G, Q, P, off, amp, om, ph,
                               r, m, kdim, lim_sq, e_r, ed)
                n_eval += 1
            if ok:
                for j in range(n):
                    xs[j] = x[j] + h * (a51 * k1[j] + a52 * k2[j]
                                        + a53 * k3[j] + a54 * k4[j])
                ok, _, _ = rhs(t + c5 * h, xs, k5, avail, tau, fa, fb, fc,
                               sflip, Rw, S, G, Q, P, off, amp, om, ph,
                               r, m, kdim, lim_sq, e_r, ed)
                n_eval += 1
            if ok:
                for j in range(n):
                    xs[j] = x[j] + h * (a61 * k1[j] + a62 * k2[j]
                                        + a63 * k3[j] + a64 * k4[j]
                                        + a65 * k5[j])
                ok, _, _ = rhs(t + h, xs, k6, avail, tau, fa, fb, fc,
                               sflip, Rw, S, G, Q, P, off, amp, om, ph,
                               r, m, kdim, lim_sq, e_r, ed)
                n_eval += 1
            if ok:
                for j in range(n):
                    x_new[j] = x[j] + h * (b1 * k1[j] + b3 * k3[j]
                                           + b4 * k4[j] + b5 * k5[j]
                                           + b6 * k6[j])
                ok, _, _ = rhs(t + h, x_new, k7, avail, tau, fa, fb, fc,
                               sflip, Rw, S, G, Q, P, off, amp, om, ph,
                               r, m, kdim, lim_sq, e_r, ed)
                n_eval += 1
            if not ok:
                n_reject += 1
                h *= 0.5
                just_rejected = True
                if h < h_min:
                    return (UNDERFLOW, nrows, t, h, gidx,
                            n_accept, n_reject, n_eval)
                continue
            err = 0.0
            for j in range(n):
                ev = h * (e1 * k1[j] + e3 * k3[j] + e4 * k4[j]
                          + e5 * k5[j] + e6 * k6[j] + e7 * k7[j])
                aj = abs(x[j])
                bj = abs(x_new[j])
                sc = atol + rtol * (aj if aj > bj else bj)
                err += (ev / sc) * (ev / sc)
            err = np.sqrt(err / n)
            if err <= 1.0:
                t_new = t1 if last else t + h
                while gidx < n_grid and grid[gidx] <= t_new:
                    g = grid[gidx]
                    if t < g < t_new:
                        th = (g - t) / h
                        t2 = th * th
                        t3 = t2 * th
                        w0 = 2.0 * t3 - 3.0 * t2 + 1.0
                        w1 = (t3 - 2.0 * t2 + th) * h
                        w2 = -2.0 * t3 + 3.0 * t2
                        w3 = (t3 - t2) * h
                        out_t[nrows] = g
                        for j in range(n):
                            out_x[nrows, j] = (w0 * x[j] + w1 * k1[j]
                                               + w2 * x_new[j] + w3 * k7[j])
                        nrows += 1
                    gidx += 1
                out_t[nrows] = t_new
                for j in range(n):
                    out_x[nrows, j] = x_new[j]
                nrows += 1
                t = t_new
                for j in range(n):
                    x[j] = x_new[j]
                    k1[j] = k7[j]
                n_accept += 1
                if err < 1e-30:
                    fac = FAC_MAX_K
                else:
                    fac = SAFETY_K * err ** (-0.2)
                    if fac > FAC_MAX_K:
                        fac = FAC_MAX_K
                    elif fac < FAC_MIN_K:
                        fac = FAC_MIN_K
                if just_rejected and fac > 1.0:
                    fac = 1.0
                just_rejected = False
                h = min(h * fac, h_max)
            else:
                n_reject += 1
                fac = SAFETY_K * err ** (-0.2)
                if fac < FAC_MIN_K:
                    fac = FAC_MIN_K
                h *= fac
                just_rejected = True
                if h < h_min:
                    return (UNDERFLOW, nrows, t, h, gidx,
                            n_accept, n_reject, n_eval)
        return (DONE, nrows, t, h, gidx, n_accept, n_reject, n_eval)

    _kernel_cache = run_segment
    return _kernel_cache
