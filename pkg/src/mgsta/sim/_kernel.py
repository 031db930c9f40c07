"""Fixed-step RK4 closed-loop kernel.

State layout: ``x = [zeta (r), sigma (n), eta (n), w (p)]`` where ``w`` is
the exosystem state generating the matched disturbance::

    w' = Aw w + Bw s(t),   f = Cw w + Dw s(t),
    s_k(t) = amp_k sin(freq_k t + phase_k) + offset_k

The kernel source is shared between the compiled and the numpy path; only
the matrix-vector helper differs.
"""

from __future__ import annotations

import math

import numpy as np

from . import _accel

OK, NONFINITE, TOO_LARGE = 0, 1, 2
GROWTH_LIMIT = 1e6


def _mv_loop(A, x):
    rows, cols = A.shape
    out = np.zeros(rows)
    for i in range(rows):
        acc = 0.0
        for j in range(cols):
            acc += A[i, j] * x[j]
        out[i] = acc
    return out


def _mv_numpy(A, x):
    return A @ x


def _identity(fn):
    return fn


def _make(mv, jit=_identity):
    @jit
    def sources(t, amp, freq, phase, offset):
        k = amp.shape[0]
        s = np.empty(k)
        ds = np.empty(k)
        for i in range(k):
            arg = freq[i] * t + phase[i]
            s[i] = amp[i] * math.sin(arg) + offset[i]
            ds[i] = amp[i] * freq[i] * math.cos(arg)
        return s, ds

    @jit
    def deriv(t, x, A, E, C, D, B, K0, K1, K2, alpha, reg, Aw, Bw, Cw, Dw, amp, freq, phase, offset):
        r = A.shape[0]
        n = D.shape[0]
        zeta = x[:r]
        sigma = x[r : r + n]
        eta = x[r + n : r + 2 * n]
        w = x[r + 2 * n :]
        ns = 0.0
        for i in range(n):
            ns += sigma[i] * sigma[i]
        ns = math.sqrt(ns)
        if ns < reg:
            ns = reg
        c = 1.0 / math.sqrt(ns) + alpha
        u = mv(K0, zeta) + c * mv(K1, sigma) + mv(K2, eta)
        s, _ = sources(t, amp, freq, phase, offset)
        f = mv(Cw, w) + mv(Dw, s)
        out = np.empty(x.shape[0])
        out[:r] = mv(A, zeta) + mv(E, sigma)
        out[r : r + n] = mv(C, zeta) + mv(D, sigma) + mv(B, u) + f
        out[r + n : r + 2 * n] = c * c * sigma
        out[r + 2 * n :] = mv(Aw, w) + mv(Bw, s)
        return out

    @jit
    def fdot_norm(t, w, Aw, Bw, Cw, Dw, amp, freq, phase, offset):
        s, ds = sources(t, amp, freq, phase, offset)
        fd = mv(Cw, mv(Aw, w) + mv(Bw, s)) + mv(Dw, ds)
        acc = 0.0
        for i in range(fd.shape[0]):
            acc += fd[i] * fd[i]
        return math.sqrt(acc)

    @jit
    def cost_rate(x, Hc):
        r = Hc.shape[1]
        xi = mv(Hc, x[:r])
        acc = 0.0
        for i in range(xi.shape[0]):
            acc += xi[i] * xi[i]
        return acc

    @jit
    def integrate(
        x0, A, E, C, D, B, K0, K1, K2, alpha, reg, Aw, Bw, Cw, Dw, amp, freq, phase, offset,
        Hc, dt, nsteps, stride, out_x, out_cost,
    ):
        """Returns (status, samples written, max |f'|, failing step)."""
        r = A.shape[0]
        n = D.shape[0]
        x = x0.copy()
        cost = 0.0
        g_prev = cost_rate(x, Hc)
        out_x[0, :] = x
        out_cost[0] = 0.0
        rec = 1
        fmax = fdot_norm(0.0, x[r + 2 * n :], Aw, Bw, Cw, Dw, amp, freq, phase, offset)
        h = dt
        for k in range(nsteps):
            t = k * h
            k1 = deriv(t, x, A, E, C, D, B, K0, K1, K2, alpha, reg, Aw, Bw, Cw, Dw, amp, freq, phase, offset)
            k2 = deriv(t + 0.5 * h, x + 0.5 * h * k1, A, E, C, D, B, K0, K1, K2, alpha, reg, Aw, Bw, Cw, Dw, amp, freq, phase, offset)
            k3 = deriv(t + 0.5 * h, x + 0.5 * h * k2, A, E, C, D, B, K0, K1, K2, alpha, reg, Aw, Bw, Cw, Dw, amp, freq, phase, offset)
            k4 = deriv(t + h, x + h * k3, A, E, C, D, B, K0, K1, K2, alpha, reg, Aw, Bw, Cw, Dw, amp, freq, phase, offset)
            xn = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            old = 0.0
            new = 0.0
            finite = True
            for i in range(x.shape[0]):
                old += x[i] * x[i]
                new += xn[i] * xn[i]
                if not math.isfinite(xn[i]):
                    finite = False
            if not finite:
                return NONFINITE, rec, fmax, k
            if math.sqrt(new) > GROWTH_LIMIT * max(math.sqrt(old), 1.0):
                return TOO_LARGE, rec, fmax, k
            x = xn
            g = cost_rate(x, Hc)
            cost += 0.5 * h * (g_prev + g)
            g_prev = g
            fd = fdot_norm(t + h, x[r + 2 * n :], Aw, Bw, Cw, Dw, amp, freq, phase, offset)
            if fd > fmax:
                fmax = fd
            if (k + 1) % stride == 0:
                out_x[rec, :] = x
                out_cost[rec] = cost
                rec += 1
        return OK, rec, fmax, nsteps

    return integrate, deriv


_CACHE: dict[str, object] = {}


def get_integrator(backend: str | None = None):
    backend = backend or _accel.default_backend()
    if backend not in _CACHE:
        if backend == "numba":
            _CACHE[backend] = _make(_accel.njit(_mv_loop), _accel.njit)[0]
        elif backend == "numpy":
            _CACHE[backend] = _make(_mv_numpy)[0]
        else:
            raise ValueError(f"unknown kernel backend {backend!r}")
    return _CACHE[backend]
