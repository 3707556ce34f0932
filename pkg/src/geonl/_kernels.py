"""Compiled run loops for small models (a few hundred dofs) with affine coupling.

The coupling is given on its fixed pattern: entry ``p`` sits at
``(rows[p], cols[p])`` with value ``const[p] + (lin @ q)[p]`` where ``lin``
is CSR ``(lp, li, lx)``.  ``M_C^{-1}`` is CSR ``(mp, mi, mx)`` (block
diagonal); ``M`` and ``M^{-1}`` are dense.  Stress rows of the pattern are
sorted, ``rp`` points into them.  These mirror the step functions in
`geonl.integrators` and are checked against them in the test suite.
Status codes: 0 ok, 1 blow-up, 2 Newton failure.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _values(const, lp, li, lx, q, scale):
    out = const.copy()
    for p in range(const.size):
        acc = 0.0
        for t in range(lp[p], lp[p + 1]):
            acc += lx[t] * q[li[t]]
        out[p] += scale * acc
    return out


@njit(cache=True)
def _lt(rows, cols, vals, s, n):
    out = np.zeros(n)
    for p in range(vals.size):
        out[cols[p]] += vals[p] * s[rows[p]]
    return out


@njit(cache=True)
def _l(rows, cols, vals, v, ns):
    out = np.zeros(ns)
    for p in range(vals.size):
        out[rows[p]] += vals[p] * v[cols[p]]
    return out


@njit(cache=True)
def _csr_mv(ip, ix, x, v):
    out = np.zeros(ip.size - 1)
    for r in range(ip.size - 1):
        acc = 0.0
        for t in range(ip[r], ip[r + 1]):
            acc += x[t] * v[ix[t]]
        out[r] = acc
    return out


@njit(cache=True)
def _stress(rows, cols, const, lp, li, lx, mp, mi, mx, q, ns):
    half = _values(const, lp, li, lx, q, 0.5)
    return _csr_mv(mp, mi, mx, _l(rows, cols, half, q, ns))


@njit(cache=True)
def _triple(rp, cols, left, right, mp, mi, mx, n):
    """Dense ``L_left^T M_C^{-1} L_right``."""
    out = np.zeros((n, n))
    ns = rp.size - 1
    for r in range(ns):
        for t in range(mp[r], mp[r + 1]):
            r2 = mi[t]
            w = mx[t]
            for a in range(rp[r], rp[r + 1]):
                la = w * left[a]
                ca = cols[a]
                for b in range(rp[r2], rp[r2 + 1]):
                    out[ca, cols[b]] += la * right[b]
    return out


@njit(cache=True)
def _kgeo(rows, cols, lp, li, lx, s, n):
    out = np.zeros((n, n))
    for p in range(rows.size):
        w = s[rows[p]]
        c = cols[p]
        for t in range(lp[p], lp[p + 1]):
            out[c, li[t]] += w * lx[t]
    return out


@njit(cache=True)
def _energy(M, mc_p, mc_i, mc_x, v, s):
    return 0.5 * v @ (M @ v) + 0.5 * s @ _csr_mv(mc_p, mc_i, mc_x, s)


@njit(cache=True)
def run_leapfrog(M, M_inv, Mc, Mc_inv, rows, cols, rp, const, lp, li, lx, q0, v0, dt, n_steps, blowup):
    cp, ci, cx = Mc
    mp, mi, mx = Mc_inv
    n = q0.shape[0]
    ns = rp.size - 1
    q_out = np.empty((n_steps + 1, n))
    v_out = np.empty((n_steps + 1, n))
    e_out = np.empty(n_steps + 1)
    s = _stress(rows, cols, const, lp, li, lx, mp, mi, mx, q0, ns)
    a0 = M_inv @ (-_lt(rows, cols, _values(const, lp, li, lx, q0, 1.0), s, n))
    q_half = q0 + 0.5 * dt * v0 + 0.125 * dt * dt * a0
    v = v0.copy()
    q_out[0] = q0
    v_out[0] = v0
    e_out[0] = _energy(M, cp, ci, cx, v0, s)
    limit = blowup * e_out[0]
    for k in range(1, n_steps + 1):
        # q_half holds q_{k-1/2}; kick to v_k
        s = _stress(rows, cols, const, lp, li, lx, mp, mi, mx, q_half, ns)
        v = v + dt * (M_inv @ (-_lt(rows, cols, _values(const, lp, li, lx, q_half, 1.0), s, n)))
        q_rep = q_half + 0.5 * dt * v
        q_out[k] = q_rep
        v_out[k] = v
        e = _energy(M, cp, ci, cx, v, _stress(rows, cols, const, lp, li, lx, mp, mi, mx, q_rep, ns))
        e_out[k] = e
        finite = np.all(np.isfinite(v)) and np.all(np.isfinite(q_rep))
        if not finite or not np.isfinite(e) or (limit > 0.0 and e > limit):
            return q_out, v_out, e_out, k, 1
        q_half = q_half + dt * v
    return q_out, v_out, e_out, n_steps, 0


@njit(cache=True)
def run_linearly_implicit(M, M_inv, Mc, Mc_inv, rows, cols, rp, const, lp, li, lx, q0, v0, s0, dt, n_steps, blowup):
    cp, ci, cx = Mc
    mp, mi, mx = Mc_inv
    n = q0.shape[0]
    ns = rp.size - 1
    q_out = np.empty((n_steps + 1, n))
    v_out = np.empty((n_steps + 1, n))
    e_out = np.empty(n_steps + 1)
    s_q0 = _stress(rows, cols, const, lp, li, lx, mp, mi, mx, q0, ns)
    a0 = M_inv @ (-_lt(rows, cols, _values(const, lp, li, lx, q0, 1.0), s_q0, n))
    q_half = q0 + 0.5 * dt * v0 + 0.125 * dt * dt * a0
    v = v0.copy()
    s = s0.copy()
    q_out[0] = q0
    v_out[0] = v0
    e_out[0] = _energy(M, cp, ci, cx, v0, s0)
    limit = blowup * e_out[0]
    c = 0.25 * dt * dt
    for k in range(1, n_steps + 1):
        vals = _values(const, lp, li, lx, q_half, 1.0)
        K = _triple(rp, cols, vals, vals, mp, mi, mx, n)
        rhs = M @ v - c * (K @ v) - dt * _lt(rows, cols, vals, s, n)
        v_new = np.linalg.solve(M + c * K, rhs)
        s = s + dt * _csr_mv(mp, mi, mx, _l(rows, cols, vals, 0.5 * (v + v_new), ns))
        v = v_new
        q_out[k] = q_half + 0.5 * dt * v
        v_out[k] = v
        e = _energy(M, cp, ci, cx, v, s)
        e_out[k] = e
        if not np.isfinite(e) or (limit > 0.0 and e > limit):
            return q_out, v_out, e_out, k, 1
        q_half = q_half + dt * v
    return q_out, v_out, e_out, n_steps, 0


@njit(cache=True)
def run_discrete_gradient(M, M_inv, Mc, Mc_inv, rows, cols, rp, const, lp, li, lx, q0, v0, dt, n_steps, tol, max_iter):
    cp, ci, cx = Mc
    mp, mi, mx = Mc_inv
    n = q0.shape[0]
    ns = rp.size - 1
    q_out = np.empty((n_steps + 1, n))
    v_out = np.empty((n_steps + 1, n))
    e_out = np.empty(n_steps + 1)
    q = q0.copy()
    v = v0.copy()
    s = _stress(rows, cols, const, lp, li, lx, mp, mi, mx, q, ns)
    q_out[0] = q
    v_out[0] = v
    e_out[0] = _energy(M, cp, ci, cx, v, s)
    s1 = s.copy()
    for k in range(1, n_steps + 1):
        f0 = -_lt(rows, cols, _values(const, lp, li, lx, q, 1.0), s, n)
        scale = np.linalg.norm(M @ v) / dt + np.linalg.norm(f0)
        d = dt * v + 0.5 * dt * dt * (M_inv @ f0)
        converged = False
        last_step = np.inf
        for it in range(max_iter + 1):
            q1 = q + d
            qm = q + 0.5 * d
            s1 = _stress(rows, cols, const, lp, li, lx, mp, mi, mx, q1, ns)
            sh = 0.5 * (s + s1)
            vm = _values(const, lp, li, lx, qm, 1.0)
            R = M @ (2.0 * d / dt - 2.0 * v) / dt + _lt(rows, cols, vm, sh, n)
            if np.linalg.norm(R) <= tol * scale or last_step <= 1e-15 * np.linalg.norm(d):
                converged = True
                break
            if it == max_iter:
                break
            v1 = _values(const, lp, li, lx, q1, 1.0)
            jac = 2.0 * M / (dt * dt) + 0.5 * _kgeo(rows, cols, lp, li, lx, sh, n) \
                + 0.5 * _triple(rp, cols, vm, v1, mp, mi, mx, n)
            delta = np.linalg.solve(jac, -R)
            d = d + delta
            last_step = np.linalg.norm(delta)
        if not converged:
            return q_out, v_out, e_out, k, 2
        v = 2.0 * d / dt - v
        q = q + d
        s = s1
        q_out[k] = q
        v_out[k] = v
        e_out[k] = _energy(M, cp, ci, cx, v, s)
    return q_out, v_out, e_out, n_steps, 0
