"""Numba kernels for the two-regime ARMA recursions.

Coefficient vectors are laid out as ``lam = [phi1 (p+1), phi2 (p+1),
theta1 (q), theta2 (q)]`` with ``m = 2*(1+p+q)`` entries.  All kernels
work on full-length arrays aligned with the series; entries before the
evaluation start ``t_start`` (0-based, ``>= max(p, d)``) are zero, which
implements the zero pre-sample convention of the conditional recursion.
"""

import numpy as np
from numba import njit

__all__ = [
    "residuals_full",
    "jacobian_full",
    "hessian_accumulate",
    "simulate_path",
]


@njit(cache=True)
def residuals_full(x, phi1, phi2, theta1, theta2, r, d, p, q, t_start):
    n = x.shape[0]
    eps = np.zeros(n)
    for t in range(t_start, n):
        if x[t - d] <= r:
            m = phi1[0]
            for i in range(1, p + 1):
                m += phi1[i] * x[t - i]
            for j in range(1, q + 1):
                m += theta1[j - 1] * eps[t - j]
        else:
            m = phi2[0]
            for i in range(1, p + 1):
                m += phi2[i] * x[t - i]
            for j in range(1, q + 1):
                m += theta2[j - 1] * eps[t - j]
        eps[t] = x[t] - m
    return eps


@njit(cache=True)
def jacobian_full(x, phi1, phi2, theta1, theta2, r, d, p, q, t_start, eps):
    """d(eps_t)/d(lam) rows; regime indicators held fixed in lam."""
    n = x.shape[0]
    m = 2 * (1 + p + q)
    off2 = p + 1
    off3 = 2 * (p + 1)
    off4 = 2 * (p + 1) + q
    J = np.zeros((n, m))
    for t in range(t_start, n):
        low = x[t - d] <= r
        if low:
            J[t, 0] = -1.0
            for i in range(1, p + 1):
                J[t, i] = -x[t - i]
            for j in range(1, q + 1):
                J[t, off3 + j - 1] = -eps[t - j]
        else:
            J[t, off2] = -1.0
            for i in range(1, p + 1):
                J[t, off2 + i] = -x[t - i]
            for j in range(1, q + 1):
                J[t, off4 + j - 1] = -eps[t - j]
        for j in range(1, q + 1):
            th = theta1[j - 1] if low else theta2[j - 1]
            if th != 0.0:
                for k in range(m):
                    J[t, k] -= th * J[t - j, k]
    return J


@njit(cache=True)
def hessian_accumulate(x, phi1, phi2, theta1, theta2, r, d, p, q, t_start,
                       eps, J, psi_vals, dpsi_vals, exact):
    """Accumulate sum_t [psi'(e_t) J_t J_t' + psi(e_t) S_t] over the window.

    ``S_t`` is the exact second derivative of the residual recursion in
    lam (non-zero only through the MA feedback); with ``exact`` false the
    S-term is dropped (Gauss-Newton approximation).
    """
    n = x.shape[0]
    m = 2 * (1 + p + q)
    off3 = 2 * (p + 1)
    off4 = 2 * (p + 1) + q
    H = np.zeros((m, m))
    # rolling buffer of the last q+1 second-derivative matrices
    S = np.zeros((q + 1, m, m))
    for t in range(t_start, n):
        cur = t % (q + 1)
        low = x[t - d] <= r
        for a in range(m):
            for b in range(m):
                S[cur, a, b] = 0.0
        if exact and q > 0:
            for j in range(1, q + 1):
                a = (off3 if low else off4) + j - 1
                for k in range(m):
                    v = J[t - j, k]
                    S[cur, a, k] -= v
                    S[cur, k, a] -= v
            for j in range(1, q + 1):
                th = theta1[j - 1] if low else theta2[j - 1]
                if th != 0.0:
                    prev = (t - j) % (q + 1)
                    if t - j >= t_start:
                        for a in range(m):
                            for b in range(m):
                                S[cur, a, b] -= th * S[prev, a, b]
        wj = dpsi_vals[t]
        wp = psi_vals[t]
        for a in range(m):
            Ja = J[t, a]
            for b in range(m):
                H[a, b] += wj * Ja * J[t, b]
                if exact:
                    H[a, b] += wp * S[cur, a, b]
    return H


@njit(cache=True)
def simulate_path(innov, phi1, phi2, theta1, theta2, r, d, p, q):
    """Generate the recursion from a zero initial state (x_s = eps_s = 0, s < 0)."""
    n = innov.shape[0]
    x = np.zeros(n)
    for t in range(n):
        z = x[t - d] if t - d >= 0 else 0.0
        if z <= r:
            m = phi1[0]
            for i in range(1, p + 1):
                if t - i >= 0:
                    m += phi1[i] * x[t - i]
            for j in range(1, q + 1):
                if t - j >= 0:
                    m += theta1[j - 1] * innov[t - j]
        else:
            m = phi2[0]
            for i in range(1, p + 1):
                if t - i >= 0:
                    m += phi2[i] * x[t - i]
            for j in range(1, q + 1):
                if t - j >= 0:
                    m += theta2[j - 1] * innov[t - j]
        x[t] = m + innov[t]
    return x
