"""Independent reference computations used by the test suite."""
from __future__ import annotations

import itertools

import numpy as np


def enumerate_active_sets(H, f, A_eq, b_eq, A_in, b_in):
    """Brute-force ``min 1/2 z'Hz + f'z  s.t. A_eq z = b_eq, A_in z >= b_in``.

    Tries every subset of inequalities as equalities and keeps the best
    feasible stationary point. Returns ``(z, objective)``.
    """
    n = H.shape[0]
    m = A_in.shape[0]
    best_z, best_obj = None, np.inf
    for r in range(m + 1):
        for act in itertools.combinations(range(m), r):
            Aa = np.vstack([A_eq, A_in[list(act)]]) if act else A_eq
            ba = np.concatenate([b_eq, b_in[list(act)]]) if act else b_eq
            k = Aa.shape[0]
            K = np.block([[H, Aa.T], [Aa, np.zeros((k, k))]])
            rhs = np.concatenate([-f, ba])
            sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
            if np.abs(K @ sol - rhs).max() > 1e-9:
                continue
            z = sol[:n]
            if A_eq.shape[0] and np.abs(A_eq @ z - b_eq).max() > 1e-9:
                continue
            if m and (A_in @ z - b_in).min() < -1e-9:
                continue
            obj = 0.5 * z @ H @ z + f @ z
            if obj < best_obj:
                best_z, best_obj = z, obj
    return best_z, best_obj


def random_qp(rng, n=None, m=None, m_eq=None):
    """A feasible strictly convex QP with one-sided inequalities."""
    n = n or int(rng.integers(1, 7))
    m = int(rng.integers(0, 9)) if m is None else m
    m_eq = int(rng.integers(0, min(2, n - 1) + 1)) if m_eq is None else m_eq
    L = rng.normal(size=(n, n))
    H = L @ L.T + 0.1 * np.eye(n)
    f = rng.normal(size=n) * 2
    z_feas = rng.normal(size=n)
    A_eq = rng.normal(size=(m_eq, n))
    b_eq = A_eq @ z_feas
    A_in = rng.normal(size=(m, n))
    b_in = A_in @ z_feas - rng.uniform(0, 1, size=m)
    return H, f, A_eq, b_eq, A_in, b_in


def rk4(deriv, y0, t0, t1, n):
    h = (t1 - t0) / n
    y = np.asarray(y0, dtype=float)
    t = t0
    for _ in range(n):
        k1 = deriv(t, y)
        k2 = deriv(t + h / 2, y + h / 2 * k1)
        k3 = deriv(t + h / 2, y + h / 2 * k2)
        k4 = deriv(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return y


def scalar_riccati_bisection(a, b, q, r, lo=0.0, hi=100.0):
    """Positive root of the scalar DARE by bisection."""
    def g(P):
        return q + a * a * P - (a * P * b) ** 2 / (r + b * b * P) - P
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(lo) * g(mid) <= 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def hlip_step_absolute(x, u, lam, T_dsp, T_ssp, h=1e-3):
    """Step map integrated in absolute COM coordinates with the foot held fixed.

    Works on batches: ``x`` is ``(N, 3)`` and ``u`` is ``(N,)``. The foot lands
    at ``c - p + u``; DSP has zero horizontal force, SSP pulls with
    ``lam^2 (c - foot)``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u = np.asarray(u, dtype=float).reshape(-1)
    foot = x[:, 0] - x[:, 1] + u
    y = np.stack([x[:, 0], x[:, 2]])

    def dsp(t, y):
        return np.stack([y[1], np.zeros_like(y[1])])

    def ssp(t, y):
        return np.stack([y[1], lam * lam * (y[0] - foot)])

    if T_dsp > 0:
        y = rk4(dsp, y, 0.0, T_dsp, max(1, int(round(T_dsp / h))))
    y = rk4(ssp, y, 0.0, T_ssp, max(1, int(round(T_ssp / h))))
    return np.stack([y[0], y[0] - foot, y[1]], axis=1)
