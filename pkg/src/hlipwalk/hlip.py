"""Hybrid linear inverted pendulum (H-LIP): flows, step-to-step map and LQR.

A planar H-LIP state is ``[c, p, v]``: global COM position, COM position
relative to the stance foot, and COM velocity. One step is the sequence

    impact foot-swap (p -> p - u)  ->  DSP for T_dsp  ->  SSP for T_ssp

sampled at the end of the SSP (pre-impact). The map is linear,
``x_{k+1} = A x_k + B u_k``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class InvalidParameterError(ValueError):
    pass


class NumericalFailureError(RuntimeError):
    pass


@dataclass(frozen=True)
class HlipParams:
    z0: float = 1.0
    g: float = 9.81
    T_ssp: float = 0.35
    T_dsp: float = 0.05
    lam: float = field(init=False)
    T_sum: float = field(init=False)

    def __post_init__(self):
        if not (self.z0 > 0 and math.isfinite(self.z0)):
            raise InvalidParameterError(f"z0 must be positive, got {self.z0}")
        if not (self.g > 0 and math.isfinite(self.g)):
            raise InvalidParameterError(f"g must be positive, got {self.g}")
        if not (self.T_ssp > 0 and math.isfinite(self.T_ssp)):
            raise InvalidParameterError(f"T_ssp must be positive, got {self.T_ssp}")
        if not (self.T_dsp >= 0 and math.isfinite(self.T_dsp)):
            raise InvalidParameterError(f"T_dsp must be non-negative, got {self.T_dsp}")
        object.__setattr__(self, "lam", math.sqrt(self.g / self.z0))
        object.__setattr__(self, "T_sum", self.T_ssp + self.T_dsp)


def make_params(z0: float = 1.0, g: float = 9.81, T_ssp: float = 0.35,
                T_dsp: float = 0.05) -> HlipParams:
    return HlipParams(z0=z0, g=g, T_ssp=T_ssp, T_dsp=T_dsp)


@dataclass(frozen=True)
class S2SMatrices:
    A: np.ndarray
    B: np.ndarray


@dataclass(frozen=True)
class LqrWeights:
    Q: np.ndarray = field(default_factory=lambda: np.eye(3))
    R: float = 1.0

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if Q.shape[0] != Q.shape[1] or not np.allclose(Q, Q.T, atol=1e-12):
            raise InvalidParameterError("Q must be square and symmetric")
        if np.linalg.eigvalsh(Q).min() < -1e-12:
            raise InvalidParameterError("Q must be positive semidefinite")
        if not self.R > 0:
            raise InvalidParameterError(f"R must be positive, got {self.R}")
        object.__setattr__(self, "Q", Q)


def ssp_flow(p0: float, v0: float, t: float, lam: float) -> tuple[float, float]:
    """Closed-form flow of ``p'' = lam^2 p`` over time ``t``."""
    ch = math.cosh(lam * t)
    sh = math.sinh(lam * t)
    return p0 * ch + v0 / lam * sh, p0 * lam * sh + v0 * ch


def dsp_flow(p0: float, v0: float, t: float) -> tuple[float, float]:
    return p0 + v0 * t, v0


def s2s_matrices(params: HlipParams) -> S2SMatrices:
    lam, Td = params.lam, params.T_dsp
    ch = math.cosh(lam * params.T_ssp)
    sh = math.sinh(lam * params.T_ssp)
    a12 = ch * Td + sh / lam
    A = np.array([
        [1.0, ch - 1.0, a12],
        [0.0, ch, a12],
        [0.0, lam * sh, lam * sh * Td + ch],
    ])
    B = np.array([[1.0 - ch], [-ch], [-lam * sh]])
    return S2SMatrices(A, B)


def step_map(x, u: float, params: HlipParams) -> np.ndarray:
    """One H-LIP step by composing the phase flows directly (no matrices)."""
    c, p, v = (float(s) for s in x)
    p -= u
    p, v = dsp_flow(p, v, params.T_dsp)
    c_mid = c + params.T_dsp * v
    p_end, v_end = ssp_flow(p, v, params.T_ssp, params.lam)
    return np.array([c_mid + (p_end - p), p_end, v_end])


def step_map_rk4(x, u, params: HlipParams, dt: float = 1e-3) -> np.ndarray:
    """Numerically integrated step map, vectorised over leading batch axes.

    ``x`` has shape ``(..., 3)`` and ``u`` broadcasts against ``x[..., 0]``.
    Independent of the closed forms; used as a reference oracle.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    c, p, v = x[..., 0].copy(), x[..., 1] - u, x[..., 2].copy()
    foot = c - p  # new stance foot, fixed for the rest of the step
    lam2 = params.lam ** 2

    def integrate(p, v, T, k):
        n = max(1, int(math.ceil(T / dt))) if T > 0 else 0
        h = T / n if n else 0.0
        for _ in range(n):
            k1p, k1v = v, k * p
            k2p, k2v = v + 0.5 * h * k1v, k * (p + 0.5 * h * k1p)
            k3p, k3v = v + 0.5 * h * k2v, k * (p + 0.5 * h * k2p)
            k4p, k4v = v + h * k3v, k * (p + h * k3p)
            p = p + h / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
            v = v + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        return p, v

    p, v = integrate(p, v, params.T_dsp, 0.0)
    p, v = integrate(p, v, params.T_ssp, lam2)
    return np.stack([foot + p, p, v], axis=-1)


def dlqr_gain(A, B, weights: LqrWeights | None = None, tol: float = 1e-10,
              max_iter: int = 10_000) -> np.ndarray:
    """Discrete infinite-horizon LQR gain for ``u = K x`` (note the sign).

    Solves the Riccati equation by fixed-point iteration from ``P = Q``.
    Returns ``K`` with shape ``(m, n)``.
    """
    gain, _ = dlqr(A, B, weights, tol=tol, max_iter=max_iter)
    return gain


def dlqr(A, B, weights: LqrWeights | None = None, tol: float = 1e-10,
         max_iter: int = 10_000) -> tuple[np.ndarray, np.ndarray]:
    weights = weights or LqrWeights(np.eye(np.atleast_2d(A).shape[0]))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = weights.Q
    R = np.atleast_2d(float(weights.R)) if np.isscalar(weights.R) else np.atleast_2d(weights.R)
    if Q.shape != A.shape:
        raise InvalidParameterError(f"Q shape {Q.shape} does not match A {A.shape}")
    P = Q.copy()
    for _ in range(max_iter):
        S = R + B.T @ P @ B
        BtPA = B.T @ P @ A
        P_next = Q + A.T @ P @ A - BtPA.T @ np.linalg.solve(S, BtPA)
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)) or np.abs(P_next).max() > 1e100:
            raise NumericalFailureError("Riccati iteration diverged; (A, B) not stabilizable")
        if np.abs(P_next - P).max() < tol:
            P = P_next
            K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
            return K, P
        P = P_next
    raise NumericalFailureError(f"Riccati iteration did not converge in {max_iter} iterations")


def spectral_radius(M) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(M)))))


def hlip_stepping(u_ref: float, x_robot, x_hlip, K) -> float:
    """Step size ``u_ref + K (x_robot - x_hlip)``."""
    e = np.asarray(x_robot, dtype=float) - np.asarray(x_hlip, dtype=float)
    return float(u_ref + np.ravel(K) @ e)
