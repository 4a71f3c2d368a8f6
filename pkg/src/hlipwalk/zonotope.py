"""Zonotopes, disturbance-set estimation and outer mRPI approximation."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog


class InvalidInputError(ValueError):
    pass


class NonConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class Zonotope:
    """The set ``{center + G @ a : |a|_inf <= 1}``.

    ``generators`` is stored as an ``(n, g)`` matrix, one generator per column.
    """

    center: np.ndarray
    generators: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        G = np.asarray(self.generators, dtype=float)
        if G.size == 0:
            G = np.zeros((c.size, 0))
        if G.ndim != 2 or G.shape[0] != c.size:
            raise InvalidInputError(
                f"generators of shape {G.shape} do not match center dimension {c.size}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "generators", G)

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def order(self) -> int:
        return self.generators.shape[1]

    @classmethod
    def box(cls, center, half_widths) -> "Zonotope":
        return cls(center, np.diag(np.asarray(half_widths, dtype=float)))

    @classmethod
    def point(cls, center) -> "Zonotope":
        c = np.asarray(center, dtype=float).reshape(-1)
        return cls(c, np.zeros((c.size, 0)))

    def support(self, direction) -> float:
        return support(self, direction)

    def scaled(self, factor: float) -> "Zonotope":
        """Scale about the center."""
        return Zonotope(self.center, factor * self.generators)

    def interval_hull(self) -> tuple[np.ndarray, np.ndarray]:
        r = np.abs(self.generators).sum(axis=1)
        return self.center - r, self.center + r

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(),
                "generators": self.generators.T.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Zonotope":
        c = np.asarray(d["center"], dtype=float)
        gens = np.asarray(d.get("generators", []), dtype=float)
        G = gens.T if gens.size else np.zeros((c.size, 0))
        return cls(c, G)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Zonotope":
        return cls.from_dict(json.loads(text))


def estimate_w(samples, margin: float = 0.0) -> Zonotope:
    """Axis-aligned bounding box of disturbance samples, inflated by ``1 + margin``.

    Components with zero spread get half-width ``margin * max(|center_i|, 1e-6)``.
    """
    S = np.asarray(samples, dtype=float)
    if S.size == 0:
        raise InvalidInputError("at least one disturbance sample is required")
    S = np.atleast_2d(S)
    if margin < 0:
        raise InvalidInputError(f"margin must be non-negative, got {margin}")
    lo, hi = S.min(axis=0), S.max(axis=0)
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) * (1.0 + margin)
    flat = (hi - lo) == 0.0
    half[flat] = margin * np.maximum(np.abs(center[flat]), 1e-6)
    return Zonotope.box(center, half)


def linear_map(M, Z: Zonotope) -> Zonotope:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[1] != Z.dim:
        raise InvalidInputError(f"matrix of shape {M.shape} cannot map a {Z.dim}-dimensional set")
    return Zonotope(M @ Z.center, M @ Z.generators)


def minkowski_sum(Z1: Zonotope, Z2: Zonotope) -> Zonotope:
    if Z1.dim != Z2.dim:
        raise InvalidInputError(f"dimension mismatch: {Z1.dim} vs {Z2.dim}")
    return Zonotope(Z1.center + Z2.center, np.hstack([Z1.generators, Z2.generators]))


def support(Z: Zonotope, direction) -> float:
    d = np.asarray(direction, dtype=float).reshape(-1)
    if d.size != Z.dim:
        raise InvalidInputError(f"direction has dimension {d.size}, set has {Z.dim}")
    if not np.any(d):
        raise InvalidInputError("support direction must be nonzero")
    return float(d @ Z.center + np.abs(d @ Z.generators).sum())


def contains(Z: Zonotope, x, tol: float = 0.0) -> bool:
    """Membership of ``x`` in ``Z`` scaled by ``1 + tol`` about its center.

    Solves ``min t  s.t.  G a = x - center, -t <= a_i <= t`` as an LP.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    r = x - Z.center
    g = Z.order
    if g == 0:
        return bool(np.abs(r).max() <= tol * max(1.0, np.abs(Z.center).max()) + 1e-12)
    if not np.any(r):
        return True
    G = Z.generators
    # variables [a (g), t]
    cost = np.zeros(g + 1)
    cost[-1] = 1.0
    A_ub = np.block([[np.eye(g), -np.ones((g, 1))], [-np.eye(g), -np.ones((g, 1))]])
    b_ub = np.zeros(2 * g)
    A_eq = np.hstack([G, np.zeros((Z.dim, 1))])
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=r,
                  bounds=[(None, None)] * g + [(0, None)], method="highs")
    if res.status == 2:
        return False
    if res.status != 0:
        raise RuntimeError(f"membership LP failed: {res.message}")
    a = res.x[:g]
    if np.abs(G @ a - r).max() > 1e-9 * max(1.0, np.abs(r).max()):
        return False
    return bool(res.x[-1] <= 1.0 + tol + 1e-12)


def direction_grid(n: int = 3) -> np.ndarray:
    """All nonzero vectors in ``{-1, 0, 1}^n``, normalised (26 for n = 3)."""
    dirs = [d for d in itertools.product((-1.0, 0.0, 1.0), repeat=n) if any(d)]
    D = np.array(dirs)
    return D / np.linalg.norm(D, axis=1, keepdims=True)


def facet_normals(Z: Zonotope, tol: float = 1e-12) -> np.ndarray:
    """Facet normals (both orientations) of a full-dimensional zonotope, n <= 3.

    Generators shorter than ``tol`` times the longest one are ignored, so the
    test is scale-free.
    """
    n = Z.dim
    norms = np.linalg.norm(Z.generators, axis=0)
    G = Z.generators[:, norms > tol * norms.max(initial=0.0)] if norms.size else Z.generators
    if G.size:
        G = G / norms.max()
    if G.size == 0 or np.linalg.matrix_rank(G) < n:
        raise InvalidInputError("zonotope is not full-dimensional")
    if n == 1:
        N = np.array([[1.0]])
    elif n == 2:
        N = np.column_stack([-G[1], G[0]]).astype(float)
    elif n == 3:
        N = np.array([np.cross(G[:, i], G[:, j])
                      for i, j in itertools.combinations(range(G.shape[1]), 2)])
    else:
        raise InvalidInputError("facet enumeration implemented for n <= 3 only")
    norms = np.linalg.norm(N, axis=1)
    N = N[norms > tol] / norms[norms > tol, None]
    return np.vstack([N, -N])


def mrpi_outer(Acl, W: Zonotope, eps: float = 1e-3, max_s: int = 500) -> Zonotope:
    """Outer epsilon-approximation of the minimal robust positively invariant set.

    The error dynamics are ``e+ = Acl e + w`` with ``w`` in ``W``. The center of
    ``W`` is a constant offset handled separately; the symmetric part follows
    the truncated-series construction: find the smallest ``s`` with
    ``Acl^s W0 ⊆ alpha W0`` and ``alpha <= eps / (eps + M_s)``, then return
    ``offset + (1 - alpha)^-1 (W0 ⊕ Acl W0 ⊕ ... ⊕ Acl^{s-1} W0)``.
    """
    Acl = np.atleast_2d(np.asarray(Acl, dtype=float))
    n = W.dim
    if Acl.shape != (n, n):
        raise InvalidInputError(f"Acl shape {Acl.shape} does not match W dimension {n}")
    rho = float(np.max(np.abs(np.linalg.eigvals(Acl))))
    if rho >= 1.0:
        raise InvalidInputError(f"closed loop is not stable (spectral radius {rho:.6g})")
    offset = np.linalg.solve(np.eye(n) - Acl, W.center)
    W0 = Zonotope(np.zeros(n), W.generators)
    normals = facet_normals(W0)
    h_W = np.abs(normals @ W0.generators).sum(axis=1)
    axes = np.vstack([np.eye(n), -np.eye(n)])

    blocks = [W0.generators]
    Ak = Acl.copy()
    for s in range(1, max_s + 1):
        AkG = Ak @ W0.generators
        alpha = float(np.max(np.abs(normals @ AkG).sum(axis=1) / h_W))
        F_gen = np.hstack(blocks)
        M_s = float(np.max(np.abs(axes @ F_gen).sum(axis=1)))
        if alpha <= eps / (eps + M_s):
            return Zonotope(offset, F_gen / (1.0 - alpha))
        blocks.append(AkG)
        Ak = Acl @ Ak
    raise NonConvergenceError(f"mRPI truncation did not terminate within s = {max_s}")


def invariance_margins(Acl, E: Zonotope, W: Zonotope, directions=None) -> np.ndarray:
    """``support(E, d) - support(Acl E ⊕ W, d)`` over a direction grid.

    Non-negative margins (up to the tolerance) certify ``Acl E ⊕ W ⊆ E``.
    """
    D = direction_grid(E.dim) if directions is None else np.asarray(directions, dtype=float)
    image = minkowski_sum(linear_map(Acl, E), W)
    return np.array([support(E, d) - support(image, d) for d in D])


def project(Z: Zonotope, axes: tuple[int, int]) -> Zonotope:
    return Zonotope(Z.center[list(axes)], Z.generators[list(axes)])


def polygon_vertices(Z: Zonotope) -> np.ndarray:
    """Vertices of a 2-D zonotope in counter-clockwise order."""
    if Z.dim != 2:
        raise InvalidInputError("polygon vertices need a 2-D zonotope")
    G = Z.generators[:, np.linalg.norm(Z.generators, axis=0) > 0]
    if G.shape[1] == 0:
        return Z.center[None, :]
    # orient every generator into the upper half plane, sort by angle
    G = np.where((G[1] < 0) | ((G[1] == 0) & (G[0] < 0)), -G, G)
    G = G[:, np.argsort(np.arctan2(G[1], G[0]))]
    start = Z.center - G.sum(axis=1)
    pts = [start]
    for col in np.hstack([2 * G, -2 * G]).T:
        pts.append(pts[-1] + col)
    return np.array(pts[:-1])
