"""Polytopes, ellipsoids and the handful of set operations the controller needs."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import conic
from .conic import ProgramBuilder, block, mm


class GeometryError(ValueError):
    pass


class UnboundedPolytope(GeometryError):
    pass


class DimensionTooLarge(GeometryError):
    pass


class DegenerateHull(GeometryError):
    pass


MAX_VERTEX_DIM = 4


@dataclass(frozen=True)
class Polytope:
    """The set ``{x : A x <= b}``."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.shape[0] != b.shape[0]:
            raise ValueError("A and b must have the same number of rows")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_rows(cls, rows) -> "Polytope":
        """Unit-offset polytope ``{x : rows @ x <= 1}``."""
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        return cls(rows, np.ones(rows.shape[0]))

    @classmethod
    def box(cls, upper, lower=None) -> "Polytope":
        upper = np.asarray(upper, dtype=float).reshape(-1)
        lower = -upper if lower is None else np.asarray(lower, dtype=float).reshape(-1)
        n = len(upper)
        I = np.eye(n)
        return cls(np.vstack([I, -I]), np.concatenate([upper, -lower]))

    @classmethod
    def symmetric_box(cls, half_widths) -> "Polytope":
        """Box ``|x_k| <= half_widths[k]`` written with unit offsets."""
        hw = np.asarray(half_widths, dtype=float).reshape(-1)
        rows = np.vstack([np.diag(1.0 / hw), -np.diag(1.0 / hw)])
        return cls.from_rows(rows)

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def n_facets(self) -> int:
        return self.A.shape[0]

    def contains(self, x, tol: float = 0.0) -> bool:
        return bool(np.all(self.A @ np.asarray(x, dtype=float) <= self.b + tol))

    def scaled(self, s: float) -> "Polytope":
        return Polytope(self.A, s * self.b)

    def unit_rows(self) -> np.ndarray:
        """Facet rows rescaled to unit offset; needs the origin strictly inside."""
        if np.any(self.b <= 0):
            raise GeometryError("origin is not an interior point")
        return self.A / self.b[:, None]

    def is_bounded(self) -> bool:
        try:
            for k in range(self.dim):
                for s in (1.0, -1.0):
                    d = np.zeros(self.dim)
                    d[k] = s
                    support(self, d)
        except UnboundedPolytope:
            return False
        return True

    def origin_interior(self) -> bool:
        return bool(np.all(self.b > 0))


@dataclass(frozen=True)
class Ellipsoid:
    """The set ``{x : (x - c)^T Q (x - c) <= 1}`` with ``Q`` positive definite."""

    c: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if Q.shape != (len(c), len(c)):
            raise ValueError("shape matrix does not match center")
        if not np.allclose(Q, Q.T, rtol=0, atol=1e-12 * max(1.0, np.abs(Q).max())):
            raise ValueError("shape matrix must be symmetric")
        Q = 0.5 * (Q + Q.T)
        if np.linalg.eigvalsh(Q)[0] <= 0:
            raise ValueError("shape matrix must be positive definite")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "Q", Q)

    @classmethod
    def centered(cls, Q) -> "Ellipsoid":
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        return cls(np.zeros(Q.shape[0]), Q)

    @classmethod
    def tube(cls, Z, alpha: float, center=None) -> "Ellipsoid":
        """``{e : e^T Z e <= alpha^2}`` shifted to ``center``."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        c = np.zeros(Z.shape[0]) if center is None else center
        return cls(c, Z / alpha**2)

    @property
    def dim(self) -> int:
        return len(self.c)

    def contains(self, x, tol: float = 0.0) -> bool:
        d = np.asarray(x, dtype=float) - self.c
        return bool(d @ self.Q @ d <= 1.0 + tol)

    def scaled(self, s: float) -> "Ellipsoid":
        """The set ``s * E`` for ``s > 0``."""
        return Ellipsoid(s * self.c, self.Q / s**2)

    def inv_shape(self) -> np.ndarray:
        return np.linalg.inv(self.Q)

    def sample(self, rng: np.random.Generator, n: int, boundary_fraction: float = 0.5) -> np.ndarray:
        """Points drawn from the boundary (``boundary_fraction``) and uniformly inside."""
        d = self.dim
        g = rng.standard_normal((n, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        radius = np.ones(n)
        n_in = n - int(round(boundary_fraction * n))
        if n_in:
            radius[n - n_in:] = rng.random(n_in) ** (1.0 / d)
        # columns of L^{-T} map the unit ball onto {s : s^T Q s <= 1}
        L = np.linalg.cholesky(self.Q)
        pts = np.linalg.solve(L.T, (g * radius[:, None]).T).T
        return pts + self.c


def support(S, direction) -> float:
    """``max_{x in S} direction @ x`` for a polytope or ellipsoid."""
    d = np.asarray(direction, dtype=float).reshape(-1)
    if not np.any(d):
        raise ValueError("direction must be nonzero")
    if isinstance(S, Ellipsoid):
        return float(d @ S.c + np.sqrt(d @ np.linalg.solve(S.Q, d)))
    if isinstance(S, Polytope):
        return _polytope_support(S, d)
    raise TypeError(f"unsupported set type {type(S).__name__}")


def _polytope_support(p: Polytope, d: np.ndarray) -> float:
    b = ProgramBuilder()
    b.declare("x", p.dim)
    x = b.finalize_variables()["x"]
    b.add_le(mm(p.A, x[:, None])[:, 0] - b.const(p.b))
    b.minimize(-(d @ x))
    sol = conic.solve(b.build())
    if sol.status is conic.Status.UNBOUNDED:
        raise UnboundedPolytope("support function is infinite")
    if sol.status is conic.Status.INFEASIBLE:
        raise GeometryError("empty polytope")
    if not sol.optimal:
        raise GeometryError(f"support LP failed: {sol.solver_status}")
    xs = conic.polish_lp_vertex(p.A, p.b, -d, sol.x)
    return float(d @ xs)


def vertices(p: Polytope, tol: float = 1e-9) -> np.ndarray:
    """Extreme points of a bounded polytope of dimension at most four.

    Every combination of ``dim`` facets is intersected and kept if the
    intersection point is feasible; duplicates are merged.
    """
    n = p.dim
    if n > MAX_VERTEX_DIM:
        raise DimensionTooLarge(f"vertex enumeration limited to dim <= {MAX_VERTEX_DIM}")
    if not p.is_bounded():
        raise UnboundedPolytope("polytope is unbounded")
    scale = np.maximum(np.linalg.norm(p.A, axis=1), 1e-300)
    A = p.A / scale[:, None]
    b = p.b / scale
    found = []
    for rows in itertools.combinations(range(p.n_facets), n):
        sub = A[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        v = np.linalg.solve(sub, b[list(rows)])
        if np.all(A @ v <= b + tol) and not any(np.allclose(v, w, atol=1e-9) for w in found):
            found.append(v + 0.0)
    return np.array(found).reshape(-1, n)


def loewner_john(points, tol: float | None = None) -> Ellipsoid:
    """Minimum-volume ellipsoid containing ``points`` (rows).

    Solved as ``max det(M)^(1/n)`` over ``||M p + v|| <= 1`` with ``M``
    symmetric positive definite; the ellipsoid is then ``Q = M^2`` and
    ``c = -M^{-1} v``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.ndim != 2:
        raise ValueError("points must be a 2-D array")
    k, n = pts.shape
    if k < n + 1 or np.linalg.matrix_rank(pts - pts.mean(axis=0), tol=1e-9 * max(1.0, np.abs(pts).max())) < n:
        raise DegenerateHull("points do not span their space")

    if n == 1:
        lo, hi = pts.min(), pts.max()
        return Ellipsoid(np.array([(lo + hi) / 2]), np.array([[4.0 / (hi - lo) ** 2]]))

    m = 1
    while m < n:
        m *= 2
    ntri = n * (n + 1) // 2

    b = ProgramBuilder()
    b.declare("M", (n, n), symmetric=True)
    b.declare("v", n)
    b.declare("low", ntri)
    b.declare("t")
    # intermediate nodes of the geometric-mean tree
    n_nodes = m - 1
    b.declare("node", n_nodes)
    V = b.finalize_variables()
    M, v, low, t, node = V["M"], V["v"], V["low"], V["t"], V["node"]

    Lo = b.zeros((n, n))
    r, c = np.tril_indices(n)
    for idx, (i, j) in enumerate(zip(r, c)):
        Lo[i, j] = low[idx]
    diag = np.stack([Lo[i, i] for i in range(n)])
    Dg = b.zeros((n, n))
    for i in range(n):
        Dg[i, i] = diag[i]
    b.add_psd(block([[M, Lo], [np.swapaxes(Lo, 0, 1), Dg]]))

    for p_ in pts:
        b.add_soc(b.const(1.0), np.einsum("ijv,j->iv", M, p_) + v)

    # leaves: diag entries padded with t; node k has children 2k+1, 2k+2 in a
    # heap layout over (nodes + leaves); root (node 0) must dominate t.
    leaves = [diag[i] for i in range(n)] + [t] * (m - n)
    heap = [node[i] for i in range(n_nodes)] + leaves
    for k in range(n_nodes):
        a_, c_ = heap[2 * k + 1], heap[2 * k + 2]
        # node^2 <= a * c  <=>  ||(2 node, a - c)|| <= a + c
        b.add_soc(a_ + c_, np.stack([2 * heap[k], a_ - c_]))
    b.add_le(t - node[0])
    b.minimize(-t)

    sol = conic.solve(b.build(), tol=tol)
    if not sol.optimal:
        raise GeometryError(f"Loewner-John program failed: {sol.status.value}")
    Mv = conic.value(M, sol.x)
    vv = conic.value(v, sol.x)
    Mv = 0.5 * (Mv + Mv.T)
    coarse = Ellipsoid(-np.linalg.solve(Mv, vv), Mv @ Mv)
    return _refine_mvee(pts, coarse)


def _refine_mvee(pts: np.ndarray, coarse: Ellipsoid, iters: int = 50) -> Ellipsoid:
    """Sharpen an interior-point MVEE with Newton steps on the dual weights.

    The log-det objective is flat at the optimum, so the conic solve only
    pins ``Q`` to roughly the square root of its tolerance. Restricted to the
    points on the boundary, the dual ``max log det sum u_i q_i q_i^T`` over the
    simplex is smooth and Newton converges quadratically. The refined
    ellipsoid is only accepted if it still contains every point and is no
    larger than the coarse one.
    """
    n = pts.shape[1]
    d = pts - coarse.c
    level = np.einsum("ij,jk,ik->i", d, coarse.Q, d)
    active = np.flatnonzero(level >= 1.0 - 1e-4)
    if len(active) < n + 1:
        return coarse
    q = np.hstack([pts[active], np.ones((len(active), 1))])
    u = np.full(len(active), 1.0 / len(active))

    def objective(w):
        sign, logdet = np.linalg.slogdet(q.T @ (w[:, None] * q))
        return logdet if sign > 0 else -np.inf

    for _ in range(iters):
        Minv = np.linalg.inv(q.T @ (u[:, None] * q))
        K = q @ Minv @ q.T
        grad = np.diag(K).copy()
        hess = -(K**2)
        # Newton step on the simplex via the KKT system
        m = len(u)
        kkt = np.block([[hess, np.ones((m, 1))], [np.ones((1, m)), np.zeros((1, 1))]])
        rhs = np.concatenate([-grad, [0.0]])
        try:
            step = np.linalg.solve(kkt, rhs)[:m]
        except np.linalg.LinAlgError:
            return coarse
        t = 1.0
        f0 = objective(u)
        while t > 1e-12:
            cand = u + t * step
            if np.all(cand > 0) and objective(cand) >= f0 - 1e-15:
                break
            t *= 0.5
        else:
            return coarse
        u = cand
        if np.max(np.abs(t * step)) < 1e-15:
            break

    c = u @ pts[active]
    dc = pts[active] - c
    cov = dc.T @ (u[:, None] * dc)
    try:
        fine = Ellipsoid(c, np.linalg.inv(cov) / n)
    except ValueError:
        return coarse
    dd = pts - fine.c
    lev = np.einsum("ij,jk,ik->i", dd, fine.Q, dd)
    if np.max(lev) <= 1.0 + 1e-10 and np.linalg.det(fine.Q) >= np.linalg.det(coarse.Q) * (1 - 1e-6):
        return fine
    return coarse


def minkowski_contained(inner_a: Polytope, inner_b: Ellipsoid | None, outer: Polytope, tol: float = 1e-8):
    """Check ``inner_a (+) inner_b`` is inside ``outer`` facet by facet.

    Facets of ``outer`` are normalized to unit offset. Returns
    ``(contained, margins)`` with ``margins[k] = 1 - h_a(r_k) - h_b(r_k)``.
    ``inner_b=None`` stands for the single point at the origin.
    """
    rows = outer.unit_rows()
    margins = np.empty(len(rows))
    for k, r in enumerate(rows):
        s = support(inner_a, r)
        if inner_b is not None:
            s += support(inner_b, r)
        margins[k] = 1.0 - s
    return bool(np.all(margins >= -tol)), margins
