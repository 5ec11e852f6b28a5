"""Cone programs (LP / SOCP / SDP) behind a single solve entry point.

Programs are stored in a plain matrix form and handed to the Clarabel
interior-point solver. Every returned optimum is re-checked against the
original constraints, so callers never have to trust solver status alone.

Affine expressions used while assembling a program are dense numpy arrays
whose last axis has length ``n_vars + 1``: the first ``n_vars`` entries are
coefficients, the final entry is the constant term.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

import clarabel

LP_TOL = 1e-8
SDP_TOL = 1e-7

_SQRT2 = math.sqrt(2.0)


class Status(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERICAL_FAILURE = "NumericalFailure"


def tri_size(dim: int) -> int:
    return dim * (dim + 1) // 2


def tri_indices(dim: int):
    """Lower-triangle indices in row-major order."""
    return np.tril_indices(dim)


@dataclass(frozen=True)
class PsdBlock:
    """Symmetric affine matrix map ``M(x) = mat(F @ x + f)`` required PSD.

    ``F`` has one row per lower-triangle entry (row-major order).
    """

    dim: int
    F: np.ndarray
    f: np.ndarray

    def matrix(self, x: np.ndarray) -> np.ndarray:
        vals = self.F @ x + self.f
        M = np.zeros((self.dim, self.dim))
        M[tri_indices(self.dim)] = vals
        return M + np.tril(M, -1).T


@dataclass(frozen=True)
class ConeProgram:
    """minimize ``objective @ x`` subject to

    * ``A_eq @ x == b_eq``
    * ``G @ x <= h``
    * for each ``(F, f)`` in ``soc``: ``(F @ x + f)[0] >= ||(F @ x + f)[1:]||``
    * for each block in ``psd``: ``block.matrix(x)`` positive semidefinite
    """

    n_vars: int
    objective: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    G: np.ndarray
    h: np.ndarray
    soc: tuple = ()
    psd: tuple = ()

    def __post_init__(self):
        n = self.n_vars
        if self.objective.shape != (n,):
            raise ValueError("objective length does not match n_vars")
        if self.A_eq.shape[1:] != (n,) or self.G.shape[1:] != (n,):
            raise ValueError("constraint matrices must have n_vars columns")
        if len(self.b_eq) != len(self.A_eq) or len(self.h) != len(self.G):
            raise ValueError("constraint rows and offsets differ in length")
        for F, f in self.soc:
            if F.shape != (len(f), n) or len(f) < 1:
                raise ValueError("malformed second-order cone")
        for blk in self.psd:
            if blk.F.shape != (tri_size(blk.dim), n):
                raise ValueError("malformed PSD block")

    @property
    def has_psd(self) -> bool:
        return len(self.psd) > 0

    def residuals(self, x: np.ndarray) -> dict:
        """Worst violation per constraint class (0 means satisfied)."""
        out = {"eq": 0.0, "ineq": 0.0, "soc": 0.0, "psd": 0.0}
        if len(self.b_eq):
            out["eq"] = float(np.max(np.abs(self.A_eq @ x - self.b_eq)))
        if len(self.h):
            out["ineq"] = float(max(0.0, np.max(self.G @ x - self.h)))
        for F, f in self.soc:
            v = F @ x + f
            out["soc"] = max(out["soc"], float(np.linalg.norm(v[1:]) - v[0]))
        for blk in self.psd:
            lam = np.linalg.eigvalsh(blk.matrix(x))[0]
            out["psd"] = max(out["psd"], float(-lam))
        return out


@dataclass
class ConeSolution:
    status: Status
    x: np.ndarray | None = None
    objective_value: float = math.nan
    residuals: dict = field(default_factory=dict)
    solver_status: str = ""

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def _svec_rows(blk: PsdBlock):
    # Clarabel wants the upper triangle column-major with off-diagonals
    # scaled by sqrt(2); that ordering equals our lower triangle row-major.
    rows, cols = tri_indices(blk.dim)
    scale = np.where(rows == cols, 1.0, _SQRT2)
    return blk.F * scale[:, None], blk.f * scale


def solve(program: ConeProgram, tol: float | None = None, max_iter: int = 200) -> ConeSolution:
    """Solve ``program`` and verify the returned point independently.

    An optimum is only reported when every equality, inequality, cone and
    PSD constraint holds to ``tol`` (default 1e-8 for programs without PSD
    blocks, 1e-7 otherwise); anything else comes back as NumericalFailure.
    """
    if tol is None:
        tol = SDP_TOL if program.has_psd else LP_TOL
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = program.n_vars

    blocks_A = []
    blocks_b = []
    cones = []
    if len(program.b_eq):
        blocks_A.append(program.A_eq)
        blocks_b.append(program.b_eq)
        cones.append(clarabel.ZeroConeT(len(program.b_eq)))
    if len(program.h):
        blocks_A.append(program.G)
        blocks_b.append(program.h)
        cones.append(clarabel.NonnegativeConeT(len(program.h)))
    for F, f in program.soc:
        blocks_A.append(-F)
        blocks_b.append(f)
        cones.append(clarabel.SecondOrderConeT(len(f)))
    for blk in program.psd:
        F, f = _svec_rows(blk)
        blocks_A.append(-F)
        blocks_b.append(f)
        cones.append(clarabel.PSDTriangleConeT(blk.dim))

    if not blocks_A:
        # unconstrained linear objective
        if np.any(program.objective != 0):
            return ConeSolution(Status.UNBOUNDED, solver_status="no constraints")
        x = np.zeros(n)
        return ConeSolution(Status.OPTIMAL, x, 0.0, program.residuals(x))

    A = sp.csc_matrix(np.vstack(blocks_A))
    b = np.concatenate(blocks_b)
    P = sp.csc_matrix((n, n))

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    inner = min(1e-9, tol * 1e-2)
    settings.tol_feas = inner
    settings.tol_gap_abs = inner
    settings.tol_gap_rel = inner
    settings.presolve_enable = False

    try:
        solver = clarabel.DefaultSolver(P, program.objective.astype(float), A, b, cones, settings)
        result = solver.solve()
    except Exception as exc:  # backend raised on a malformed or degenerate problem
        return ConeSolution(Status.NUMERICAL_FAILURE, solver_status=repr(exc))

    name = str(result.status)
    if "PrimalInfeasible" in name:
        return ConeSolution(Status.INFEASIBLE, solver_status=name)
    if "DualInfeasible" in name:
        return ConeSolution(Status.UNBOUNDED, solver_status=name)

    x = np.asarray(result.x, dtype=float)
    if x.shape != (n,) or not np.all(np.isfinite(x)):
        return ConeSolution(Status.NUMERICAL_FAILURE, solver_status=name)
    res = program.residuals(x)
    ok = name in ("Solved", "AlmostSolved", "SolverStatus.Solved", "SolverStatus.AlmostSolved")
    if ok and max(res.values()) <= tol:
        return ConeSolution(Status.OPTIMAL, x, float(program.objective @ x), res, name)
    return ConeSolution(Status.NUMERICAL_FAILURE, residuals=res, solver_status=name)


# ---------------------------------------------------------------------------
# assembly helpers


class ProgramBuilder:
    """Collects variables and constraints into a :class:`ConeProgram`.

    Variables are declared first; :meth:`finalize_variables` then returns
    affine-expression arrays for each of them.
    """

    def __init__(self):
        self._decl = []
        self._vars = None
        self.n_vars = 0
        self._eq = []
        self._le = []
        self._soc = []
        self._psd = []
        self._objective = None

    def declare(self, name: str, shape=(), symmetric: bool = False):
        if self._vars is not None:
            raise RuntimeError("variables already finalized")
        shape = tuple(np.atleast_1d(shape).astype(int)) if shape != () else ()
        if symmetric and (len(shape) != 2 or shape[0] != shape[1]):
            raise ValueError("symmetric variables must be square")
        size = tri_size(shape[0]) if symmetric else int(np.prod(shape, dtype=int))
        self._decl.append((name, shape, symmetric, self.n_vars, size))
        self.n_vars += size

    def finalize_variables(self) -> dict:
        nv = self.n_vars
        out = {}
        for name, shape, symmetric, start, size in self._decl:
            if symmetric:
                d = shape[0]
                arr = np.zeros((d, d, nv + 1))
                r, c = tri_indices(d)
                for k, (i, j) in enumerate(zip(r, c)):
                    arr[i, j, start + k] = 1.0
                    arr[j, i, start + k] = 1.0
            else:
                arr = np.zeros(shape + (nv + 1,))
                flat = arr.reshape(-1, nv + 1)
                flat[np.arange(size), start + np.arange(size)] = 1.0
            out[name] = arr
        self._vars = out
        return out

    def slices(self) -> dict:
        return {name: (start, size) for name, _, _, start, size in self._decl}

    def const(self, value) -> np.ndarray:
        value = np.asarray(value, dtype=float)
        arr = np.zeros(value.shape + (self.n_vars + 1,))
        arr[..., -1] = value
        return arr

    def zeros(self, shape) -> np.ndarray:
        return np.zeros(tuple(np.atleast_1d(shape)) + (self.n_vars + 1,))

    # constraints ----------------------------------------------------------
    def add_eq(self, expr):
        """expr == 0 elementwise."""
        e = np.asarray(expr).reshape(-1, self.n_vars + 1)
        self._eq.append(e)

    def add_le(self, expr):
        """expr <= 0 elementwise."""
        e = np.asarray(expr).reshape(-1, self.n_vars + 1)
        self._le.append(e)

    def add_soc(self, t, u):
        """||u|| <= t for scalar affine t and vector affine u."""
        t = np.asarray(t).reshape(1, self.n_vars + 1)
        u = np.asarray(u).reshape(-1, self.n_vars + 1)
        self._soc.append(np.vstack([t, u]))

    def add_psd(self, M):
        """Symmetric affine matrix M >= 0 (only the lower triangle is read)."""
        M = np.asarray(M)
        d = M.shape[0]
        if M.shape[:2] != (d, d):
            raise ValueError("PSD expression must be square")
        rows = M[tri_indices(d)]
        self._psd.append((d, rows))

    def minimize(self, expr):
        self._objective = np.asarray(expr).reshape(self.n_vars + 1)

    def build(self) -> ConeProgram:
        nv = self.n_vars
        empty = np.zeros((0, nv + 1))
        eq = np.vstack(self._eq) if self._eq else empty
        le = np.vstack(self._le) if self._le else empty
        obj = self._objective if self._objective is not None else np.zeros(nv + 1)
        return ConeProgram(
            n_vars=nv,
            objective=obj[:nv].copy(),
            A_eq=eq[:, :nv].copy(),
            b_eq=-eq[:, nv].copy(),
            G=le[:, :nv].copy(),
            h=-le[:, nv].copy(),
            soc=tuple((s[:, :nv].copy(), s[:, nv].copy()) for s in self._soc),
            psd=tuple(PsdBlock(d, rows[:, :nv].copy(), rows[:, nv].copy()) for d, rows in self._psd),
        )


def mm(M, X) -> np.ndarray:
    """Constant matrix times affine matrix expression."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return np.einsum("ij,jkv->ikv", M, X)


def mr(X, M) -> np.ndarray:
    """Affine matrix expression times constant matrix."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return np.einsum("ikv,kj->ijv", X, M)


def tr(X) -> np.ndarray:
    """Transpose of an affine matrix expression."""
    return np.swapaxes(X, 0, 1)


def block(rows) -> np.ndarray:
    """Assemble a block matrix of affine expressions (like ``np.block``)."""
    return np.concatenate([np.concatenate(r, axis=1) for r in rows], axis=0)


def value(expr, x) -> np.ndarray:
    """Evaluate an affine expression at ``x``."""
    return expr[..., :-1] @ x + expr[..., -1]


def polish_lp_vertex(G: np.ndarray, h: np.ndarray, c: np.ndarray, x: np.ndarray, tol: float = 1e-7):
    """Snap an interior-point LP optimum of ``min c@x s.t. G@x <= h`` onto its active face.

    Picks the most active linearly independent rows and projects ``x`` onto
    the affine set where they hold with equality (a vertex when there are
    ``len(x)`` of them). The projection is kept if it is feasible (to
    ``tol``) and no worse than ``x``; otherwise ``x`` is returned unchanged.
    """
    n = len(x)
    slack = h - G @ x
    order = np.argsort(slack)
    rows = []
    for k in order:
        if slack[k] > 1e-4 * (1.0 + abs(h[k])):
            break
        cand = rows + [k]
        if np.linalg.matrix_rank(G[cand]) == len(cand):
            rows = cand
        if len(rows) == n:
            break
    if not rows:
        return x
    Gr = G[rows]
    if len(rows) == n:
        v = np.linalg.solve(Gr, h[rows])
    else:
        v = x - np.linalg.pinv(Gr) @ (Gr @ x - h[rows])
    if np.max(G @ v - h) <= tol and c @ v <= c @ x + tol:
        return v
    return x
