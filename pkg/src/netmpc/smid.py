"""Set-membership identification of coupling strengths from one step of data."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import conic
from .conic import ProgramBuilder
from .netmodel import SubsystemModel

log = logging.getLogger(__name__)

# widening of the data rows so round-off can never cut off the true parameter
DATA_SLACK = 1e-9


class EmptyIntersection(RuntimeError):
    """The data rule out every parameter in the prior box (noise model violated)."""


@dataclass(frozen=True)
class FeasibleParamSet:
    """Box ``prod_j [lo_j, hi_j]`` written as ``F theta <= f``."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(-1)
        hi = np.asarray(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError("lo and hi differ in length")
        if np.any(lo > hi):
            raise ValueError("empty box")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def F(self) -> np.ndarray:
        k = len(self.lo)
        return np.vstack([np.eye(k), -np.eye(k)])

    @property
    def f(self) -> np.ndarray:
        return np.concatenate([self.hi, -self.lo])


@dataclass(frozen=True)
class NonFalsifiedSet:
    """Parameters ``theta`` with ``Omega theta <= omega`` consistent with one measurement."""

    Omega: np.ndarray
    omega: np.ndarray

    def contains(self, theta, tol: float = 0.0) -> bool:
        return bool(np.all(self.Omega @ np.asarray(theta, dtype=float) <= self.omega + tol))


def build_nonfalsified(model: SubsystemModel, z_prev, v_prev, neighbor_outputs_prev, z_curr) -> NonFalsifiedSet:
    """Rows ``-Xi E chi theta <= 1 + Xi A z + Xi B v - Xi z+``.

    ``neighbor_outputs_prev`` holds ``C_j z_j`` for each in-neighbor in order.
    With a zero noise set the residual must match exactly, giving two-sided rows.
    """
    z_prev = np.asarray(z_prev, dtype=float).reshape(-1)
    v_prev = np.asarray(v_prev, dtype=float).reshape(-1)
    z_curr = np.asarray(z_curr, dtype=float).reshape(-1)
    ys = [np.asarray(y, dtype=float).reshape(-1) for y in neighbor_outputs_prev]
    if len(ys) != len(model.in_neighbors):
        raise ValueError("one output per in-neighbor required")
    if z_prev.shape != (model.n,) or z_curr.shape != (model.n,) or v_prev.shape != (model.p,):
        raise ValueError("state or input dimension mismatch")
    if any(y.shape != (model.m0,) for y in ys):
        raise ValueError("neighbor output dimension mismatch")
    chi = np.column_stack(ys) if ys else np.zeros((model.m0, 0))
    regressor = model.E @ chi  # n x |N|
    residual = z_curr - model.A @ z_prev - model.B @ v_prev
    Xi = model.Xi
    if Xi is None:
        return NonFalsifiedSet(np.vstack([regressor, -regressor]), np.concatenate([residual, -residual]))
    return NonFalsifiedSet(-Xi @ regressor, 1.0 - Xi @ residual)


def update_bounds(prior_lo, prior_hi, nf: NonFalsifiedSet, tol: float = conic.LP_TOL):
    """Tightest box around ``prior box  ∩  {Omega theta <= omega}``.

    Every coordinate is minimized and maximized over the same intersection,
    so the result does not depend on the order edges are processed in. The
    result is clamped into the prior so bounds never widen.
    """
    prior = FeasibleParamSet(prior_lo, prior_hi)
    k = len(prior.lo)
    if nf.Omega.shape != (len(nf.omega), k):
        raise ValueError("non-falsified set does not match parameter count")
    if k == 0:
        return prior.lo.copy(), prior.hi.copy()

    rows = np.any(nf.Omega != 0, axis=1)
    if np.any(nf.omega[~rows] < -DATA_SLACK):
        raise EmptyIntersection("data inconsistent with the noise model for every parameter")
    Om, om = nf.Omega[rows], nf.omega[rows] + DATA_SLACK
    if len(om) == 0:
        return prior.lo.copy(), prior.hi.copy()

    G = np.vstack([prior.F, Om])
    h = np.concatenate([prior.f, om])
    b = ProgramBuilder()
    b.declare("theta", k)
    theta = b.finalize_variables()["theta"]
    b.add_le(conic.mm(G, theta[:, None])[:, 0] - b.const(h))
    base = b.build()

    lo, hi = prior.lo.copy(), prior.hi.copy()
    for j in range(k):
        for sign in (1.0, -1.0):
            c = np.zeros(k)
            c[j] = sign
            prog = conic.ConeProgram(k, c, base.A_eq, base.b_eq, base.G, base.h)
            sol = conic.solve(prog, tol=tol)
            if sol.status is conic.Status.INFEASIBLE:
                raise EmptyIntersection("prior box and data share no parameter")
            if not sol.optimal:
                # keep the prior coordinate; never shrink on an unverified optimum
                log.warning("identification LP failed (%s); keeping prior bound", sol.status.value)
                continue
            x = conic.polish_lp_vertex(G, h, c, sol.x, tol=tol)
            if sign > 0:
                lo[j] = max(lo[j], x[j])
            else:
                hi[j] = min(hi[j], x[j])
    # coordinates are optimized independently; a crossing only happens at round-off level
    crossed = lo > hi
    if np.any(crossed):
        mid = 0.5 * (lo + hi)
        lo[crossed], hi[crossed] = mid[crossed], mid[crossed]
    return lo, hi
