"""Subsystems, the directed coupling graph and global assembly.

An edge ``(i, j)`` means subsystem ``j`` drives subsystem ``i`` through
``E_i a_ij C_j z_j``; ``j`` is an in-neighbor of ``i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.linalg import block_diag

from .geometry import Polytope

Edge = tuple  # (receiver, sender)


@dataclass(frozen=True)
class CostWeights:
    Q: np.ndarray
    R: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        for name in ("Q", "R", "S"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))

    def problems(self) -> list[str]:
        out = []
        for name, strict in (("Q", False), ("R", True), ("S", True)):
            M = getattr(self, name)
            if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, atol=1e-12):
                out.append(f"cost {name} not symmetric")
                continue
            lo = np.linalg.eigvalsh(M)[0]
            if (strict and lo <= 0) or lo < -1e-12:
                out.append(f"cost {name} not {'positive definite' if strict else 'positive semidefinite'}")
        return out


@dataclass(frozen=True)
class SubsystemModel:
    """One subsystem ``z+ = A z + B v + E w + d`` with ``w = sum_j a_ij C_j z_j``.

    ``noise_set=None`` means the noise is identically zero.
    """

    id: int
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    E: np.ndarray
    state_set: Polytope
    input_set: Polytope
    noise_set: Polytope | None
    in_neighbors: tuple = ()
    out_neighbors: tuple = ()
    cost: CostWeights | None = None

    def __post_init__(self):
        for name in ("A", "B", "C", "E"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        object.__setattr__(self, "in_neighbors", tuple(self.in_neighbors))
        object.__setattr__(self, "out_neighbors", tuple(self.out_neighbors))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]

    @property
    def m0(self) -> int:
        return self.C.shape[0]

    @property
    def G(self) -> np.ndarray:
        return self.state_set.unit_rows()

    @property
    def H(self) -> np.ndarray:
        return self.input_set.unit_rows()

    @property
    def Xi(self) -> np.ndarray | None:
        return None if self.noise_set is None else self.noise_set.unit_rows()

    def problems(self) -> list[str]:
        out = []
        n, p, m0 = self.n, self.p, self.m0
        if self.A.shape != (n, n):
            out.append(f"subsystem {self.id}: A not square")
        if self.B.shape[0] != n:
            out.append(f"subsystem {self.id}: B row count")
        if self.C.shape[1] != n:
            out.append(f"subsystem {self.id}: C column count")
        if self.E.shape != (n, m0):
            out.append(f"subsystem {self.id}: E must be n x m0")
        sets = [("state", self.state_set, n), ("input", self.input_set, p)]
        if self.noise_set is not None:
            sets.append(("noise", self.noise_set, n))
        for name, S, dim in sets:
            if S.dim != dim:
                out.append(f"subsystem {self.id}: {name} set dimension")
                continue
            if not S.origin_interior():
                out.append(f"subsystem {self.id}: {name} set lacks origin in interior")
            elif not S.is_bounded():
                out.append(f"subsystem {self.id}: {name} set unbounded")
        if self.cost is not None:
            out += [f"subsystem {self.id}: {msg}" for msg in self.cost.problems()]
            if self.cost.Q.shape != (n, n) or self.cost.S.shape != (n, n) or self.cost.R.shape != (p, p):
                out.append(f"subsystem {self.id}: cost dimensions")
        return out


@dataclass(frozen=True)
class ParameterBounds:
    """Interval ``[a_min, a_max]`` for every directed edge, in a fixed edge order."""

    edges: tuple
    a_min: np.ndarray
    a_max: np.ndarray

    def __post_init__(self):
        edges = tuple(tuple(e) for e in self.edges)
        lo = np.asarray(self.a_min, dtype=float).reshape(-1).copy()
        hi = np.asarray(self.a_max, dtype=float).reshape(-1).copy()
        if len(lo) != len(edges) or len(hi) != len(edges):
            raise ValueError("one bound pair per edge required")
        if len(set(edges)) != len(edges):
            raise ValueError("duplicate edge")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "a_min", lo)
        object.__setattr__(self, "a_max", hi)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ParameterBounds":
        edges = list(d)
        return cls(edges, [d[e][0] for e in edges], [d[e][1] for e in edges])

    def index(self, edge) -> int:
        return self.edges.index(tuple(edge))

    def interval(self, edge) -> tuple:
        k = self.index(edge)
        return float(self.a_min[k]), float(self.a_max[k])

    def incoming(self, model: SubsystemModel) -> tuple[np.ndarray, np.ndarray]:
        """Bounds on the in-edges of ``model``, ordered like ``model.in_neighbors``."""
        idx = [self.index((model.id, j)) for j in model.in_neighbors]
        return self.a_min[idx].copy(), self.a_max[idx].copy()

    def with_incoming(self, model: SubsystemModel, lo, hi) -> "ParameterBounds":
        new_lo, new_hi = self.a_min.copy(), self.a_max.copy()
        for k, j in enumerate(model.in_neighbors):
            e = self.index((model.id, j))
            new_lo[e], new_hi[e] = lo[k], hi[k]
        return ParameterBounds(self.edges, new_lo, new_hi)

    def scaled(self, factor: float) -> "ParameterBounds":
        return ParameterBounds(self.edges, self.a_min * factor, self.a_max * factor)

    def widths(self) -> np.ndarray:
        return self.a_max - self.a_min


@dataclass(frozen=True)
class Network:
    subsystems: tuple

    def __post_init__(self):
        object.__setattr__(self, "subsystems", tuple(self.subsystems))

    def __iter__(self):
        return iter(self.subsystems)

    def __len__(self):
        return len(self.subsystems)

    @property
    def ids(self) -> list:
        return [s.id for s in self.subsystems]

    def by_id(self, i) -> SubsystemModel:
        for s in self.subsystems:
            if s.id == i:
                return s
        raise KeyError(i)

    def position(self, i) -> int:
        return self.ids.index(i)

    def edges(self) -> list:
        return [(s.id, j) for s in self.subsystems for j in s.in_neighbors]

    def offsets(self) -> np.ndarray:
        """Start index of every subsystem's state in the stacked global state."""
        return np.concatenate([[0], np.cumsum([s.n for s in self.subsystems])])


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class GlobalCoupling:
    A_g: np.ndarray
    D_g: np.ndarray
    L_g: np.ndarray
    U: dict
    V: dict
    W: dict

    def laplacian_psd(self, tol: float = 1e-12) -> bool:
        """Whether the symmetric part of the Laplacian is PSD (only meaningful for reporting)."""
        S = 0.5 * (self.L_g + self.L_g.T)
        return bool(np.linalg.eigvalsh(S)[0] >= -tol)


def _as_network(subsystems) -> Network:
    return subsystems if isinstance(subsystems, Network) else Network(tuple(subsystems))


def validate_network(subsystems, bounds: ParameterBounds | None = None) -> ValidationReport:
    net = _as_network(subsystems)
    rep = ValidationReport()
    ids = net.ids
    if len(set(ids)) != len(ids):
        rep.violations.append("duplicate subsystem id")
    m0s = {s.m0 for s in net}
    if len(m0s) > 1:
        rep.violations.append("heterogeneous output dimension m0")
    for s in net:
        rep.violations += s.problems()
        for j in s.in_neighbors:
            if j not in ids:
                rep.violations.append(f"subsystem {s.id}: unknown in-neighbor {j}")
            elif s.id not in net.by_id(j).out_neighbors:
                rep.violations.append(f"graph symmetry: {j} -> {s.id} missing from out-neighbors of {j}")
        for j in s.out_neighbors:
            if j not in ids:
                rep.violations.append(f"subsystem {s.id}: unknown out-neighbor {j}")
            elif s.id not in net.by_id(j).in_neighbors:
                rep.violations.append(f"graph symmetry: {s.id} -> {j} missing from in-neighbors of {j}")
        if s.id in s.in_neighbors:
            rep.violations.append(f"subsystem {s.id}: self loop")
    if bounds is not None:
        known = set(bounds.edges)
        for e in net.edges():
            if e not in known:
                rep.violations.append(f"no bounds for edge {e}")
        for e in known - set(net.edges()):
            rep.violations.append(f"bounds given for unknown edge {e}")
        for e, lo, hi in zip(bounds.edges, bounds.a_min, bounds.a_max):
            if not (np.isfinite(lo) and np.isfinite(hi)):
                rep.violations.append(f"bound ordering: edge {e} not finite")
            elif lo < 0:
                rep.violations.append(f"bound ordering: edge {e} has a_min < 0")
            elif lo > hi:
                rep.violations.append(f"bound ordering: edge {e} has a_min > a_max")
    return rep


def _param(point_params, edge) -> float:
    if isinstance(point_params, ParameterBounds):
        raise TypeError("pass a point value per edge, e.g. bounds.a_max via dict")
    return float(point_params.get(edge, 0.0))


def assemble_global(subsystems, point_params: Mapping) -> tuple:
    """Stacked ``(A, B, C, E)`` with the couplings at ``point_params`` folded into ``A``."""
    net = _as_network(subsystems)
    A = block_diag(*[s.A for s in net])
    B = block_diag(*[s.B for s in net])
    C = block_diag(*[s.C for s in net])
    E = block_diag(*[s.E for s in net])
    off = net.offsets()
    for s in net:
        r = net.position(s.id)
        for j in s.in_neighbors:
            c = net.position(j)
            other = net.by_id(j)
            if other.m0 != s.m0:
                raise ValueError("output dimension mismatch on edge")
            a = _param(point_params, (s.id, j))
            A[off[r]:off[r + 1], off[c]:off[c + 1]] += a * s.E @ other.C
    return A, B, C, E


def adjacency(subsystems, point_params: Mapping) -> np.ndarray:
    net = _as_network(subsystems)
    M = len(net)
    Ag = np.zeros((M, M))
    for s in net:
        for j in s.in_neighbors:
            Ag[net.position(s.id), net.position(j)] = _param(point_params, (s.id, j))
    return Ag


def coupling_rowsums(subsystems, bounds: ParameterBounds) -> GlobalCoupling:
    """Row absolute sums of the coupling blocks with every ``a_ij`` at its upper bound.

    For subsystem ``i`` with in-edges ``a_ij`` and out-edges ``a_ki``:
    ``U_i = (sum_j a_ij) C_i^T C_i``, ``V_i = [a_ki C_i^T]_k`` and
    ``W_i = [a_ij C_j]_j``.
    """
    net = _as_network(subsystems)
    upper = dict(zip(bounds.edges, bounds.a_max))
    Ag = adjacency(net, upper)
    Dg = np.diag(Ag.sum(axis=1))
    U, V, W = {}, {}, {}
    for s in net:
        absC = np.abs(s.C)
        din = sum(upper[(s.id, j)] for j in s.in_neighbors)
        U[s.id] = din * np.abs(s.C.T @ s.C).sum(axis=1)
        dout = sum(upper[(k, s.id)] for k in s.out_neighbors)
        V[s.id] = dout * absC.sum(axis=0)
        W[s.id] = sum((upper[(s.id, j)] * np.abs(net.by_id(j).C).sum(axis=1) for j in s.in_neighbors),
                      np.zeros(s.m0))
    return GlobalCoupling(Ag, Dg, Dg - Ag, U, V, W)


# ---------------------------------------------------------------------------
# the five-subsystem chain of double integrators used throughout the tests

CHAIN_A = np.array([[1.0, 1.0], [0.0, 1.0]])
CHAIN_B = np.array([[0.5], [1.0]])
CHAIN_C = np.array([[0.0, 1.0]])
CHAIN_E = np.array([[0.05], [0.1]])


def double_integrator_chain(size: int = 5, noise=(0.025, 0.05), state_box: float = 2.0,
                            input_box: float = 2.0, cost: CostWeights | None = None):
    """Chain of double integrators coupled through their velocities.

    Returns ``(network, initial_bounds, true_params)``. The two end edges
    pointing inward (``1 <- 2`` and ``size <- size-1``) have true strength 1
    and prior ``[0, 4]``; every other edge has strength 0.5 and prior ``[0, 2]``.
    """
    if cost is None:
        cost = CostWeights(np.eye(2), 0.1 * np.eye(1), 10 * np.eye(2))
    ids = list(range(1, size + 1))
    subs = []
    for i in ids:
        ins = tuple(j for j in (i - 1, i + 1) if 1 <= j <= size)
        subs.append(SubsystemModel(
            id=i, A=CHAIN_A, B=CHAIN_B, C=CHAIN_C, E=CHAIN_E,
            state_set=Polytope.symmetric_box([state_box, state_box]),
            input_set=Polytope.symmetric_box([input_box]),
            noise_set=None if noise is None else Polytope.symmetric_box(noise),
            in_neighbors=ins, out_neighbors=ins, cost=cost,
        ))
    net = Network(tuple(subs))
    ends = {(1, 2), (size, size - 1)} if size > 1 else set()
    lo, hi, true = {}, {}, {}
    for e in net.edges():
        strong = e in ends
        lo[e], hi[e], true[e] = 0.0, 4.0 if strong else 2.0, 1.0 if strong else 0.5
    bounds = ParameterBounds(tuple(lo), list(lo.values()), list(hi.values()))
    return net, bounds, true
