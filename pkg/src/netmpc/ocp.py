"""Per-subsystem tube MPC programs that co-optimize trajectory and tube ingredients.

The adaptive program decides the nominal trajectory together with the tube
radius ``alpha``, the gain transform ``T`` (through ``Phi = T alpha``), the
tightening scalars ``g, h`` and the passivity certificates ``Gamma, D``
(through ``GammaS = Gamma alpha`` and ``DS = D alpha``). After the change of
variables every matrix inequality is affine in the decision vector:

* tube invariance under coupling and noise, via the S-lemma with one
  multiplier per uncertainty source;
* strict passivity of the closed loop with the fixed storage matrix ``P``;
* diagonal dominance of ``Gamma`` and ``D`` against the coupling row sums;
* tightened state set plus tube inside the state set, one block per facet;
* tightened input set plus ``K`` times the tube inside the input set.

The frozen baseline keeps every ingredient fixed and only plans the
trajectory.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

import numpy as np

from . import conic
from .conic import ProgramBuilder, block, mm, mr, tr
from .geometry import Ellipsoid, loewner_john, vertices
from .netmodel import Network, ParameterBounds, SubsystemModel, coupling_rowsums

if TYPE_CHECKING:  # pragma: no cover
    from .design import BaseDesign


class OcpError(RuntimeError):
    pass


class AlphaDegenerate(OcpError):
    pass


class NonPositiveT(OcpError):
    pass


class MissingOuterSets(OcpError):
    pass


@dataclass(frozen=True)
class OcpConfig:
    N: int = 5
    xi: float = 0.95
    epsilon: float = 1e-6
    floor: float = 1e-7
    tol: float = conic.SDP_TOL
    fallback: bool = True

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("horizon N must be at least 1")
        if not 0 < self.xi < 1:
            raise ValueError("xi must lie in (0, 1)")
        if self.epsilon <= 0 or self.floor <= 0 or self.tol <= 0:
            raise ValueError("epsilon, floor and tol must be positive")


# ---------------------------------------------------------------------------
# outer ellipsoids of the constraint and noise sets


@dataclass(frozen=True)
class OuterSets:
    """Minimum-volume ellipsoids around output, noise and state sets, keyed by subsystem id."""

    Y: dict
    D: dict
    Z: dict


def compute_outer_sets(network: Network) -> OuterSets:
    Y, D, Z = {}, {}, {}
    for s in network:
        vz = vertices(s.state_set)
        Z[s.id] = loewner_john(vz)
        Y[s.id] = loewner_john(vz @ s.C.T)
        D[s.id] = None if s.noise_set is None else loewner_john(vertices(s.noise_set))
    return OuterSets(Y, D, Z)


@dataclass(frozen=True)
class LocalUncertainty:
    """What subsystem ``i`` needs to know about its uncertain surroundings at one step.

    ``a_max`` and ``Y`` follow ``model.in_neighbors``; ``U, V, W`` are the
    coupling row sums at the current upper bounds.
    """

    a_max: np.ndarray
    Y: tuple
    noise: Ellipsoid | None
    U: np.ndarray
    V: np.ndarray
    W: np.ndarray

    @property
    def k(self) -> int:
        return len(self.a_max)


def local_uncertainty(network: Network, i, bounds: ParameterBounds, outer: OuterSets) -> LocalUncertainty:
    model = network.by_id(i)
    try:
        Y = tuple(outer.Y[j] for j in model.in_neighbors)
        noise = outer.D[i]
    except KeyError as exc:
        raise MissingOuterSets(f"no outer set for subsystem {exc.args[0]}") from None
    if (noise is None) != (model.noise_set is None):
        raise MissingOuterSets(f"noise outer set of subsystem {i} does not match its model")
    rs = coupling_rowsums(network, bounds)
    _, hi = bounds.incoming(model)
    return LocalUncertainty(hi, Y, noise, rs.U[i], rs.V[i], rs.W[i])


# ---------------------------------------------------------------------------
# decision and ingredient containers


@dataclass
class ScaledDecision:
    x: np.ndarray
    u: np.ndarray
    xe: np.ndarray
    ue: np.ndarray
    g: float
    h: float
    alpha: float
    Phi: np.ndarray
    GammaS: np.ndarray
    DS: np.ndarray
    Minv: np.ndarray
    lam: float
    lam_d: float
    lam_j: np.ndarray
    mu: np.ndarray
    nu: np.ndarray


@dataclass(frozen=True)
class MpcIngredients:
    alpha: float
    T: np.ndarray
    K: np.ndarray
    g: float
    h: float
    Gamma: np.ndarray
    D: np.ndarray


@dataclass
class OcpSolution:
    status: conic.Status
    raw: ScaledDecision | None = None
    ingredients: MpcIngredients | None = None
    objective: float = float("nan")
    fallback: bool = False
    solver_status: str = ""

    @property
    def optimal(self) -> bool:
        return self.status is conic.Status.OPTIMAL and not self.fallback


def recover_ingredients(raw: ScaledDecision, base: "BaseDesign", alpha_floor: float = 1e-7,
                        eig_floor: float = 0.0) -> MpcIngredients:
    """Undo the scaling: ``T = Phi / alpha``, ``K = K_o T``, ``Gamma = GammaS / alpha``, ``D = DS / alpha``."""
    alpha = float(raw.alpha)
    if not alpha >= alpha_floor:
        raise AlphaDegenerate(f"alpha = {alpha:.3g} below floor {alpha_floor:.3g}")
    T = np.asarray(raw.Phi, dtype=float) / alpha
    T = 0.5 * (T + T.T)
    if np.linalg.eigvalsh(T)[0] <= eig_floor:
        raise NonPositiveT("recovered T is not positive definite")
    Gamma = np.asarray(raw.GammaS, dtype=float) / alpha
    D = np.asarray(raw.DS, dtype=float) / alpha
    if np.any(np.diag(Gamma) <= 0) or np.any(np.diag(D) <= 0):
        raise OcpError("passivity certificates must be positive")
    return MpcIngredients(alpha, T, base.K_o @ T, float(raw.g), float(raw.h), Gamma, D)


def control_input(sol: OcpSolution, z_meas) -> np.ndarray:
    """Applied input ``u(0) + K (z - x(0))``."""
    z = np.asarray(z_meas, dtype=float)
    return sol.raw.u[0] + sol.ingredients.K @ (z - sol.raw.x[0])


def stage_cost(model: SubsystemModel, x, u, xe, ue, xr, ur) -> float:
    """Tracking cost of a planned trajectory toward ``(xe, ue)`` plus the offset penalty."""
    W = model.cost
    dx = np.asarray(x)[:-1] - xe
    du = np.asarray(u) - ue
    off = np.asarray(xe) - xr
    return float(np.einsum("ki,ij,kj->", dx, W.Q, dx) + np.einsum("ki,ij,kj->", du, W.R, du)
                 + off @ W.S @ off)


# ---------------------------------------------------------------------------
# program assembly


def _sm(M, s) -> np.ndarray:
    """Constant matrix times scalar affine expression."""
    return np.multiply.outer(np.asarray(M, dtype=float), s)


def _diag_expr(b: ProgramBuilder, v) -> np.ndarray:
    d = len(v)
    out = b.zeros((d, d))
    for i in range(d):
        out[i, i] = v[i]
    return out


def _psd_sqrt(M) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return (V * np.sqrt(np.clip(w, 0, None))) @ V.T


def declare_ingredients(b: ProgramBuilder, model: SubsystemModel, k: int, with_noise: bool):
    n, p, m0 = model.n, model.p, model.m0
    b.declare("alpha")
    b.declare("g")
    b.declare("h")
    b.declare("Phi", (n, n), symmetric=True)
    b.declare("gs", n)
    b.declare("ds", m0)
    b.declare("Minv", (p, p), symmetric=True)
    b.declare("lam")
    b.declare("lam_d", 1 if with_noise else 0)
    b.declare("lam_j", k)
    b.declare("mu", len(model.G))
    b.declare("nu", len(model.H))


def add_ingredient_constraints(b: ProgramBuilder, V: dict, model: SubsystemModel, base: "BaseDesign",
                               unc: LocalUncertainty, cfg: OcpConfig) -> dict:
    """Add the ingredient matrix inequalities; returns the PSD expressions by name."""
    n, p, m0, k = model.n, model.p, model.m0, unc.k
    alpha, g, h, Phi = V["alpha"], V["g"], V["h"], V["Phi"]
    gs, ds, Minv = V["gs"], V["ds"], V["Minv"]
    lam, lam_j, mu, nu = V["lam"], V["lam_j"], V["mu"], V["nu"]
    Z, P, K_o = base.Z, base.P, base.K_o
    one = b.const(1.0)
    floor = cfg.floor
    blocks = {}

    # sign and positivity
    for s in (alpha, g, h):
        b.add_le(b.const(floor) - s)
    b.add_le(b.const(np.full(n, floor)) - gs)
    b.add_le(b.const(np.full(m0, floor)) - ds)
    b.add_le(b.const(np.full(len(nu), floor)) - nu)
    for s in [lam] + list(lam_j) + list(mu) + list(V["lam_d"]):
        b.add_le(-s)
    b.add_psd(Phi - b.const(floor * np.eye(n)))
    b.add_psd(Minv - b.const(floor * np.eye(p)))

    PhiK = _sm(model.A, alpha) + mm(model.B @ K_o, Phi)  # (A + B K_o T) alpha

    # tube invariance
    Ecal = np.hstack([model.E] * k) if k else np.zeros((n, 0))
    rows_w = []
    const_term = alpha - lam
    wcross = []
    for j, (a, Yj) in enumerate(zip(unc.a_max, unc.Y)):
        rows_w.append(_sm(Yj.Q, lam_j[j]))
        wcross.append(_sm(-(Yj.Q @ (a * Yj.c))[:, None], lam_j[j]))
        const_term = const_term - lam_j[j] * a**2 * (1.0 - Yj.c @ Yj.Q @ Yj.c)
    Wblk = b.zeros((k * m0, k * m0))
    for j, r in enumerate(rows_w):
        Wblk[j * m0:(j + 1) * m0, j * m0:(j + 1) * m0] = r
    wc = np.concatenate(wcross, axis=0) if k else b.zeros((0, 1))

    sdim = [n, k * m0]
    if unc.noise is not None:
        lam_d = V["lam_d"][0]
        Dq, dc = unc.noise.Q, unc.noise.c
        const_term = const_term - lam_d * (1.0 - dc @ Dq @ dc)
        dblk = _sm(Dq, lam_d)
        dcross = _sm(-(Dq @ dc)[:, None], lam_d)
        sdim.append(n)
    Zinv = np.linalg.inv(Z)
    last = [PhiK, b.const(Ecal)]
    if unc.noise is not None:
        last.append(b.const(np.eye(n)))
    last += [b.zeros((n, 1)), _sm(Zinv, alpha)]

    dims = sdim + [1, n]
    nb = len(dims)
    grid = [[None] * nb for _ in range(nb)]
    for r in range(nb):
        for c in range(nb):
            grid[r][c] = b.zeros((dims[r], dims[c]))
    grid[0][0] = _sm(Z, lam)
    grid[1][1] = Wblk
    one_idx = nb - 2
    grid[1][one_idx] = wc
    grid[one_idx][1] = tr(wc)
    if unc.noise is not None:
        grid[2][2] = dblk
        grid[2][one_idx] = dcross
        grid[one_idx][2] = tr(dcross)
    grid[one_idx][one_idx] = const_term[None, None]
    for c, expr in enumerate(last):
        grid[nb - 1][c] = expr
        if c != nb - 1:
            grid[c][nb - 1] = tr(expr)
    blocks["rpi"] = block(grid)
    b.add_psd(blocks["rpi"])

    # strict passivity with storage matrix P
    Gs = _diag_expr(b, gs)
    Ds = _diag_expr(b, ds)
    blocks["passivity"] = block([
        [_sm(P, alpha) - Gs, _sm(0.5 * model.C.T, alpha), tr(PhiK)],
        [_sm(0.5 * model.C, alpha), Ds, _sm(model.E.T, alpha)],
        [PhiK, _sm(model.E, alpha), _sm(np.linalg.inv(P), alpha)],
    ])
    b.add_psd(blocks["passivity"])

    # diagonal dominance against the coupling row sums
    b.add_le(alpha * cfg.epsilon + np.multiply.outer(unc.U + unc.V, alpha) - gs)
    b.add_le(ds * unc.W[:, None] - alpha)

    # tightened state set plus tube within the state set
    for j, Gj in enumerate(model.G):
        M = block([[_sm(Z, mu[j]), _sm(-0.5 * alpha_col(Gj), alpha)],
                   [_sm(-0.5 * alpha_col(Gj).T, alpha), (one - mu[j] - g)[None, None]]])
        blocks[f"state_{j}"] = M
        b.add_psd(M)

    # tightened input set plus K times the tube within the input set
    KPhi = mm(K_o, Phi)
    for j, Hj in enumerate(model.H):
        M1 = block([[Minv, KPhi], [tr(KPhi), _sm(Z, nu[j])]])
        MH = mr(Minv, 0.5 * alpha_col(Hj))
        M2 = block([[Minv, MH], [tr(MH), (one - nu[j] - h)[None, None]]])
        blocks[f"input_{j}_gain"] = M1
        blocks[f"input_{j}_box"] = M2
        b.add_psd(M1)
        b.add_psd(M2)
    return blocks


def alpha_col(row) -> np.ndarray:
    return np.asarray(row, dtype=float).reshape(-1, 1)


def _declare_trajectory(b: ProgramBuilder, model: SubsystemModel, N: int):
    b.declare("x", (N + 1, model.n))
    b.declare("u", (N, model.p))
    b.declare("xe", model.n)
    b.declare("ue", model.p)
    b.declare("t")


def _add_trajectory(b: ProgramBuilder, V: dict, model: SubsystemModel, z_meas, reference, cfg: OcpConfig,
                    alpha, g, h, Z):
    """Tube membership, dynamics, tightened sets, terminal equilibrium and the cost epigraph."""
    x, u, xe, ue, t = V["x"], V["u"], V["xe"], V["ue"], V["t"]
    N = cfg.N
    A, B, G, H = model.A, model.B, model.G, model.H
    xr, ur = (np.asarray(r, dtype=float).reshape(-1) for r in reference)
    L = np.linalg.cholesky(Z)
    b.add_soc(alpha, mm(L.T, (b.const(z_meas) - x[0])[:, None])[:, 0])
    for k in range(N):
        b.add_eq(x[k + 1] - mm(A, x[k][:, None])[:, 0] - mm(B, u[k][:, None])[:, 0])
        b.add_le(mm(G, x[k][:, None])[:, 0] - np.multiply.outer(np.ones(len(G)), g))
        b.add_le(mm(H, u[k][:, None])[:, 0] - np.multiply.outer(np.ones(len(H)), h))
    b.add_eq(x[N] - xe)
    b.add_eq(xe - mm(A, xe[:, None])[:, 0] - mm(B, ue[:, None])[:, 0])
    b.add_le(mm(G, xe[:, None])[:, 0] - np.multiply.outer(np.full(len(G), cfg.xi), g))
    b.add_le(mm(H, ue[:, None])[:, 0] - np.multiply.outer(np.full(len(H), cfg.xi), h))

    W = model.cost
    Qh, Rh, Sh = _psd_sqrt(W.Q), _psd_sqrt(W.R), _psd_sqrt(W.S)
    parts = []
    for k in range(N):
        parts.append(mm(Qh, (x[k] - xe)[:, None])[:, 0])
        parts.append(mm(Rh, (u[k] - ue)[:, None])[:, 0])
    parts.append(mm(Sh, (xe - b.const(xr))[:, None])[:, 0])
    r = np.concatenate(parts, axis=0)
    # ||r||^2 <= t  <=>  ||(2 r, t - 1)|| <= t + 1
    b.add_soc(t + b.const(1.0), np.concatenate([2 * r, (t - b.const(1.0))[None]], axis=0))
    b.minimize(t)
    return xr, ur


def build_ocp(model: SubsystemModel, base: "BaseDesign", z_meas, unc: LocalUncertainty, reference,
              cfg: OcpConfig = OcpConfig()):
    """Assemble the adaptive program. Returns ``(program, variables, psd_blocks)``."""
    z_meas = np.asarray(z_meas, dtype=float).reshape(-1)
    if z_meas.shape != (model.n,):
        raise ValueError("measured state dimension mismatch")
    if unc.k != len(model.in_neighbors) or len(unc.Y) != unc.k:
        raise ValueError("uncertainty description does not match the in-neighbors")
    if (unc.noise is None) != (model.noise_set is None):
        raise MissingOuterSets("noise outer set missing")
    b = ProgramBuilder()
    _declare_trajectory(b, model, cfg.N)
    declare_ingredients(b, model, unc.k, unc.noise is not None)
    V = b.finalize_variables()
    blocks = add_ingredient_constraints(b, V, model, base, unc, cfg)
    _add_trajectory(b, V, model, z_meas, reference, cfg, V["alpha"], V["g"], V["h"], base.Z)
    return b.build(), V, blocks


def _scalar(expr, x) -> float:
    return float(conic.value(expr, x))


def extract_decision(V: dict, x: np.ndarray) -> ScaledDecision:
    val = lambda name: conic.value(V[name], x)  # noqa: E731
    lam_d = val("lam_d")
    return ScaledDecision(
        x=val("x"), u=val("u"), xe=val("xe"), ue=val("ue"),
        g=_scalar(V["g"], x), h=_scalar(V["h"], x), alpha=_scalar(V["alpha"], x),
        Phi=val("Phi"), GammaS=np.diag(val("gs")), DS=np.diag(val("ds")), Minv=val("Minv"),
        lam=_scalar(V["lam"], x), lam_d=float(lam_d[0]) if len(lam_d) else 0.0,
        lam_j=val("lam_j"), mu=val("mu"), nu=val("nu"),
    )


def solve_step(model: SubsystemModel, base: "BaseDesign", z_meas, unc: LocalUncertainty, reference,
               cfg: OcpConfig = OcpConfig()) -> OcpSolution:
    prog, V, _ = build_ocp(model, base, z_meas, unc, reference, cfg)
    sol = conic.solve(prog, tol=cfg.tol)
    if not sol.optimal:
        return OcpSolution(sol.status, solver_status=sol.solver_status)
    raw = extract_decision(V, sol.x)
    try:
        ing = recover_ingredients(raw, base, alpha_floor=cfg.floor)
    except OcpError as exc:
        return OcpSolution(conic.Status.NUMERICAL_FAILURE, raw=raw, solver_status=str(exc))
    return OcpSolution(conic.Status.OPTIMAL, raw, ing, sol.objective_value, solver_status=sol.solver_status)


# ---------------------------------------------------------------------------
# frozen-ingredient baseline


def build_frozen_ocp(model: SubsystemModel, base: "BaseDesign", ingredients: MpcIngredients, z_meas, reference,
                     cfg: OcpConfig = OcpConfig()):
    """Trajectory-only program with tube radius and tightening fixed."""
    z_meas = np.asarray(z_meas, dtype=float).reshape(-1)
    b = ProgramBuilder()
    _declare_trajectory(b, model, cfg.N)
    V = b.finalize_variables()
    c = lambda v: b.const(float(v))  # noqa: E731
    _add_trajectory(b, V, model, z_meas, reference, cfg, c(ingredients.alpha), c(ingredients.g),
                    c(ingredients.h), base.Z)
    return b.build(), V


def solve_frozen_step(model: SubsystemModel, base: "BaseDesign", ingredients: MpcIngredients, z_meas, reference,
                      cfg: OcpConfig = OcpConfig()) -> OcpSolution:
    prog, V = build_frozen_ocp(model, base, ingredients, z_meas, reference, cfg)
    sol = conic.solve(prog, tol=min(cfg.tol, conic.LP_TOL))
    if not sol.optimal:
        return OcpSolution(sol.status, solver_status=sol.solver_status)
    val = lambda name: conic.value(V[name], sol.x)  # noqa: E731
    ing = ingredients
    raw = ScaledDecision(
        x=val("x"), u=val("u"), xe=val("xe"), ue=val("ue"), g=ing.g, h=ing.h, alpha=ing.alpha,
        Phi=ing.T * ing.alpha, GammaS=ing.Gamma * ing.alpha, DS=ing.D * ing.alpha,
        Minv=np.full((model.p, model.p), np.nan), lam=np.nan, lam_d=np.nan,
        lam_j=np.array([]), mu=np.array([]), nu=np.array([]),
    )
    return OcpSolution(conic.Status.OPTIMAL, raw, ing, sol.objective_value, solver_status=sol.solver_status)


# ---------------------------------------------------------------------------
# fallback


def shifted_solution(prev: OcpSolution) -> OcpSolution:
    """Previous plan advanced one step with the equilibrium pair appended; ingredients reused."""
    r = prev.raw
    x = np.vstack([r.x[1:], r.xe[None]])
    u = np.vstack([r.u[1:], r.ue[None]])
    return OcpSolution(prev.status, replace(r, x=x, u=u), prev.ingredients, float("nan"), fallback=True,
                       solver_status="shifted")


def hold_solution(model: SubsystemModel, z_meas, ingredients: MpcIngredients, N: int) -> OcpSolution:
    """Last-resort plan when there is nothing to shift: nominal state at ``z``, zero input."""
    z = np.asarray(z_meas, dtype=float)
    x = np.array([np.linalg.matrix_power(model.A, k) @ z for k in range(N + 1)])
    u = np.zeros((N, model.p))
    raw = ScaledDecision(x=x, u=u, xe=np.zeros(model.n), ue=np.zeros(model.p), g=ingredients.g,
                         h=ingredients.h, alpha=ingredients.alpha, Phi=ingredients.T * ingredients.alpha,
                         GammaS=ingredients.Gamma * ingredients.alpha, DS=ingredients.D * ingredients.alpha,
                         Minv=np.full((model.p, model.p), np.nan), lam=np.nan, lam_d=np.nan,
                         lam_j=np.array([]), mu=np.array([]), nu=np.array([]))
    return OcpSolution(conic.Status.NUMERICAL_FAILURE, raw, ingredients, float("nan"), fallback=True,
                       solver_status="hold")
