"""Offline synthesis of the base gain, storage matrix and tube shape per subsystem.

For a candidate gain ``K`` two convex problems are solved:

* passivity: find ``P, Gamma, D`` certifying strict passivity of
  ``z+ = (A + B K) z + E w`` with ``Gamma, D`` meeting the diagonal-dominance
  row sums at the worst-case bounds (maximizing the LMI margin);
* tube: find the smallest ellipsoid ``{e : e^T Z e <= 1}`` that is robustly
  invariant under the worst-case coupling and noise (line search on the
  S-lemma multiplier of the tube itself).

The gain is then tuned by a derivative-free search starting from the LQR gain,
minimizing the tube footprint in the state and input sets among passive
gains.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_discrete_are
from scipy.optimize import minimize, minimize_scalar

from . import conic
from .conic import ProgramBuilder, block, mm, tr
from .netmodel import Network, ParameterBounds, SubsystemModel
from .ocp import (
    LocalUncertainty,
    MpcIngredients,
    OcpConfig,
    OuterSets,
    ScaledDecision,
    add_ingredient_constraints,
    compute_outer_sets,
    declare_ingredients,
    extract_decision,
    local_uncertainty,
    recover_ingredients,
)

log = logging.getLogger(__name__)

P_CAP = 1e3
RANK_FLOOR = 1e-6
# passivity LMI margin kept in reserve so the online program can move T away from I
MIN_MARGIN = 1e-2
_LAMBDA_GRID = np.linspace(0.05, 0.95, 10)


class DesignInfeasible(RuntimeError):
    pass


@dataclass(frozen=True)
class BaseDesign:
    K_o: np.ndarray
    P: np.ndarray
    Z: np.ndarray
    report: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {"K_o": self.K_o.tolist(), "P": self.P.tolist(), "Z": self.Z.tolist(), "report": self.report}

    @classmethod
    def from_dict(cls, d: dict) -> "BaseDesign":
        return cls(np.array(d["K_o"], dtype=float), np.array(d["P"], dtype=float),
                   np.array(d["Z"], dtype=float), dict(d.get("report", {})))


def spectral_radius(M) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M)))) if np.size(M) else 0.0


def stabilizable(A, B, tol: float = 1e-9) -> bool:
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if abs(lam) >= 1 - tol:
            if np.linalg.matrix_rank(np.hstack([A - lam * np.eye(n), B]), tol=1e-8) < n:
                return False
    return True


def lqr_gain(A, B, Q, R) -> np.ndarray:
    """Discrete LQR gain with the ``u = K x`` sign convention."""
    X = solve_discrete_are(A, B, Q, R)
    return -np.linalg.solve(R + B.T @ X @ B, B.T @ X @ A)


# ---------------------------------------------------------------------------
# convex subproblems at a fixed gain


def passivity_margin(model: SubsystemModel, K, unc: LocalUncertainty, epsilon: float = 1e-6,
                     p_cap: float = P_CAP):
    """Largest ``delta`` with the passivity LMI ``>= delta I`` at gain ``K``.

    Returns ``(delta, P, Gamma, D)`` or ``None`` when the solver fails.
    """
    n, m0 = model.n, model.m0
    AK = model.A + model.B @ K
    b = ProgramBuilder()
    b.declare("P", (n, n), symmetric=True)
    b.declare("gs", n)
    b.declare("ds", m0)
    b.declare("delta")
    V = b.finalize_variables()
    P, gs, ds, delta = V["P"], V["gs"], V["ds"], V["delta"]
    Gd = b.zeros((n, n))
    Dd = b.zeros((m0, m0))
    for i in range(n):
        Gd[i, i] = gs[i]
    for i in range(m0):
        Dd[i, i] = ds[i]
    PA = mm(np.eye(n), P)
    PAK = np.einsum("ijv,jk->ikv", PA, AK)  # P A_K
    PE = np.einsum("ijv,jk->ikv", PA, model.E)
    M = block([
        [P - Gd, b.const(0.5 * model.C.T), tr(PAK)],
        [b.const(0.5 * model.C), Dd, tr(PE)],
        [PAK, PE, P],
    ])
    side = 2 * n + m0
    b.add_psd(M - np.multiply.outer(np.eye(side), delta))
    b.add_psd(b.const(p_cap * np.eye(n)) - P)
    b.add_le(b.const(epsilon + unc.U + unc.V) - gs)
    b.add_le(ds * unc.W[:, None] - b.const(np.ones(m0)))
    b.add_le(b.const(np.full(m0, 1e-9)) - ds)
    b.add_le(delta - b.const(1.0))
    b.minimize(-delta)
    sol = conic.solve(b.build())
    if not sol.optimal:
        return None
    return (float(conic.value(delta, sol.x)), conic.value(P, sol.x), np.diag(conic.value(gs, sol.x)),
            np.diag(conic.value(ds, sol.x)))


def _rpi_program(model: SubsystemModel, K, unc: LocalUncertainty, lam: float):
    """Smallest invariant ellipsoid (unit radius) for a fixed tube multiplier ``lam``."""
    n, m0, k = model.n, model.m0, unc.k
    AK = model.A + model.B @ K
    b = ProgramBuilder()
    b.declare("Z", (n, n), symmetric=True)
    b.declare("lam_j", k)
    b.declare("lam_d", 1 if unc.noise is not None else 0)
    b.declare("s")
    V = b.finalize_variables()
    Z, lam_j, lam_d, s = V["Z"], V["lam_j"], V["lam_d"], V["s"]

    dims = [n, k * m0] + ([n] if unc.noise is not None else []) + [1, n]
    nb = len(dims)
    grid = [[b.zeros((dims[r], dims[c])) for c in range(nb)] for r in range(nb)]
    grid[0][0] = lam * Z
    const = b.const(1.0 - lam)
    for j, (a, Yj) in enumerate(zip(unc.a_max, unc.Y)):
        sl = slice(j * m0, (j + 1) * m0)
        grid[1][1][sl, sl] = np.multiply.outer(Yj.Q, lam_j[j])
        grid[1][nb - 2][sl] = np.multiply.outer(-(Yj.Q @ (a * Yj.c))[:, None], lam_j[j])
        const = const - lam_j[j] * a**2 * (1.0 - Yj.c @ Yj.Q @ Yj.c)
    grid[nb - 2][1] = tr(grid[1][nb - 2])
    ZE = np.einsum("ijv,jk->ikv", Z, np.hstack([model.E] * k)) if k else b.zeros((n, 0))
    last = [np.einsum("ijv,jk->ikv", Z, AK), ZE]
    if unc.noise is not None:
        Dhalf_inv = np.linalg.inv(_sqrtm(unc.noise.Q))
        grid[2][2] = np.multiply.outer(np.eye(n), lam_d[0])
        grid[2][nb - 2] = np.multiply.outer(-(_sqrtm(unc.noise.Q) @ unc.noise.c)[:, None], lam_d[0])
        grid[nb - 2][2] = tr(grid[2][nb - 2])
        const = const - lam_d[0] * (1.0 - unc.noise.c @ unc.noise.Q @ unc.noise.c)
        last.append(np.einsum("ijv,jk->ikv", Z, Dhalf_inv))
    last += [b.zeros((n, 1)), Z]
    grid[nb - 2][nb - 2] = const[None, None]
    for c, expr in enumerate(last):
        grid[nb - 1][c] = expr
        if c != nb - 1:
            grid[c][nb - 1] = tr(expr)
    b.add_psd(block(grid))
    for x in list(lam_j) + list(lam_d):
        b.add_le(-x)
    rows = list(model.G) + [row @ K for row in model.H]
    for r in rows:
        b.add_psd(block([[s[None, None], b.const(r[None, :])], [b.const(r[:, None]), Z]]))
    b.minimize(s)
    return b.build(), Z, s


def _sqrtm(M):
    w, V = np.linalg.eigh(M)
    return (V * np.sqrt(w)) @ V.T


def min_tube(model: SubsystemModel, K, unc: LocalUncertainty, lam: float):
    """``(fit, Z)`` where ``fit`` is the largest support of the unit tube on a state or ``K``-mapped input facet."""
    prog, Z, s = _rpi_program(model, K, unc, lam)
    sol = conic.solve(prog)
    if not sol.optimal:
        return np.inf, None
    Zv = conic.value(Z, sol.x)
    Zv = 0.5 * (Zv + Zv.T)
    if np.linalg.eigvalsh(Zv)[0] <= 0:
        return np.inf, None
    Zi = np.linalg.inv(Zv)
    rows = list(model.G) + [row @ K for row in model.H]
    fit = max(np.sqrt(r @ Zi @ r) for r in rows)
    return float(fit), Zv


def best_tube(model: SubsystemModel, K, unc: LocalUncertainty, refine: bool = True):
    """Minimize the tube footprint over the tube multiplier. Returns ``(fit, Z, lam)``."""
    fits = [min_tube(model, K, unc, lam)[0] for lam in _LAMBDA_GRID]
    i = int(np.argmin(fits))
    if not np.isfinite(fits[i]):
        return np.inf, None, None
    lam = _LAMBDA_GRID[i]
    if refine:
        lo = _LAMBDA_GRID[max(i - 1, 0)] if i > 0 else 1e-3
        hi = _LAMBDA_GRID[i + 1] if i + 1 < len(_LAMBDA_GRID) else 1 - 1e-3
        res = minimize_scalar(lambda l: min_tube(model, K, unc, l)[0], bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-4})
        if res.fun < fits[i]:
            lam = float(res.x)
    fit, Z = min_tube(model, K, unc, lam)
    return fit, Z, lam


# ---------------------------------------------------------------------------
# base design


def _has_disturbance(unc: LocalUncertainty) -> bool:
    return unc.noise is not None or bool(np.any(unc.a_max > 0))


def design_base(model: SubsystemModel, worst_bounds: ParameterBounds, epsilon: float = 1e-6, *,
                network: Network, outer: OuterSets | None = None, max_evals: int = 120,
                min_margin: float = MIN_MARGIN) -> BaseDesign:
    """Base gain ``K_o``, storage matrix ``P`` and tube shape ``Z`` for one subsystem.

    Raises DesignInfeasible when ``(A, B)`` is not stabilizable or no gain
    found certifies strict passivity at ``worst_bounds``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    A, B = model.A, model.B
    if not np.any(B) or not stabilizable(A, B):
        raise DesignInfeasible(f"subsystem {model.id}: (A, B) not stabilizable")
    outer = outer if outer is not None else compute_outer_sets(network)
    unc = local_uncertainty(network, model.id, worst_bounds, outer)
    cost = model.cost
    Qc = cost.Q + 1e-9 * np.eye(model.n) if cost is not None else np.eye(model.n)
    Rc = cost.R if cost is not None else np.eye(model.p)
    K0 = lqr_gain(A, B, Qc, Rc)
    disturbed = _has_disturbance(unc)
    shape = K0.shape

    def score(vec):
        K = vec.reshape(shape)
        rho = spectral_radius(A + B @ K)
        if rho >= 1 - 1e-6:
            return 100.0 + rho
        pm = passivity_margin(model, K, unc, epsilon)
        if pm is None or pm[0] <= 1e-9:
            return 10.0 - (pm[0] if pm is not None else -10.0)
        shortfall = max(0.0, min_margin - pm[0]) / min_margin
        if not disturbed:
            return shortfall - pm[0]
        fit = best_tube(model, K, unc, refine=False)[0]
        return (fit if np.isfinite(fit) else 5.0) + shortfall

    res = minimize(score, K0.ravel(), method="Nelder-Mead",
                   options={"maxfev": max_evals, "xatol": 1e-4, "fatol": 1e-5,
                            "initial_simplex": _simplex(K0.ravel())})
    K = res.x.reshape(shape)
    if res.fun >= 10.0:
        raise DesignInfeasible(f"subsystem {model.id}: no passive gain found at the worst-case bounds")
    if np.linalg.svd(K, compute_uv=False).min() < RANK_FLOOR:
        raise DesignInfeasible(f"subsystem {model.id}: base gain is rank deficient")
    delta, P, Gamma, D = passivity_margin(model, K, unc, epsilon)
    report = {"spectral_radius": spectral_radius(A + B @ K), "passivity_margin": delta,
              "lqr_gain": K0.tolist()}
    if disturbed:
        fit, Z, lam = best_tube(model, K, unc)
        report.update(tube_fit=fit, tube_multiplier=lam)
    else:
        # without disturbances any sublevel set of the storage function is invariant
        Z = P.copy()
        report.update(tube_fit=0.0, tube_multiplier=None)
    return BaseDesign(K, 0.5 * (P + P.T), 0.5 * (Z + Z.T), report)


def _simplex(x0: np.ndarray) -> np.ndarray:
    steps = np.maximum(0.15 * np.abs(x0), 0.05)
    return np.vstack([x0] + [x0 + steps[i] * np.eye(len(x0))[i] for i in range(len(x0))])


def _signature(network: Network, i, bounds: ParameterBounds, outer: OuterSets) -> bytes:
    m = network.by_id(i)
    unc = local_uncertainty(network, i, bounds, outer)
    parts = [m.A, m.B, m.C, m.E, m.G, m.H, m.Xi if m.Xi is not None else np.zeros(0), unc.a_max, unc.U, unc.V,
             unc.W, m.cost.Q if m.cost else np.zeros(0), m.cost.R if m.cost else np.zeros(0)]
    parts += [y.Q for y in unc.Y] + [y.c for y in unc.Y]
    return b"|".join(np.ascontiguousarray(p, dtype=float).tobytes() + str(np.shape(p)).encode() for p in parts)


def design_network(network: Network, worst_bounds: ParameterBounds, epsilon: float = 1e-6,
                   outer: OuterSets | None = None) -> dict:
    """``design_base`` for every subsystem; identical local problems are solved once."""
    outer = outer if outer is not None else compute_outer_sets(network)
    done, out = {}, {}
    for s in network:
        key = _signature(network, s.id, worst_bounds, outer)
        if key not in done:
            done[key] = design_base(s, worst_bounds, epsilon, network=network, outer=outer)
        out[s.id] = done[key]
    return out


def save_designs(path, designs: dict) -> None:
    """Write designs as JSON; floats are stored with full round-trip precision."""
    data = {"format": "netmpc-base-design", "version": 1,
            "subsystems": {str(k): v.to_dict() for k, v in designs.items()}}
    Path(path).write_text(json.dumps(data, indent=1))


def load_designs(path) -> dict:
    data = json.loads(Path(path).read_text())
    if data.get("format") != "netmpc-base-design":
        raise ValueError(f"{path} is not a base-design artifact")
    return {int(k): BaseDesign.from_dict(v) for k, v in data["subsystems"].items()}


# ---------------------------------------------------------------------------
# ingredient feasibility probe


@dataclass
class FeasibilityReport:
    status: conic.Status
    alpha: float = float("nan")
    g: float = float("nan")
    h: float = float("nan")
    ingredients: MpcIngredients | None = None
    raw: ScaledDecision | None = None

    @property
    def feasible(self) -> bool:
        return self.status is conic.Status.OPTIMAL


def ingredient_feasibility(model: SubsystemModel, base: BaseDesign, unc: LocalUncertainty,
                           cfg: OcpConfig = OcpConfig(), objective: str = "alpha") -> FeasibilityReport:
    """Solve the ingredient constraints alone (no trajectory).

    ``objective="alpha"`` maximizes the tube radius; ``"margin"`` maximizes
    ``min(g, h)``, the ingredient set leaving the most room for the nominal plan.
    """
    if objective not in ("alpha", "margin"):
        raise ValueError("objective must be 'alpha' or 'margin'")
    b = ProgramBuilder()
    declare_ingredients(b, model, unc.k, unc.noise is not None)
    b.declare("m")
    V = b.finalize_variables()
    add_ingredient_constraints(b, V, model, base, unc, cfg)
    if objective == "alpha":
        b.minimize(-V["alpha"])
    else:
        m = V["m"]
        b.add_le(m - V["g"])
        b.add_le(m - V["h"])
        b.minimize(-m)
    sol = conic.solve(b.build(), tol=cfg.tol)
    if not sol.optimal:
        return FeasibilityReport(sol.status)
    n, p = model.n, model.p
    # the probe has no trajectory; give the decision record empty plans
    V.update({"x": b.zeros((0, n)), "u": b.zeros((0, p)), "xe": b.zeros(n), "ue": b.zeros(p)})
    raw = extract_decision(V, sol.x)
    try:
        ing = recover_ingredients(raw, base, alpha_floor=cfg.floor)
    except Exception:
        return FeasibilityReport(conic.Status.NUMERICAL_FAILURE, raw.alpha, raw.g, raw.h, None, raw)
    return FeasibilityReport(conic.Status.OPTIMAL, raw.alpha, raw.g, raw.h, ing, raw)
