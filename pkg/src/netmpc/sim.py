"""Closed-loop simulation: exchange, identify, re-plan, actuate, advance.

Three schemes share the loop:

* ``ROB``: no identification; every subsystem plans with tube ingredients
  fixed offline at the initial bounds.
* ``LRN``: identification runs and is logged, the OCP still uses the frozen
  ingredients.
* ``ADP_LRN``: identification feeds the full ingredient-adaptive OCP.

Runs are reproducible: every random draw comes from a stream keyed by
``(seed, purpose, step, subsystem)``.
"""
from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from scipy.linalg import block_diag

from . import verify
from .design import design_network, ingredient_feasibility, load_designs, spectral_radius
from .geometry import Polytope, support, vertices
from .netmodel import CostWeights, Network, ParameterBounds, SubsystemModel, validate_network
from .ocp import (
    OcpConfig,
    compute_outer_sets,
    control_input,
    hold_solution,
    local_uncertainty,
    shifted_solution,
    solve_frozen_step,
    solve_step,
)
from .smid import EmptyIntersection, build_nonfalsified, update_bounds

log = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / "data"

# stream tags for the counter-based random streams
_NOISE, _REFERENCE, _VERIFY = 1, 2, 3


class ConfigError(ValueError):
    pass


class NoEquilibrium(ValueError):
    pass


class Scheme(enum.Enum):
    ROB = "rob"
    LRN = "lrn"
    ADP_LRN = "adp-lrn"

    @classmethod
    def parse(cls, s) -> "Scheme":
        if isinstance(s, Scheme):
            return s
        key = str(s).strip().lower().replace("_", "-")
        for m in cls:
            if m.value == key:
                return m
        raise ConfigError(f"unknown scheme {s!r}; expected one of rob, lrn, adp-lrn")


def stream(seed: int, tag: int, *counters) -> np.random.Generator:
    """Independent generator for one ``(seed, tag, counters...)`` key."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), tag, *map(int, counters)])))


# ---------------------------------------------------------------------------
# network and config files


def _matrix(x, name) -> np.ndarray:
    try:
        return np.atleast_2d(np.asarray(x, dtype=float))
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected a nested numeric array") from None


def _set(entry, name) -> Polytope | None:
    """A set given either as ``box: [half widths]`` or ``A: ..., b: ...``."""
    if entry is None:
        return None
    if isinstance(entry, (list, tuple)):
        entry = {"box": entry}
    if not isinstance(entry, dict):
        raise ConfigError(f"{name}: expected a box list or an {{A, b}} mapping")
    if "box" in entry:
        half = np.asarray(entry["box"], dtype=float).reshape(-1)
        if np.any(half <= 0):
            raise ConfigError(f"{name}: box half widths must be positive")
        return Polytope.symmetric_box(half)
    if "A" in entry and "b" in entry:
        return Polytope(_matrix(entry["A"], name), np.asarray(entry["b"], dtype=float).reshape(-1))
    raise ConfigError(f"{name}: expected 'box' or 'A' and 'b'")


def parse_network(data: dict):
    """Network, initial bounds and true couplings from a parsed network file.

    Schema::

        subsystems:
          - id: 1
            A: [[1, 1], [0, 1]]
            B: [[0.5], [1]]
            C: [[0, 1]]
            E: [[0.05], [0.1]]
            state_set: {box: [2, 2]}      # or {A: [[...]], b: [...]}
            input_set: {box: [2]}
            noise_set: {box: [0.025, 0.05]}   # null for no noise
            cost: {Q: [[1, 0], [0, 1]], R: [[0.1]], S: [[10, 0], [0, 10]]}
        edges:                            # receiver <- sender
          - {to: 1, from: 2, a_min: 0, a_max: 4, a_true: 1.0}
    """
    if not isinstance(data, dict) or "subsystems" not in data:
        raise ConfigError("network file needs a 'subsystems' list")
    edges = data.get("edges") or []
    try:
        elist = [(int(e["to"]), int(e["from"])) for e in edges]
    except (KeyError, TypeError, ValueError):
        raise ConfigError("every edge needs integer 'to' and 'from'") from None
    subs = []
    for s in data["subsystems"]:
        try:
            i = int(s["id"])
            ins = tuple(j for (r, j) in elist if r == i)
            outs = tuple(r for (r, j) in elist if j == i)
            cost = s.get("cost")
            subs.append(SubsystemModel(
                id=i, A=_matrix(s["A"], "A"), B=_matrix(s["B"], "B"), C=_matrix(s["C"], "C"),
                E=_matrix(s["E"], "E"), state_set=_set(s["state_set"], "state_set"),
                input_set=_set(s["input_set"], "input_set"), noise_set=_set(s.get("noise_set"), "noise_set"),
                in_neighbors=ins, out_neighbors=outs,
                cost=None if cost is None else CostWeights(cost["Q"], cost["R"], cost["S"]),
            ))
        except KeyError as exc:
            raise ConfigError(f"subsystem entry missing {exc.args[0]!r}") from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    net = Network(tuple(subs))
    try:
        bounds = ParameterBounds(tuple(elist), [float(e["a_min"]) for e in edges], [float(e["a_max"]) for e in edges])
        true = {ed: float(e["a_true"]) for ed, e in zip(elist, edges) if "a_true" in e}
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"edge entry: {exc}") from None
    rep = validate_network(net, bounds)
    if not rep.ok:
        raise ConfigError("invalid network: " + "; ".join(rep.violations))
    return net, bounds, true


def resolve_path(name, base_dir=None) -> Path:
    """Look next to the referring file first, then in the packaged data."""
    p = Path(name)
    for cand in ([Path(base_dir) / p] if base_dir is not None else []) + [p, DATA_DIR / p]:
        if cand.exists():
            return cand
    raise ConfigError(f"file not found: {name}")


def load_network(path):
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read network file {path}: {exc}") from None
    return parse_network(data)


@dataclass(frozen=True)
class SimConfig:
    network: str
    scheme: Scheme = Scheme.ADP_LRN
    steps: int = 1000
    seed: int = 0
    reference_period: int = 100
    reference_range: tuple = (-2.0, 2.0)
    reference_component: int = 0
    noise: dict = field(default_factory=dict)  # id -> half widths, overrides the network file
    ocp: OcpConfig = OcpConfig()
    verify_every: int = 0  # 0 = never
    verify_samples: int = verify.DEFAULT_SAMPLES
    output: str | None = None
    design: str | None = None
    baseline_probe: str = "margin"
    initial_state: dict = field(default_factory=dict)
    base_dir: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme.parse(self.scheme))
        if self.steps < 1:
            raise ConfigError("steps must be at least 1")
        if self.reference_period < 1:
            raise ConfigError("reference period must be at least 1")
        lo, hi = self.reference_range
        if lo > hi:
            raise ConfigError("reference range is empty")
        if self.verify_every < 0:
            raise ConfigError("verify_every must be nonnegative")
        if self.baseline_probe not in ("alpha", "margin"):
            raise ConfigError("baseline_probe must be 'alpha' or 'margin'")

    def with_(self, **kw) -> "SimConfig":
        from dataclasses import replace

        return replace(self, **kw)


_CONFIG_KEYS = {"network", "scheme", "steps", "seed", "reference", "noise", "ocp", "verify_every",
                "verify_samples", "output", "design", "baseline_probe", "initial_state"}


def parse_config(data: dict, base_dir=None) -> SimConfig:
    """Schema::

        network: chain5.yaml
        scheme: adp-lrn          # rob | lrn | adp-lrn
        steps: 1000
        seed: 0
        reference: {period: 100, range: [-2, 2], component: 0}
        noise: {1: [0.025, 0.05]}    # optional per-subsystem override
        ocp: {N: 5, xi: 0.95, epsilon: 1.0e-6}
        verify_every: 10
        design: designs.json     # optional precomputed artifact
        baseline_probe: margin   # frozen ingredients: margin | alpha
        initial_state: {1: [0, 0]}
    """
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "network" not in data:
        raise ConfigError("config needs 'network'")
    ref = data.get("reference") or {}
    try:
        ocp = OcpConfig(**(data.get("ocp") or {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"ocp: {exc}") from None
    try:
        return SimConfig(
            network=str(data["network"]), scheme=data.get("scheme", "adp-lrn"), steps=int(data.get("steps", 1000)),
            seed=int(data.get("seed", 0)), reference_period=int(ref.get("period", 100)),
            reference_range=tuple(float(v) for v in ref.get("range", (-2.0, 2.0))),
            reference_component=int(ref.get("component", 0)),
            noise={int(k): v for k, v in (data.get("noise") or {}).items()}, ocp=ocp,
            verify_every=int(data.get("verify_every", 0)),
            verify_samples=int(data.get("verify_samples", verify.DEFAULT_SAMPLES)),
            output=data.get("output"), design=data.get("design"),
            baseline_probe=str(data.get("baseline_probe", "margin")),
            initial_state={int(k): v for k, v in (data.get("initial_state") or {}).items()},
            base_dir=None if base_dir is None else str(base_dir),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def load_config(path) -> SimConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(data, base_dir=path.parent)


def network_for(cfg: SimConfig):
    """Network with the config's noise overrides applied."""
    net, bounds, true = load_network(resolve_path(cfg.network, cfg.base_dir))
    if cfg.noise:
        subs = []
        for s in net:
            if s.id in cfg.noise:
                box = cfg.noise[s.id]
                noise = None if box is None else _set(box, f"noise[{s.id}]")
                s = SubsystemModel(**{**s.__dict__, "noise_set": noise})
            subs.append(s)
        net = Network(tuple(subs))
        rep = validate_network(net, bounds)
        if not rep.ok:
            raise ConfigError("invalid noise override: " + "; ".join(rep.violations))
    return net, bounds, true


# ---------------------------------------------------------------------------
# references


def equilibrium(model: SubsystemModel, value: float, component: int = 0, tol: float = 1e-9):
    """Least-norm ``(x, u)`` with ``x = A x + B u`` and ``x[component] = value``."""
    n, p = model.n, model.p
    M = np.zeros((n + 1, n + p))
    M[:n, :n] = model.A - np.eye(n)
    M[:n, n:] = model.B
    M[n, component] = 1.0
    rhs = np.zeros(n + 1)
    rhs[n] = value
    sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    if np.linalg.norm(M @ sol - rhs) > tol * max(1.0, abs(value)):
        raise NoEquilibrium(f"subsystem {model.id}: no equilibrium with state[{component}] = {value}")
    return sol[:n], sol[n:]


def generate_reference(seed: int, steps: int, period: int, value_range, model: SubsystemModel,
                       component: int = 0):
    """Piecewise-constant reference for one subsystem: ``(x_r, u_r)`` of shapes ``(steps, n), (steps, p)``.

    Segment ``k`` draws its value from its own stream, so a shorter run sees a
    prefix of a longer run's schedule.
    """
    if steps < 1 or period < 1:
        raise ValueError("steps and period must be positive")
    lo, hi = map(float, value_range)
    e = np.zeros(model.n)
    e[component] = 1.0
    if hi > support(model.state_set, e) + 1e-12 or -lo > support(model.state_set, -e) + 1e-12:
        raise ValueError("reference range leaves the state set")
    n_seg = -(-steps // period)
    xr = np.zeros((steps, model.n))
    ur = np.zeros((steps, model.p))
    for k in range(n_seg):
        r = stream(seed, _REFERENCE, model.id, k).uniform(lo, hi)
        x, u = equilibrium(model, r, component)
        xr[k * period:(k + 1) * period] = x
        ur[k * period:(k + 1) * period] = u
    return xr, ur


def sample_noise(rng: np.random.Generator, S: Polytope | None, n: int) -> np.ndarray:
    """Uniform draw from ``S`` (per component for boxes, rejection otherwise)."""
    if S is None:
        return np.zeros(n)
    V = vertices(S)
    lo, hi = V.min(axis=0), V.max(axis=0)
    for _ in range(10000):
        d = rng.uniform(lo, hi)
        if S.contains(d):
            return d
    raise RuntimeError("noise rejection sampling failed")


# ---------------------------------------------------------------------------
# the loop


@dataclass
class VerifyRecord:
    step: int
    check: str
    passed: bool
    margin: float


@dataclass
class SimLog:
    scheme: Scheme
    seed: int
    ids: list
    edges: list
    z: dict  # id -> (steps + 1, n), z[t] is the state at step t
    x0: dict  # id -> (steps, n) nominal first state
    v: dict  # id -> (steps, p)
    xr: dict
    ur: dict
    alpha: dict
    g: dict
    h: dict
    rho: dict
    stage: dict
    status: dict  # id -> list of str
    fallback: dict  # id -> (steps,) bool
    a_min: np.ndarray  # (steps, n_edges) bounds used at each step
    a_max: np.ndarray
    verify: list = field(default_factory=list)
    events: list = field(default_factory=list)

    @property
    def steps(self) -> int:
        return self.a_min.shape[0]

    @property
    def fallback_count(self) -> int:
        return int(sum(int(f.sum()) for f in self.fallback.values()))


def _stage_cost(model: SubsystemModel, z, v, xr, ur) -> float:
    dz, dv = z - xr, v - ur
    return float(dz @ model.cost.Q @ dz + dv @ model.cost.R @ dv)


def closed_loop_cost(sim_log: SimLog, network: Network, steps: int | None = None) -> float:
    """``sum_t sum_i |z_i(t) - x_ri(t)|_Q^2 + |v_i(t) - u_ri(t)|_R^2`` over the first ``steps`` steps."""
    T = sim_log.steps if steps is None else min(steps, sim_log.steps)
    total = 0.0
    for s in network:
        i = s.id
        for t in range(T):
            total += _stage_cost(s, sim_log.z[i][t], sim_log.v[i][t], sim_log.xr[i][t], sim_log.ur[i][t])
    return total


def frozen_ingredients(network: Network, designs: dict, bounds: ParameterBounds, outer, cfg: OcpConfig,
                       objective: str = "margin") -> dict:
    """Offline ingredients at the initial bounds for the frozen-ingredient baselines."""
    out = {}
    for s in network:
        unc = local_uncertainty(network, s.id, bounds, outer)
        rep = ingredient_feasibility(s, designs[s.id], unc, cfg, objective=objective)
        if not rep.feasible:
            from .design import DesignInfeasible

            raise DesignInfeasible(f"subsystem {s.id}: no tube ingredients at the initial bounds ({rep.status.value})")
        out[s.id] = rep
    return out


def _verify_step(t, network, outer, designs, sols, uncs, probes, cfg: SimConfig, true, frozen: bool) -> list:
    out = []
    eps = cfg.ocp.epsilon
    for idx, s in enumerate(network):
        sol, unc, base = sols[s.id], uncs[s.id], designs[s.id]
        ing = sol.ingredients
        seed = int(stream(cfg.seed, _VERIFY, t, idx).integers(2**31))
        reps = [
            verify.check_schur(s.A + s.B @ ing.K, 1e-6),
            verify.check_rpi_sampled(base.Z, ing.alpha, ing.K, s, unc, cfg.verify_samples, seed, tol=1e-6),
            *verify.check_containment(s, base.Z, ing.alpha, ing.K, ing.g, ing.h, tol=1e-8),
            verify.check_rowsums(ing.Gamma, ing.D, unc, eps),
            verify.check_passivity_samples(s, ing.T, ing.Gamma, ing.D, base.P, base.K_o,
                                           outer.Z[s.id], unc,
                                           cfg.verify_samples, seed + 1),
        ]
        if not sol.fallback:
            reps.append(verify.check_tightened_plan(s, sol.raw, cfg.ocp.xi))
        raw = probes[s.id].raw if frozen else (None if sol.fallback else sol.raw)
        if raw is not None:
            reps.append(verify.check_lmis(s, base, unc, raw, tol=1e-7))
        out += [VerifyRecord(t, f"{r.name}[{s.id}]", r.passed, r.margin) for r in reps]
    gains = {s.id: sols[s.id].ingredients.K for s in network}
    if true:
        P = block_diag(*[designs[s.id].P for s in network])
        r = verify.check_global_lyapunov(network, gains, true, P, eps)
        out.append(VerifyRecord(t, r.name, r.passed, r.margin))
    return out


def run_closed_loop(cfg: SimConfig, designs: dict | None = None, network=None, observer=None) -> SimLog:
    """Simulate ``cfg.steps`` steps.

    ``designs`` (id -> BaseDesign) skips synthesis; ``network`` as
    ``(net, bounds, true)`` skips loading the network file. ``observer`` is
    called as ``observer(t, sols, uncs)`` after every adaptation phase.
    """
    net, bounds0, true = network if network is not None else network_for(cfg)
    if set(true) != set(bounds0.edges):
        raise ConfigError("every edge needs a true coupling strength for simulation")
    if any(s.cost is None for s in net):
        raise ConfigError("every subsystem needs cost weights")
    outer = compute_outer_sets(net)
    if designs is None:
        if cfg.design is not None:
            designs = load_designs(resolve_path(cfg.design, cfg.base_dir))
        else:
            designs = design_network(net, bounds0, cfg.ocp.epsilon, outer)
    missing = [i for i in net.ids if i not in designs]
    if missing:
        raise ConfigError(f"no base design for subsystems {missing}")
    scheme = cfg.scheme
    frozen = scheme is not Scheme.ADP_LRN
    probes = frozen_ingredients(net, designs, bounds0, outer, cfg.ocp, cfg.baseline_probe) if frozen else {}
    unc0 = {s.id: local_uncertainty(net, s.id, bounds0, outer) for s in net}

    T = cfg.steps
    ids = net.ids
    refs = {}
    for s in net:
        try:
            refs[s.id] = generate_reference(cfg.seed, T, cfg.reference_period, cfg.reference_range, s,
                                            cfg.reference_component)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    z = {s.id: np.zeros((T + 1, s.n)) for s in net}
    for i, z0 in cfg.initial_state.items():
        if i not in z:
            raise ConfigError(f"initial state for unknown subsystem {i}")
        z[i][0] = np.asarray(z0, dtype=float)
    arr = lambda shape: {s.id: np.zeros(shape(s)) for s in net}  # noqa: E731
    sim_log = SimLog(
        scheme=scheme, seed=cfg.seed, ids=ids, edges=list(bounds0.edges), z=z,
        x0=arr(lambda s: (T, s.n)), v=arr(lambda s: (T, s.p)),
        xr={i: refs[i][0] for i in ids}, ur={i: refs[i][1] for i in ids},
        alpha=arr(lambda s: T), g=arr(lambda s: T), h=arr(lambda s: T), rho=arr(lambda s: T),
        stage=arr(lambda s: T), status={i: [] for i in ids}, fallback={i: np.zeros(T, bool) for i in ids},
        a_min=np.zeros((T, len(bounds0.edges))), a_max=np.zeros((T, len(bounds0.edges))),
    )
    bounds = bounds0
    prev: dict = {}
    for t in range(T):
        # learning phase on the last transition
        if t > 0 and scheme is not Scheme.ROB:
            new = bounds
            for s in net:
                ys = [net.by_id(j).C @ z[j][t - 1] for j in s.in_neighbors]
                if not ys:
                    continue
                nf = build_nonfalsified(s, z[s.id][t - 1], sim_log.v[s.id][t - 1], ys, z[s.id][t])
                lo, hi = bounds.incoming(s)
                try:
                    lo, hi = update_bounds(lo, hi, nf)
                except EmptyIntersection as exc:
                    sim_log.events.append((t, s.id, "empty_intersection", str(exc)))
                    log.warning("step %d subsystem %s: %s; bounds kept", t, s.id, exc)
                    continue
                new = new.with_incoming(s, lo, hi)
            bounds = new
        sim_log.a_min[t], sim_log.a_max[t] = bounds.a_min, bounds.a_max

        # adaptation phase
        sols, uncs = {}, {}
        for s in net:
            i = s.id
            ref = (sim_log.xr[i][t], sim_log.ur[i][t])
            if frozen:
                unc = unc0[i]
                sol = solve_frozen_step(s, designs[i], probes[i].ingredients, z[i][t], ref, cfg.ocp)
            else:
                unc = local_uncertainty(net, i, bounds, outer)
                sol = solve_step(s, designs[i], z[i][t], unc, ref, cfg.ocp)
            if sol.optimal:
                prev[i] = (sol, unc)
            else:
                sim_log.events.append((t, i, "fallback", sol.solver_status or sol.status.value))
                if not cfg.ocp.fallback:
                    raise RuntimeError(f"step {t} subsystem {i}: OCP {sol.status.value} and fallback disabled")
                if i in prev:
                    sol = shifted_solution(prev[i][0])
                    unc = prev[i][1]
                    prev[i] = (sol, unc)
                else:
                    ing = probes[i].ingredients if frozen else ingredient_feasibility(
                        s, designs[i], unc0[i], cfg.ocp, "margin").ingredients
                    sol = hold_solution(s, z[i][t], ing, cfg.ocp.N)
                    unc = unc0[i]
            sols[i], uncs[i] = sol, unc
        if observer is not None:
            observer(t, sols, uncs)

        # actuation and bookkeeping
        for s in net:
            i = s.id
            sol = sols[i]
            v = control_input(sol, z[i][t])
            ing = sol.ingredients
            sim_log.v[i][t] = v
            sim_log.x0[i][t] = sol.raw.x[0]
            sim_log.alpha[i][t], sim_log.g[i][t], sim_log.h[i][t] = ing.alpha, ing.g, ing.h
            sim_log.rho[i][t] = spectral_radius(s.A + s.B @ ing.K)
            sim_log.stage[i][t] = _stage_cost(s, z[i][t], v, sim_log.xr[i][t], sim_log.ur[i][t])
            sim_log.status[i].append(sol.solver_status if sol.fallback else "optimal")
            sim_log.fallback[i][t] = sol.fallback

        if cfg.verify_every and t % cfg.verify_every == 0:
            sim_log.verify += _verify_step(t, net, outer, designs, sols, uncs, probes, cfg, true, frozen)

        # true dynamics
        for idx, s in enumerate(net):
            i = s.id
            w = sum((true[(i, j)] * (net.by_id(j).C @ z[j][t]) for j in s.in_neighbors), np.zeros(s.m0))
            d = sample_noise(stream(cfg.seed, _NOISE, t, idx), s.noise_set, s.n)
            z[i][t + 1] = s.A @ z[i][t] + s.B @ sim_log.v[i][t] + s.E @ w + d
    return sim_log


# ---------------------------------------------------------------------------
# CSV output


def _f(x) -> str:
    return "%.17g" % float(x)


def write_outputs(sim_log: SimLog, network: Network, out_dir, append_summary: bool = False) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_max = max(s.n for s in network)
    p_max = max(s.p for s in network)
    with open(out / "trajectory.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "subsystem"] + [f"z{k + 1}" for k in range(n_max)] + [f"x{k + 1}" for k in range(n_max)]
                   + [f"v{k + 1}" for k in range(p_max)] + ["stage_cost", "status"])
        for t in range(sim_log.steps):
            for s in network:
                i = s.id
                pad = lambda a, m: [_f(x) for x in a] + [""] * (m - len(a))  # noqa: E731
                w.writerow([t, i] + pad(sim_log.z[i][t], n_max) + pad(sim_log.x0[i][t], n_max)
                           + pad(sim_log.v[i][t], p_max) + [_f(sim_log.stage[i][t]), sim_log.status[i][t]])
    with open(out / "bounds.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "edge", "a_min", "a_max"])
        for t in range(sim_log.steps):
            for k, (r, j) in enumerate(sim_log.edges):
                w.writerow([t, f"{r}<-{j}", _f(sim_log.a_min[t, k]), _f(sim_log.a_max[t, k])])
    with open(out / "ingredients.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "subsystem", "alpha", "g", "h", "spectral_radius"])
        for t in range(sim_log.steps):
            for i in sim_log.ids:
                w.writerow([t, i, _f(sim_log.alpha[i][t]), _f(sim_log.g[i][t]), _f(sim_log.h[i][t]),
                            _f(sim_log.rho[i][t])])
    with open(out / "verify.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "check", "pass", "margin"])
        for r in sim_log.verify:
            w.writerow([r.step, r.check, int(r.passed), _f(r.margin)])
    write_summary(out / "summary.csv", [summary_row(sim_log, network)], append=append_summary)
    return out


def summary_row(sim_log: SimLog, network: Network) -> tuple:
    return sim_log.scheme.value, sim_log.seed, closed_loop_cost(sim_log, network), sim_log.fallback_count


def write_summary(path, rows, append: bool = False) -> None:
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "w" if new else "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(["scheme", "seed", "total_cost", "fallback_count"])
        for scheme, seed, cost, nfb in rows:
            w.writerow([scheme, seed, _f(cost), nfb])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
