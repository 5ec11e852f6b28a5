"""Command line entry point: ``netmpc design|simulate|compare|verify``.

Exit codes: 0 success, 1 failed run checks, 2 configuration error,
3 design infeasible, 4 run completed with fallbacks.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from .design import DesignInfeasible, design_network, save_designs
from .ocp import compute_outer_sets
from .sim import (
    ConfigError,
    Scheme,
    closed_loop_cost,
    load_config,
    load_network,
    network_for,
    read_csv,
    resolve_path,
    run_closed_loop,
    summary_row,
    write_outputs,
    write_summary,
)

EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_DESIGN, EXIT_FALLBACK = 0, 1, 2, 3, 4


def _ints(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _schemes(text: str) -> list[Scheme]:
    try:
        return [Scheme.parse(s) for s in text.split(",") if s.strip()]
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def cmd_design(args) -> int:
    net, bounds, _ = load_network(resolve_path(args.network))
    designs = design_network(net, bounds, args.epsilon, compute_outer_sets(net))
    save_designs(args.output, designs)
    for i, d in designs.items():
        r = d.report
        print(f"subsystem {i}: K_o = {np.round(d.K_o, 4).tolist()}  rho = {r['spectral_radius']:.4f}  "
              f"passivity margin = {r['passivity_margin']:.4g}")
    print(f"wrote {args.output}")
    return EXIT_OK


def _overrides(cfg, args):
    kw = {}
    if getattr(args, "seed", None) is not None:
        kw["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        kw["steps"] = args.steps
    if getattr(args, "scheme", None) is not None:
        kw["scheme"] = args.scheme
    return cfg.with_(**kw) if kw else cfg


def _save_run_config(cfg, out: Path) -> None:
    """Record what produced a run directory so ``verify`` can find the network."""
    data = {"network": str(resolve_path(cfg.network, cfg.base_dir).resolve()), "scheme": cfg.scheme.value,
            "steps": cfg.steps, "seed": cfg.seed}
    (out / "run.yaml").write_text(yaml.safe_dump(data, sort_keys=True))


def cmd_simulate(args) -> int:
    cfg = _overrides(load_config(args.config), args)
    out = Path(args.output or cfg.output or "run")
    net = network_for(cfg)
    sim_log = run_closed_loop(cfg, network=net)
    write_outputs(sim_log, net[0], out)
    _save_run_config(cfg, out)
    cost = closed_loop_cost(sim_log, net[0])
    print(f"{cfg.scheme.value} seed {cfg.seed}: cost {cost:.6g}, fallbacks {sim_log.fallback_count}, "
          f"verify failures {sum(not r.passed for r in sim_log.verify)}")
    return EXIT_FALLBACK if sim_log.fallback_count else EXIT_OK


def cmd_compare(args) -> int:
    cfg = _overrides(load_config(args.config), args)
    out = Path(args.output or cfg.output or "compare")
    out.mkdir(parents=True, exist_ok=True)
    net = network_for(cfg)
    designs = None
    if cfg.design is None:
        designs = design_network(net[0], net[1], cfg.ocp.epsilon, compute_outer_sets(net[0]))
    rows = []
    for seed in args.seeds:
        for scheme in args.schemes:
            run_cfg = cfg.with_(scheme=scheme, seed=seed)
            sim_log = run_closed_loop(run_cfg, designs=designs, network=net)
            run_dir = out / f"{scheme.value}_seed{seed}"
            write_outputs(sim_log, net[0], run_dir)
            _save_run_config(run_cfg, run_dir)
            rows.append(summary_row(sim_log, net[0]))
            print(f"{scheme.value:8s} seed {seed}: cost {rows[-1][2]:.6g}, fallbacks {rows[-1][3]}")
    write_summary(out / "summary.csv", rows)
    return EXIT_FALLBACK if any(r[3] for r in rows) else EXIT_OK


def cmd_verify(args) -> int:
    d = Path(args.run_dir)
    need = ["trajectory.csv", "bounds.csv", "verify.csv"]
    missing = [f for f in need if not (d / f).exists()]
    if missing:
        raise ConfigError(f"{d}: missing {', '.join(missing)}")
    failures = []

    checks = read_csv(d / "verify.csv")
    bad = [r for r in checks if r["pass"] != "1"]
    print(f"certificates: {len(checks) - len(bad)}/{len(checks)} passed")
    failures += [f"certificate {r['check']} at step {r['step']} (margin {r['margin']})" for r in bad]

    bounds = read_csv(d / "bounds.csv")
    last = {}
    n_bad = 0
    for r in bounds:
        lo, hi = float(r["a_min"]), float(r["a_max"])
        if lo > hi:
            n_bad += 1
        if r["edge"] in last:
            plo, phi = last[r["edge"]]
            if lo < plo or hi > phi:
                n_bad += 1
        last[r["edge"]] = (lo, hi)
    print(f"bounds: {'monotone' if not n_bad else f'{n_bad} violations'}")
    if n_bad:
        failures.append("bounds not monotone")

    traj = read_csv(d / "trajectory.csv")
    fb = sum(r["status"] != "optimal" for r in traj)
    print(f"fallback steps: {fb}")

    run_cfg = d / "run.yaml"
    if run_cfg.exists():
        net, _, _ = load_network(yaml.safe_load(run_cfg.read_text())["network"])
        viol = 0
        for r in traj:
            s = net.by_id(int(r["subsystem"]))
            z = np.array([float(r[f"z{k + 1}"]) for k in range(s.n)])
            v = np.array([float(r[f"v{k + 1}"]) for k in range(s.p)])
            if r["status"] == "optimal" and (not s.state_set.contains(z, 1e-8) or not s.input_set.contains(v, 1e-8)):
                viol += 1
        print(f"constraint violations: {viol}")
        if viol:
            failures.append(f"{viol} constraint violations")
    for f in failures[:20]:
        print("FAIL", f)
    if failures:
        return EXIT_CHECKS
    return EXIT_FALLBACK if fb else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="netmpc", description="Adaptive tube MPC for coupled linear subsystems")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("design", help="synthesize base gains, storage and tube shapes")
    d.add_argument("network")
    d.add_argument("-o", "--output", required=True)
    d.add_argument("--epsilon", type=float, default=1e-6)
    d.set_defaults(func=cmd_design)

    s = sub.add_parser("simulate", help="run one closed loop and write CSV logs")
    s.add_argument("config")
    s.add_argument("-o", "--output")
    s.add_argument("--seed", type=int)
    s.add_argument("--steps", type=int)
    s.add_argument("--scheme", type=Scheme.parse)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="run several schemes and seeds")
    c.add_argument("config")
    c.add_argument("-o", "--output")
    c.add_argument("--schemes", type=_schemes, default=list(Scheme))
    c.add_argument("--seeds", type=_ints, default=[0])
    c.add_argument("--steps", type=int)
    c.set_defaults(func=cmd_compare)

    v = sub.add_parser("verify", help="re-check a run directory")
    v.add_argument("run_dir")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DesignInfeasible as exc:
        print(f"design infeasible: {exc}", file=sys.stderr)
        return EXIT_DESIGN


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
