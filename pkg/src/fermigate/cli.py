"""Command-line entry point: ``fermigate <subcommand> --config run.json --out DIR``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from .analytic import qsl_duration
from .config import ConfigError, RunConfig, default_config, load_config
from .dynamics import (GATE_PAIRS, STATE_PAIRS, GateSimulator, LeakageError, PulseSchedule,
                       evaluate_gate_cost, propagate_nonadiabatic)
from .hubbard import (LatticeCache, OutOfDomainError, build_spline_table, default_cache_dir,
                      hopping_from_bands)
from .lattice import DepthPoint, LatticeError, solve_bands
from .optimize import (make_problem, optimize_full_gate, optimize_sqrt_swap,
                       optimize_state_transfer, pulse_from_json, pulse_to_json, scan_scattering_length)
from .robustness import (fit_decay_time, scan_scattering_deviation, simulate_intensity_grid,
                         simulate_interwell_leakage, simulate_phase_noise)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
NUMERICAL_ERRORS = (LeakageError, LatticeError, OutOfDomainError, np.linalg.LinAlgError, FloatingPointError)


class UsageError(ConfigError):
    pass


def _linspace(spec):
    lo, hi, n = spec
    return np.linspace(lo, hi, int(n))


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, default=float))


def _table(cfg: RunConfig):
    t = cfg.sections["table"]
    cache = Path(t["cache_dir"]) if "cache_dir" in t else default_cache_dir()
    return build_spline_table(cfg.lattice, tuple(t["V_s"]), tuple(t["V_l"]), t["n"], cfg.disc, cache)


def _backend(cfg: RunConfig) -> str:
    return cfg.optimize.get("backend") or ("spline" if cfg.model.kind == "two-band" else "hybrid")


def _read_pulse(args, cfg: RunConfig, required: bool = True) -> tuple[PulseSchedule, dict]:
    if args.pulse is None:
        if required:
            raise UsageError("this subcommand needs --pulse")
        return cfg.guess_pulse(), {}
    try:
        data = json.loads(Path(args.pulse).read_text())
        return pulse_from_json(data), data
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot read pulse file {args.pulse}: {exc}") from exc


def _simulator(cfg: RunConfig, j_source: str = "lattice", threshold=0.05) -> GateSimulator:
    table = _table(cfg) if j_source == "spline" else None
    return GateSimulator(cfg.lattice, cfg.model, cfg.disc, table, j_source=j_source, leakage_threshold=threshold)


def _problem(cfg: RunConfig, full_gate: bool, guess: PulseSchedule | None = None):
    backend = _backend(cfg)
    p, o = cfg.pulse, cfg.optimize
    table = _table(cfg) if backend == "spline" else None
    return make_problem(cfg.lattice, cfg.model, p["gate"], p["duration"], p["duration"] / max(cfg.n_steps(), 1),
                        a=p["a"], full_gate=full_gate, backend=backend, table=table, bounds=cfg.bounds(),
                        guess=guess if guess is not None else cfg.guess_pulse(),
                        pin_endpoints=p["pin_endpoints"], tol=o["tol"], max_iter=o["max_iter"],
                        max_eval=o["max_eval"], fd_step=o["fd_step"], disc=cfg.disc)


def _save_pulse(path: Path, pulse: PulseSchedule, cfg: RunConfig, backend: str, cost: float) -> None:
    data = pulse_to_json(pulse)
    data["model"] = cfg.model.tag
    data["j_source"] = "spline" if backend == "spline" else "lattice"
    data["cost"] = cost
    _write_json(path, data)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_bands(cfg: RunConfig, args, out: Path) -> int:
    scan = cfg.sections["scan"]
    with open(out / "bands.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["V_s", "V_l", "k", "band", "E_rad_per_ms"])
        for vs in _linspace(scan["V_s"]):
            for vl in _linspace(scan["V_l"]):
                b = solve_bands(cfg.lattice, DepthPoint(vs, vl, cfg.lattice.relative_phase), scan["n_bands"],
                                cfg.disc.n_k, cfg.disc.f_max)
                for i, k in enumerate(b.k_grid):
                    for n in range(b.n_bands):
                        w.writerow([f"{vs:.9g}", f"{vl:.9g}", f"{k:.9g}", n, f"{b.energies[i, n]:.12g}"])
    return EXIT_OK


def cmd_hubbard(cfg: RunConfig, args, out: Path) -> int:
    scan = cfg.sections["scan"]
    M = max(1, scan["n_bands"] // 2)
    cache = LatticeCache(cfg.lattice, M, cfg.disc)
    a = scan["a"]
    with open(out / "hubbard.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["V_s", "V_l", "level", "J", "eps_L", "eps_R", "dJ_L", "dJ_R", "U_onsite_L", "U_onsite_R",
                    "U_offsite", "U_0011_L"])
        for vs in _linspace(scan["V_s"]):
            for vl in _linspace(scan["V_l"]):
                params = cache.get(vs, vl)[2].with_a(a)
                g = params.interaction
                for p in range(M):
                    L, R = 2 * p, 2 * p + 1
                    inter = g[0, 0, 2, 2] if M > 1 else 0.0
                    w.writerow([f"{vs:.9g}", f"{vl:.9g}", p, *(f"{x:.12g}" for x in (
                        params.J[p], params.eps[p, 0], params.eps[p, 1], params.dJ[p, 0], params.dJ[p, 1],
                        g[L, L, L, L], g[R, R, R, R], g[L, R, L, R], inter))])
    return EXIT_OK


def cmd_table(cfg: RunConfig, args, out: Path) -> int:
    table = _table(cfg)
    table.save(out / "jtable.npz")
    _write_json(out / "jtable.json", {"key": table.key, "residual": table.residual,
                                      "V_s": list(table.bounds[0]), "V_l": list(table.bounds[1])})
    print(f"spline table {table.key}: fit residual {table.residual:.3e} rad/ms")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, args, out: Path) -> int:
    pulse, meta = _read_pulse(args, cfg, required=False)
    j_source = meta.get("j_source", "lattice") if cfg.model.kind == "two-band" else "lattice"
    sim = _simulator(cfg, j_source)
    p = cfg.pulse
    target = p.get("target") or ("du" if p["gate"] == "swap" else None)
    initial = p["initial"]
    if target is None and initial == "ud":
        target = STATE_PAIRS["sqrt-swap"][0][1]
    traj = propagate_nonadiabatic(cfg.lattice, pulse, cfg.model, initial, simulator=sim, target=target)
    if p["full_gate"] and pulse.n_steps:
        traj.costs["gate"] = evaluate_gate_cost(pulse, GATE_PAIRS[p["gate"]], simulator=sim)
    traj.save(out / "trajectory.csv")
    print(json.dumps(traj.costs))
    return EXIT_OK


def _report(report, cfg, out: Path, name: str) -> None:
    report.save(out / f"{name}_report.json")
    _save_pulse(out / f"{name}_pulse.json", report.pulse, cfg, report.backend, report.cost)
    print(f"{name}: cost {report.cost:.6e} after {report.iterations} iterations "
          f"({report.evaluations} evaluations, {report.wall_time:.1f} s)")


def cmd_optimize(cfg: RunConfig, args, out: Path) -> int:
    guess = _read_pulse(args, cfg, required=False)[0] if args.pulse else None
    problem = _problem(cfg, cfg.pulse["full_gate"], guess)
    if cfg.pulse["gate"] == "sqrt-swap" and cfg.model.kind != "two-band":
        report, scan = optimize_sqrt_swap(problem, _linspace(cfg.optimize["a_grid"]), cfg.optimize["rounds"])
        _write_json(out / "scan_a.json", {"a": scan.a_grid.tolist(), "cost": scan.costs.tolist(),
                                          "best_a": scan.best_a, "best_cost": scan.best_cost})
    else:
        report = optimize_state_transfer(problem)
    _report(report, cfg, out, "optimize")
    return EXIT_OK


def cmd_fullgate(cfg: RunConfig, args, out: Path) -> int:
    if args.pulse:
        warm = _read_pulse(args, cfg)[0]
    else:
        warm = optimize_state_transfer(_problem(cfg, False)).pulse
    problem = _problem(cfg, True, warm)
    report = optimize_full_gate(problem, warm_start=warm)
    _report(report, cfg, out, "fullgate")
    return EXIT_OK


def cmd_scan_a(cfg: RunConfig, args, out: Path) -> int:
    pulse, meta = _read_pulse(args, cfg)
    sim = _simulator(cfg, meta.get("j_source", "lattice") if cfg.model.kind == "two-band" else "lattice", None)
    pairs = (GATE_PAIRS if cfg.pulse["full_gate"] else STATE_PAIRS)["sqrt-swap"]
    res = scan_scattering_length(pulse, _linspace(cfg.optimize["a_grid"]), pairs, simulator=sim)
    with open(out / "scan_a.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["a_bohr", "cost"])
        for a, c in zip(res.a_grid, res.costs):
            w.writerow([f"{a:.9g}", f"{c:.17g}"])
    _write_json(out / "scan_a.json", {"best_a": res.best_a, "best_cost": res.best_cost})
    print(f"best a = {res.best_a:.2f} a0, cost {res.best_cost:.6e}")
    return EXIT_OK


def cmd_robustness(cfg: RunConfig, args, out: Path) -> int:
    pulse, _ = _read_pulse(args, cfg)
    noise = cfg.noise
    kw = dict(model=cfg.model, config=cfg.lattice, disc=cfg.disc, pairs=cfg.pulse["gate"])
    summary = {}
    phase = simulate_phase_noise(pulse, noise, **kw)
    phase.to_csv(out / "phase_noise.csv")
    summary["phase"] = {"baseline": phase.baseline, "mean": phase.mean, "std": phase.std}
    grid = simulate_intensity_grid(pulse, noise, **kw)
    grid.to_csv(out / "intensity_grid.csv")
    summary["intensity"] = {"baseline": grid.baseline, "worst": grid.worst}
    leak = simulate_interwell_leakage(pulse, cfg.lattice, disc=cfg.disc)
    with open(out / "interwell.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_ms", *leak.labels])
        for t, row in zip(leak.times, leak.populations):
            w.writerow([f"{t:.9g}", *(f"{x:.12g}" for x in row)])
    summary["interwell"] = {"max_neighbor_probability": leak.max_leakage}
    if cfg.pulse["gate"] == "sqrt-swap":
        dev = scan_scattering_deviation(pulse, pulse.a, cfg.sections["noise"]["a_deviations"], cfg.model,
                                        cfg.lattice, "sqrt-swap", cfg.disc)
        dev.to_csv(out / "a_deviation.csv")
        summary["a_deviation"] = {"baseline": dev.baseline, "costs": dev.costs.tolist()}
    else:
        for source in cfg.sections["noise"]["sources"]:
            fit = fit_decay_time(pulse, cfg.sections["noise"]["n_gates"], noise, source, cfg.model,
                                 cfg.lattice, cfg.disc)
            fit.save(out / f"decay_{source}.csv")
            summary[f"decay_{source}"] = fit.to_json()
    _write_json(out / "robustness.json", summary)
    print(json.dumps(summary, indent=2, default=float))
    return EXIT_OK


def cmd_qsl(cfg: RunConfig, args, out: Path | None) -> int:
    J = args.j_max if args.j_max is not None else cfg.sections["qsl"].get("J_max")
    if J is None:
        b = cfg.bounds()
        J = hopping_from_bands(cfg.lattice, DepthPoint(b["V_s"][0], cfg.pulse.get("V_l", 30.0)), cfg.disc)
    T = qsl_duration(J)
    print(f"{T:.3f} ms")
    if out is not None:
        _write_json(out / "qsl.json", {"J_max_rad_per_ms": J, "T_qsl_ms": T})
    return EXIT_OK


COMMANDS = {"bands": cmd_bands, "hubbard": cmd_hubbard, "table": cmd_table, "simulate": cmd_simulate,
            "optimize": cmd_optimize, "fullgate": cmd_fullgate, "scan-a": cmd_scan_a,
            "robustness": cmd_robustness, "qsl": cmd_qsl}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fermigate", description="Superlattice collision-gate toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override noise and optimizer seeds")
        p.add_argument("--threads", type=int, help="cap BLAS/LAPACK threads")
        p.add_argument("--pulse", help="input pulse JSON")
        if name == "qsl":
            p.add_argument("--j-max", type=float, help="maximum hopping in rad/ms")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else default_config()
        if args.seed is not None:
            cfg.sections["noise"]["seed"] = args.seed
            cfg.sections["optimize"]["seed"] = args.seed
            cfg.noise = replace(cfg.noise, seed=args.seed)
        out_dir = args.out or cfg.sections.get("output")
        out = Path(out_dir) if out_dir else (None if args.command == "qsl" else Path("."))
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    np.random.seed(cfg.sections["optimize"]["seed"])
    limiter = None
    if args.threads:
        from threadpoolctl import threadpool_limits
        limiter = threadpool_limits(limits=args.threads)
    started = time.time()
    try:
        code = COMMANDS[args.command](cfg, args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (*NUMERICAL_ERRORS, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        if out is not None:
            _write_json(out / "diagnostics.json", {"command": args.command, "error": type(exc).__name__,
                                                   "message": str(exc), "traceback": traceback.format_exc()})
        return EXIT_NUMERIC
    finally:
        if limiter is not None:
            limiter.restore_original_limits()
    if out is not None:
        _write_json(out / "metadata.json", {"command": args.command, "config_digest": cfg.digest(),
                                            "started": started, "elapsed_s": time.time() - started})
    return code


if __name__ == "__main__":
    sys.exit(main())
