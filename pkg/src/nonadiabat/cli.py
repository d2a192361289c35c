"""Command-line front end driven by scenario files.

Exit codes: 0 success, 2 physics-check failure (report still written),
1 input error.
"""
import argparse
from dataclasses import dataclass, field
import json
import math
from pathlib import Path
import sys
import traceback

import numpy as np

from . import __version__
from .consistency import audit, weight_entropy_mismatch
from .entropy import RATE_COLUMNS, epsilon_mix, rates_along
from .errors import NonadiabatError, ParseError
from .kraus import KrausMap, audit_map, generate_detailed_balance_map
from .model import propagate, steady_state
from .operators import validate_density, vectorize
from .scenario import DEFAULT_TOLERANCES, Scenario, bundled_scenario, parse_scenario
from .trajectory import run_ensemble

VERBS = ("validate", "steady", "propagate", "rates", "trajectories", "kraus-audit",
         "equivalence")
CSV_FORMAT = 1

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_PHYSICS = 2


@dataclass
class RunReport:
    verb: str
    exit_code: int = EXIT_OK
    outputs: list[str] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)


class InputError(NonadiabatError, ValueError):
    """Scenario is valid but unusable for the requested verb."""


def _clean(x):
    """Recursively convert numpy scalars/arrays and non-finite floats for JSON."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(_clean(doc), indent=2) + "\n", encoding="utf-8")


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write_csv(path: Path, kind: str, columns: list[str], rows) -> None:
    lines = [f"# nonadiabat {kind} format {CSV_FORMAT}: " + ",".join(columns),
             ",".join(columns)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _need_lindblad(sc: Scenario, verb: str) -> None:
    if sc.kind != "lindblad":
        raise InputError(f"verb {verb!r} needs a Lindblad scenario, got kind {sc.kind!r}")


def _initial_state(sc: Scenario) -> np.ndarray:
    if sc.initial_state is None:
        raise InputError("scenario has no initial_state")
    rho = validate_density(sc.initial_state)
    eps = sc.flags.get("epsilon_mixing", 0.0)
    return epsilon_mix(rho, eps) if eps else rho


def _audit_times(sc: Scenario) -> list[float]:
    t0 = sc.run["t0"]
    t1 = t0 + sc.run["tau"]
    pts = [t0] + [t for t in sc.model.protocol.breakpoints if t0 < t < t1] + [t1]
    return sorted(set(pts))


def _validate(sc: Scenario, out: Path, rep: RunReport) -> None:
    _need_lindblad(sc, "validate")
    tols = sc.tolerances
    check_tols = {k: tols[k] for k in
                  ("privileged", "detailed_balance", "time_reversal", "modular", "log_identity")}
    reports = []
    for t in _audit_times(sc):
        ssi = steady_state(sc.model, t, weight_tol=tols["weight_extraction"])
        r = audit(sc.model, t, ssi, check_tols, sc.flags.get("time_reversal_check", True))
        flat = r.to_flat()
        flat["steady_state_gap"] = ssi.gap
        flat["weight_entropy_mismatch"] = weight_entropy_mismatch(sc.model, ssi)
        reports.append(flat)
        rep.failures.extend(f"t={t:g}: {f}" for f in r.failures())
    path = out / "consistency.json"
    _write_json(path, {"scenario": sc.name, "passed": not rep.failures,
                       "failures": rep.failures, "tolerances": check_tols,
                       "reports": reports})
    rep.outputs.append(str(path))
    rep.summary = {"passed": not rep.failures, "n_times": len(reports)}


def _steady(sc: Scenario, out: Path, rep: RunReport) -> None:
    _need_lindblad(sc, "steady")
    rows = []
    for t in _audit_times(sc):
        ssi = steady_state(sc.model, t, weight_tol=sc.tolerances["weight_extraction"])
        rows.append({"t": t, "pi": ssi.pi.real, "pi_imag": ssi.pi.imag,
                     "eigenvalues": np.linalg.eigvalsh(ssi.pi), "weights": list(ssi.weights),
                     "gap": ssi.gap, "residual": ssi.residual})
    path = out / "steady.json"
    _write_json(path, {"scenario": sc.name, "steady_states": rows})
    rep.outputs.append(str(path))
    rep.summary = {"n_times": len(rows), "min_gap": min(r["gap"] for r in rows)}


def _propagate(sc: Scenario, out: Path, rep: RunReport) -> None:
    _need_lindblad(sc, "propagate")
    run = sc.run
    traj = propagate(sc.model, _initial_state(sc), run["t0"], run["t0"] + run["tau"], run["dt"])
    d = sc.model.dim
    cols = ["t"] + [f"re_{i}" for i in range(d * d)] + [f"im_{i}" for i in range(d * d)]
    idx = list(range(0, len(traj), run["rate_stride"]))
    if idx[-1] != len(traj) - 1:
        idx.append(len(traj) - 1)
    rows = []
    for i in idx:
        t, rho = traj[i]
        v = vectorize(rho)
        rows.append([t, *v.real, *v.imag])
    path = out / "propagate.csv"
    _write_csv(path, "propagate (column-stacked rho)", cols, rows)
    rep.outputs.append(str(path))
    rep.summary = {"n_rows": len(rows), "final_trace": float(np.trace(traj[-1][1]).real)}


def _rates(sc: Scenario, out: Path, rep: RunReport, equivalence: bool) -> None:
    _need_lindblad(sc, "equivalence" if equivalence else "rates")
    run = sc.run
    series = rates_along(sc.model, _initial_state(sc), run["t0"], run["t0"] + run["tau"],
                         run["dt"], stride=run["rate_stride"])
    path = out / "rates.csv"
    _write_csv(path, "rates", RATE_COLUMNS, [r.row() for r in series])
    rep.outputs.append(str(path))
    min_sna = min(r.S_na_dot for r in series)
    rep.summary = {"n_rows": len(series), "min_S_na": min_sna}
    if min_sna < -sc.tolerances["positivity"]:
        rep.failures.append(f"S_na negative: {min_sna:.3e}")
    if not equivalence:
        return
    tol = sc.tolerances["equivalence"]
    res = np.array([r.equivalence_residual for r in series])
    scale = np.array([1.0 + abs(r.S_ex_dot_relent) for r in series])
    missing = bool(np.any(~np.isfinite(res)))
    rel = np.where(np.isfinite(res), res / scale, np.inf)
    worst = int(np.argmax(rel))
    passed = not missing and rel[worst] <= tol
    if missing:
        rep.failures.append("equivalence: privileged weights unavailable")
    elif not passed:
        rep.failures.append(f"equivalence residual {res[worst]:.3e} at t={series[worst].t:g}")
    summary = {"scenario": sc.name, "passed": passed, "tol": tol,
               "max_residual": float(np.max(res)) if not missing else None,
               "max_relative_residual": float(rel[worst]) if not missing else None,
               "t_of_max": series[worst].t, "n_times": len(series),
               "weights_available": not missing}
    path = out / "equivalence.json"
    _write_json(path, summary)
    rep.outputs.append(str(path))
    rep.summary.update(summary)


def _trajectories(sc: Scenario, out: Path, rep: RunReport, event_log: bool) -> None:
    _need_lindblad(sc, "trajectories")
    run = sc.run
    rho0 = validate_density(sc.initial_state) if sc.initial_state is not None else None
    if rho0 is None:
        raise InputError("scenario has no initial_state")
    stats = run_ensemble(sc.model, rho0, run["t0"], run["tau"], run["dt"], run["n_traj"],
                         run["base_seed"], epsilon=sc.flags.get("epsilon_mixing", 0.0),
                         checkpoint_stride=run["checkpoint_stride"],
                         refresh_interval=run["refresh_interval"],
                         n_resamples=run["n_resamples"], record_events=event_log)
    k = sc.tolerances["ft_sigma"]
    checks = {
        "fluctuation_theorem": abs(stats.ft_value - 1.0) <= k * stats.ft_stderr,
        "mean_delta_s_na_nonnegative": stats.mean_delta_s_na >= -k * stats.mean_delta_s_na_stderr,
        "mean_state": bool(np.all(stats.mean_state_error <= k * stats.mean_state_stderr)),
        "ds_ex_rate": abs(stats.mean_ds_ex_rate - stats.reference_ds_ex_rate)
        <= k * stats.mean_ds_ex_rate_stderr,
    }
    rep.failures.extend(name for name, ok in checks.items() if not ok)
    doc = {"scenario": sc.name, "passed": all(checks.values()), "sigma": k, "checks": checks,
           "tau": run["tau"], "t0": run["t0"], **stats.to_json()}
    path = out / "ensemble.json"
    _write_json(path, doc)
    rep.outputs.append(str(path))
    if event_log:
        path = out / "events.csv"
        _write_csv(path, "events", ["trajectory", "t", "k", "ln_w"], stats.events)
        rep.outputs.append(str(path))
    rep.summary = {"passed": doc["passed"], "ft_value": stats.ft_value,
                   "ft_stderr": stats.ft_stderr}


def _kraus_verdict(r: dict, tols: dict) -> list[str]:
    if "error" in r:
        return [r["error"]]
    limits = [
        ("tp_residual", "trace_preservation"),
        ("fixed_point_residual", "fixed_point"),
        ("mu_normalization_residual", "mu_normalization"),
        ("max_delta_D", "monotonicity"),
        ("max_operator_classical_gap", "operator_classical"),
        ("max_stochasticity_residual", "stochasticity"),
        ("max_push_forward_residual", "stochasticity"),
    ]
    bad = [f"{key} = {r[key]:.3e}" for key, tk in limits if r[key] > tols[tk]]
    if not r["dual_cptp"]:
        bad.append(f"dual map not CPTP (min Choi eigenvalue {r['dual_choi_min_eigenvalue']:.3e})")
    return bad


def _kraus_audit(sc: Scenario, out: Path, rep: RunReport) -> None:
    if sc.kind != "kraus":
        raise InputError(f"verb 'kraus-audit' needs a Kraus scenario, got kind {sc.kind!r}")
    tols = sc.tolerances
    n_random, seed = sc.audit["n_random"], sc.audit["seed"]
    maps: list[tuple[str, KrausMap, list]] = []
    if sc.kraus is not None:
        maps.append(("explicit", sc.kraus, sc.kraus_states))
    for g in sc.generated:
        e, _ = generate_detailed_balance_map(g["d"], g["seed"])
        maps.append((f"generated(d={g['d']}, seed={g['seed']})", e, []))
    entries = []
    for label, e, states in maps:
        r = audit_map(e, states, n_random=n_random, seed=seed, tol=tols["weight_extraction"])
        bad = _kraus_verdict(r, tols)
        rep.failures.extend(f"{label}: {b}" for b in bad)
        entries.append({"label": label, "dim": e.dim, "n_kraus": len(e.kraus),
                        "passed": not bad, "failures": bad, **r})
    path = out / "kraus_audit.json"
    _write_json(path, {"scenario": sc.name, "passed": not rep.failures, "maps": entries})
    rep.outputs.append(str(path))
    rep.summary = {"passed": not rep.failures, "n_maps": len(entries)}


def apply_overrides(sc: Scenario, tol_overrides=(), seed=None, dt=None, ntraj=None) -> Scenario:
    for item in tol_overrides:
        key, sep, val = item.partition("=")
        key = key.strip()
        if not sep or key not in DEFAULT_TOLERANCES:
            raise InputError(f"bad --tol-override {item!r}; known keys: "
                             + ", ".join(sorted(DEFAULT_TOLERANCES)))
        try:
            sc.tolerances[key] = float(val)
        except ValueError as exc:
            raise InputError(f"bad --tol-override value {val!r}") from exc
    if seed is not None:
        sc.run["base_seed"] = seed
        sc.audit["seed"] = seed
    if dt is not None:
        if not dt > 0:
            raise InputError("--dt must be positive")
        sc.run["dt"] = dt
    if ntraj is not None:
        if ntraj < 1:
            raise InputError("--ntraj must be positive")
        sc.run["n_traj"] = ntraj
    return sc


def run_command(verb: str, scenario: Scenario, output_dir, event_log: bool = False) -> RunReport:
    """Run one verb and write its outputs into ``output_dir``."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep = RunReport(verb)
    if verb == "validate":
        _validate(scenario, out, rep)
    elif verb == "steady":
        _steady(scenario, out, rep)
    elif verb == "propagate":
        _propagate(scenario, out, rep)
    elif verb == "rates":
        _rates(scenario, out, rep, equivalence=False)
    elif verb == "equivalence":
        _rates(scenario, out, rep, equivalence=True)
    elif verb == "trajectories":
        _trajectories(scenario, out, rep, event_log or scenario.flags.get("event_log", False))
    elif verb == "kraus-audit":
        _kraus_audit(scenario, out, rep)
    else:
        raise InputError(f"unknown verb {verb!r}")
    rep.exit_code = EXIT_PHYSICS if rep.failures else EXIT_OK
    return rep


def resolve_scenario_path(arg: str) -> Path:
    """A filesystem path, or the name of a bundled scenario such as 'qubit.json'."""
    p = Path(arg)
    if p.exists():
        return p
    bundled = bundled_scenario(p.name if p.suffix else p.name + ".json")
    if not p.parent.parts and bundled.exists():
        return bundled
    return p


def _provenance(exc: BaseException) -> str:
    """module.function of the innermost package frame that raised."""
    where = ""
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        mod = frame.f_globals.get("__name__", "")
        if mod.startswith("nonadiabat"):
            where = f"{mod.split('.', 1)[-1]}.{frame.f_code.co_name}"
    return where


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="nonadiabat",
        description="Nonadiabatic entropy production for Lindblad models and Kraus maps.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("verb", choices=VERBS, help="operation to run")
    p.add_argument("scenario", help="scenario JSON file, or the name of a bundled scenario")
    p.add_argument("--out", default=".", metavar="DIR", help="output directory (default: .)")
    p.add_argument("--seed", type=int, help="override the base seed")
    p.add_argument("--dt", type=float, help="override the time step")
    p.add_argument("--ntraj", type=int, help="override the number of trajectories")
    p.add_argument("--tol-override", action="append", default=[], metavar="KEY=VAL",
                   help="override a named tolerance; may be repeated")
    p.add_argument("--event-log", action="store_true",
                   help="also write per-jump events to events.csv (trajectories)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        sc = parse_scenario(resolve_scenario_path(args.scenario))
        apply_overrides(sc, args.tol_override, args.seed, args.dt, args.ntraj)
        rep = run_command(args.verb, sc, args.out, event_log=args.event_log)
    except ParseError as exc:
        print(f"error [scenario]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NonadiabatError, ValueError, ArithmeticError) as exc:
        where = _provenance(exc)
        print(f"error [{where or args.verb}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    for path in rep.outputs:
        print(f"wrote {path}")
    for f in rep.failures:
        print(f"FAILED {args.verb}: {f}", file=sys.stderr)
    return rep.exit_code


if __name__ == "__main__":
    sys.exit(main())
