"""Command-line front end: margins, composition sweeps, P-V data export.

Artifacts are UTF-8 CSV/JSON with stable column order so repeated runs with
identical inputs are byte-identical; the wall-clock timestamp is isolated in
its own file next to the deterministic metadata.

Exit codes: 0 success, 2 validation error, 3 divergence-dominated result,
4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .cases import (SystemCase, builtin_two_area, builtin_twobus,
                    case_from_dict, case_to_dict, load_case, validate_case,
                    with_composite_composition, with_zip_composition)
from .errors import (AlgebraicDivergenceError, GridMarginError,
                     PowerFlowDivergedError, ValidationError)
from .margins import (StressSchedule, binary_search_sol, compute_pcll,
                      compute_sol, limiting_reason, margins_to_csv,
                      pv_per_bus_csv, sample_pv_curve)
from .simulation import StabilityCriterion

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4

BUILTINS = {
    "builtin:twobus": lambda: builtin_twobus(1),
    "builtin:twobus-2ckt": lambda: builtin_twobus(2),
    "builtin:two-area": builtin_two_area,
}


class _CliError(Exception):
    def __init__(self, code, message):
        self.code = code
        super().__init__(message)


def _load_case_arg(path: str) -> SystemCase:
    if path in BUILTINS:
        return BUILTINS[path]()
    if not os.path.exists(path):
        raise _CliError(EXIT_IO, f"case file not found: {path}")
    try:
        return load_case(path)
    except ValidationError as exc:
        raise _CliError(EXIT_VALIDATION,
                        "case validation failed:\n  " +
                        "\n  ".join(exc.failures))
    except (OSError, json.JSONDecodeError) as exc:
        raise _CliError(EXIT_IO, f"cannot read case {path}: {exc}")


def _resolve_contingency(case: SystemCase, label: str | None) -> str:
    if not label or label == "none":
        return ""
    if label not in case.contingencies:
        avail = ", ".join(sorted(case.contingencies)) or "(none defined)"
        raise _CliError(EXIT_VALIDATION,
                        f"unknown contingency {label!r}; available: {avail}")
    return label


def _infer_areas(case: SystemCase):
    """Fallback stress areas when a case does not use the default names:
    loads go to the only area that has loads, sourcing to the only area with
    governor headroom."""
    by_bus = {b.id: b.area for b in case.buses}
    load_areas = sorted({by_bus[ld.bus] for ld in case.loads})
    src_areas = sorted({by_bus[g.bus] for g in case.generators
                        if g.in_service and g.headroom_mw(case.base_mva) > 0})
    base = StressSchedule()
    load_area = base.load_area if base.load_area in load_areas \
        else (load_areas[0] if len(load_areas) == 1 else base.load_area)
    source_area = base.source_area if base.source_area in src_areas \
        else (src_areas[0] if len(src_areas) == 1 else base.source_area)
    return load_area, source_area


def _schedule_from(ns, overrides=None, case: SystemCase | None = None) -> StressSchedule:
    """Precedence: explicit flags > sweep-spec overrides > case-derived areas
    > defaults."""
    base = StressSchedule()
    merged = {
        "load_area": base.load_area, "source_area": base.source_area,
        "fine_step_mw": base.fine_step_mw, "coarse_step_mw": base.coarse_step_mw,
        "max_total_mw": base.max_total_mw, "ramp_mw_per_s": base.ramp_mw_per_s,
    }
    if case is not None:
        merged["load_area"], merged["source_area"] = _infer_areas(case)
    if overrides:
        merged.update({k: overrides[k] for k in merged if k in overrides})
    flag_map = {"load_area": ns.load_area, "source_area": ns.source_area,
                "fine_step_mw": ns.fine_step, "coarse_step_mw": ns.coarse_step,
                "max_total_mw": ns.max_stress, "ramp_mw_per_s": ns.ramp_rate}
    merged.update({k: v for k, v in flag_map.items() if v is not None})
    return StressSchedule(**merged)


def _criterion_from(ns, overrides=None) -> StabilityCriterion:
    base = StabilityCriterion()
    merged = {"v_final": base.v_final, "v_early": base.v_early,
              "grace_s": base.grace_s, "t_end_s": base.t_end_s}
    if overrides:
        merged.update({k: overrides[k] for k in merged if k in overrides})
    flag_map = {"v_final": ns.v_final, "v_early": ns.v_early,
                "t_end_s": ns.t_end}
    merged.update({k: v for k, v in flag_map.items() if v is not None})
    return StabilityCriterion(**merged)


def _write_metadata(out_dir, prefix, config: dict):
    """Deterministic config echo + isolated timestamp file."""
    meta_path = os.path.join(out_dir, f"{prefix}_metadata.json")
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")
    stamp_path = os.path.join(out_dir, f"{prefix}_timestamp.txt")
    with open(stamp_path, "w", encoding="utf-8") as fh:
        fh.write(datetime.datetime.now(datetime.timezone.utc).isoformat() + "\n")


def _write_probes(path, probes):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["stress_MW", "stable", "reason"])
        for lv, ok, why in probes:
            w.writerow([f"{lv:.6g}", int(ok), why])


def _margin_outputs(out_dir, prefix, scenario, case, result):
    margins_to_csv([(scenario or "none", case.name, result)],
                   os.path.join(out_dir, f"{prefix}_margin.csv"))
    _write_probes(os.path.join(out_dir, f"{prefix}_probes.csv"), result.probes)
    if result.pv is not None and result.pv.stress_mw:
        pv_per_bus_csv(result.pv, out_dir, prefix=f"{prefix}_pv")
    print(f"{result.method.upper()} margin: {result.margin_mw:.6g} MW "
          f"({limiting_reason(result)})")
    for note in result.notes:
        print(f"note: {note}")


def _divergence_dominated(result) -> bool:
    """True when the limit was set by solver divergence, not a verdict rule."""
    return "divergence" in limiting_reason(result)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_pcll(ns) -> int:
    case = _load_case_arg(ns.case)
    label = _resolve_contingency(case, ns.contingency)
    schedule = _schedule_from(ns, case=case)
    criterion = _criterion_from(ns)
    os.makedirs(ns.out, exist_ok=True)
    result = compute_pcll(case, label, schedule=schedule, criterion=criterion,
                          dt=ns.dt, settle_s=ns.settle)
    prefix = f"pcll_{label or 'none'}"
    _margin_outputs(ns.out, prefix, label, case, result)
    _write_metadata(ns.out, prefix, {
        "command": "pcll", "case": case.name, "contingency": label or "none",
        "dt": ns.dt, "settle_s": ns.settle, "schedule": vars(schedule),
        "criterion": vars(criterion)})
    return EXIT_DIVERGENCE if _divergence_dominated(result) else EXIT_OK


def cmd_sol(ns) -> int:
    case = _load_case_arg(ns.case)
    label = _resolve_contingency(case, ns.contingency)
    schedule = _schedule_from(ns, case=case)
    criterion = _criterion_from(ns)
    os.makedirs(ns.out, exist_ok=True)
    if ns.binary_search:
        result = binary_search_sol(case, label, schedule=schedule,
                                   criterion=criterion, dt=ns.dt,
                                   tol_mw=ns.tol)
    else:
        result = compute_sol(case, label, schedule=schedule,
                             criterion=criterion, dt=ns.dt)
    prefix = f"sol_{label or 'none'}"
    _margin_outputs(ns.out, prefix, label, case, result)
    _write_metadata(ns.out, prefix, {
        "command": "sol", "case": case.name, "contingency": label or "none",
        "dt": ns.dt, "binary_search": ns.binary_search, "tol_mw": ns.tol,
        "schedule": vars(schedule), "criterion": vars(criterion)})
    return EXIT_DIVERGENCE if _divergence_dominated(result) else EXIT_OK


def cmd_pv_curve(ns) -> int:
    case = _load_case_arg(ns.case)
    schedule = _schedule_from(ns, case=case)
    os.makedirs(ns.out, exist_ok=True)
    curve = sample_pv_curve(case, schedule=schedule, step_mw=ns.step)
    paths = pv_per_bus_csv(curve, ns.out, prefix="pv")
    curve.to_csv(os.path.join(ns.out, "pv_all_buses.csv"))
    _write_metadata(ns.out, "pv", {
        "command": "pv-curve", "case": case.name, "step_mw": ns.step,
        "schedule": vars(schedule)})
    print(f"wrote {len(paths)} per-bus P-V files to {ns.out}")
    return EXIT_OK


def cmd_validate(ns) -> int:
    case = _load_case_arg(ns.case)     # load_case already validates files
    validate_case(case)                # builtins go through the same gate
    print(f"case {case.name!r}: OK "
          f"({len(case.buses)} buses, {len(case.branches)} branches, "
          f"{len(case.generators)} generators, {len(case.loads)} loads, "
          f"{len(case.contingencies)} contingencies)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------

def _apply_load_config(case: SystemCase, cfg: dict) -> SystemCase:
    if "zip" in cfg:
        # unspecified shares are zero, so a spec can name only the nonzero
        # terms ({"c_p": 1, "a_q": 1} is pure constant-P / constant-Z)
        shares = {k: float(cfg["zip"].get(k, 0.0))
                  for k in ("a_p", "b_p", "c_p", "a_q", "b_q", "c_q")}
        return with_zip_composition(case, **shares)
    if "composite" in cfg:
        return with_composite_composition(case, **cfg["composite"])
    return case.copy()


def _run_cell(payload):
    """One sweep cell: (config, contingency, method) on a private case copy.

    Top-level so a process pool can pickle it; returns
    (index, margin_mw or None, reason, notes).
    """
    (index, case_doc, cfg, label, method, sched_kw, crit_kw, dt, tol,
     settle) = payload
    try:
        case = _apply_load_config(case_from_dict(case_doc), cfg)
        schedule = StressSchedule(**sched_kw)
        criterion = StabilityCriterion(**crit_kw)
        if method == "pcll":
            r = compute_pcll(case, label, schedule=schedule,
                             criterion=criterion, dt=dt, settle_s=settle)
        else:
            r = binary_search_sol(case, label, schedule=schedule,
                                  criterion=criterion, dt=dt, tol_mw=tol)
        return index, r.margin_mw, limiting_reason(r), r.notes
    except (PowerFlowDivergedError, AlgebraicDivergenceError) as exc:
        return index, None, "divergence", [str(exc)]
    except GridMarginError as exc:
        return index, None, f"error: {exc}", []


def cmd_sweep(ns) -> int:
    case = _load_case_arg(ns.case)
    if not os.path.exists(ns.spec):
        raise _CliError(EXIT_IO, f"sweep spec not found: {ns.spec}")
    try:
        with open(ns.spec, "r", encoding="utf-8") as fh:
            spec = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise _CliError(EXIT_IO, f"cannot read sweep spec {ns.spec}: {exc}")

    configs = spec.get("load_configs")
    if not configs:
        raise _CliError(EXIT_VALIDATION, "sweep spec has no load_configs")
    labels = [c.get("label", f"config-{i}") for i, c in enumerate(configs)]
    if len(set(labels)) != len(labels):
        raise _CliError(EXIT_VALIDATION, "duplicate load_config labels")
    conts = [_resolve_contingency(case, c)
             for c in spec.get("contingencies", [""])]
    schedule = _schedule_from(ns, spec.get("schedule"), case=case)
    criterion = _criterion_from(ns, spec.get("criterion"))
    dt = ns.dt if ns.dt is not None else spec.get("dt", 5e-4)
    tol = ns.tol if ns.tol is not None else spec.get("tol_mw",
                                                     schedule.fine_step_mw)
    settle = ns.settle if ns.settle is not None else spec.get("settle_s", 200.0)

    case_doc = case_to_dict(case)
    payloads = []
    cells = []  # (config_label, contingency, method) aligned with payloads
    for cfg, cfg_label in zip(configs, labels):
        for label in conts:
            for method in ("pcll", "sol"):
                payloads.append((len(payloads), case_doc, cfg, label, method,
                                 vars(schedule), vars(criterion), dt, tol,
                                 settle))
                cells.append((cfg_label, label or "none", method))

    workers = ns.workers or int(os.environ.get("GRIDMARGIN_WORKERS",
                                               os.cpu_count() or 1))
    if workers > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(_run_cell, payloads))
    else:
        raw = [_run_cell(p) for p in payloads]
    results = [None] * len(payloads)
    for index, margin, reason, notes in raw:   # deterministic aggregation
        results[index] = (margin, reason, notes)

    os.makedirs(ns.out, exist_ok=True)
    long_path = os.path.join(ns.out, "sweep_margins.csv")
    with open(long_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "load_config", "method", "margin_MW",
                    "limiting_reason"])
        for (cfg_label, label, method), (margin, reason, _n) in zip(cells,
                                                                    results):
            w.writerow([label, cfg_label, method.upper(),
                        "" if margin is None else f"{margin:.6g}", reason])

    # wide comparison table: one row per load config, a PCLL and an SOL
    # column per contingency
    by_cell = {cell: res for cell, res in zip(cells, results)}
    table_path = os.path.join(ns.out, "sweep_table.csv")
    with open(table_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        header = ["load_config"]
        for label in conts:
            shown = label or "none"
            header += [f"PCLL[{shown}]_MW", f"SOL[{shown}]_MW"]
        w.writerow(header)
        for cfg_label in labels:
            row = [cfg_label]
            for label in conts:
                for method in ("pcll", "sol"):
                    margin, reason, _n = by_cell[(cfg_label, label or "none",
                                                  method)]
                    row.append(reason if margin is None else f"{margin:.6g}")
            w.writerow(row)

    _write_metadata(ns.out, "sweep", {
        "command": "sweep", "case": case.name, "spec": spec,
        "resolved": {"dt": dt, "tol_mw": tol, "settle_s": settle,
                     "schedule": vars(schedule), "criterion": vars(criterion),
                     "workers": workers}})
    failed = any(margin is None for margin, _r, _n in results)
    print(f"sweep complete: {len(results)} cells -> {table_path}")
    return EXIT_DIVERGENCE if failed else EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("case", help="case JSON path or builtin:twobus, "
                                "builtin:twobus-2ckt, builtin:two-area")
    p.add_argument("--out", default=".", help="output directory (default .)")
    p.add_argument("--dt", type=float, default=None,
                   help="integration step, s (default 0.0005)")
    p.add_argument("--t-end", type=float, default=None,
                   help="verdict horizon, s (default 1000)")
    p.add_argument("--v-final", type=float, default=None,
                   help="end-of-horizon voltage floor, pu (default 0.9)")
    p.add_argument("--v-early", type=float, default=None,
                   help="early-stop voltage floor, pu (default 0.7)")
    p.add_argument("--load-area", default=None,
                   help="area whose loads take the stress (default Central)")
    p.add_argument("--source-area", default=None,
                   help="area whose generators back the stress (default North)")
    p.add_argument("--fine-step", type=float, default=None,
                   help="fine stress step, MW (default 1)")
    p.add_argument("--coarse-step", type=float, default=None,
                   help="coarse stress step, MW (default 5)")
    p.add_argument("--max-stress", type=float, default=None,
                   help="stress cap, MW (default 300)")
    p.add_argument("--ramp-rate", type=float, default=None,
                   help="live-ramp rate, MW/s (default 2)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="gridmargin",
        description="Security margins: post-contingency loadability (PCLL) "
                    "vs secure operating limit (SOL) under identical "
                    "stress-injection rules.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pcll", help="post-contingency loadability limit")
    _add_common(p)
    p.add_argument("--contingency", default=None,
                   help="contingency label ('none' for no disturbance)")
    p.add_argument("--settle", type=float, default=200.0,
                   help="max wait for restabilization per level, s")
    p.set_defaults(func=cmd_pcll)

    p = sub.add_parser("sol", help="secure operating limit")
    _add_common(p)
    p.add_argument("--contingency", default=None,
                   help="contingency label ('none' for no disturbance)")
    p.add_argument("--binary-search", action="store_true",
                   help="bisect the stress grid instead of scanning upward")
    p.add_argument("--tol", type=float, default=None,
                   help="bisection tolerance, MW (default fine step)")
    p.set_defaults(func=cmd_sol)

    p = sub.add_parser("sweep", help="PCLL+SOL over load compositions")
    _add_common(p)
    p.add_argument("spec", help="sweep spec JSON (load_configs, "
                                "contingencies, schedule overrides)")
    p.add_argument("--workers", type=int, default=None,
                   help="parallel cells (default $GRIDMARGIN_WORKERS or CPUs)")
    p.add_argument("--tol", type=float, default=None,
                   help="SOL bisection tolerance, MW")
    p.add_argument("--settle", type=float, default=None,
                   help="max wait for restabilization per level, s")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("pv-curve", help="static P-V curve along the stress "
                                        "direction")
    _add_common(p)
    p.add_argument("--step", type=float, default=10.0,
                   help="continuation step, MW (default 10)")
    p.set_defaults(func=cmd_pv_curve)

    p = sub.add_parser("validate", help="check a case file against the schema")
    p.add_argument("case", help="case JSON path or builtin name")
    p.set_defaults(func=cmd_validate)

    return ap


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        return ns.func(ns)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ValidationError as exc:
        print("error: validation failed:\n  " + "\n  ".join(exc.failures),
              file=sys.stderr)
        return EXIT_VALIDATION
    except (PowerFlowDivergedError, AlgebraicDivergenceError) as exc:
        print(f"error: computation diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except GridMarginError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
